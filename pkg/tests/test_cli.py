import json
import subprocess
import sys

import pytest

from greenclaim.cli import main

from support import FIXTURES

CLAIM = "Acme Corp reduced its CO2 emissions by 30% in 2023."


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def ingested(workdir, capsys):
    code, out, _ = run(capsys, "ingest", "--config", workdir / "config.json",
                       workdir / "corpus" / "acme-2023.jsonl", workdir / "corpus" / "boreal-2022.jsonl")
    assert code == 0
    return workdir, json.loads(out)


def test_schema_merge(workdir, capsys):
    out = workdir / "merged.json"
    assert run(capsys, "schema-merge", workdir / "schema_part_a.json", workdir / "schema_part_b.json", "-o", out)[0] == 0
    assert out.read_text() == (FIXTURES / "schema.json").read_text()
    code, _, err = run(capsys, "schema-merge", workdir / "schema_part_a.json", workdir / "schema_conflict.json",
                       "-o", workdir / "x.json")
    assert code == 2
    assert "KPIObservation.value: number" in err and "KPIObservation.year" in err
    assert not (workdir / "x.json").exists()
    assert run(capsys, "schema-merge", workdir / "schema.json", "-o", out)[0] == 0
    assert out.read_bytes() == (FIXTURES / "schema.json").read_bytes()
    assert run(capsys, "schema-merge", workdir / "nope.json", "-o", out)[0] == 1


def test_ingest_and_stats(ingested, capsys):
    workdir, report = ingested
    assert (report["n_entities"], report["n_relationships"], report["n_chunks"]) == (12, 10, 3)
    assert report["rejected"] == 1
    code, out, _ = run(capsys, "stats", "--config", workdir / "config.json")
    stats = json.loads(out)
    assert code == 0
    assert stats["avg_total_degree"] == 2 * 10 / 12
    assert stats["top_entity_types"][0] == ["KPIObservation", 7]
    assert stats["largest_component_size"] == 8 and stats["diameter"] == 4


def test_ingest_errors(workdir, capsys):
    assert run(capsys, "ingest", "--schema", workdir / "missing.json")[0] == 1
    code, out, _ = run(capsys, "ingest", "--config", workdir / "config.json", "--graph-out", workdir / "g.jsonl",
                       "--docstore-out", workdir / "d.jsonl")
    assert code == 0 and json.loads(out)["reports"] == 0


def test_verify_golden(ingested, capsys):
    workdir, _ = ingested
    code, out, _ = run(capsys, "verify", "--config", workdir / "config.json", CLAIM, "--pipeline", "kgrag", "--id", "c01")
    assert code == 0
    assert out == (FIXTURES / "golden_verify_c01.json").read_text()


def test_verify_abstain_exit_code(ingested, capsys):
    workdir, _ = ingested
    code, out, _ = run(capsys, "verify", "--config", workdir / "config.json",
                       "Zephyr Airlines flights are carbon neutral.", "--pipeline", "kgrag")
    assert code == 3 and json.loads(out)["verdict"] == "Abstain"


def test_verify_unknown_pipeline(ingested, capsys):
    workdir, _ = ingested
    code, _, err = run(capsys, "verify", "--config", workdir / "config.json", CLAIM, "--pipeline", "magic")
    assert code == 1 and "usage:" in err


def test_hybrid_logs_both_runs(ingested, capsys, caplog):
    workdir, _ = ingested
    caplog.set_level("INFO", logger="greenclaim")
    code, _, _ = run(capsys, "verify", "-v", "--config", workdir / "config.json", CLAIM, "--pipeline", "hybrid")
    assert code == 0
    assert "EM-RAG=NotGreenwashing, EM-KGRAG=NotGreenwashing" in caplog.text


def test_batch_rows_and_determinism(ingested, capsys):
    workdir, _ = ingested
    outputs = []
    for i in range(2):
        code, out, _ = run(capsys, "batch", "--config", workdir / "config.json", workdir / "dataset.jsonl",
                           "--pipelines", "rag,kgrag", "--modes", "zero-shot,few-shot",
                           "--out", workdir / f"r{i}.jsonl", "--width", 3)
        assert code == 0
        outputs.append(out)
    rows = json.loads(outputs[0])
    assert len(rows) == 4
    assert {(r["pipeline"], r["prompt_mode"]) for r in rows} == {
        (p, m) for p in ("EM-RAG", "EM-KGRAG") for m in ("zero-shot", "few-shot")}
    kg = next(r for r in rows if r["pipeline"] == "EM-KGRAG" and r["prompt_mode"] == "zero-shot")
    assert (kg["n_correct"], kg["n_abstains"], kg["n_total"]) == (7, 2, 10)
    assert outputs[0] == outputs[1]
    assert (workdir / "r0.jsonl").read_bytes() == (workdir / "r1.jsonl").read_bytes()


def test_batch_skips_malformed(ingested, capsys, caplog):
    workdir, _ = ingested
    code, out, _ = run(capsys, "batch", "--config", workdir / "config.json", workdir / "dataset_malformed.jsonl",
                         "--pipelines", "baseline", "--out", workdir / "r.jsonl")
    assert code == 0 and caplog.text.count("skipped malformed row") == 3
    assert json.loads(out)[0]["n_total"] == 4


def test_batch_table_rendering(ingested, capsys):
    workdir, _ = ingested
    code, out, _ = run(capsys, "batch", "--config", workdir / "config.json", workdir / "dataset.jsonl",
                       "--pipelines", "kgrag", "--out", workdir / "r.jsonl", "--table")
    assert code == 0
    assert out.splitlines()[1] == "EM-KGRAG,zero-shot,87.50%,80.00%,70.00%,2,10"


def test_eval_reports(workdir, capsys):
    code, out, _ = run(capsys, "eval", workdir / "rankings_small_zero_shot.jsonl", workdir / "ilora_scores.jsonl",
                       "--ilora-csv", workdir / "radar.csv")
    report = json.loads(out)
    assert code == 0
    block = report["rankings"]["all"]
    assert block["borda"] == {"Baseline": 64, "EM-RAG": 140, "EM-KGRAG": 102}
    assert block["order"] == ["EM-RAG", "EM-KGRAG", "Baseline"]
    assert block["friedman"]["n"] == 51
    assert report["ilora"][0]["logicality"] == 4.0
    assert (workdir / "radar.csv").read_text().startswith("group,n,informativeness")

    code, out, err = run(capsys, "eval", workdir / "rankings_single.jsonl")
    assert code == 0 and "N >= 2" in err and "refused" in json.loads(out)["rankings"]["all"]["friedman"]

    code, out, _ = run(capsys, "eval", workdir / "rankings_balanced.jsonl")
    assert json.loads(out)["rankings"]["all"]["friedman"]["chi_square"] == 0.0


def test_eval_metrics_from_batch_results(ingested, capsys):
    workdir, _ = ingested
    run(capsys, "batch", "--config", workdir / "config.json", workdir / "dataset.jsonl", "--pipelines", "kgrag",
        "--out", workdir / "r.jsonl")
    code, out, _ = run(capsys, "eval", workdir / "r.jsonl")
    metrics = json.loads(out)["metrics"]
    assert code == 0 and metrics[0]["display"]["accuracy"] == "87.50%"


def test_parser_errors_exit_1(capsys):
    for argv in (["frobnicate"], ["verify"], ["eval", "x", "--alpha", "0.2"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 1


def test_module_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "greenclaim", "schema-merge", str(workdir / "schema.json"),
                           "-o", str(workdir / "m.json")], capture_output=True, text=True)
    assert proc.returncode == 0
