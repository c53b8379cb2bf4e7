"""``greenclaim`` command-line interface.

Exit codes: 0 success (or decided verdict), 1 I/O or configuration error,
2 validation conflict, 3 abstention (``verify`` only).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any, Sequence

from .config import RunConfig, load_config
from .docstore import DocStore
from .embeddings import make_embedder
from .errors import ConflictingAttributeKind, GreenClaimError, MalformedMatrix, UnparseableRanking
from .evaluation import (
    ILORA_CRITERIA,
    IloraScore,
    RankingRecord,
    borda_order,
    borda_scores,
    compute_metrics,
    ilora_table,
    position_counts,
    rows_to_csv,
    significance,
)
from .graph_store import Graph, graph_stats, load_graph, load_schema, merge_schemas, save_graph, save_schema
from .grounding import Claim
from .ingest import load_parsed_report, load_triples_sidecar, populate
from .llm_provider import make_provider
from .pipelines import (
    PIPELINE_ALIASES,
    PROMPT_MODES,
    Assessment,
    PipelineParams,
    PromptConfig,
    Stores,
    load_dataset,
    read_assessments,
    run_batch,
    verify_claim,
    write_assessments,
)

logger = logging.getLogger("greenclaim")

EXIT_OK, EXIT_IO, EXIT_CONFLICT, EXIT_ABSTAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default; 2 means conflict here
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _emit(data: Any, table: bool = False) -> None:
    if table and isinstance(data, dict):
        width = max((len(str(k)) for k in data), default=0)
        for key, value in data.items():
            if isinstance(value, float):
                shown = f"{value:.2f}"
            elif isinstance(value, (str, int)):
                shown = value
            else:
                shown = json.dumps(value, sort_keys=True)
            print(f"{key:<{width}}  {shown}")
    elif table and isinstance(data, list) and data and isinstance(data[0], dict):
        sys.stdout.write(rows_to_csv(data))
    else:
        print(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))


def _config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "schema": getattr(args, "schema", None),
        "graph": getattr(args, "graph", None),
        "docstore": getattr(args, "docstore", None),
        "sidecar": getattr(args, "sidecar", None),
        "top_n": getattr(args, "top_n", None),
        "threshold": getattr(args, "threshold", None),
        "k": getattr(args, "k", None),
        "top_m": getattr(args, "top_m", None),
        "width": getattr(args, "width", None),
        "prompt_mode": getattr(args, "prompt_mode", None),
    }
    script = getattr(args, "mock_script", None)
    if script:
        overrides["provider"] = {"kind": "mock", "script": str(Path(script).resolve())}
    return load_config(args.config, overrides=overrides)


def _load_graph(config: RunConfig) -> Graph:
    config.require("schema", "graph")
    return load_graph(config.graph, load_schema(config.schema))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def schema_conflicts(paths: Sequence[str]) -> list[str]:
    seen: dict[tuple[str, str], tuple[str, str]] = {}
    conflicts = []
    for path in paths:
        for etype, attrs in sorted(load_schema(path).attribute_domains.items()):
            for attr, kind in sorted(attrs.items()):
                first = seen.setdefault((etype, attr), (kind, path))
                if first[0] != kind:
                    conflicts.append(f"{etype}.{attr}: {first[0]} ({first[1]}) vs {kind} ({path})")
    return conflicts


def cmd_schema_merge(args: argparse.Namespace) -> int:
    try:
        merged = merge_schemas(load_schema(p) for p in args.inputs)
    except ConflictingAttributeKind:
        for line in schema_conflicts(args.inputs):
            print(f"conflict: {line}", file=sys.stderr)
        return EXIT_CONFLICT
    save_schema(merged, args.output)
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _config(args)
    config.require("schema")
    schema = load_schema(config.schema)
    graph_path = Path(args.graph_out or config.graph or "graph.jsonl")
    docs_path = Path(args.docstore_out or config.docstore or "docstore.jsonl")
    corpus = [load_parsed_report(p) for p in args.reports]
    sidecar = load_triples_sidecar(config.sidecar) if config.sidecar else None
    provider = make_provider(config.provider, config.base_dir)
    graph, store = Graph(schema), DocStore()
    report = populate(corpus, schema, provider, make_embedder(config.embedder), graph, store, sidecar=sidecar,
                      merge_threshold=config.merge_threshold, width=config.width)
    save_graph(graph, graph_path)
    store.save(docs_path)
    result = report.to_dict()
    result.update(n_entities=len(graph.nodes), n_relationships=len(graph.edges), n_chunks=len(store))
    _emit(result, args.table)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    graph = _load_graph(_config(args))
    _emit(graph_stats(graph, top_k=args.top, path_metrics=not args.no_paths).to_dict(), args.table)
    return EXIT_OK


def _stores(config: RunConfig) -> Stores:
    stores = Stores()
    if config.graph is not None:
        stores.graph = _load_graph(config)
    if config.docstore is not None:
        config.require("docstore")
        stores.docstore = DocStore.load(config.docstore)
    return stores


def _params(config: RunConfig) -> PipelineParams:
    return PipelineParams(config.retrieval, config.top_m, config.merge_threshold)


def _prompt(config: RunConfig, mode: str) -> PromptConfig:
    return PromptConfig.load(mode, config.examples, config.definitions)


def cmd_verify(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.pipeline.lower() not in PIPELINE_ALIASES:
        raise UsageError(f"unknown pipeline {args.pipeline!r}; choose from {', '.join(PIPELINE_ALIASES)}")
    claim = Claim(args.claim, id=args.id, company=args.company)
    assessment = verify_claim(claim, args.pipeline, _stores(config), _params(config),
                              _prompt(config, config.prompt_mode), make_provider(config.provider, config.base_dir),
                              make_embedder(config.embedder))
    _emit(assessment.to_record(), args.table)
    return EXIT_ABSTAIN if assessment.abstained else EXIT_OK


def metric_rows(assessments: Sequence[Assessment]) -> list[dict[str, Any]]:
    groups: dict[tuple[str, str], list[Assessment]] = defaultdict(list)
    for a in assessments:
        if a.label is not None:
            groups[(a.pipeline, a.prompt_mode)].append(a)
    rows = []
    for (pipeline, mode), items in groups.items():
        report = compute_metrics((a.verdict, a.label) for a in items)
        rows.append({"pipeline": pipeline, "prompt_mode": mode, **report.to_dict()})
    return rows


def cmd_batch(args: argparse.Namespace) -> int:
    config = _config(args)
    claims, _warnings = load_dataset(args.dataset)
    pipelines = args.pipelines.split(",")
    for name in pipelines:
        if name.lower() not in PIPELINE_ALIASES:
            raise UsageError(f"unknown pipeline {name!r}")
    modes = args.modes.split(",") if args.modes else [config.prompt_mode]
    for mode in modes:
        if mode not in PROMPT_MODES:
            raise UsageError(f"unknown prompt mode {mode!r}")
    results = run_batch(claims, pipelines, [_prompt(config, m) for m in modes], _stores(config), _params(config),
                        make_provider(config.provider, config.base_dir), make_embedder(config.embedder),
                        config.width)
    write_assessments(results, args.out)
    rows = metric_rows(results)
    if args.metrics_out:
        Path(args.metrics_out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.table:
        rows = [{"pipeline": r["pipeline"], "prompt_mode": r["prompt_mode"], **r["display"],
                 "n_abstains": r["n_abstains"], "n_total": r["n_total"]} for r in rows]
    _emit(rows, args.table)
    return EXIT_OK


def _read_jsonl(path: str) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def evaluation_report(paths: Sequence[str], alpha: float = 0.05) -> dict[str, Any]:
    """Metrics, Borda, Friedman/Nemenyi and ILORA summaries for result files.

    Each JSONL file may mix assessment records (``verdict``), ranking records
    (``ranks``) and ILORA records (the five criteria plus an optional
    ``group``).
    """
    assessments: list[Assessment] = []
    rankings: dict[str, list[RankingRecord]] = defaultdict(list)
    ilora: dict[str, list[IloraScore]] = defaultdict(list)
    skipped = 0
    for path in paths:
        for rec in _read_jsonl(path):
            if "verdict" in rec:
                assessments.append(Assessment.from_record(rec))
            elif "ranks" in rec:
                try:
                    record = RankingRecord(rec.get("id"), rec["ranks"], bool(rec.get("has_empty", False)))
                except UnparseableRanking:
                    skipped += 1
                    continue
                rankings[rec.get("group", "all")].append(record)
            elif all(c in rec for c in ILORA_CRITERIA):
                ilora[rec.get("group", "all")].append(IloraScore(**{c: rec[c] for c in ILORA_CRITERIA}))
            else:
                skipped += 1

    report: dict[str, Any] = {"skipped_records": skipped}
    if assessments:
        report["metrics"] = sorted(metric_rows(assessments), key=lambda r: (r["prompt_mode"], r["pipeline"]))
    if rankings:
        blocks = {}
        for group, records in sorted(rankings.items()):
            scores = borda_scores(records)
            block: dict[str, Any] = {
                "n": len(records),
                "with_empty_justification": sum(r.has_empty for r in records),
                "position_counts": position_counts(records),
                "borda": scores,
                "order": borda_order(scores),
            }
            if len(records) < 2:
                block["friedman"] = {"refused": f"Friedman test needs N >= 2 ranking records, got {len(records)}"}
            else:
                try:
                    block["friedman"] = significance(records, alpha).to_dict()
                except (MalformedMatrix, GreenClaimError) as exc:
                    block["friedman"] = {"refused": str(exc)}
            blocks[group] = block
        report["rankings"] = blocks
    if ilora:
        report["ilora"] = ilora_table(ilora)
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluation_report(args.results, args.alpha)
    for group, block in report.get("rankings", {}).items():
        if "refused" in block.get("friedman", {}):
            print(f"{group}: {block['friedman']['refused']}", file=sys.stderr)
    if args.ilora_csv and "ilora" in report:
        Path(args.ilora_csv).write_text(rows_to_csv(report["ilora"]), encoding="utf-8")
    _emit(report, args.table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--table", action="store_true", help="human-readable output instead of JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    stores = argparse.ArgumentParser(add_help=False)
    stores.add_argument("--schema")
    stores.add_argument("--graph", help="graph snapshot (JSONL)")
    stores.add_argument("--docstore", help="document store (JSONL)")
    stores.add_argument("--mock-script", help="scripted mock provider responses (JSONL)")

    retrieval = argparse.ArgumentParser(add_help=False)
    retrieval.add_argument("--top-n", type=int)
    retrieval.add_argument("--threshold", type=float)
    retrieval.add_argument("-k", type=int)
    retrieval.add_argument("--top-m", type=int)
    retrieval.add_argument("--prompt-mode", choices=PROMPT_MODES)
    retrieval.add_argument("--width", type=int)

    parser = _Parser(prog="greenclaim", description="Knowledge-graph grounded verification of sustainability claims")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schema-merge", parents=[common], help="merge partial schema files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_schema_merge)

    p = sub.add_parser("ingest", parents=[common, stores], help="populate the graph and document store")
    p.add_argument("reports", nargs="*")
    p.add_argument("--sidecar", help="pre-extracted triples (graph record JSONL)")
    p.add_argument("--width", type=int)
    p.add_argument("--graph-out")
    p.add_argument("--docstore-out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", parents=[common, stores], help="graph statistics")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--no-paths", action="store_true", help="skip average path length and diameter")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify", parents=[common, stores, retrieval], help="verify a single claim")
    p.add_argument("claim")
    p.add_argument("--pipeline", default="kgrag", help="baseline, rag, kgrag or hybrid")
    p.add_argument("--company")
    p.add_argument("--id")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("batch", parents=[common, stores, retrieval], help="run pipelines over a dataset")
    p.add_argument("dataset")
    p.add_argument("--pipelines", default="baseline,rag,kgrag,hybrid")
    p.add_argument("--modes", help="comma separated prompt modes")
    p.add_argument("--out", required=True, help="results JSONL")
    p.add_argument("--metrics-out")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("eval", parents=[common], help="evaluation report from result files")
    p.add_argument("results", nargs="+")
    p.add_argument("--alpha", type=float, default=0.05, choices=[0.05, 0.10])
    p.add_argument("--ilora-csv", help="write ILORA radar data as CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"greenclaim: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConflictingAttributeKind as exc:
        print(f"greenclaim: conflict: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    except (OSError, ValueError, GreenClaimError) as exc:
        print(f"greenclaim: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
