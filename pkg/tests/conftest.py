import shutil
import sys

import pytest

from greenclaim.docstore import DocStore
from greenclaim.embeddings import HashingEmbedder
from greenclaim.graph_store import Graph, load_schema
from greenclaim.ingest import load_parsed_report, load_triples_sidecar, populate
from greenclaim.llm_provider import MockProvider

from support import FIXTURES


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def workdir(tmp_path):
    """Copy of the fixture directory that commands may write into."""
    dest = tmp_path / "fx"
    shutil.copytree(FIXTURES, dest)
    return dest


@pytest.fixture(scope="session")
def schema():
    return load_schema(FIXTURES / "schema.json")


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder()


@pytest.fixture
def populated(schema, embedder):
    """Graph and document store built from the fixture corpus and sidecar."""
    corpus = [load_parsed_report(FIXTURES / "corpus" / n) for n in ("acme-2023.jsonl", "boreal-2022.jsonl")]
    graph, store = Graph(schema), DocStore()
    report = populate(corpus, schema, None, embedder, graph, store,
                      sidecar=load_triples_sidecar(FIXTURES / "sidecar.jsonl"))
    return graph, store, report


@pytest.fixture
def mock_provider():
    return MockProvider.from_file(FIXTURES / "mock_script.jsonl")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not any(module.OUTCOMES.values()):
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
