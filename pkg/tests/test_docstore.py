import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenclaim.docstore import DocStore, chunk_document, index_chunks, retrieve_chunks, window_bounds
from greenclaim.embeddings import HashingEmbedder
from greenclaim.errors import InvalidWindow, StoreSealed


def expected_chunk_count(n, size=250, overlap=50):
    if n == 0:
        return 0
    if n <= size:
        return 1
    return 1 + math.ceil((n - size) / (size - overlap))


@pytest.mark.parametrize("n,count", [(0, 0), (1, 1), (250, 1), (251, 2), (450, 2), (451, 3), (650, 3)])
def test_window_counts(n, count):
    assert len(window_bounds(n)) == count == expected_chunk_count(n)


def test_450_tokens_two_windows():
    assert window_bounds(450) == [(0, 250), (200, 450)]


@given(st.integers(0, 3000), st.integers(2, 300), st.data())
def test_windows_cover_with_fixed_stride(n, size, data):
    overlap = data.draw(st.integers(0, size - 1))
    bounds = window_bounds(n, size, overlap)
    assert len(bounds) == expected_chunk_count(n, size, overlap)
    covered = set()
    for i, (start, end) in enumerate(bounds):
        assert start == i * (size - overlap)
        assert 0 < end - start <= size
        covered.update(range(start, end))
    assert covered == set(range(n))


def test_invalid_window():
    with pytest.raises(InvalidWindow):
        window_bounds(10, 50, 50)


def test_chunk_page_is_page_of_first_token():
    spans = [(" ".join(f"a{i}" for i in range(180)), 1), (" ".join(f"b{i}" for i in range(180)), 2)]
    chunks = chunk_document(spans, report_id="r", company="Acme", year=2023)
    assert [c.page_number for c in chunks] == [1, 2]
    assert chunks[1].text.split()[0] == "b20"
    assert chunks[0].ref == "r#0@p1"


def _store(emb):
    store = DocStore()
    docs = [("r1", "Acme", "Acme cut water use at the plant."), ("r2", "Acme", "Acme sells solar panels."),
            ("r3", "Other", "Acme water water water.")]
    for rid, company, text in docs:
        index_chunks(store, chunk_document([(text, 1)], report_id=rid, company=company, year=2023), emb)
    return store


def test_retrieval_filters_company_and_ranks():
    emb = HashingEmbedder()
    hits = retrieve_chunks(_store(emb), "water use", "Acme", emb, top_m=8)
    assert [c.report_id for c, _ in hits] == ["r1", "r2"]
    assert hits[0][1] > hits[1][1]
    assert retrieve_chunks(_store(emb), "water", "Nobody", emb) == []


def test_ties_break_on_report_then_chunk():
    emb = HashingEmbedder()
    store = DocStore()
    for rid in ("b", "a"):
        index_chunks(store, chunk_document([("same text", 1)], report_id=rid, company="X", year=1), emb)
    assert [c.report_id for c, _ in retrieve_chunks(store, "same text", "X", emb)] == ["a", "b"]


def test_index_is_idempotent_and_seal(tmp_path):
    emb = HashingEmbedder()
    chunks = chunk_document([("one two three", 1)], report_id="r", company="X", year=1)
    store = DocStore()
    assert index_chunks(store, chunks, emb) == 1
    assert index_chunks(store, chunks, emb) == 1
    assert len(store) == 1
    store.save(tmp_path / "d.jsonl")
    loaded = DocStore.load(tmp_path / "d.jsonl")
    assert loaded.chunks() == store.chunks()
    assert np.array_equal(loaded.chunks()[0].embedding, store.chunks()[0].embedding)
    store.seal()
    with pytest.raises(StoreSealed):
        index_chunks(store, chunk_document([("new", 1)], report_id="s", company="X", year=1), emb)
