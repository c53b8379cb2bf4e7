"""Corpus ingestion: parsed reports -> document store + knowledge graph."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .docstore import CHUNK_OVERLAP, CHUNK_SIZE, Chunk, DocStore, chunk_document, index_chunks
from .embeddings import Embedder
from .errors import (
    GreenClaimError,
    MissingField,
    ParseError,
    ProviderError,
    SchemaViolation,
    UnknownEntityType,
)
from .graph_store import (
    Edge,
    Graph,
    Node,
    Schema,
    bfs_distances,
    coerce_properties,
    read_records,
    validate_triple,
)
from .grounding import KPI_TYPE, MERGE_THRESHOLD, ORG_TYPE, normalize_name
from .llm_provider import ChatRequest, Provider, extract_json

logger = logging.getLogger(__name__)

SPAN_KINDS = frozenset({"paragraph", "table", "figure_description"})
ANCHOR_HOPS = 3


# ---------------------------------------------------------------------------
# Parsed reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    text: str
    page: int
    kind: str = "paragraph"


@dataclass(frozen=True)
class ParsedReport:
    report_id: str
    company: str
    year: int
    spans: tuple[Span, ...] = ()


def _require(record: Mapping[str, Any], name: str, lineno: int) -> Any:
    if name not in record or record[name] in (None, ""):
        raise MissingField(name, lineno)
    return record[name]


def load_parsed_report(path: str | Path) -> ParsedReport:
    """Read a parsed-report file: a metadata header line, then one line per span."""
    header: dict[str, Any] | None = None
    spans: list[Span] = []
    for lineno, record in read_records(path):
        if header is None:
            header = record
            report_id = str(_require(record, "report_id", lineno))
            company = normalize_name(str(_require(record, "company", lineno)))
            year = _require(record, "year", lineno)
            if isinstance(year, bool) or not isinstance(year, int):
                raise ParseError(f"year must be an integer, got {year!r}", lineno)
            continue
        text = _require(record, "text", lineno)
        page = _require(record, "page", lineno)
        if not isinstance(text, str):
            raise ParseError("span text must be a string", lineno)
        if isinstance(page, bool) or not isinstance(page, int) or page < 1:
            raise ParseError(f"page must be an integer >= 1, got {page!r}", lineno)
        kind = record.get("kind", "paragraph")
        if kind not in SPAN_KINDS:
            raise ParseError(f"unknown span kind {kind!r}", lineno)
        spans.append(Span(text, page, kind))
    if header is None:
        raise MissingField("report_id", 1)
    return ParsedReport(report_id, company, year, tuple(spans))


def write_parsed_report(report: ParsedReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"report_id": report.report_id, "company": report.company, "year": report.year}) + "\n")
        for span in report.spans:
            fh.write(json.dumps({"text": span.text, "page": span.page, "kind": span.kind}, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Candidate triples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mention:
    entity_type: str
    canonical_name: str
    properties: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CandidateTriple:
    src: Mention
    label: str
    dst: Mention
    provenance: tuple[str, int] = ("", 0)

    def __post_init__(self) -> None:
        for value in (self.src.entity_type, self.src.canonical_name, self.label,
                      self.dst.entity_type, self.dst.canonical_name):
            if not isinstance(value, str) or not value.strip():
                raise ValueError("candidate triple fields must be non-empty strings")


@dataclass
class Extraction:
    triples: list[CandidateTriple] = field(default_factory=list)
    malformed: int = 0
    calls: int = 0


EXTRACT_SYSTEM = (
    "You extract knowledge-graph facts from corporate ESG report text. Only use the allowed "
    "(source type, relation, target type) triples. Respond with a JSON array only."
)


def extraction_prompt(report: ParsedReport, schema: Schema, spans: Sequence[Span]) -> str:
    allowed = "\n".join(f"- ({s}, {l}, {d})" for s, l, d in sorted(schema.allowed))
    domains = "\n".join(
        f"- {t}: " + ", ".join(f"{a} ({k})" for a, k in sorted(attrs.items()))
        for t, attrs in sorted(schema.attribute_domains.items())
    )
    body = "\n".join(f"[page {s.page}, {s.kind}] {s.text}" for s in spans)
    return (
        f"Company: {report.company}\nReport: {report.report_id} ({report.year})\n\n"
        f"Allowed triples:\n{allowed}\n\nAttributes:\n{domains}\n\nText:\n{body}\n\n"
        'Return [{"src": {"type": ..., "name": ..., "props": {...}}, "label": ..., '
        '"dst": {"type": ..., "name": ..., "props": {...}}, "page": ...}].'
    )


def _mention(obj: Any) -> Mention | None:
    if not isinstance(obj, dict):
        return None
    etype, name = obj.get("type"), obj.get("name")
    props = obj.get("props", obj.get("properties", {}))
    if not isinstance(etype, str) or not isinstance(name, str) or not isinstance(props, dict):
        return None
    return Mention(etype.strip(), normalize_name(name), dict(props))


def parse_triple_item(item: Any, report_id: str, default_page: int) -> CandidateTriple | None:
    if not isinstance(item, dict):
        return None
    src, dst, label = _mention(item.get("src")), _mention(item.get("dst")), item.get("label")
    if src is None or dst is None or not isinstance(label, str):
        return None
    page = item.get("page", default_page)
    if isinstance(page, bool) or not isinstance(page, int):
        page = default_page
    try:
        return CandidateTriple(src, label.strip(), dst, (report_id, page))
    except ValueError:
        return None


def extract_triples(report: ParsedReport, schema: Schema, provider: Provider, batch_size: int = 8) -> Extraction:
    """Prompt the provider once per batch of spans and parse candidate triples.

    Items that fail to parse are dropped and counted in ``malformed``; a
    response that is not a JSON array counts as one malformed item.
    """
    result = Extraction()
    spans = [s for s in report.spans if s.text.strip()]
    for start in range(0, len(spans), batch_size):
        batch = spans[start:start + batch_size]
        request = ChatRequest(
            user_text=extraction_prompt(report, schema, batch), system_text=EXTRACT_SYSTEM, tag="extract"
        )
        response = provider.complete(request)
        result.calls += 1
        try:
            items = extract_json(response.text)
        except ValueError:
            result.malformed += 1
            continue
        if isinstance(items, dict):
            items = items.get("triples")
        if not isinstance(items, list):
            result.malformed += 1
            continue
        for item in items:
            triple = parse_triple_item(item, report.report_id, batch[0].page)
            if triple is None:
                result.malformed += 1
            else:
                result.triples.append(triple)
    if result.malformed:
        logger.warning("%s: dropped %d malformed extraction item(s)", report.report_id, result.malformed)
    return result


def load_triples_sidecar(path: str | Path) -> dict[str, list[CandidateTriple]]:
    """Read pre-extracted triples keyed by report id.

    The file uses the graph snapshot record format; node records declare
    mentions and edge records reference them by ``id``. Edge ``props`` carry
    ``report_id`` and ``page`` provenance.
    """
    mentions: dict[str, Mention] = {}
    out: dict[str, list[CandidateTriple]] = {}
    for lineno, record in read_records(path):
        kind = record.get("kind")
        if kind == "node":
            node_id = str(_require(record, "id", lineno))
            mentions[node_id] = Mention(
                str(_require(record, "type", lineno)),
                normalize_name(str(_require(record, "name", lineno))),
                dict(record.get("props") or {}),
            )
        elif kind == "edge":
            src, dst = str(_require(record, "src", lineno)), str(_require(record, "dst", lineno))
            if src not in mentions or dst not in mentions:
                raise ParseError("edge references an undeclared node", lineno)
            props = record.get("props") or {}
            report_id = str(_require(props, "report_id", lineno))
            page = props.get("page", 1)
            out.setdefault(report_id, []).append(
                CandidateTriple(mentions[src], str(_require(record, "label", lineno)), mentions[dst], (report_id, page))
            )
        else:
            raise ParseError(f"unknown record kind {kind!r}", lineno)
    return out


# ---------------------------------------------------------------------------
# Entity resolution and admission
# ---------------------------------------------------------------------------


class EntityResolver:
    """Embedding-blocking entity resolution over one graph.

    Blocking key is the entity type; within a block the mention name is
    compared to every existing node name by cosine similarity, and the best
    match at or above ``merge_threshold`` is reused. For types listed in
    ``distinct_on_conflict`` (measurements), a node whose properties disagree
    with the mention is never reused, so two readings of the same KPI stay
    separate observations.
    """

    def __init__(self, graph: Graph, embedder: Embedder, merge_threshold: float = MERGE_THRESHOLD,
                 distinct_on_conflict: frozenset[str] = frozenset({KPI_TYPE})):
        self.graph = graph
        self.embedder = embedder
        self.merge_threshold = merge_threshold
        self.distinct_on_conflict = distinct_on_conflict
        self.discarded: list[tuple[str, str, Any]] = []
        self._blocks: dict[str, tuple[list[str], list[np.ndarray]]] = {}
        self._exact: dict[tuple[str, str], list[str]] = {}
        for node_id in sorted(graph.nodes):
            self._register(graph.nodes[node_id])

    def _register(self, node: Node) -> None:
        name = normalize_name(node.canonical_name)
        ids, vectors = self._blocks.setdefault(node.entity_type, ([], []))
        ids.append(node.id)
        vectors.append(self.embedder.embed(name))
        self._exact.setdefault((node.entity_type, name), []).append(node.id)

    def _compatible(self, node_id: str, properties: Mapping[str, Any]) -> bool:
        node = self.graph.nodes[node_id]
        if node.entity_type not in self.distinct_on_conflict:
            return True
        return all(node.properties.get(k, v) == v for k, v in properties.items())

    def find(self, entity_type: str, name: str, properties: Mapping[str, Any] | None = None) -> tuple[str, float] | None:
        properties = properties or {}
        name = normalize_name(name)
        for node_id in self._exact.get((entity_type, name), ()):
            if self._compatible(node_id, properties):
                return node_id, 1.0
        ids, vectors = self._blocks.get(entity_type, ([], []))
        if not ids:
            return None
        query = self.embedder.embed(name)
        if not query.any():
            return None
        sims = np.stack(vectors) @ query
        # stable sort: equal similarities keep registration order
        for i in np.argsort(-sims, kind="stable"):
            if sims[i] < self.merge_threshold:
                break
            if self._compatible(ids[i], properties):
                return ids[i], float(sims[i])
        return None

    def resolve(self, entity_type: str, canonical_name: str, properties: Mapping[str, Any]) -> tuple[str, bool]:
        """Return ``(node_id, created)``."""
        graph = self.graph
        if entity_type not in graph.schema.entity_types:
            raise UnknownEntityType(entity_type)
        props = coerce_properties(graph.schema, entity_type, properties)
        match = self.find(entity_type, canonical_name, props)
        if match is None:
            node = Node(None, entity_type, props, normalize_name(canonical_name))
            graph.add_node(node)
            self._register(node)
            return node.id, True
        node_id = match[0]
        existing = graph.nodes[node_id].properties
        new = {}
        for key, value in props.items():
            if key not in existing:
                new[key] = value
            elif existing[key] != value:
                logger.info("keeping %s.%s=%r, discarding %r", node_id, key, existing[key], value)
                self.discarded.append((node_id, key, value))
        if new:
            graph.update_properties(node_id, new)
        return node_id, False


def resolve_entity(
    graph: Graph,
    entity_type: str,
    canonical_name: str,
    properties: Mapping[str, Any],
    embedder: Embedder,
    merge_threshold: float = MERGE_THRESHOLD,
) -> str:
    """Reuse the most similar same-type node or create a new one; returns its id."""
    return EntityResolver(graph, embedder, merge_threshold).resolve(entity_type, canonical_name, properties)[0]


@dataclass
class Rejection:
    candidate: CandidateTriple
    reason: SchemaViolation


@dataclass
class Admission:
    admitted: int = 0
    rejected: list[Rejection] = field(default_factory=list)
    merged: int = 0
    created: int = 0
    edges: list[Edge] = field(default_factory=list)


def admit_triples(
    graph: Graph,
    candidates: Iterable[CandidateTriple],
    embedder: Embedder,
    merge_threshold: float = MERGE_THRESHOLD,
    resolver: EntityResolver | None = None,
) -> Admission:
    """Admit schema-valid candidates; everything else is rejected with a reason.

    The schema check happens before entity resolution, so a rejected
    candidate never creates nodes.
    """
    resolver = resolver or EntityResolver(graph, embedder, merge_threshold)
    result = Admission()
    for cand in candidates:
        if not validate_triple(graph.schema, cand.src.entity_type, cand.label, cand.dst.entity_type):
            result.rejected.append(
                Rejection(cand, SchemaViolation(cand.src.entity_type, cand.label, cand.dst.entity_type))
            )
            continue
        endpoints = []
        for mention in (cand.src, cand.dst):
            node_id, created = resolver.resolve(mention.entity_type, mention.canonical_name, mention.properties)
            if created:
                result.created += 1
            elif graph.nodes[node_id].canonical_name != mention.canonical_name:
                result.merged += 1
            endpoints.append(node_id)
        report_id, page = cand.provenance
        edge = Edge(endpoints[0], cand.label, endpoints[1], {"report_id": report_id, "page": page})
        graph.add_edge(edge)
        result.edges.append(edge)
        result.admitted += 1
    return result


# ---------------------------------------------------------------------------
# Population
# ---------------------------------------------------------------------------


@dataclass
class PopulationReport:
    reports: int = 0
    chunks: int = 0
    candidates: int = 0
    admitted: int = 0
    rejected: int = 0
    merged_entities: int = 0
    malformed: int = 0
    anchored: int = 0
    unanchored: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "reports": self.reports,
            "chunks": self.chunks,
            "candidates": self.candidates,
            "admitted": self.admitted,
            "rejected": self.rejected,
            "merged_entities": self.merged_entities,
            "malformed": self.malformed,
            "anchored": self.anchored,
            "unanchored": list(self.unanchored),
            "failures": [list(f) for f in self.failures],
        }


def anchor_to_company(graph: Graph, org_id: str, node_ids: Iterable[str]) -> tuple[int, list[str]]:
    """Attach nodes that sit more than three hops from the company node.

    The attachment uses the first schema-allowed ``Organization -> type``
    relation (alphabetical). Nodes with no such relation are returned as
    unanchored.
    """
    anchored, unanchored = 0, []
    reach = bfs_distances(graph, org_id, max_hops=ANCHOR_HOPS)
    for node_id in sorted(set(node_ids)):
        if node_id in reach:
            continue
        if anchored:
            reach = bfs_distances(graph, org_id, max_hops=ANCHOR_HOPS)
            if node_id in reach:
                continue
        etype = graph.nodes[node_id].entity_type
        labels = graph.schema.relations_between(ORG_TYPE, etype)
        if labels:
            graph.add_edge(Edge(org_id, labels[0], node_id, {"anchor": True}))
            anchored += 1
        else:
            unanchored.append(node_id)
    return anchored, unanchored


def _prepare(report: ParsedReport, schema: Schema, provider: Provider | None,
             sidecar: Mapping[str, Sequence[CandidateTriple]] | None, size: int, overlap: int):
    chunks = chunk_document([(s.text, s.page) for s in report.spans], size, overlap,
                            report_id=report.report_id, company=report.company, year=report.year)
    if sidecar is not None and report.report_id in sidecar:
        extraction = Extraction(list(sidecar[report.report_id]))
    elif provider is not None:
        extraction = extract_triples(report, schema, provider)
    else:
        extraction = Extraction()
    return chunks, extraction


def populate(
    corpus: Sequence[ParsedReport],
    schema: Schema,
    provider: Provider | None,
    embedder: Embedder,
    graph: Graph,
    store: DocStore,
    *,
    sidecar: Mapping[str, Sequence[CandidateTriple]] | None = None,
    merge_threshold: float = MERGE_THRESHOLD,
    chunk_size: int = CHUNK_SIZE,
    overlap: int = CHUNK_OVERLAP,
    width: int = 1,
) -> PopulationReport:
    """Fill ``store`` and ``graph`` from a corpus of parsed reports.

    Chunking and triple extraction run on up to ``width`` threads; every
    write to the stores happens afterwards on the calling thread, in corpus
    order. A failing report is recorded and skipped.
    """
    if graph.schema != schema:
        raise ValueError("graph was built for a different schema")
    if ORG_TYPE not in schema.entity_types:
        raise UnknownEntityType(ORG_TYPE)
    report = PopulationReport()

    def prepare(r: ParsedReport):
        try:
            return _prepare(r, schema, provider, sidecar, chunk_size, overlap)
        except (ProviderError, GreenClaimError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, width)) as pool:
        prepared = list(pool.map(prepare, corpus))

    resolver = EntityResolver(graph, embedder, merge_threshold)
    for parsed, outcome in zip(corpus, prepared):
        report.reports += 1
        if isinstance(outcome, Exception):
            report.failures.append((parsed.report_id, str(outcome)))
            logger.error("report %s failed: %s", parsed.report_id, outcome)
            continue
        chunks, extraction = outcome
        try:
            org_id, _ = resolver.resolve(ORG_TYPE, parsed.company, {})
            company = graph.nodes[org_id].canonical_name
            chunks = [_with_company(c, company) for c in chunks]
            report.chunks += index_chunks(store, chunks, embedder)
            admission = admit_triples(graph, extraction.triples, embedder, merge_threshold, resolver)
            touched = [n for e in admission.edges for n in (e.source, e.target)]
            anchored, unanchored = anchor_to_company(graph, org_id, touched)
        except GreenClaimError as exc:
            report.failures.append((parsed.report_id, str(exc)))
            logger.error("report %s failed: %s", parsed.report_id, exc)
            continue
        report.candidates += len(extraction.triples)
        report.malformed += extraction.malformed
        report.admitted += admission.admitted
        report.rejected += len(admission.rejected)
        report.merged_entities += admission.merged
        report.anchored += anchored
        report.unanchored.extend(unanchored)
        for rejection in admission.rejected:
            logger.info("%s: rejected %s", parsed.report_id, rejection.reason)
    graph.ensure_embeddings(embedder)
    return report


def _with_company(chunk: Chunk, company: str) -> Chunk:
    if chunk.company == company:
        return chunk
    return Chunk(chunk.report_id, company, chunk.year, chunk.chunk_id, chunk.page_number, chunk.text)
