"""Schema-driven evidence subgraph extraction and prompt rendering.

For every grounded claim element, candidate nodes of the element's type are
collected within ``k`` hops of the company node, gated by embedding
similarity, cut to the ``top_n`` best, and joined to the company by shortest
paths. The union of those paths is the evidence subgraph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterator

import numpy as np

from .embeddings import Embedder, cosine_similarity
from .errors import MissingCompanyNode
from .graph_store import Edge, Graph, Node, PathStep, bfs_distances, shortest_path

if TYPE_CHECKING:
    from .grounding import GroundedClaim

TOP_N = 3
SIMILARITY_THRESHOLD = 0.2
MAX_HOPS = 3


@dataclass(frozen=True)
class RetrievalParams:
    top_n: int = TOP_N
    threshold: float = SIMILARITY_THRESHOLD
    k: int = MAX_HOPS

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class EvidencePath:
    element: int
    target: str
    similarity: float
    steps: tuple[PathStep, ...]


@dataclass
class EvidenceSubgraph:
    company: str | None = None
    nodes: set[str] = field(default_factory=set)
    edges: set[Edge] = field(default_factory=set)
    paths: list[EvidencePath] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.nodes)

    def add_path(self, path: EvidencePath) -> None:
        self.paths.append(path)
        for node_id, edge in path.steps:
            self.nodes.add(node_id)
            if edge is not None:
                self.edges.add(edge)


def node_text(node: Node) -> str:
    """Text whose embedding represents ``node`` during retrieval."""
    if not node.properties:
        return node.canonical_name
    props = ", ".join(f"{k}: {_fmt(v)}" for k, v in sorted(node.properties.items()))
    return f"{node.canonical_name} {props}".strip()


def _fmt(value: Any) -> str:
    return value if isinstance(value, str) else json.dumps(value)


def node_vector(node: Node, embedder: Embedder) -> np.ndarray:
    if node.embedding is not None and len(node.embedding) == embedder.dimension:
        return node.embedding
    return embedder.embed(node_text(node))


def rank_candidates(
    graph: Graph, candidates: set[str], query: np.ndarray, params: RetrievalParams, embedder: Embedder
) -> list[tuple[str, float]]:
    scored = []
    for node_id in candidates:
        sim = cosine_similarity(query, node_vector(graph.nodes[node_id], embedder))
        if sim >= params.threshold:
            scored.append((node_id, sim))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[: params.top_n]


def retrieve_context(
    graph: Graph, grounded: GroundedClaim, params: RetrievalParams, embedder: Embedder
) -> EvidenceSubgraph:
    company = grounded.company_node
    if company is None or company not in graph.nodes:
        raise MissingCompanyNode(f"claim is not linked to a company node ({grounded.company_name!r})")
    reach = bfs_distances(graph, company, max_hops=params.k)
    by_type: dict[str, set[str]] = {}
    for node_id in reach:
        by_type.setdefault(graph.nodes[node_id].entity_type, set()).add(node_id)

    evidence = EvidenceSubgraph(company=company)
    for index, element in enumerate(grounded.elements):
        candidates = by_type.get(element.entity_type)
        if not candidates:
            continue
        query = embedder.embed(element.phrase)
        for node_id, sim in rank_candidates(graph, candidates, query, params, embedder):
            steps = shortest_path(graph, company, node_id)
            evidence.add_path(EvidencePath(index, node_id, sim, tuple(steps)))
    return evidence


def _render_node(node: Node) -> str:
    name = node.canonical_name or node.id or ""
    if not node.properties:
        return name
    props = ", ".join(f"{k}: {_fmt(v)}" for k, v in sorted(node.properties.items()))
    return f"{name} {{{props}}}"


def render_path(graph: Graph, steps: tuple[PathStep, ...]) -> str:
    first = steps[0][0]
    parts = [_render_node(graph.nodes[first])]
    previous = first
    for node_id, edge in steps[1:]:
        target = _render_node(graph.nodes[node_id])
        if edge.source == previous:
            parts.append(f"-[{edge.label}]-> {target}")
        else:
            parts.append(f"<-[{edge.label}]- {target}")
        previous = node_id
    return " ".join(parts)


def render_context(evidence: EvidenceSubgraph, graph: Graph) -> str:
    """One line per distinct evidence path, sorted; empty string for no evidence."""
    lines = sorted({render_path(graph, p.steps) for p in evidence.paths})
    return "\n".join(lines)


def evidence_records(evidence: EvidenceSubgraph, graph: Graph) -> Iterator[dict[str, Any]]:
    """Debug dump of the subgraph in graph snapshot record format."""
    for node_id in sorted(evidence.nodes):
        node = graph.nodes[node_id]
        yield {"kind": "node", "id": node.id, "type": node.entity_type, "props": node.properties,
               "name": node.canonical_name}
    for edge in sorted(evidence.edges, key=lambda e: e.key):
        yield {"kind": "edge", "src": edge.source, "label": edge.label, "dst": edge.target,
               "props": dict(edge.properties)}
