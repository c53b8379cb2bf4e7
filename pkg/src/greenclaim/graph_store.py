"""Schema-validated labeled property graph.

Nodes carry an entity type and typed properties, edges carry a relation label.
Every edge is checked against the schema's allowed ``(source_type, label,
target_type)`` triples before it is stored. Traversal helpers treat edges as
undirected; edge direction is kept for display.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    AttributeKindMismatch,
    ConflictingAttributeKind,
    MissingEndpoint,
    MissingNode,
    ParseError,
    SchemaError,
    SchemaViolation,
    StoreSealed,
    UndeclaredAttribute,
    UnknownEntityType,
)

logger = logging.getLogger(__name__)

VALUE_KINDS = frozenset({"text", "number", "year", "unit", "boolean"})
RAW_PREFIX = "raw:"


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    entity_types: frozenset[str] = frozenset()
    relation_types: frozenset[str] = frozenset()
    allowed: frozenset[tuple[str, str, str]] = frozenset()
    attribute_domains: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entity_types", frozenset(self.entity_types))
        object.__setattr__(self, "relation_types", frozenset(self.relation_types))
        object.__setattr__(self, "allowed", frozenset(tuple(t) for t in self.allowed))
        domains = {t: dict(attrs) for t, attrs in self.attribute_domains.items()}
        object.__setattr__(self, "attribute_domains", domains)

        for src, label, dst in self.allowed:
            if src not in self.entity_types or dst not in self.entity_types:
                raise SchemaError(f"allowed triple ({src}, {label}, {dst}) uses an undeclared entity type")
            if label not in self.relation_types:
                raise SchemaError(f"allowed triple ({src}, {label}, {dst}) uses an undeclared relation")
        for etype, attrs in domains.items():
            if etype not in self.entity_types:
                raise SchemaError(f"attribute domain declared for unknown type {etype!r}")
            for attr, kind in attrs.items():
                if kind not in VALUE_KINDS:
                    raise SchemaError(f"{etype}.{attr}: unknown value kind {kind!r}")

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, str]],
        attribute_domains: Mapping[str, Mapping[str, str]] | None = None,
        entity_types: Iterable[str] = (),
    ) -> Schema:
        """Build a schema whose type and relation sets are inferred from ``triples``."""
        triples = [tuple(t) for t in triples]
        types = set(entity_types) | {t[0] for t in triples} | {t[2] for t in triples}
        types |= set(attribute_domains or {})
        return cls(
            entity_types=frozenset(types),
            relation_types=frozenset(t[1] for t in triples),
            allowed=frozenset(triples),
            attribute_domains=attribute_domains or {},
        )

    def attributes(self, entity_type: str) -> Mapping[str, str]:
        return self.attribute_domains.get(entity_type, {})

    def relations_between(self, src_type: str, dst_type: str) -> list[str]:
        return sorted(label for s, label, d in self.allowed if s == src_type and d == dst_type)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity_types": sorted(self.entity_types),
            "relation_types": sorted(self.relation_types),
            "allowed": [list(t) for t in sorted(self.allowed)],
            "attribute_domains": {
                t: dict(sorted(attrs.items())) for t, attrs in sorted(self.attribute_domains.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Schema:
        allowed = [tuple(t) for t in data.get("allowed", [])]
        for t in allowed:
            if len(t) != 3:
                raise SchemaError(f"allowed entry {list(t)!r} is not a (source, relation, target) triple")
        return cls(
            entity_types=frozenset(data.get("entity_types", [])),
            relation_types=frozenset(data.get("relation_types", [])),
            allowed=frozenset(allowed),
            attribute_domains=data.get("attribute_domains", {}),
        )


def validate_triple(schema: Schema, src_type: str, label: str, dst_type: str) -> bool:
    return (src_type, label, dst_type) in schema.allowed


def merge_schemas(parts: Iterable[Schema]) -> Schema:
    """Union of several partial schemas.

    Attribute domains are merged key-wise; declaring the same attribute with
    two different value kinds raises :class:`ConflictingAttributeKind`.
    """
    entity_types: set[str] = set()
    relation_types: set[str] = set()
    allowed: set[tuple[str, str, str]] = set()
    domains: dict[str, dict[str, str]] = {}
    for part in parts:
        entity_types |= part.entity_types
        relation_types |= part.relation_types
        allowed |= part.allowed
        for etype, attrs in part.attribute_domains.items():
            merged = domains.setdefault(etype, {})
            for attr, kind in attrs.items():
                if attr in merged and merged[attr] != kind:
                    raise ConflictingAttributeKind(etype, attr, (merged[attr], kind))
                merged[attr] = kind
    return Schema(frozenset(entity_types), frozenset(relation_types), frozenset(allowed), domains)


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(dump_schema(schema), encoding="utf-8")


def dump_schema(schema: Schema) -> str:
    return json.dumps(schema.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def load_schema(path: str | Path) -> Schema:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    return Schema.from_dict(data)


# ---------------------------------------------------------------------------
# Property values
# ---------------------------------------------------------------------------


def value_matches_kind(kind: str, value: Any) -> bool:
    if isinstance(value, str) and value.startswith(RAW_PREFIX):
        return True
    if kind in ("text", "unit"):
        return isinstance(value, str)
    if kind == "boolean":
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if kind == "number":
        return isinstance(value, (int, float)) and math.isfinite(value)
    if kind == "year":
        return isinstance(value, int)
    return False


def coerce_value(kind: str, value: Any) -> Any:
    """Best-effort conversion of an extracted value to ``kind``.

    Values that cannot be converted are kept as ``"raw:<original>"`` text.
    """
    if value_matches_kind(kind, value):
        return value
    if kind in ("text", "unit"):
        return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)
    text = str(value).strip()
    if kind == "boolean":
        lowered = text.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
    elif kind == "number" and not isinstance(value, bool):
        try:
            number = float(text.replace(",", "").replace(" ", ""))
        except ValueError:
            pass
        else:
            if math.isfinite(number):
                return int(number) if number.is_integer() else number
    elif kind == "year" and not isinstance(value, bool):
        try:
            number = float(text)
        except ValueError:
            pass
        else:
            if number.is_integer():
                return int(number)
    return RAW_PREFIX + text


def coerce_properties(schema: Schema, entity_type: str, properties: Mapping[str, Any]) -> dict[str, Any]:
    """Fit ``properties`` to the declared attribute domain; undeclared keys are dropped."""
    declared = schema.attributes(entity_type)
    out = {}
    for key, value in properties.items():
        if value is None:
            continue
        if key not in declared:
            logger.debug("dropping undeclared attribute %s.%s", entity_type, key)
            continue
        out[key] = coerce_value(declared[key], value)
    return out


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


@dataclass
class Node:
    id: str | None
    entity_type: str
    properties: dict[str, Any] = field(default_factory=dict)
    canonical_name: str = ""
    embedding: np.ndarray | None = field(default=None, repr=False, compare=False)


def _props_key(properties: Mapping[str, Any]) -> str:
    return json.dumps(properties, sort_keys=True, ensure_ascii=False, default=str)


@dataclass(frozen=True, eq=False)
class Edge:
    source: str
    label: str
    target: str
    properties: Mapping[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.source, self.label, self.target, _props_key(self.properties))

    def other(self, node_id: str) -> str:
        return self.target if node_id == self.source else self.source

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Edge) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def sort_key(self) -> tuple[str, str, str, str]:
        return (self.label, self.source, self.target, _props_key(self.properties))


class Graph:
    """In-memory labeled property graph guarded by a :class:`Schema`.

    Writes are single-threaded. After :meth:`seal` the graph rejects writes
    and may be read from any number of threads.
    """

    def __init__(self, schema: Schema):
        self.schema = schema
        self.nodes: dict[str, Node] = {}
        self.edges: list[Edge] = []
        self.type_index: dict[str, set[str]] = {}
        self._edge_keys: set[tuple[str, str, str, str]] = set()
        self._adjacency: dict[str, list[Edge]] = {}
        self._next_id = 0
        self._sealed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> Graph:
        self._sealed = True
        return self

    def _check_writable(self) -> None:
        if self._sealed:
            raise StoreSealed("graph is sealed")

    def _new_id(self) -> str:
        while True:
            self._next_id += 1
            candidate = f"n{self._next_id:06d}"
            if candidate not in self.nodes:
                return candidate

    def check_properties(self, entity_type: str, properties: Mapping[str, Any]) -> None:
        declared = self.schema.attributes(entity_type)
        for key, value in properties.items():
            if key not in declared:
                raise UndeclaredAttribute(entity_type, key)
            if not value_matches_kind(declared[key], value):
                raise AttributeKindMismatch(entity_type, key, declared[key], value)

    def add_node(self, node: Node) -> str:
        self._check_writable()
        if node.entity_type not in self.schema.entity_types:
            raise UnknownEntityType(node.entity_type)
        self.check_properties(node.entity_type, node.properties)
        if node.id is None:
            node.id = self._new_id()
        elif node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        self.type_index.setdefault(node.entity_type, set()).add(node.id)
        self._adjacency.setdefault(node.id, [])
        return node.id

    def update_properties(self, node_id: str, properties: Mapping[str, Any]) -> None:
        self._check_writable()
        node = self.node(node_id)
        self.check_properties(node.entity_type, properties)
        node.properties.update(properties)
        node.embedding = None

    def add_edge(self, edge: Edge) -> bool:
        """Store ``edge``; returns False when an identical edge already exists."""
        self._check_writable()
        for endpoint in (edge.source, edge.target):
            if endpoint not in self.nodes:
                raise MissingEndpoint(endpoint)
        src_type = self.nodes[edge.source].entity_type
        dst_type = self.nodes[edge.target].entity_type
        if not validate_triple(self.schema, src_type, edge.label, dst_type):
            raise SchemaViolation(src_type, edge.label, dst_type)
        if edge.key in self._edge_keys:
            return False
        edge = Edge(edge.source, edge.label, edge.target, dict(edge.properties))
        self._edge_keys.add(edge.key)
        self.edges.append(edge)
        self._adjacency[edge.source].append(edge)
        if edge.target != edge.source:
            self._adjacency[edge.target].append(edge)
        return True

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise MissingNode(node_id) from None

    def incident_edges(self, node_id: str) -> list[Edge]:
        return self._adjacency.get(node_id, [])

    def neighbors(self, node_id: str) -> Iterator[str]:
        for edge in self._adjacency.get(node_id, []):
            other = edge.other(node_id)
            if other != node_id:
                yield other

    def degree(self, node_id: str) -> int:
        # undirected degree; a self-loop counts twice
        return sum(2 if e.source == e.target else 1 for e in self._adjacency.get(node_id, []))

    def nodes_of_type(self, entity_type: str) -> set[str]:
        return set(self.type_index.get(entity_type, ()))

    def edges_between(self, a: str, b: str) -> list[Edge]:
        return [e for e in self._adjacency.get(a, []) if e.other(a) == b and (a != b or e.source == e.target)]

    def ensure_embeddings(self, embedder: Any) -> int:
        """Compute the retrieval embedding of every node that lacks one."""
        from .retrieval import node_text

        count = 0
        for node in self.nodes.values():
            if node.embedding is None or len(node.embedding) != embedder.dimension:
                node.embedding = embedder.embed(node_text(node))
                count += 1
        return count


# ---------------------------------------------------------------------------
# Traversal
# ---------------------------------------------------------------------------


def bfs_distances(graph: Graph, start: str, max_hops: int | None = None) -> dict[str, int]:
    """Undirected hop distance from ``start`` to every reachable node."""
    graph.node(start)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        current = queue.popleft()
        d = dist[current]
        if max_hops is not None and d >= max_hops:
            continue
        for nxt in graph.neighbors(current):
            if nxt not in dist:
                dist[nxt] = d + 1
                queue.append(nxt)
    return dist


def nodes_of_type_within_k(graph: Graph, start: str, entity_type: str, k: int) -> set[str]:
    """Nodes of ``entity_type`` within ``k`` undirected hops of ``start``.

    ``start`` itself is included when its own type matches.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    reached = bfs_distances(graph, start, max_hops=k)
    return {n for n in reached if graph.nodes[n].entity_type == entity_type}


PathStep = tuple[str, "Edge | None"]


def shortest_path(graph: Graph, a: str, b: str) -> list[PathStep] | None:
    """Minimum-hop undirected path from ``a`` to ``b``.

    Each step is ``(node_id, edge_used_to_reach_it)``; the first step has no
    edge. Among equally short paths the lexicographically least node-id
    sequence wins. Returns None when ``b`` is unreachable.
    """
    graph.node(a)
    graph.node(b)
    to_b = bfs_distances(graph, b)
    if a not in to_b:
        return None
    path: list[PathStep] = [(a, None)]
    current = a
    while current != b:
        want = to_b[current] - 1
        nxt = min(n for n in graph.neighbors(current) if to_b.get(n) == want)
        edge = min(graph.edges_between(current, nxt), key=Edge.sort_key)
        path.append((nxt, edge))
        current = nxt
    return path


def connected_components(graph: Graph) -> list[list[str]]:
    seen: set[str] = set()
    components = []
    for node_id in sorted(graph.nodes):
        if node_id in seen:
            continue
        component = sorted(bfs_distances(graph, node_id))
        seen.update(component)
        components.append(component)
    return components


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class GraphStats:
    n_entities: int = 0
    n_relationships: int = 0
    avg_total_degree: float = 0.0
    avg_shortest_path: float = 0.0
    diameter: int = 0
    avg_degree_by_type: dict[str, float] = field(default_factory=dict)
    top_entity_types: list[tuple[str, int]] = field(default_factory=list)
    top_relation_types: list[tuple[str, int]] = field(default_factory=list)
    largest_component_size: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_entities": self.n_entities,
            "n_relationships": self.n_relationships,
            "avg_total_degree": self.avg_total_degree,
            "avg_shortest_path": self.avg_shortest_path,
            "diameter": self.diameter,
            "largest_component_size": self.largest_component_size,
            "avg_degree_by_type": dict(sorted(self.avg_degree_by_type.items())),
            "top_entity_types": [list(p) for p in self.top_entity_types],
            "top_relation_types": [list(p) for p in self.top_relation_types],
        }


def average_total_degree(n_entities: int, n_relationships: int) -> float:
    return 2 * n_relationships / n_entities if n_entities else 0.0


def _ranked(counter: Counter, top_k: int) -> list[tuple[str, int]]:
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]


def graph_stats(graph: Graph, top_k: int = 5, path_metrics: bool = True) -> GraphStats:
    """Corpus-level statistics.

    Average shortest path and diameter are computed on the largest connected
    component (ties go to the component holding the smallest node id). They
    cost one BFS per component node; pass ``path_metrics=False`` to skip them
    on large graphs.
    """
    n, e = len(graph.nodes), len(graph.edges)
    stats = GraphStats(n_entities=n, n_relationships=e, avg_total_degree=average_total_degree(n, e))
    if not n:
        return stats

    by_type: dict[str, list[int]] = {}
    for node_id, node in graph.nodes.items():
        by_type.setdefault(node.entity_type, []).append(graph.degree(node_id))
    stats.avg_degree_by_type = {t: sum(d) / len(d) for t, d in by_type.items()}
    stats.top_entity_types = _ranked(Counter({t: len(d) for t, d in by_type.items()}), top_k)
    stats.top_relation_types = _ranked(Counter(edge.label for edge in graph.edges), top_k)

    components = connected_components(graph)
    largest = max(components, key=len)  # max keeps the first of equal sizes
    stats.largest_component_size = len(largest)
    if path_metrics and len(largest) > 1:
        total, pairs, diameter = 0, 0, 0
        for node_id in largest:
            dist = bfs_distances(graph, node_id)
            total += sum(dist.values())
            pairs += len(dist) - 1
            diameter = max(diameter, max(dist.values()))
        stats.avg_shortest_path = total / pairs
        stats.diameter = diameter
    return stats


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def graph_records(graph: Graph) -> Iterator[dict[str, Any]]:
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        yield {
            "kind": "node",
            "id": node.id,
            "type": node.entity_type,
            "props": node.properties,
            "name": node.canonical_name,
        }
    for edge in graph.edges:
        yield {"kind": "edge", "src": edge.source, "label": edge.label, "dst": edge.target, "props": dict(edge.properties)}


def save_graph(graph: Graph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in graph_records(graph):
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, lineno) from exc
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", lineno)
            yield lineno, record


def load_graph(path: str | Path, schema: Schema) -> Graph:
    graph = Graph(schema)
    for lineno, record in read_records(path):
        kind = record.get("kind")
        try:
            if kind == "node":
                graph.add_node(
                    Node(
                        id=str(record["id"]),
                        entity_type=record["type"],
                        properties=dict(record.get("props") or {}),
                        canonical_name=record.get("name", ""),
                    )
                )
            elif kind == "edge":
                graph.add_edge(Edge(str(record["src"]), record["label"], str(record["dst"]), record.get("props") or {}))
            else:
                raise ParseError(f"unknown record kind {kind!r}", lineno)
        except MissingNode as exc:
            raise ParseError(str(exc), lineno) from exc
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", lineno) from None
        except SchemaError as exc:
            raise ParseError(str(exc), lineno) from exc
    return graph
