"""Random graph generators and brute-force oracles shared by the tests."""

from __future__ import annotations

import random
from pathlib import Path

import networkx as nx
import numpy as np

from greenclaim.graph_store import Edge, Graph, Node, Schema

FIXTURES = Path(__file__).parent / "fixtures"

NAME_WORDS = ["carbon", "water", "scope", "energy", "waste", "solar", "wind", "plant", "target", "policy",
              "emissions", "supply", "chain", "net", "zero", "audit"]


def random_schema(rng: random.Random, n_types: int | None = None, n_labels: int | None = None,
                  density: float | None = None) -> Schema:
    n_types = n_types or rng.randint(1, 5)
    n_labels = n_labels or rng.randint(1, 3)
    density = rng.uniform(0.2, 0.9) if density is None else density
    types = [f"T{i}" for i in range(n_types)]
    labels = [f"r{i}" for i in range(n_labels)]
    allowed = {(s, l, d) for s in types for l in labels for d in types if rng.random() < density}
    if not allowed:
        allowed = {(types[0], labels[0], types[-1])}
    return Schema(frozenset(types), frozenset(labels), frozenset(allowed), {})


def random_name(rng: random.Random) -> str:
    return " ".join(rng.sample(NAME_WORDS, rng.randint(1, 3)))


def random_graph(rng: random.Random, max_nodes: int = 50, dim: int | None = None,
                 schema: Schema | None = None) -> Graph:
    """Schema-valid random graph.

    With ``dim`` set, most nodes get a random embedding of that size (some
    exact duplicates, some all-zero) and the rest fall back to name text.
    """
    schema = schema or random_schema(rng)
    graph = Graph(schema)
    types = sorted(schema.entity_types)
    n = rng.randint(1, max_nodes)
    pool: list[np.ndarray] = []
    for _ in range(n):
        emb = None
        if dim is not None:
            roll = rng.random()
            if roll < 0.1 and pool:
                emb = rng.choice(pool)
            elif roll < 0.15:
                emb = np.zeros(dim)
            elif roll < 0.85:
                emb = np.array([rng.gauss(0, 1) for _ in range(dim)])
                pool.append(emb)
        graph.add_node(Node(None, rng.choice(types), {}, random_name(rng), emb))
    ids = sorted(graph.nodes)
    allowed = sorted(schema.allowed)
    for _ in range(rng.randint(0, 2 * n)):
        a, b = rng.choice(ids), rng.choice(ids)
        ta, tb = graph.nodes[a].entity_type, graph.nodes[b].entity_type
        labels = [l for s, l, d in allowed if s == ta and d == tb]
        if labels:
            graph.add_edge(Edge(a, rng.choice(labels), b, {"w": rng.randint(0, 1)}))
    return graph


def to_networkx(graph: Graph) -> nx.MultiGraph:
    g = nx.MultiGraph()
    g.add_nodes_from(graph.nodes)
    for e in graph.edges:
        g.add_edge(e.source, e.target)
    return g


def brute_force_distances(graph: Graph) -> dict[str, dict[str, int]]:
    """All-pairs hop distances by repeated relaxation (no BFS queue)."""
    adj = {n: set() for n in graph.nodes}
    for e in graph.edges:
        adj[e.source].add(e.target)
        adj[e.target].add(e.source)
    out = {}
    for s in graph.nodes:
        dist = {s: 0}
        frontier = {s}
        d = 0
        while frontier:
            d += 1
            frontier = {m for n in frontier for m in adj[n] if m not in dist}
            for m in frontier:
                dist[m] = d
        out[s] = dist
    return out


def oracle_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def oracle_retrieve(graph: Graph, company: str, elements, embedder, top_n: int, threshold: float, k: int):
    """Evidence node and edge sets computed straight from the definition.

    Candidates are every node of the element's type whose networkx hop
    distance from the company is at most ``k``. The path to each selected
    node is the lexicographically least of networkx's enumeration of all
    shortest paths; between consecutive nodes the edge with the least
    (label, source, target, props) key is used.
    """
    g = to_networkx(graph)
    lengths = nx.single_source_shortest_path_length(g, company)
    nodes: set[str] = set()
    edges: set[Edge] = set()
    for element in elements:
        query = embedder.embed(element.phrase)
        scored = []
        for node_id, node in graph.nodes.items():
            if node.entity_type != element.entity_type or lengths.get(node_id, k + 1) > k:
                continue
            vec = node.embedding if node.embedding is not None else embedder.embed(_node_text(node))
            sim = oracle_cosine(query, vec)
            if sim >= threshold:
                scored.append((-sim, node_id))
        for _, target in sorted(scored)[:top_n]:
            path = min(nx.all_shortest_paths(g, company, target))
            nodes.update(path)
            for a, b in zip(path, path[1:]):
                between = [e for e in graph.edges if {e.source, e.target} == {a, b}]
                edges.add(min(between, key=lambda e: (e.label, e.source, e.target, repr(sorted(e.properties.items())))))
    return nodes, edges


def _node_text(node: Node) -> str:
    import json

    if not node.properties:
        return node.canonical_name
    props = ", ".join(f"{k}: {v if isinstance(v, str) else json.dumps(v)}" for k, v in sorted(node.properties.items()))
    return f"{node.canonical_name} {props}".strip()
