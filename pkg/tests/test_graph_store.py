import json
import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenclaim.errors import (
    AttributeKindMismatch,
    ConflictingAttributeKind,
    MissingEndpoint,
    ParseError,
    SchemaError,
    SchemaViolation,
    StoreSealed,
    UndeclaredAttribute,
    UnknownEntityType,
)
from greenclaim.graph_store import (
    Edge,
    Graph,
    Node,
    Schema,
    average_total_degree,
    bfs_distances,
    coerce_value,
    dump_schema,
    graph_stats,
    load_graph,
    load_schema,
    merge_schemas,
    nodes_of_type_within_k,
    save_graph,
    shortest_path,
    validate_triple,
)

from support import FIXTURES, brute_force_distances, random_graph, random_schema, to_networkx

ORG_KPI = Schema.from_triples(
    [("Organization", "reports", "KPIObservation"), ("Organization", "sets", "Goal"), ("Goal", "tracks", "KPIObservation")],
    {"KPIObservation": {"value": "number", "unit": "unit", "year": "year"}},
)


def test_validate_triple_membership():
    assert validate_triple(ORG_KPI, "Organization", "reports", "KPIObservation")
    assert not validate_triple(ORG_KPI, "KPIObservation", "reports", "Organization")
    assert not validate_triple(ORG_KPI, "Organization", "tracks", "KPIObservation")


def test_schema_rejects_undeclared_types_in_triples():
    with pytest.raises(SchemaError):
        Schema(frozenset({"A"}), frozenset({"r"}), frozenset({("A", "r", "B")}))
    with pytest.raises(SchemaError):
        Schema(frozenset({"A"}), frozenset(), frozenset({("A", "r", "A")}))


def test_merge_disjoint_and_conflicting():
    a = Schema.from_triples([("A", "r", "B")], {"A": {"x": "number"}})
    b = Schema.from_triples([("C", "s", "A")], {"A": {"y": "text"}})
    merged = merge_schemas([a, b])
    assert merged.allowed == {("A", "r", "B"), ("C", "s", "A")}
    assert merged.attributes("A") == {"x": "number", "y": "text"}
    with pytest.raises(ConflictingAttributeKind) as info:
        merge_schemas([a, Schema.from_triples([], {"A": {"x": "text"}})])
    assert info.value.entity_type == "A" and info.value.attribute == "x"


def test_merge_single_schema_is_identity():
    schema = load_schema(FIXTURES / "schema.json")
    assert merge_schemas([schema]) == schema
    assert dump_schema(merge_schemas([schema])) == (FIXTURES / "schema.json").read_text()


@given(st.lists(st.sampled_from(["A", "B", "C"]), min_size=1, max_size=4))
def test_merge_is_idempotent_and_order_free(types):
    parts = [Schema.from_triples([(t, "r", "A")], {t: {"v": "number"}}) for t in types]
    assert merge_schemas(parts) == merge_schemas(reversed(parts)) == merge_schemas(parts + parts)


def test_add_edge_enforces_schema():
    g = Graph(ORG_KPI)
    org = g.add_node(Node(None, "Organization", {}, "Acme"))
    kpi = g.add_node(Node(None, "KPIObservation", {"value": 30, "unit": "%", "year": 2023}, "CO2"))
    assert g.add_edge(Edge(org, "reports", kpi))
    assert not g.add_edge(Edge(org, "reports", kpi))  # duplicate
    with pytest.raises(SchemaViolation) as info:
        g.add_edge(Edge(kpi, "reports", org))
    assert (info.value.src_type, info.value.label, info.value.dst_type) == ("KPIObservation", "reports", "Organization")
    with pytest.raises(MissingEndpoint):
        g.add_edge(Edge(org, "reports", "n999999"))
    assert len(g.edges) == 1


def test_node_property_checks():
    g = Graph(ORG_KPI)
    with pytest.raises(UnknownEntityType):
        g.add_node(Node(None, "Facility", {}, "x"))
    with pytest.raises(UndeclaredAttribute):
        g.add_node(Node(None, "KPIObservation", {"colour": "green"}, "x"))
    with pytest.raises(AttributeKindMismatch):
        g.add_node(Node(None, "KPIObservation", {"year": "last year"}, "x"))
    # unparseable values survive as raw text
    nid = g.add_node(Node(None, "KPIObservation", {"year": coerce_value("year", "last year")}, "x"))
    assert g.nodes[nid].properties["year"] == "raw:last year"


@pytest.mark.parametrize("kind,value,expected", [
    ("number", "1,250", 1250),
    ("number", "3.5", 3.5),
    ("number", True, "raw:True"),
    ("year", "2023", 2023),
    ("year", 2023.5, "raw:2023.5"),
    ("boolean", "yes", True),
    ("boolean", "perhaps", "raw:perhaps"),
    ("unit", "%", "%"),
    ("text", 12, "12"),
])
def test_coerce_value(kind, value, expected):
    assert coerce_value(kind, value) == expected


def test_sealed_graph_rejects_writes():
    g = Graph(ORG_KPI)
    org = g.add_node(Node(None, "Organization", {}, "Acme"))
    g.seal()
    with pytest.raises(StoreSealed):
        g.add_node(Node(None, "Organization", {}, "Other"))
    with pytest.raises(StoreSealed):
        g.update_properties(org, {})


def _chain():
    schema = Schema.from_triples([("A", "r", "A"), ("A", "s", "A")])
    g = Graph(schema)
    ids = [g.add_node(Node(None, "A", {}, f"a{i}")) for i in range(5)]
    return g, ids


def test_k_hop_includes_start_and_respects_k():
    g, ids = _chain()
    for a, b in zip(ids, ids[1:]):
        g.add_edge(Edge(b, "r", a))  # direction must not matter
    assert nodes_of_type_within_k(g, ids[0], "A", 0) == {ids[0]}
    assert nodes_of_type_within_k(g, ids[0], "A", 2) == set(ids[:3])
    assert bfs_distances(g, ids[0])[ids[4]] == 4


def test_shortest_path_tie_breaks_on_node_ids_and_edge_key():
    g, ids = _chain()
    a, b, c, d = ids[:4]
    # two routes a-b-d and a-c-d; b < c so the path goes through b
    g.add_edge(Edge(a, "r", c))
    g.add_edge(Edge(c, "r", d))
    g.add_edge(Edge(a, "s", b))
    g.add_edge(Edge(b, "r", a))
    g.add_edge(Edge(d, "r", b))
    path = shortest_path(g, a, d)
    assert [n for n, _ in path] == [a, b, d]
    assert path[1][1] == Edge(b, "r", a)  # "r" sorts before "s"
    assert path[0][1] is None
    assert shortest_path(g, a, ids[4]) is None


def test_stats_on_small_fixture():
    g, ids = _chain()
    g.add_edge(Edge(ids[0], "r", ids[1]))
    g.add_edge(Edge(ids[1], "r", ids[2]))
    g.add_edge(Edge(ids[3], "s", ids[4]))
    s = graph_stats(g)
    assert (s.n_entities, s.n_relationships) == (5, 3)
    assert s.avg_total_degree == 6 / 5
    assert s.largest_component_size == 3
    # a-b-c: distances 1,2,1 in each direction -> 8/6
    assert s.avg_shortest_path == pytest.approx(8 / 6)
    assert s.diameter == 2
    assert s.top_relation_types == [("r", 2), ("s", 1)]


def test_stats_empty_graph():
    s = graph_stats(Graph(ORG_KPI))
    assert s.to_dict()["n_entities"] == 0 and s.avg_total_degree == 0.0 and s.diameter == 0


def test_average_total_degree_headline_counts():
    assert f"{average_total_degree(53748, 59344):.2f}" == "2.21"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_stats_match_networkx(seed):
    rng = random.Random(seed)
    g = random_graph(rng, max_nodes=30)
    s = graph_stats(g)
    assert s.avg_total_degree == 2 * len(g.edges) / len(g.nodes)
    nxg = to_networkx(g)
    assert sum(d for _, d in nxg.degree()) == 2 * len(g.edges)
    components = list(nx.connected_components(nxg))
    size = max(map(len, components))
    assert s.largest_component_size == size
    # among equally large components, the one holding the smallest node id
    members = sorted(min((c for c in components if len(c) == size), key=min))
    dist = brute_force_distances(g)
    if len(members) > 1:
        pairs = [dist[a][b] for a in members for b in members if a != b]
        assert s.diameter == max(pairs)
        assert s.avg_shortest_path == pytest.approx(sum(pairs) / len(pairs), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_shortest_path_is_lexicographically_least(seed):
    rng = random.Random(seed)
    g = random_graph(rng, max_nodes=20)
    nxg = to_networkx(g)
    ids = sorted(g.nodes)
    a, b = rng.choice(ids), rng.choice(ids)
    path = shortest_path(g, a, b)
    if not nx.has_path(nxg, a, b):
        assert path is None
        return
    assert [n for n, _ in path] == min(nx.all_shortest_paths(nxg, a, b))


def test_snapshot_round_trip(tmp_path):
    rng = random.Random(7)
    schema = random_schema(rng, n_types=3, n_labels=2, density=0.7)
    g = random_graph(rng, schema=schema)
    path = tmp_path / "g.jsonl"
    save_graph(g, path)
    loaded = load_graph(path, schema)
    assert loaded.nodes.keys() == g.nodes.keys()
    assert set(loaded.edges) == set(g.edges)
    save_graph(loaded, tmp_path / "g2.jsonl")
    assert (tmp_path / "g2.jsonl").read_bytes() == path.read_bytes()


def test_snapshot_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"kind": "node", "id": "a", "type": "Organization", "name": "A"}) + "\n"
                    + json.dumps({"kind": "edge", "src": "a", "label": "reports", "dst": "zz"}) + "\n")
    with pytest.raises(ParseError) as info:
        load_graph(path, ORG_KPI)
    assert info.value.line == 2
