"""Claim grounding: target company plus typed key elements."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .embeddings import Embedder, cosine_similarity
from .graph_store import Graph
from .llm_provider import ChatRequest, Provider, extract_json

logger = logging.getLogger(__name__)

KPI_TYPE = "KPIObservation"
ORG_TYPE = "Organization"
MERGE_THRESHOLD = 0.85

GROUND_SYSTEM = (
    "You parse sustainability claims. Identify the company the claim is about and the key "
    "elements it asserts (KPIs, numeric values, goals, policies, initiatives). Map every element "
    "to one of the allowed entity types. Respond with JSON only."
)


@dataclass(frozen=True)
class Claim:
    text: str
    id: str | None = None
    company: str | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("claim text must be non-empty")


@dataclass(frozen=True)
class ClaimElement:
    entity_type: str
    properties: Mapping[str, Any]
    phrase: str


@dataclass(frozen=True)
class GroundedClaim:
    company_name: str
    company_node: str | None
    elements: tuple[ClaimElement, ...] = field(default_factory=tuple)
    dropped_types: tuple[str, ...] = ()

    @property
    def company_found(self) -> bool:
        return self.company_node is not None

    def types(self) -> list[str]:
        return sorted({e.entity_type for e in self.elements})


def normalize_name(name: str) -> str:
    return " ".join(name.split())


def best_name_match(
    name: str, candidates: Iterable[tuple[str, str]], embedder: Embedder, threshold: float
) -> tuple[str, float] | None:
    """Closest ``(key, candidate_name)`` to ``name`` by name-embedding cosine.

    An identical normalized name always matches. Ties go to the smallest key.
    """
    target = normalize_name(name)
    if not target:
        return None
    query = embedder.embed(target)
    best: tuple[str, float] | None = None
    for key, other in sorted(candidates):
        other = normalize_name(other)
        sim = 1.0 if other == target else cosine_similarity(query, embedder.embed(other))
        if sim >= threshold and (best is None or sim > best[1]):
            best = (key, sim)
    return best


def link_company(graph: Graph, name: str, embedder: Embedder, threshold: float = MERGE_THRESHOLD) -> str | None:
    """Organization node for ``name`` or None; never creates nodes."""
    candidates = [(nid, graph.nodes[nid].canonical_name) for nid in graph.type_index.get(ORG_TYPE, ())]
    match = best_name_match(name, candidates, embedder, threshold)
    return match[0] if match else None


def grounding_prompt(claim: Claim, entity_types: Iterable[str]) -> str:
    types = ", ".join(sorted(entity_types))
    return (
        f"Allowed entity types: {types}\n\n"
        f"Claim: {claim.text}\n\n"
        'Return a JSON object {"company": <company name>, "elements": [{"type": <entity type>, '
        '"properties": {<attribute>: <value>}, "phrase": <claim words this element comes from>}]}.'
    )


def _parse_grounding(text: str) -> tuple[str, list[Any]]:
    try:
        data = extract_json(text)
    except ValueError:
        logger.warning("grounding response is not JSON; falling back to the KPI anchor only")
        return "", []
    if not isinstance(data, dict):
        return "", []
    company = data.get("company")
    elements = data.get("elements")
    return (company if isinstance(company, str) else ""), (elements if isinstance(elements, list) else [])


def _element(item: Any, claim_text: str) -> ClaimElement | None:
    if not isinstance(item, dict):
        return None
    etype = item.get("type")
    if not isinstance(etype, str) or not etype:
        return None
    props = item.get("properties")
    props = {str(k): v for k, v in props.items()} if isinstance(props, dict) else {}
    phrase = item.get("phrase")
    if not isinstance(phrase, str) or not phrase.strip():
        phrase = " ".join([etype] + [f"{k} {v}" for k, v in sorted(props.items())]) if props else claim_text
    return ClaimElement(etype, props, phrase)


def ground_claim(
    claim: Claim,
    graph: Graph,
    provider: Provider,
    embedder: Embedder,
    merge_threshold: float = MERGE_THRESHOLD,
) -> GroundedClaim:
    """Ground ``claim`` against the graph schema and its Organization nodes.

    The result always holds at least one KPIObservation element: when the
    provider extracts none, one carrying the full claim text is appended.
    A company that cannot be linked leaves ``company_node`` as None.
    """
    schema = graph.schema
    if KPI_TYPE not in schema.entity_types:
        raise ValueError(f"schema must declare {KPI_TYPE}")
    response = provider.complete(
        ChatRequest(user_text=grounding_prompt(claim, schema.entity_types), system_text=GROUND_SYSTEM, tag="ground")
    )
    company, raw_elements = _parse_grounding(response.text)
    if claim.company:
        company = claim.company

    elements: list[ClaimElement] = []
    dropped: list[str] = []
    for item in raw_elements:
        element = _element(item, claim.text)
        if element is None:
            continue
        if element.entity_type not in schema.entity_types:
            dropped.append(element.entity_type)
            logger.info("dropping claim element of unknown type %r", element.entity_type)
            continue
        elements.append(element)
    if not any(e.entity_type == KPI_TYPE for e in elements):
        elements.append(ClaimElement(KPI_TYPE, {"text": claim.text}, claim.text))

    company = normalize_name(company)
    node_id = link_company(graph, company, embedder, merge_threshold) if company else None
    if node_id is not None:
        company = graph.nodes[node_id].canonical_name
    return GroundedClaim(company, node_id, tuple(elements), tuple(dropped))


def grounded_to_dict(grounded: GroundedClaim) -> dict[str, Any]:
    return {
        "company_name": grounded.company_name,
        "company_node": grounded.company_node,
        "elements": [
            {"type": e.entity_type, "properties": dict(e.properties), "phrase": e.phrase} for e in grounded.elements
        ],
    }


def grounded_json(grounded: GroundedClaim) -> str:
    return json.dumps(grounded_to_dict(grounded), sort_keys=True, ensure_ascii=False)

