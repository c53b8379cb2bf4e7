"""Claim classification pipelines with fail-closed abstention.

``Baseline`` asks the model with no retrieved context, ``EM-RAG`` adds
document chunks, ``EM-KGRAG`` adds the rendered evidence subgraph, and
``EM-HYBRID`` lets a judge pick between the EM-RAG and EM-KGRAG answers.
Any provider failure or unparseable response ends in ``Abstain``.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .docstore import TOP_M, DocStore, retrieve_chunks
from .embeddings import Embedder
from .errors import GreenClaimError, MissingCompanyNode, ProviderError
from .graph_store import Graph, Schema
from .grounding import KPI_TYPE, MERGE_THRESHOLD, ORG_TYPE, Claim, best_name_match, ground_claim
from .llm_provider import ChatRequest, Provider
from .retrieval import RetrievalParams, render_path, retrieve_context

logger = logging.getLogger(__name__)

BASELINE, EM_RAG, EM_KGRAG, EM_HYBRID = "Baseline", "EM-RAG", "EM-KGRAG", "EM-HYBRID"
PIPELINES = (BASELINE, EM_RAG, EM_KGRAG, EM_HYBRID)
PIPELINE_ALIASES = {"baseline": BASELINE, "rag": EM_RAG, "kgrag": EM_KGRAG, "hybrid": EM_HYBRID}
PROMPT_MODES = ("zero-shot", "few-shot")


class Verdict(str, Enum):
    GREENWASHING = "Greenwashing"
    NOT_GREENWASHING = "NotGreenwashing"
    ABSTAIN = "Abstain"


@dataclass(frozen=True)
class Assessment:
    verdict: Verdict
    justification: str
    pipeline: str
    prompt_mode: str = "zero-shot"
    evidence: tuple[str, ...] = ()
    claim_id: str | None = None
    label: str | None = None
    diagnostic: str = ""

    def __post_init__(self) -> None:
        if self.verdict is not Verdict.ABSTAIN and not self.justification.strip():
            raise ValueError("a decided verdict needs a justification")

    @property
    def abstained(self) -> bool:
        return self.verdict is Verdict.ABSTAIN

    def retag(self, pipeline: str) -> Assessment:
        return Assessment(self.verdict, self.justification, pipeline, self.prompt_mode, self.evidence,
                          self.claim_id, self.label, self.diagnostic)

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.claim_id,
            "pipeline": self.pipeline,
            "prompt_mode": self.prompt_mode,
            "verdict": self.verdict.value,
            "justification": self.justification,
            "evidence": list(self.evidence),
            "label": self.label,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> Assessment:
        return cls(
            verdict=Verdict(record["verdict"]),
            justification=record.get("justification", ""),
            pipeline=record["pipeline"],
            prompt_mode=record.get("prompt_mode", "zero-shot"),
            evidence=tuple(record.get("evidence", ())),
            claim_id=record.get("id"),
            label=record.get("label"),
            diagnostic=record.get("diagnostic", ""),
        )


def abstain(pipeline: str, claim: Claim, mode: str, reason: str, justification: str = "") -> Assessment:
    return Assessment(Verdict.ABSTAIN, justification, pipeline, mode, (), claim.id, claim.label, reason)


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FewShotExample:
    claim: str
    verdict: str
    justification: str


@dataclass(frozen=True)
class PromptConfig:
    mode: str = "zero-shot"
    definition_text: str = ""
    examples: tuple[FewShotExample, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in PROMPT_MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}")
        if self.mode == "few-shot" and not self.examples:
            raise ValueError("few-shot prompting needs at least one example")

    @classmethod
    def load(cls, mode: str = "zero-shot", examples_path: str | Path | None = None,
             definitions_path: str | Path | None = None) -> PromptConfig:
        """Prompt configuration from the bundled (or given) definition and exemplar files."""
        prompts = resources.files("greenclaim") / "prompts"
        definitions = (Path(definitions_path).read_text(encoding="utf-8") if definitions_path
                       else (prompts / "definitions.txt").read_text(encoding="utf-8"))
        examples: tuple[FewShotExample, ...] = ()
        if mode == "few-shot":
            raw = (Path(examples_path).read_text(encoding="utf-8") if examples_path
                   else (prompts / "few_shot.json").read_text(encoding="utf-8"))
            examples = tuple(FewShotExample(e["claim"], e["verdict"], e.get("justification", ""))
                             for e in json.loads(raw))
        return cls(mode, definitions.strip(), examples)


CLASSIFY_SYSTEM = (
    "You verify corporate sustainability claims. Decide whether the claim is greenwashing, "
    "is not greenwashing, or whether you must abstain because the information is insufficient. "
    "Base the decision only on the definitions and the evidence given.\n"
    "Answer in exactly this format:\n"
    "VERDICT: GREENWASHING | NOT_GREENWASHING | ABSTAIN\n"
    "JUSTIFICATION: <a short factual justification citing the evidence>\n"
    "EVIDENCE: <numbers of the evidence items you relied on, comma separated; omit if none>"
)

NO_EVIDENCE = "No evidence was found for this claim."


def build_prompt(claim: Claim, config: PromptConfig, evidence_title: str | None = None,
                 evidence_items: Sequence[str] = ()) -> str:
    parts = [f"Definitions:\n{config.definition_text}"]
    if config.mode == "few-shot":
        shots = []
        for ex in config.examples:
            shot = f"Claim: {ex.claim}\nVERDICT: {ex.verdict}"
            if ex.justification:
                shot += f"\nJUSTIFICATION: {ex.justification}"
            shots.append(shot)
        parts.append("Examples:\n" + "\n\n".join(shots))
    parts.append(f"Claim: {claim.text}")
    if evidence_title is not None:
        if evidence_items:
            body = "\n".join(f"[{i}] {item}" for i, item in enumerate(evidence_items, 1))
        else:
            body = NO_EVIDENCE
        parts.append(f"{evidence_title}:\n{body}")
    return "\n\n".join(parts)


_VERDICT_RE = re.compile(r"^\W*verdict\W*[:=]\s*\**\s*(not[\s_-]*greenwashing|greenwashing|abstain)\b",
                         re.IGNORECASE | re.MULTILINE)
_JUSTIFICATION_RE = re.compile(r"^\W*justification\W*[:=]\s*", re.IGNORECASE | re.MULTILINE)
_EVIDENCE_RE = re.compile(r"^\W*evidence\W*[:=]\s*(.*)$", re.IGNORECASE | re.MULTILINE)


def parse_verdict(text: str) -> tuple[Verdict, str]:
    """Read ``VERDICT:`` and ``JUSTIFICATION:`` markers from a model response.

    Unparseable text yields ``(Abstain, text)`` so the raw output survives as
    a diagnostic. A decided verdict with an empty justification also abstains.
    """
    match = _VERDICT_RE.search(text)
    if not match:
        return Verdict.ABSTAIN, text.strip()
    word = re.sub(r"[\s_-]+", "", match.group(1).lower())
    verdict = {"greenwashing": Verdict.GREENWASHING, "notgreenwashing": Verdict.NOT_GREENWASHING,
               "abstain": Verdict.ABSTAIN}[word]
    justification = ""
    jmatch = _JUSTIFICATION_RE.search(text)
    if jmatch:
        rest = text[jmatch.end():]
        ev = _EVIDENCE_RE.search(rest)
        justification = (rest[:ev.start()] if ev else rest).strip()
    if verdict is not Verdict.ABSTAIN and not justification:
        return Verdict.ABSTAIN, text.strip()
    return verdict, justification


def parse_citations(text: str, n_items: int) -> list[int]:
    """1-based evidence indices named on an ``EVIDENCE:`` line, in order, deduplicated."""
    match = _EVIDENCE_RE.search(text)
    if not match:
        return []
    cited: list[int] = []
    for token in re.findall(r"\d+", match.group(1)):
        i = int(token)
        if 1 <= i <= n_items and i not in cited:
            cited.append(i)
    return cited


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


@dataclass
class Stores:
    graph: Graph | None = None
    docstore: DocStore | None = None


@dataclass(frozen=True)
class PipelineParams:
    retrieval: RetrievalParams = field(default_factory=RetrievalParams)
    top_m: int = TOP_M
    merge_threshold: float = MERGE_THRESHOLD

    def __post_init__(self) -> None:
        if self.top_m < 1:
            raise ValueError("top_m must be >= 1")


def _classify(claim: Claim, pipeline: str, config: PromptConfig, provider: Provider, prompt: str,
              evidence: Sequence[str]) -> Assessment:
    try:
        response = provider.complete(ChatRequest(user_text=prompt, system_text=CLASSIFY_SYSTEM, tag="classify"))
    except ProviderError as exc:
        return abstain(pipeline, claim, config.mode, f"provider error: {exc}")
    verdict, justification = parse_verdict(response.text)
    if verdict is Verdict.ABSTAIN:
        marker = _VERDICT_RE.search(response.text)
        if marker and marker.group(1).lower() == "abstain":
            return abstain(pipeline, claim, config.mode, "model abstained", justification)
        return abstain(pipeline, claim, config.mode, f"unparseable response: {response.text.strip()[:200]}")
    cited = parse_citations(response.text, len(evidence))
    refs = tuple(evidence[i - 1] for i in cited) if cited else tuple(evidence)
    return Assessment(verdict, justification, pipeline, config.mode, refs, claim.id, claim.label)


def run_baseline(claim: Claim, prompt_config: PromptConfig, provider: Provider) -> Assessment:
    return _classify(claim, BASELINE, prompt_config, provider, build_prompt(claim, prompt_config), ())


def _grounding_graph(stores: Stores) -> Graph:
    if stores.graph is not None:
        return stores.graph
    return Graph(Schema(entity_types=frozenset({ORG_TYPE, KPI_TYPE})))


def run_em_rag(claim: Claim, stores: Stores, params: PipelineParams, prompt_config: PromptConfig,
               provider: Provider, embedder: Embedder) -> Assessment:
    mode = prompt_config.mode
    if stores.docstore is None:
        return abstain(EM_RAG, claim, mode, "no document store")
    try:
        grounded = ground_claim(claim, _grounding_graph(stores), provider, embedder, params.merge_threshold)
    except ProviderError as exc:
        return abstain(EM_RAG, claim, mode, f"grounding failed: {exc}")
    companies = [(c, c) for c in stores.docstore.companies()]
    match = best_name_match(grounded.company_name, companies, embedder, params.merge_threshold)
    if match is None:
        return abstain(EM_RAG, claim, mode, f"company not found: {grounded.company_name!r}")
    hits = retrieve_chunks(stores.docstore, claim.text, match[0], embedder, params.top_m)
    items = [f"({c.report_id}, {c.company}, {c.year}, page {c.page_number}) {c.text}" for c, _ in hits]
    prompt = build_prompt(claim, prompt_config, "Report excerpts", items)
    return _classify(claim, EM_RAG, prompt_config, provider, prompt, [c.ref for c, _ in hits])


def run_em_kgrag(claim: Claim, stores: Stores, params: PipelineParams, prompt_config: PromptConfig,
                 provider: Provider, embedder: Embedder) -> Assessment:
    mode = prompt_config.mode
    if stores.graph is None:
        return abstain(EM_KGRAG, claim, mode, "no knowledge graph")
    try:
        grounded = ground_claim(claim, stores.graph, provider, embedder, params.merge_threshold)
        evidence = retrieve_context(stores.graph, grounded, params.retrieval, embedder)
    except ProviderError as exc:
        return abstain(EM_KGRAG, claim, mode, f"grounding failed: {exc}")
    except MissingCompanyNode as exc:
        return abstain(EM_KGRAG, claim, mode, str(exc))
    lines = sorted({render_path(stores.graph, p.steps) for p in evidence.paths})
    prompt = build_prompt(claim, prompt_config, "Knowledge graph facts", lines)
    return _classify(claim, EM_KGRAG, prompt_config, provider, prompt, lines)


JUDGE_SYSTEM = (
    "You compare two justifications for the same sustainability claim and pick the one that is "
    "better supported by facts, more logical and more informative. Answer with 'CHOICE: A' or 'CHOICE: B'."
)
_CHOICE_RE = re.compile(r"\bchoice\W*[:=]?\s*\**\s*([AB])\b", re.IGNORECASE)


def parse_choice(text: str) -> str | None:
    match = _CHOICE_RE.search(text)
    if match:
        return match.group(1).upper()
    stripped = text.strip().strip(".*").upper()
    return stripped if stripped in ("A", "B") else None


def hybrid_prompt(claim: Claim, a: Assessment, b: Assessment) -> str:
    return (
        f"Claim: {claim.text}\n\n"
        f"Justification A (verdict {a.verdict.value}):\n{a.justification}\n\n"
        f"Justification B (verdict {b.verdict.value}):\n{b.justification}\n\n"
        "Which justification is better?"
    )


def run_em_hybrid(claim: Claim, assessment_rag: Assessment, assessment_kg: Assessment,
                  provider: Provider) -> Assessment:
    """Judge between the EM-RAG (A) and EM-KGRAG (B) assessments.

    With one abstention the other answer is returned unjudged; with two the
    result is an abstention.
    """
    mode = assessment_rag.prompt_mode
    if assessment_rag.abstained and assessment_kg.abstained:
        return abstain(EM_HYBRID, claim, mode, "both inputs abstained")
    if assessment_rag.abstained:
        return assessment_kg.retag(EM_HYBRID)
    if assessment_kg.abstained:
        return assessment_rag.retag(EM_HYBRID)
    try:
        response = provider.complete(
            ChatRequest(user_text=hybrid_prompt(claim, assessment_rag, assessment_kg), system_text=JUDGE_SYSTEM,
                        tag="judge")
        )
    except ProviderError as exc:
        return abstain(EM_HYBRID, claim, mode, f"judge provider error: {exc}")
    choice = parse_choice(response.text)
    if choice is None:
        return abstain(EM_HYBRID, claim, mode, "unparseable judge choice")
    return (assessment_rag if choice == "A" else assessment_kg).retag(EM_HYBRID)


def resolve_pipeline(name: str) -> str:
    if name in PIPELINES:
        return name
    try:
        return PIPELINE_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown pipeline {name!r}") from None


def verify_claim(claim: Claim, pipeline: str, stores: Stores, params: PipelineParams, prompt_config: PromptConfig,
                 provider: Provider, embedder: Embedder) -> Assessment:
    """Run one named pipeline on one claim."""
    return _run_claim(claim, [resolve_pipeline(pipeline)], stores, params, prompt_config, provider, embedder)[
        resolve_pipeline(pipeline)]


def _run_claim(claim: Claim, pipelines: Sequence[str], stores: Stores, params: PipelineParams,
               config: PromptConfig, provider: Provider, embedder: Embedder) -> dict[str, Assessment]:
    out: dict[str, Assessment] = {}
    need = set(pipelines)
    if EM_HYBRID in need:
        need |= {EM_RAG, EM_KGRAG}
    try:
        if BASELINE in need:
            out[BASELINE] = run_baseline(claim, config, provider)
        if EM_RAG in need:
            out[EM_RAG] = run_em_rag(claim, stores, params, config, provider, embedder)
        if EM_KGRAG in need:
            out[EM_KGRAG] = run_em_kgrag(claim, stores, params, config, provider, embedder)
        if EM_HYBRID in need:
            logger.info("hybrid for %s: EM-RAG=%s, EM-KGRAG=%s", claim.id, out[EM_RAG].verdict.value,
                        out[EM_KGRAG].verdict.value)
            out[EM_HYBRID] = run_em_hybrid(claim, out[EM_RAG], out[EM_KGRAG], provider)
    except GreenClaimError as exc:
        for name in need:
            out.setdefault(name, abstain(name, claim, config.mode, f"pipeline error: {exc}"))
    return out


def run_batch(
    claims: Sequence[Claim],
    pipelines: Sequence[str],
    prompt_configs: Sequence[PromptConfig],
    stores: Stores,
    params: PipelineParams,
    provider: Provider,
    embedder: Embedder,
    width: int = 1,
) -> list[Assessment]:
    """Assess every claim with every pipeline under every prompt configuration.

    Output order is fixed (prompt mode, then pipeline, then claim) regardless
    of ``width``.
    """
    names = [resolve_pipeline(p) for p in pipelines]
    jobs = [(config, claim) for config in prompt_configs for claim in claims]

    def work(job):
        config, claim = job
        return _run_claim(claim, names, stores, params, config, provider, embedder)

    with ThreadPoolExecutor(max_workers=max(1, width)) as pool:
        results = list(pool.map(work, jobs))

    ordered = []
    n = len(claims)
    for m, _config in enumerate(prompt_configs):
        for name in names:
            for i in range(n):
                ordered.append(results[m * n + i][name])
    return ordered


# ---------------------------------------------------------------------------
# Datasets and results files
# ---------------------------------------------------------------------------

LABEL_ALIASES = {
    "g": "G", "greenwashing": "G", "true": "G", "1": "G",
    "ng": "NG", "notgreenwashing": "NG", "not greenwashing": "NG", "not_greenwashing": "NG", "false": "NG", "0": "NG",
}


def normalize_label(value: Any) -> str | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return "G" if value else "NG"
    key = str(value).strip().lower()
    if key not in LABEL_ALIASES:
        raise ValueError(f"unknown label {value!r}")
    return LABEL_ALIASES[key]


def load_dataset(path: str | Path) -> tuple[list[Claim], list[str]]:
    """Read ``{id, claim, company?, label?}`` rows; malformed rows are skipped with a warning."""
    claims: list[Claim] = []
    warnings: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                claim = Claim(
                    text=row["claim"],
                    id=str(row.get("id", lineno)),
                    company=row.get("company") or None,
                    label=normalize_label(row.get("label")),
                )
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                msg = f"{path}:{lineno}: skipped malformed row ({exc})"
                logger.warning(msg)
                warnings.append(msg)
                continue
            claims.append(claim)
    return claims, warnings


def write_assessments(assessments: Iterable[Assessment], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in assessments:
            fh.write(json.dumps(a.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_assessments(path: str | Path) -> list[Assessment]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Assessment.from_record(json.loads(line)))
    return out
