"""Evaluation: coverage-aware metrics, ILORA aggregation, judge rankings,
Borda counts, and Friedman / Nemenyi rank statistics."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import (
    EmptyInput,
    InconsistentPipelineSet,
    MalformedMatrix,
    ProviderError,
    UnparseableRanking,
    UnsupportedK,
)
from .llm_provider import ChatRequest, Provider

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------

_DECIDED = {"Greenwashing": "G", "NotGreenwashing": "NG"}


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    coverage: float
    overall_accuracy: float
    n_abstains: int
    n_total: int
    n_correct: int
    accuracy_defined: bool = True

    def percentages(self) -> dict[str, str]:
        return {
            "accuracy": f"{100 * self.accuracy:.2f}%",
            "coverage": f"{100 * self.coverage:.2f}%",
            "overall_accuracy": f"{100 * self.overall_accuracy:.2f}%",
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "coverage": self.coverage,
            "overall_accuracy": self.overall_accuracy,
            "n_abstains": self.n_abstains,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "accuracy_defined": self.accuracy_defined,
            "display": self.percentages(),
        }


def _verdict_code(verdict: Any) -> str | None:
    value = getattr(verdict, "value", verdict)
    if value in _DECIDED:
        return _DECIDED[value]
    if value in ("G", "NG"):
        return value
    if value == "Abstain":
        return None
    raise ValueError(f"unknown verdict {verdict!r}")


def compute_metrics(results: Iterable[tuple[Any, str]]) -> MetricsReport:
    """Accuracy on decided claims, coverage, and their product.

    ``results`` holds ``(verdict, label)`` pairs with labels ``"G"``/``"NG"``.
    When every claim abstains, accuracy is reported as 0 and flagged as
    undefined.
    """
    n_total = n_abstains = n_correct = 0
    for verdict, label in results:
        if label not in ("G", "NG"):
            raise ValueError(f"ground-truth label must be G or NG, got {label!r}")
        n_total += 1
        code = _verdict_code(verdict)
        if code is None:
            n_abstains += 1
        elif code == label:
            n_correct += 1
    if n_total == 0:
        raise EmptyInput("no results to score")
    n_decided = n_total - n_abstains
    accuracy = n_correct / n_decided if n_decided else 0.0
    coverage = n_decided / n_total
    return MetricsReport(accuracy, coverage, accuracy * coverage, n_abstains, n_total, n_correct, n_decided > 0)


# ---------------------------------------------------------------------------
# ILORA
# ---------------------------------------------------------------------------

ILORA_CRITERIA = ("informativeness", "logicality", "objectivity", "readability", "accuracy")


@dataclass(frozen=True)
class IloraScore:
    informativeness: int
    logicality: int
    objectivity: int
    readability: int
    accuracy: int

    def __post_init__(self) -> None:
        for name in ILORA_CRITERIA:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 5:
                raise ValueError(f"{name} must be an integer in [1, 5], got {value!r}")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, c) for c in ILORA_CRITERIA)


def ilora_aggregate(scores: Sequence[IloraScore]) -> dict[str, float]:
    if not scores:
        raise EmptyInput("no ILORA scores")
    matrix = np.array([s.as_tuple() for s in scores], dtype=float)
    return dict(zip(ILORA_CRITERIA, (float(m) for m in matrix.mean(axis=0))))


def ilora_table(groups: Mapping[str, Sequence[IloraScore]]) -> list[dict[str, Any]]:
    """Radar-chart rows: one per group (e.g. ``"few-shot/EM-RAG"``), means at 2 decimals."""
    rows = []
    for name in sorted(groups):
        means = ilora_aggregate(groups[name])
        rows.append({"group": name, "n": len(groups[name]), **{c: round(means[c], 2) for c in ILORA_CRITERIA}})
    return rows


def rows_to_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


ILORA_SYSTEM = (
    "Rate the justification for the sustainability claim on a 1-5 scale for each criterion: "
    "Informativeness, Logicality, Objectivity, Readability, Accuracy. "
    "Answer with one line per criterion, e.g. 'Logicality: 4'."
)


def parse_ilora(text: str) -> IloraScore:
    values = {}
    for name in ILORA_CRITERIA:
        match = re.search(rf"{name}\W*[:=]?\s*([1-5])\b", text, re.IGNORECASE)
        if not match:
            raise ValueError(f"missing ILORA criterion {name}")
        values[name] = int(match.group(1))
    return IloraScore(**values)


def ilora_judge(claim: str, justification: str, provider: Provider, label: str | None = None) -> IloraScore:
    truth = f"\nGround-truth label: {label}" if label else ""
    prompt = f"Claim: {claim}{truth}\n\nJustification:\n{justification or '(none)'}"
    response = provider.complete(ChatRequest(user_text=prompt, system_text=ILORA_SYSTEM, tag="ilora"))
    return parse_ilora(response.text)


# ---------------------------------------------------------------------------
# Rankings and Borda count
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankingRecord:
    claim_id: str | None
    ranks: Mapping[str, int]
    has_empty: bool = False

    def __post_init__(self) -> None:
        positions = sorted(self.ranks.values())
        if positions != list(range(1, len(positions) + 1)) or len(positions) < 2:
            raise UnparseableRanking(f"ranks {dict(self.ranks)} are not a permutation of 1..k")

    @classmethod
    def from_order(cls, claim_id: str | None, order: Sequence[str], has_empty: bool = False) -> RankingRecord:
        return cls(claim_id, {p: i for i, p in enumerate(order, 1)}, has_empty)

    def order(self) -> list[str]:
        return sorted(self.ranks, key=self.ranks.__getitem__)

    def to_record(self) -> dict[str, Any]:
        return {"id": self.claim_id, "ranks": dict(sorted(self.ranks.items())), "has_empty": self.has_empty}


def _pipeline_set(rankings: Sequence[RankingRecord]) -> list[str]:
    if not rankings:
        raise EmptyInput("no ranking records")
    methods = set(rankings[0].ranks)
    for record in rankings[1:]:
        if set(record.ranks) != methods:
            raise InconsistentPipelineSet(f"record {record.claim_id} ranks {sorted(record.ranks)}, "
                                          f"expected {sorted(methods)}")
    return sorted(methods)


def position_counts(rankings: Sequence[RankingRecord]) -> dict[str, list[int]]:
    """Per pipeline, how often it was placed 1st, 2nd, ... ."""
    methods = _pipeline_set(rankings)
    k = len(methods)
    counts = {m: [0] * k for m in methods}
    for record in rankings:
        for m, pos in record.ranks.items():
            counts[m][pos - 1] += 1
    return counts


def borda_from_counts(counts: Mapping[str, Sequence[int]]) -> dict[str, int]:
    """k points for 1st place down to 1 point for last."""
    out = {}
    for method, per_position in counts.items():
        k = len(per_position)
        out[method] = sum((k - i) * n for i, n in enumerate(per_position))
    return out


def borda_scores(rankings: Sequence[RankingRecord]) -> dict[str, int]:
    return borda_from_counts(position_counts(rankings))


def borda_order(scores: Mapping[str, int]) -> list[str]:
    return sorted(scores, key=lambda m: (-scores[m], m))


_RANK_LINE_RE = re.compile(r"(?<![\w-])([1-9])\s*(?:st|nd|rd|th)?\s*[:.)\-]\s*\**\s*([A-Za-z][\w-]*)")


def parse_ranking(text: str, pipelines: Sequence[str], claim_id: str | None = None,
                  has_empty: bool = False) -> RankingRecord:
    """Parse ``"1: EM-RAG, 2: EM-KGRAG, 3: Baseline"`` style judge output."""
    lookup = {p.lower(): p for p in pipelines}
    placed: dict[int, str] = {}
    for pos, name in _RANK_LINE_RE.findall(text):
        method = lookup.get(name.lower())
        if method is None:
            continue
        pos = int(pos)
        if pos in placed and placed[pos] != method:
            raise UnparseableRanking(f"position {pos} assigned twice", text)
        placed[pos] = method
    order = [placed.get(i) for i in range(1, len(pipelines) + 1)]
    if None in order or len(set(order)) != len(pipelines) or len(placed) != len(pipelines):
        raise UnparseableRanking("judge output is not a strict ordering of all pipelines", text)
    return RankingRecord.from_order(claim_id, order, has_empty)


JUDGE_RANK_SYSTEM = (
    "Rank the justifications for the sustainability claim from best (1) to worst using these "
    "criteria: informativeness, logicality, objectivity, readability and accuracy. Give a strict "
    "ordering without ties, formatted as '1: <name>, 2: <name>, 3: <name>'."
)


def three_way_judge(claim: str, justifications: Mapping[str, str], provider: Provider,
                    claim_id: str | None = None) -> RankingRecord:
    if len(justifications) != 3:
        raise ValueError("three_way_judge needs exactly three justifications")
    names = sorted(justifications)
    blocks = "\n\n".join(f"{name}:\n{justifications[name] or '(no justification)'}" for name in names)
    prompt = f"Claim: {claim}\n\n{blocks}"
    response = provider.complete(ChatRequest(user_text=prompt, system_text=JUDGE_RANK_SYSTEM, tag="judge"))
    has_empty = any(not j.strip() for j in justifications.values())
    return parse_ranking(response.text, names, claim_id, has_empty)


@dataclass
class JudgingRun:
    records: list[RankingRecord] = field(default_factory=list)
    unparseable: int = 0
    failed: int = 0

    @property
    def with_empty(self) -> int:
        return sum(r.has_empty for r in self.records)


def judge_all(items: Iterable[tuple[str | None, str, Mapping[str, str]]], provider: Provider) -> JudgingRun:
    """Judge ``(claim_id, claim_text, justifications)`` items; failures are counted and skipped."""
    run = JudgingRun()
    for claim_id, text, justifications in items:
        try:
            run.records.append(three_way_judge(text, justifications, provider, claim_id))
        except UnparseableRanking:
            run.unparseable += 1
        except ProviderError as exc:
            logger.warning("judge failed for %s: %s", claim_id, exc)
            run.failed += 1
    return run


# ---------------------------------------------------------------------------
# Friedman and Nemenyi
# ---------------------------------------------------------------------------


def _check_rank_matrix(rank_matrix: Any) -> np.ndarray:
    matrix = np.asarray(rank_matrix)
    if matrix.ndim != 2:
        raise MalformedMatrix("rank matrix must be two-dimensional")
    n, k = matrix.shape
    if n < 2 or k < 2:
        raise MalformedMatrix(f"need at least 2 subjects and 2 methods, got N={n}, k={k}")
    expected = np.arange(1, k + 1)
    if not np.array_equal(np.sort(matrix, axis=1), np.broadcast_to(expected, matrix.shape)):
        raise MalformedMatrix("every row must be a permutation of 1..k (ties are not supported)")
    return matrix.astype(float)


def friedman_test(rank_matrix: Any) -> tuple[float, float]:
    """Friedman chi-square on an N x k matrix of strict ranks; returns (statistic, p-value)."""
    matrix = _check_rank_matrix(rank_matrix)
    n, k = matrix.shape
    mean_ranks = matrix.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * (float(np.sum(mean_ranks ** 2)) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    return chi2, float(stats.chi2.sf(chi2, k - 1))


def rank_matrix(rankings: Sequence[RankingRecord]) -> tuple[np.ndarray, list[str]]:
    methods = _pipeline_set(rankings)
    return np.array([[r.ranks[m] for m in methods] for r in rankings]), methods


def mean_ranks(rankings: Sequence[RankingRecord]) -> dict[str, float]:
    matrix, methods = rank_matrix(rankings)
    return dict(zip(methods, (float(x) for x in matrix.mean(axis=0))))


# Critical values of the Studentized range statistic divided by sqrt(2)
# (Demsar, JMLR 7, 2006, Table 5), indexed by number of methods k.
NEMENYI_Q = {
    0.05: {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164},
    0.10: {2: 1.645, 3: 2.052, 4: 2.291, 5: 2.459, 6: 2.589, 7: 2.693, 8: 2.780, 9: 2.855, 10: 2.920},
}


def critical_difference(k: int, n: int, alpha: float = 0.05) -> float:
    if alpha not in NEMENYI_Q:
        raise ValueError(f"alpha must be one of {sorted(NEMENYI_Q)}")
    if k not in NEMENYI_Q[alpha]:
        raise UnsupportedK(f"Nemenyi table covers k = 2..10, got {k}")
    if n < 2:
        raise ValueError("N must be >= 2")
    return NEMENYI_Q[alpha][k] * math.sqrt(k * (k + 1) / (6.0 * n))


def nemenyi(mean_ranks: Mapping[str, float], k: int, n: int, alpha: float = 0.05,
            cd: float | None = None) -> tuple[float, dict[tuple[str, str], bool]]:
    """Critical difference and pairwise significance (``|gap| > CD``).

    ``cd`` overrides the computed critical difference, e.g. to check gaps
    against a published value.
    """
    if len(mean_ranks) != k:
        raise ValueError(f"expected {k} mean ranks, got {len(mean_ranks)}")
    computed = critical_difference(k, n, alpha)
    threshold = computed if cd is None else cd
    pairs = {
        (a, b): abs(mean_ranks[a] - mean_ranks[b]) > threshold
        for a, b in itertools.combinations(sorted(mean_ranks), 2)
    }
    return threshold, pairs


@dataclass
class SignificanceReport:
    n: int
    k: int
    chi_square: float
    p_value: float
    mean_ranks: dict[str, float]
    critical_difference: float
    significant: dict[tuple[str, str], bool]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "chi_square": self.chi_square,
            "p_value": self.p_value,
            "mean_ranks": self.mean_ranks,
            "critical_difference": self.critical_difference,
            "pairs": [
                {"a": a, "b": b, "gap": abs(self.mean_ranks[a] - self.mean_ranks[b]), "significant": sig}
                for (a, b), sig in sorted(self.significant.items())
            ],
        }


def significance(rankings: Sequence[RankingRecord], alpha: float = 0.05) -> SignificanceReport:
    matrix, methods = rank_matrix(rankings)
    chi2, p = friedman_test(matrix)
    means = dict(zip(methods, (float(x) for x in matrix.mean(axis=0))))
    cd, pairs = nemenyi(means, len(methods), len(rankings), alpha)
    return SignificanceReport(len(rankings), len(methods), chi2, p, means, cd, pairs)


def tally(labels: Iterable[str]) -> Counter:
    return Counter(labels)
