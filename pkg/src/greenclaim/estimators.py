"""scikit-learn style wrapper around the claim pipelines."""

from __future__ import annotations

from typing import Any

from sklearn.base import BaseEstimator, ClassifierMixin

from .docstore import TOP_M, DocStore
from .embeddings import Embedder, HashingEmbedder
from .evaluation import compute_metrics
from .graph_store import Graph
from .grounding import MERGE_THRESHOLD
from .llm_provider import Provider
from .pipelines import (
    PIPELINE_ALIASES,
    PIPELINES,
    PROMPT_MODES,
    Assessment,
    PipelineParams,
    PromptConfig,
    Stores,
    resolve_pipeline,
    run_batch,
)
from .retrieval import MAX_HOPS, SIMILARITY_THRESHOLD, TOP_N, RetrievalParams
from .validation import check_claims, check_in, check_labels


class ClaimVerifier(ClassifierMixin, BaseEstimator):
    """Classify claims as ``Greenwashing``, ``NotGreenwashing`` or ``Abstain``.

    ``fit`` only validates the configuration and stores; the underlying model
    is not trained. ``score`` is overall accuracy, so abstentions count as
    errors.

    >>> verifier = ClaimVerifier(pipeline="kgrag", graph=graph, provider=provider)
    >>> verifier.fit().predict(["Acme cut emissions by 30% in 2023."])  # doctest: +SKIP
    """

    def __init__(self, pipeline: str = "kgrag", graph: Graph | None = None, docstore: DocStore | None = None,
                 provider: Provider | None = None, embedder: Embedder | None = None, top_n: int = TOP_N,
                 threshold: float = SIMILARITY_THRESHOLD, k: int = MAX_HOPS, top_m: int = TOP_M,
                 prompt_mode: str = "zero-shot", merge_threshold: float = MERGE_THRESHOLD, width: int = 1):
        self.pipeline = pipeline
        self.graph = graph
        self.docstore = docstore
        self.provider = provider
        self.embedder = embedder
        self.top_n = top_n
        self.threshold = threshold
        self.k = k
        self.top_m = top_m
        self.prompt_mode = prompt_mode
        self.merge_threshold = merge_threshold
        self.width = width

    def fit(self, X: Any = None, y: Any = None) -> ClaimVerifier:
        check_in("pipeline", self.pipeline, list(PIPELINES) + list(PIPELINE_ALIASES))
        check_in("prompt_mode", self.prompt_mode, PROMPT_MODES)
        if self.provider is None:
            raise ValueError("a provider is required")
        if X is not None:
            claims = check_claims(X)
            if y is not None:
                check_labels(y, len(claims))
        self.pipeline_ = resolve_pipeline(self.pipeline)
        self.params_ = PipelineParams(RetrievalParams(self.top_n, self.threshold, self.k), self.top_m,
                                      self.merge_threshold)
        self.prompt_config_ = PromptConfig.load(self.prompt_mode)
        self.embedder_ = self.embedder if self.embedder is not None else HashingEmbedder()
        self.classes_ = ["Greenwashing", "NotGreenwashing", "Abstain"]
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("ClaimVerifier is not fitted; call fit() first")

    def verify(self, X: Any) -> list[Assessment]:
        self._check_fitted()
        claims = check_claims(X)
        return run_batch(claims, [self.pipeline_], [self.prompt_config_], Stores(self.graph, self.docstore),
                         self.params_, self.provider, self.embedder_, self.width)

    def predict(self, X: Any) -> list[str]:
        return [a.verdict.value for a in self.verify(X)]

    def score(self, X: Any, y: Any, sample_weight: Any = None) -> float:
        if sample_weight is not None:
            raise ValueError("sample_weight is not supported")
        predictions = self.predict(X)
        labels = check_labels(y, len(predictions))
        return compute_metrics(zip(predictions, labels)).overall_accuracy
