"""Knowledge-graph grounded verification of corporate sustainability claims."""

from .estimators import ClaimVerifier
from .graph_store import Graph, Schema, graph_stats, load_graph, load_schema, merge_schemas
from .grounding import Claim, ground_claim
from .pipelines import Assessment, PromptConfig, Verdict, run_batch, verify_claim
from .retrieval import RetrievalParams, retrieve_context

__version__ = "0.1.0"

__all__ = [
    "Assessment",
    "Claim",
    "ClaimVerifier",
    "Graph",
    "PromptConfig",
    "RetrievalParams",
    "Schema",
    "Verdict",
    "graph_stats",
    "ground_claim",
    "load_graph",
    "load_schema",
    "merge_schemas",
    "retrieve_context",
    "run_batch",
    "verify_claim",
]
