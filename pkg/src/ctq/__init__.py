"""Exact cosine-threshold search over sparse non-negative vectors."""

from .engine import (
    GatherMetrics,
    QueryResult,
    QuerySession,
    brute_force_opt,
    gather,
    linear_scan,
    query,
    query_topk,
    topk_scan,
)
from .errors import CTQError
from .index import InvertedIndex, build, load, lower_hull, save
from .stopping import Frontier, TauState, baseline_stop, solve_tau_direct, tight_stop
from .traversal import capped_cosine, epsilon_bound, inner_product, project_hull
from .vectors import Query, SparseVector, cosine, dot, normalize

__version__ = "0.1.0"

__all__ = [
    "CTQError", "Frontier", "GatherMetrics", "InvertedIndex", "Query", "QueryResult", "QuerySession",
    "SparseVector", "TauState", "baseline_stop", "brute_force_opt", "build", "capped_cosine", "cosine",
    "dot", "epsilon_bound", "gather", "inner_product", "linear_scan", "load", "lower_hull", "normalize",
    "project_hull", "query", "query_topk", "save", "solve_tau_direct", "tight_stop", "topk_scan",
]
