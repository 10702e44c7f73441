"""Exact threshold decisions on candidates, stopping the scan early when possible.

A candidate's entries are read heaviest first.  After each read the
unobserved remainder of the vector has known squared mass, which brackets
the final dot product: Cauchy-Schwarz against the unobserved part of the
query gives the upper end, and dumping all the remaining mass on the
lightest unobserved query weight gives the lower end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .vectors import SparseVector, dot

# decisions taken before the scan completes must clear the threshold by this
VERIFY_GUARD = 1e-13
# added to (ub) or taken from (lb) each radicand to absorb rounding in the sums
RADICAND_SLACK = 1e-14


@dataclass
class PartialView:
    partial_dot: float = 0.0
    s_sq: float = 0.0
    q_sq_observed: float = 0.0
    q_min_unobserved: float = 0.0
    s_total: float = 1.0
    q_total: float = 1.0

    def observe(self, s_value: float, q_value: float) -> None:
        self.partial_dot += s_value * q_value
        self.s_sq += s_value * s_value
        self.q_sq_observed += q_value * q_value


def bounds(view: PartialView, slack: float = 0.0) -> tuple[float, float]:
    """(lb, ub) on the full dot product over every completion of ``view``."""
    rest_s = view.s_total - view.s_sq
    rest_q = view.q_total - view.q_sq_observed
    lb = view.partial_dot + math.sqrt(max(0.0, rest_s - slack)) * view.q_min_unobserved
    ub = view.partial_dot + math.sqrt(max(0.0, rest_s + slack)) * math.sqrt(max(0.0, rest_q + slack))
    return lb, ub


class _MinTracker:
    """Smallest query weight among dims not yet observed.

    Zero-weight dims count too, so the answer stays 0 until every one of
    them has been seen; only then do the support weights matter.
    """

    def __init__(self, q: SparseVector, d: int | None):
        self.zero_dims = math.inf if d is None else d - len(q.dims)
        self.zero_seen = 0
        self.order = sorted(range(len(q.dims)), key=lambda k: (q.values[k], q.dims[k]))
        self.q = q
        self.seen: set[int] = set()
        self.p = 0

    def observe(self, dim: int, q_value: float) -> None:
        if q_value == 0.0:
            self.zero_seen += 1
        else:
            self.seen.add(dim)

    def value(self) -> float:
        if self.zero_seen < self.zero_dims:
            return 0.0
        while self.p < len(self.order) and self.q.dims[self.order[self.p]] in self.seen:
            self.p += 1
        if self.p == len(self.order):
            return 0.0
        return self.q.values[self.order[self.p]]


def verify_candidate(s: SparseVector, q: SparseVector, theta: float,
                     d: int | None = None) -> tuple[bool, int]:
    """Decide ``dot(s, q) >= theta``; returns the decision and entries read.

    ``d`` is the dimensionality of the space; leaving it out assumes there
    are always unseen zero-weight dims, which only weakens the lower bound.
    """
    dims, values = s.by_value
    weights = q.as_dict
    view = PartialView(s_total=s.sq_norm, q_total=q.sq_norm)
    mins = _MinTracker(q, d)
    n = len(dims)
    for k in range(n):
        qv = weights.get(dims[k], 0.0)
        view.observe(values[k], qv)
        mins.observe(dims[k], qv)
        if k + 1 == n:
            break
        view.q_min_unobserved = mins.value()
        lb, ub = bounds(view, RADICAND_SLACK)
        if lb >= theta + VERIFY_GUARD:
            return True, k + 1
        if ub < theta - VERIFY_GUARD:
            return False, k + 1
    return dot(s, q) >= theta, n
