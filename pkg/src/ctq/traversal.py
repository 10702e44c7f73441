"""Traversal strategies: which posting list to advance next.

Three strategies share one interface.  ``lockstep`` round-robins over the
query dims.  ``maxred`` advances the list whose next step lowers the score
function most.  ``hull`` uses the average drop along the current segment of
each list's lower convex hull, so it never needs to look past the
precomputed vertices.

Scores are sums of non-decreasing per-dim components.  The plain inner
product uses ``q_i * x``; the capped form ``q_i * min(q_i * tau_tilde, x)``
stands in for the cosine bound when ``tau`` itself is not decomposable.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import AllExhausted, UnknownStrategy

STRATEGIES = ("lockstep", "maxred", "hull")


class DecomposableScore:
    def __init__(self, weights: Mapping[int, float], tau_tilde: float | None = None):
        if tau_tilde is not None and not tau_tilde > 0:
            raise ValueError(f"tau_tilde must be positive, got {tau_tilde}")
        self.weights = dict(weights)
        self.tau_tilde = tau_tilde

    @property
    def capped(self) -> bool:
        return self.tau_tilde is not None

    def cap(self, dim: int) -> float:
        """Value above which the component for ``dim`` goes flat."""
        if self.tau_tilde is None:
            return math.inf
        return self.weights[dim] * self.tau_tilde

    def component(self, dim: int, x: float) -> float:
        q = self.weights[dim]
        if self.tau_tilde is None:
            return q * x
        return q * min(q * self.tau_tilde, x)

    def total(self, dims: Sequence[int], bounds: Sequence[float]) -> float:
        s = 0.0
        for dim, x in zip(dims, bounds):
            s += self.component(dim, x)
        return s

    def __repr__(self) -> str:
        kind = "inner" if self.tau_tilde is None else f"capped(tau_tilde={self.tau_tilde:g})"
        return f"DecomposableScore({kind}, m={len(self.weights)})"


def inner_product(weights: Mapping[int, float]) -> DecomposableScore:
    return DecomposableScore(weights)


def capped_cosine(weights: Mapping[int, float], tau_tilde: float) -> DecomposableScore:
    return DecomposableScore(weights, tau_tilde)


# -- hull arithmetic ----------------------------------------------------------

def hull_deltas(vertices: Sequence[int], vertex_values: Sequence[float], score: DecomposableScore,
                dim: int) -> list[float]:
    """Average per-step drop of ``score``'s component along each hull segment.

    Segment ``k`` covers cursor positions ``vertices[k] .. vertices[k+1]-1``.
    """
    f = [score.component(dim, v) for v in vertex_values]
    return [(f[k] - f[k + 1]) / (vertices[k + 1] - vertices[k]) for k in range(len(vertices) - 1)]


def project_hull(vertices: Sequence[int], vertex_values: Sequence[float], q: float,
                 tau_tilde: float) -> list[int]:
    """Hull of the capped list ``q * min(q * tau_tilde, L[j])``.

    Capping flattens the head of the list, so every vertex before the point
    where a line from ``(0, cap)`` touches the original hull drops out.  The
    touching test is monotone along the hull, hence the binary search.
    """
    cap = q * tau_tilde
    n = len(vertices)
    if n <= 2:
        return list(vertices)

    def touches(k: int) -> bool:
        if k == n - 1:
            return True
        j, v = vertices[k], vertex_values[k]
        return (cap - v) / j >= (v - vertex_values[k + 1]) / (vertices[k + 1] - j)

    lo, hi = 1, n - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if touches(mid):
            hi = mid
        else:
            lo = mid + 1
    return [vertices[0], *vertices[lo:]]


def epsilon_bound(ms: float, f_tilde: float, tau_tilde: float) -> float:
    """How far below the threshold the capped score can let the stop drift.

    ``ms`` and ``f_tilde`` are the max similarity and the capped score at the
    last hull boundary before stopping.
    """
    if not ms > 0:
        raise ValueError(f"max similarity must be positive, got {ms}")
    return max(0.0, tau_tilde - 1.0 / ms) + max(0.0, ms - f_tilde)


# -- per-query list views -----------------------------------------------------

@dataclass
class ListView:
    """What a strategy may see of one query dim's list."""

    dim: int
    weight: float
    profile: Sequence[float]
    vertices: Sequence[int]

    @property
    def length(self) -> int:
        return len(self.profile) - 1


def active_vertices(view: ListView, score: DecomposableScore) -> list[int]:
    verts = list(view.vertices)
    if not score.capped:
        return verts
    return project_hull(verts, [view.profile[j] for j in verts], view.weight, score.tau_tilde)


def lockstep_next(support: Sequence[int], b: Sequence[int], lengths: Sequence[int]) -> int:
    """``support[|b| mod m]``, moving on to the next list that is not exhausted."""
    m = len(support)
    start = sum(b) % m
    for step in range(m):
        k = (start + step) % m
        if b[k] < lengths[k]:
            return support[k]
    raise AllExhausted("every query list is exhausted")


def max_reduction_next(views: Sequence[ListView], b: Sequence[int], score: DecomposableScore) -> int:
    best, best_dim = -1.0, -1
    for view, pos in zip(views, b):
        if pos >= view.length:
            continue
        drop = score.component(view.dim, view.profile[pos]) - score.component(view.dim, view.profile[pos + 1])
        if drop > best or (drop == best and view.dim < best_dim):
            best, best_dim = drop, view.dim
    if best_dim < 0:
        raise AllExhausted("every query list is exhausted")
    return best_dim


class Strategy:
    """Stateful chooser over the query's list views, addressed by slot."""

    name = ""

    def __init__(self, views: Sequence[ListView], score: DecomposableScore):
        self.views = list(views)
        self.score = score
        self.b = [0] * len(self.views)

    def next(self) -> int:
        raise NotImplementedError

    def moved(self, slot: int) -> None:
        self.b[slot] += 1

    def live(self, slot: int) -> bool:
        return self.b[slot] < self.views[slot].length


class Lockstep(Strategy):
    name = "lockstep"

    def __init__(self, views, score):
        super().__init__(views, score)
        self._steps = 0

    def next(self) -> int:
        m = len(self.views)
        start = self._steps % m
        for step in range(m):
            k = (start + step) % m
            if self.live(k):
                return k
        raise AllExhausted("every query list is exhausted")

    def moved(self, slot: int) -> None:
        super().moved(slot)
        self._steps += 1


class _HeapStrategy(Strategy):
    def __init__(self, views, score):
        super().__init__(views, score)
        self._heap = [(-self.rate(k), v.dim, k) for k, v in enumerate(self.views) if self.live(k)]
        heapq.heapify(self._heap)

    def rate(self, slot: int) -> float:
        raise NotImplementedError

    def next(self) -> int:
        if not self._heap:
            raise AllExhausted("every query list is exhausted")
        return self._heap[0][2]

    def moved(self, slot: int) -> None:
        if not self._heap or self._heap[0][2] != slot:
            raise ValueError(f"slot {slot} was not the strategy's choice")
        super().moved(slot)
        if self.live(slot):
            heapq.heapreplace(self._heap, (-self.rate(slot), self.views[slot].dim, slot))
        else:
            heapq.heappop(self._heap)


class MaxReduction(_HeapStrategy):
    name = "maxred"

    def rate(self, slot: int) -> float:
        v, pos = self.views[slot], self.b[slot]
        f = self.score.component
        return f(v.dim, v.profile[pos]) - f(v.dim, v.profile[pos + 1])


class HullStrategy(_HeapStrategy):
    name = "hull"

    def __init__(self, views, score):
        self.verts = [active_vertices(v, score) for v in views]
        self.rates = [hull_deltas(vs, [v.profile[j] for j in vs], score, v.dim)
                      for v, vs in zip(views, self.verts)]
        self.segment = [0] * len(views)
        super().__init__(views, score)

    def rate(self, slot: int) -> float:
        return self.rates[slot][self.segment[slot]]

    def moved(self, slot: int) -> None:
        vs = self.verts[slot]
        k = self.segment[slot]
        if self.b[slot] + 1 == vs[k + 1] and k + 2 < len(vs):
            self.segment[slot] = k + 1
        super().moved(slot)


def make_strategy(name: str, views: Sequence[ListView], score: DecomposableScore) -> Strategy:
    if name == "lockstep":
        return Lockstep(views, score)
    if name == "maxred":
        return MaxReduction(views, score)
    if name == "hull":
        return HullStrategy(views, score)
    raise UnknownStrategy(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
