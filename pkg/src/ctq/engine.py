"""Query driver: gather candidates from the index, then verify them.

Gathering repeatedly asks the strategy for a list, advances its cursor and
adds the vector found there to the candidate pool, until the stopping
condition says no unseen vector can reach the threshold.  Verification then
decides each candidate exactly.

Besides the driver this module holds the ground-truth oracles used by the
tests: a linear scan over the vector store, and an exhaustive search over
cursor positions for the cheapest point at which a stop condition holds.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

from .errors import InstanceTooLarge, UnknownStrategy
from .index import InvertedIndex
from .stopping import Frontier, TauResult, TauState, solve_tau_direct
from .traversal import (
    STRATEGIES,
    DecomposableScore,
    HullStrategy,
    ListView,
    active_vertices,
    capped_cosine,
    epsilon_bound,
    inner_product,
    make_strategy,
)
from .verify import verify_candidate
from .vectors import Query, SparseVector, dot, normalize

# scores this close below the threshold still count as matches
SIMILARITY_TOLERANCE = 1e-12
LATTICE_LIMIT = 10**6
STOPS = ("baseline", "tight")


@dataclass
class GatherMetrics:
    access_cost: int = 0
    last_gap: int = 0
    epsilon_upper: float | None = None
    candidate_count: int = 0
    verification_accesses: int = 0
    result_count: int = 0
    wall_time_micros: int = 0

    def as_dict(self) -> dict:
        return {
            "accessCost": self.access_cost,
            "candidateCount": self.candidate_count,
            "lastGap": self.last_gap,
            "epsilonUpper": self.epsilon_upper,
            "verificationAccesses": self.verification_accesses,
            "resultCount": self.result_count,
            "wallTimeMicros": self.wall_time_micros,
        }


@dataclass
class GatherResult:
    candidates: list[int]
    frontier: Frontier
    metrics: GatherMetrics
    path: list[int] = field(default_factory=list)


@dataclass
class QueryResult:
    matches: list[tuple[Hashable, float]]
    metrics: GatherMetrics
    candidates: list[int]


def _check_choice(strategy: str, stop: str) -> None:
    if strategy not in STRATEGIES:
        raise UnknownStrategy(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    if stop not in STOPS:
        raise ValueError(f"unknown stop {stop!r}; expected baseline or tight")


def space_dim(index: InvertedIndex, qv: SparseVector) -> int:
    return max(index.d, qv.dims[-1] + 1)


def list_views(index: InvertedIndex, qv: SparseVector) -> list[ListView]:
    views = []
    for dim, w in zip(qv.dims, qv.values):
        pl = index.lists.get(dim)
        if pl is None:
            views.append(ListView(dim, w, [0.0], [0]))
        else:
            views.append(ListView(dim, w, pl.profile, index.hulls[dim].vertices))
    return views


def default_score(qv: SparseVector, stop: str, theta: float, tau_tilde: float | None = None) -> DecomposableScore:
    """Inner product under the baseline stop, the capped form under the tight one."""
    if stop == "baseline" and tau_tilde is None:
        return inner_product(qv.as_dict)
    return capped_cosine(qv.as_dict, tau_tilde if tau_tilde is not None else 1.0 / theta)


class QuerySession:
    """Mutable per-query state: cursors, strategy, max-similarity tree, pool."""

    def __init__(self, index: InvertedIndex, qv: SparseVector, strategy: str,
                 score: DecomposableScore, track_tau: bool = True):
        self.index = index
        self.qv = qv
        self.views = list_views(index, qv)
        self.d = space_dim(index, qv)
        self.frontier = Frontier(qv.dims, qv.values, [0] * len(self.views),
                                 [v.profile[0] for v in self.views], self.d)
        self.score = score
        self.strategy = make_strategy(strategy, self.views, score)
        self.tau = TauState(self.frontier) if track_tau else None
        self.pool: list[int] = []
        self._seen: set[int] = set()
        self.path: list[int] = []

        # hull boundaries: positions where every cursor sits on a vertex
        if isinstance(self.strategy, HullStrategy):
            self._verts = self.strategy.verts
        else:
            self._verts = [active_vertices(v, score) for v in self.views]
        self._next_vertex = [1] * len(self.views)
        self._off_vertex = 0

    @property
    def cost(self) -> int:
        return self.frontier.cost

    def exhausted(self) -> bool:
        return all(b >= v.length for b, v in zip(self.frontier.b, self.views))

    def at_boundary(self) -> bool:
        return self._off_vertex == 0

    def max_similarity(self) -> TauResult:
        if self.tau is None:
            return solve_tau_direct(self.frontier)
        return self.tau.compute()

    def weighted_sum(self) -> float:
        return self.frontier.weighted_sum()

    def capped_score(self) -> float:
        return self.score.total(self.frontier.dims, self.frontier.bounds)

    def step(self) -> int | None:
        """Advance one cursor; returns the vector id if it is new to the pool."""
        slot = self.strategy.next()
        view = self.views[slot]
        pos = self.frontier.b[slot]
        vec = self.index.lists[view.dim].ids[pos]
        pos += 1
        self.frontier.b[slot] = pos
        bound = view.profile[pos]
        self.frontier.bounds[slot] = bound
        self.strategy.moved(slot)
        if self.tau is not None:
            self.tau.update_slot(slot, bound)
        self.path.append(view.dim)

        verts, k = self._verts[slot], self._next_vertex[slot]
        if pos - 1 == verts[k - 1]:
            self._off_vertex += 1
        if pos == verts[k]:
            self._off_vertex -= 1
            self._next_vertex[slot] = k + 1

        if vec in self._seen:
            return None
        self._seen.add(vec)
        self.pool.append(vec)
        return vec


def gather(index: InvertedIndex, q: Query | SparseVector, theta: float | None = None,
           strategy: str = "hull", stop: str = "tight", score: DecomposableScore | None = None,
           tau_tilde: float | None = None) -> GatherResult:
    """Collect a candidate pool containing every vector scoring at least ``theta``.

    Without an explicit ``score``, the strategy ranks moves by the inner
    product under the baseline stop and by the capped cosine with
    ``tau_tilde`` (default ``1/theta``) under the tight stop.
    """
    qv, theta = _unpack(q, theta)
    _check_choice(strategy, stop)
    if score is None:
        score = default_score(qv, stop, theta, tau_tilde)
    tight = stop == "tight"
    session = QuerySession(index, qv, strategy, score, track_tau=tight)

    last_boundary = 0
    at_last: tuple[float, float] | None = None
    while True:
        if tight:
            res = session.max_similarity()
            stopped = res.infeasible or res.ms < theta
        else:
            stopped = session.weighted_sum() < theta
        if session.at_boundary():
            last_boundary = session.cost
            if tight and not stopped:
                at_last = (res.ms, session.capped_score())
        if stopped or session.exhausted():
            break
        session.step()

    metrics = GatherMetrics(access_cost=session.cost, last_gap=session.cost - last_boundary,
                            candidate_count=len(session.pool))
    if tight and score.capped and at_last is not None:
        metrics.epsilon_upper = epsilon_bound(at_last[0], at_last[1], score.tau_tilde)
    return GatherResult(session.pool, session.frontier, metrics, session.path)


def _unpack(q: Query | SparseVector, theta: float | None) -> tuple[SparseVector, float | None]:
    if isinstance(q, Query):
        return q.vector, q.theta if theta is None else theta
    return q, theta


def prepare_query(index: InvertedIndex, q: Query | SparseVector, theta: float | None,
                  stop: str) -> tuple[SparseVector, float]:
    """Normalize the query for a cosine index and validate the threshold."""
    qv, theta = _unpack(q, theta)
    if theta is None or not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if index.normalized:
        qv = normalize(qv)
    elif stop == "tight":
        raise ValueError("the tight stop assumes unit vectors; this index was built without normalization")
    return qv, theta


def query(index: InvertedIndex, q: Query | SparseVector, theta: float | None = None,
          strategy: str = "hull", stop: str = "tight", tau_tilde: float | None = None,
          fast: bool = True) -> QueryResult:
    """All stored vectors scoring at least ``theta`` against ``q``, best first."""
    start = time.perf_counter()
    _check_choice(strategy, stop)
    qv, theta = prepare_query(index, q, theta, stop)
    if fast and len(index.store) > 0:
        from . import fastpath

        out = fastpath.run_query(index, qv, theta - SIMILARITY_TOLERANCE, strategy, stop, tau_tilde)
    else:
        out = _query_reference(index, qv, theta - SIMILARITY_TOLERANCE, strategy, stop, tau_tilde)
    out.metrics.wall_time_micros = int((time.perf_counter() - start) * 1e6)
    return out


def _query_reference(index, qv, theta, strategy, stop, tau_tilde) -> QueryResult:
    g = gather(index, qv, theta, strategy, stop, tau_tilde=tau_tilde)
    d = space_dim(index, qv)
    matches = []
    accesses = 0
    for vid in g.candidates:
        s = index.store[vid]
        ok, n = verify_candidate(s, qv, theta, d)
        accesses += n
        if ok:
            matches.append((vid, dot(s, qv)))
    g.metrics.verification_accesses = accesses
    g.metrics.result_count = len(matches)
    return QueryResult(_ranked(index, matches), g.metrics, g.candidates)


def _ranked(index: InvertedIndex, scored: list[tuple[int, float]]) -> list[tuple[Hashable, float]]:
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [(index.store[vid].id, score) for vid, score in scored]


def linear_scan(index: InvertedIndex, q: Query | SparseVector, theta: float | None = None) -> list[tuple[Hashable, float]]:
    """Reference answer: score every stored vector."""
    qv, theta = _unpack(q, theta)
    if index.normalized:
        qv = normalize(qv)
    cut = theta - SIMILARITY_TOLERANCE
    hits = []
    for vid, s in enumerate(index.store):
        score = dot(s, qv)
        if score >= cut:
            hits.append((vid, score))
    return _ranked(index, hits)


def query_topk(index: InvertedIndex, q: Query | SparseVector, k: int, strategy: str = "lockstep",
               tau_tilde: float | None = None) -> QueryResult:
    """The ``k`` best-scoring vectors.

    The threshold is the k-th best exact score among the vectors gathered so
    far, so scores are computed as soon as a vector enters the pool.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    start = time.perf_counter()
    qv, _ = _unpack(q, None)
    if index.normalized:
        qv = normalize(qv)
    score = inner_product(qv.as_dict) if tau_tilde is None else capped_cosine(qv.as_dict, tau_tilde)
    _check_choice(strategy, "tight")
    session = QuerySession(index, qv, strategy, score, track_tau=index.normalized)
    best: list[tuple[float, int]] = []   # min-heap of (score, -vid) holding the top k
    scores: dict[int, float] = {}
    while True:
        kth = best[0][0] if len(best) == k else -math.inf
        if index.normalized:
            res = session.max_similarity()
            bound = 0.0 if res.infeasible else res.ms
        else:
            bound = session.weighted_sum()
        if bound < kth - SIMILARITY_TOLERANCE or session.exhausted():
            break
        vid = session.step()
        if vid is None:
            continue
        sc = dot(index.store[vid], qv)
        scores[vid] = sc
        entry = (sc, -vid)
        if len(best) < k:
            heapq.heappush(best, entry)
        elif entry > best[0]:
            heapq.heapreplace(best, entry)

    ranked = sorted(scores.items(), key=lambda t: (-t[1], t[0]))[:k]
    if len(ranked) < k:
        # everything with a positive score was gathered; fill with zero scores
        for vid in range(index.n):
            if len(ranked) == k:
                break
            if vid not in scores:
                ranked.append((vid, 0.0))
    metrics = GatherMetrics(access_cost=session.cost, candidate_count=len(session.pool),
                            result_count=len(ranked))
    metrics.wall_time_micros = int((time.perf_counter() - start) * 1e6)
    return QueryResult([(index.store[v].id, s) for v, s in ranked], metrics, session.pool)


def topk_scan(index: InvertedIndex, q: Query | SparseVector, k: int) -> list[tuple[Hashable, float]]:
    """Sort-everything reference for :func:`query_topk`."""
    qv, _ = _unpack(q, None)
    if index.normalized:
        qv = normalize(qv)
    scored = [(vid, dot(s, qv)) for vid, s in enumerate(index.store)]
    return _ranked(index, scored)[:k]


def brute_force_opt(index: InvertedIndex, q: Query | SparseVector, theta: float | None = None,
                    score: DecomposableScore | None = None, limit: int = LATTICE_LIMIT) -> int | None:
    """Fewest total accesses at which the stop condition can hold.

    With ``score`` given the condition is ``score(L[b]) < theta``, otherwise
    it is the tight one.  Returns None when no cursor position satisfies it,
    which only happens for a non-positive threshold.
    """
    qv, theta = _unpack(q, theta)
    views = list_views(index, qv)
    d = space_dim(index, qv)
    size = math.prod(v.length + 1 for v in views)
    if size > limit:
        raise InstanceTooLarge(f"{size} cursor positions exceed the limit of {limit}")

    if score is None:
        def holds(bounds: list[float]) -> bool:
            res = solve_tau_direct(Frontier(qv.dims, qv.values, [0] * len(views), bounds, d))
            return res.infeasible or res.ms < theta
    else:
        def holds(bounds: list[float]) -> bool:
            return score.total(qv.dims, bounds) < theta

    return lattice_min(views, holds)


def lattice_min(views: Sequence[ListView], holds: Callable[[list[float]], bool]) -> int | None:
    """Smallest ``|b|`` with ``holds(L[b])``, visiting positions level by level."""
    lengths = [v.length for v in views]
    for level in range(sum(lengths) + 1):
        for b in _compositions(level, lengths):
            if holds([v.profile[p] for v, p in zip(views, b)]):
                return level
    return None


def _compositions(total: int, caps: Sequence[int]):
    """Every vector ``b`` with ``0 <= b[i] <= caps[i]`` summing to ``total``."""
    if not caps:
        if total == 0:
            yield ()
        return
    head, rest = caps[0], caps[1:]
    room = sum(rest)
    for x in range(max(0, total - room), min(head, total) + 1):
        for tail in _compositions(total - x, rest):
            yield (x, *tail)


def replay_positions(index: InvertedIndex, qv: SparseVector, path: Sequence[int]) -> list[Frontier]:
    """Frontiers visited along a traversal path, starting from all-zero cursors."""
    views = list_views(index, qv)
    slot = {v.dim: k for k, v in enumerate(views)}
    d = space_dim(index, qv)
    b = [0] * len(views)
    out = [Frontier(qv.dims, qv.values, list(b), [v.profile[0] for v in views], d)]
    for dim in path:
        b[slot[dim]] += 1
        out.append(Frontier(qv.dims, qv.values, list(b), [v.profile[p] for v, p in zip(views, b)], d))
    return out
