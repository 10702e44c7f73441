"""Stopping conditions for the gathering phase.

Two conditions are offered.  The baseline one compares the weighted sum of
the current list bounds against the threshold.  The tight one asks for the
best cosine any unit vector lying coordinate-wise below the frontier could
still reach; that value has a closed form once the scaling ``tau`` solving
``sum(min(q_i * tau, L_i)^2) = 1`` is known.

``tau`` is recovered from the dims sorted by ``L_i / q_i``.  The first ``r``
of them in that order are capped at their bound, the rest sit at
``q_i * tau``, and ``r`` is the largest prefix whose squared mass evaluated
at its own last key does not exceed 1.  The incremental structure keeps the
dims in a treap ordered by that key with subtree sums, so a single
root-to-leaf walk finds ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numba as nb
import numpy as np

from .errors import BoundIncrease, UnknownDim

# bounds closer than this to unit mass count as exactly filling the sphere
FULL_MASS_TOL = 1e-12


class TauResult(NamedTuple):
    tau: float
    ms: float
    infeasible: bool = False


@dataclass
class Frontier:
    """Cursor and current bound per query dim.

    ``dims`` and ``weights`` describe the query support; ``b[k]`` is the
    number of entries consumed from the list of ``dims[k]`` and ``bounds[k]``
    the resulting upper bound on any unseen vector's value there.  ``d`` is
    the dimensionality of the space, needed to tell whether zero-weight
    coordinates exist to absorb leftover norm.
    """

    dims: tuple[int, ...]
    weights: tuple[float, ...]
    b: list[int]
    bounds: list[float]
    d: int

    @classmethod
    def start(cls, dims: Sequence[int], weights: Sequence[float], d: int) -> Frontier:
        m = len(dims)
        return cls(tuple(dims), tuple(weights), [0] * m, [1.0] * m, d)

    @classmethod
    def from_bounds(cls, weights: Mapping[int, float], bounds: Mapping[int, float], d: int) -> Frontier:
        dims = tuple(sorted(weights))
        return cls(dims, tuple(weights[i] for i in dims), [0] * len(dims),
                   [float(bounds[i]) for i in dims], d)

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def cost(self) -> int:
        return sum(self.b)

    def weighted_sum(self) -> float:
        total = 0.0
        for q, x in zip(self.weights, self.bounds):
            total += q * x
        return total


def baseline_stop(frontier: Frontier, theta: float) -> bool:
    return frontier.weighted_sum() < theta


def solve_tau_direct(frontier: Frontier) -> TauResult:
    """Sort-and-scan solution for ``tau`` and the max similarity."""
    w, bounds, m = frontier.weights, frontier.bounds, frontier.m
    order = sorted(range(m), key=lambda k: (bounds[k] / w[k], frontier.dims[k]))
    qtot = 0.0
    for q in w:
        qtot += q * q

    lq = q2 = l2 = 0.0
    best = (0.0, 0.0, 0.0)
    r = 0
    last_key = 0.0
    for count, k in enumerate(order, start=1):
        key = bounds[k] / w[k]
        lq += bounds[k] * w[k]
        q2 += w[k] * w[k]
        l2 += bounds[k] * bounds[k]
        rest = 0.0 if count == m else qtot - q2
        if l2 + rest * key * key <= 1.0:
            best = (lq, q2, l2)
            r = count
            last_key = key
        else:
            break
    return _finish(best[0], best[1], best[2], r, m, qtot, last_key, frontier.d)


def _finish(lq, q2, l2, r, m, qtot, last_key, d) -> TauResult:
    if r == m:
        if l2 >= 1.0 - FULL_MASS_TOL:
            return TauResult(last_key, lq)
        if d > m:
            return TauResult(math.inf, lq)
        return TauResult(math.inf, 0.0, True)
    rest = qtot - q2
    tau = math.sqrt(max(0.0, 1.0 - l2) / rest)
    return TauResult(tau, lq + rest * tau)


def maximizer(frontier: Frontier, result: TauResult) -> tuple[list[float], float]:
    """A unit vector below the frontier attaining ``result.ms``.

    Returns the per-dim coordinates and the squared mass parked on
    zero-weight dims (nonzero only in the all-capped case).
    """
    if result.infeasible:
        raise ValueError("no unit vector lies below this frontier")
    coords = [min(q * result.tau, x) for q, x in zip(frontier.weights, frontier.bounds)]
    if frontier.d == frontier.m:
        return coords, 0.0  # no free dims; any residue is rounding
    used = math.fsum(c * c for c in coords)
    return coords, max(0.0, 1.0 - used)


# -- incremental treap ------------------------------------------------------
#
# Node data lives in two arrays so the same routines run from Python and from
# compiled query kernels.  Float rows: key, own L*q, own q^2, own L^2, then
# the three subtree sums.  Int rows: left, right, priority, subtree size, dim.

KEY, OLQ, OQ2, OL2, ALQ, AQ2, AL2 = range(7)
LEFT, RIGHT, PRI, SIZE, DIM = range(5)


@nb.njit(cache=True, nogil=True)
def _pull(fl, it, t):
    lq = fl[OLQ, t]
    q2 = fl[OQ2, t]
    l2 = fl[OL2, t]
    size = 1
    c = it[LEFT, t]
    if c >= 0:
        lq += fl[ALQ, c]
        q2 += fl[AQ2, c]
        l2 += fl[AL2, c]
        size += it[SIZE, c]
    c = it[RIGHT, t]
    if c >= 0:
        lq += fl[ALQ, c]
        q2 += fl[AQ2, c]
        l2 += fl[AL2, c]
        size += it[SIZE, c]
    fl[ALQ, t] = lq
    fl[AQ2, t] = q2
    fl[AL2, t] = l2
    it[SIZE, t] = size


@nb.njit(cache=True, nogil=True)
def _before(fl, it, a, b):
    ka = fl[KEY, a]
    kb = fl[KEY, b]
    return ka < kb or (ka == kb and it[DIM, a] < it[DIM, b])


@nb.njit(cache=True, nogil=True)
def _insert(fl, it, t, x):
    if t < 0:
        it[LEFT, x] = -1
        it[RIGHT, x] = -1
        _pull(fl, it, x)
        return x
    if _before(fl, it, x, t):
        c = _insert(fl, it, it[LEFT, t], x)
        it[LEFT, t] = c
        if it[PRI, c] > it[PRI, t]:
            it[LEFT, t] = it[RIGHT, c]
            it[RIGHT, c] = t
            _pull(fl, it, t)
            _pull(fl, it, c)
            return c
    else:
        c = _insert(fl, it, it[RIGHT, t], x)
        it[RIGHT, t] = c
        if it[PRI, c] > it[PRI, t]:
            it[RIGHT, t] = it[LEFT, c]
            it[LEFT, c] = t
            _pull(fl, it, t)
            _pull(fl, it, c)
            return c
    _pull(fl, it, t)
    return t


@nb.njit(cache=True, nogil=True)
def _merge(fl, it, a, b):
    if a < 0:
        return b
    if b < 0:
        return a
    if it[PRI, a] > it[PRI, b]:
        it[RIGHT, a] = _merge(fl, it, it[RIGHT, a], b)
        _pull(fl, it, a)
        return a
    it[LEFT, b] = _merge(fl, it, a, it[LEFT, b])
    _pull(fl, it, b)
    return b


@nb.njit(cache=True, nogil=True)
def _delete(fl, it, t, x):
    if t == x:
        return _merge(fl, it, it[LEFT, t], it[RIGHT, t])
    if _before(fl, it, x, t):
        it[LEFT, t] = _delete(fl, it, it[LEFT, t], x)
    else:
        it[RIGHT, t] = _delete(fl, it, it[RIGHT, t], x)
    _pull(fl, it, t)
    return t


@nb.njit(cache=True, nogil=True)
def tree_set(fl, it, root, x, bound, q):
    """Re-key node ``x`` to a new bound; returns the new root."""
    root = _delete(fl, it, root, x)
    fl[KEY, x] = bound / q
    fl[OLQ, x] = bound * q
    fl[OL2, x] = bound * bound
    return _insert(fl, it, root, x)


@nb.njit(cache=True, nogil=True)
def tree_build(fl, it, weights, bounds, dims, priorities):
    m = weights.shape[0]
    root = -1
    for x in range(m):
        q = weights[x]
        fl[KEY, x] = bounds[x] / q
        fl[OLQ, x] = bounds[x] * q
        fl[OQ2, x] = q * q
        fl[OL2, x] = bounds[x] * bounds[x]
        it[PRI, x] = priorities[x]
        it[DIM, x] = dims[x]
        root = _insert(fl, it, root, x)
    return root


@nb.njit(cache=True, nogil=True)
def tree_compute(fl, it, root, d):
    """Returns (tau, ms, infeasible) from one descent."""
    m = it[SIZE, root]
    qtot = fl[AQ2, root]
    acc_lq = 0.0
    acc_q2 = 0.0
    acc_l2 = 0.0
    acc_n = 0
    best_lq = 0.0
    best_q2 = 0.0
    best_l2 = 0.0
    best_n = 0
    best_key = 0.0
    t = root
    while t >= 0:
        lq = acc_lq + fl[OLQ, t]
        q2 = acc_q2 + fl[OQ2, t]
        l2 = acc_l2 + fl[OL2, t]
        n = acc_n + 1
        c = it[LEFT, t]
        if c >= 0:
            lq += fl[ALQ, c]
            q2 += fl[AQ2, c]
            l2 += fl[AL2, c]
            n += it[SIZE, c]
        key = fl[KEY, t]
        rest = 0.0 if n == m else qtot - q2
        if l2 + rest * key * key <= 1.0:
            best_lq = lq
            best_q2 = q2
            best_l2 = l2
            best_n = n
            best_key = key
            acc_lq = lq
            acc_q2 = q2
            acc_l2 = l2
            acc_n = n
            t = it[RIGHT, t]
        else:
            t = c
    if best_n == m:
        if best_l2 >= 1.0 - FULL_MASS_TOL:
            return best_key, best_lq, False
        if d > m:
            return np.inf, best_lq, False
        return np.inf, 0.0, True
    rest = qtot - best_q2
    tau = np.sqrt(max(0.0, 1.0 - best_l2) / rest)
    return tau, best_lq + rest * tau, False


@lru_cache(maxsize=256)
def tree_priorities(m: int, seed: int = 0x7A0) -> np.ndarray:
    pri = np.random.default_rng(seed).permutation(m).astype(np.int64)
    pri.setflags(write=False)
    return pri


class TauState:
    """Treap over the query dims keyed by ``bound / weight``.

    Each node carries subtree sums of ``L*q``, ``q^2`` and ``L^2`` so that
    :meth:`compute` needs one descent and :meth:`update` one delete plus one
    insert, both logarithmic in the number of query dims.
    """

    def __init__(self, frontier: Frontier):
        m = frontier.m
        if m == 0:
            raise ValueError("TauState needs at least one query dim")
        self.d = frontier.d
        self.dims = frontier.dims
        self.weights = np.asarray(frontier.weights, dtype=np.float64)
        self.bounds = np.asarray(frontier.bounds, dtype=np.float64)
        self._slot = {dim: k for k, dim in enumerate(self.dims)}
        self._fl = np.zeros((7, m), dtype=np.float64)
        self._it = np.full((5, m), -1, dtype=np.int64)
        self.root = int(tree_build(self._fl, self._it, self.weights, self.bounds,
                                   np.asarray(self.dims, dtype=np.int64), tree_priorities(m)))

    def __len__(self) -> int:
        return len(self.dims)

    def bound(self, dim: int) -> float:
        return float(self.bounds[self._slot_of(dim)])

    def _slot_of(self, dim: int) -> int:
        try:
            return self._slot[dim]
        except KeyError:
            raise UnknownDim(f"dim {dim} is not in the query support") from None

    def update(self, dim: int, bound: float) -> None:
        x = self._slot_of(dim)
        old = self.bounds[x]
        if bound > old:
            raise BoundIncrease(f"dim {dim}: bound may not rise from {old} to {bound}")
        self.bounds[x] = bound
        self.root = int(tree_set(self._fl, self._it, self.root, x, float(bound), float(self.weights[x])))

    def update_slot(self, x: int, bound: float) -> None:
        """Unchecked variant of :meth:`update` addressed by support position."""
        self.bounds[x] = bound
        self.root = int(tree_set(self._fl, self._it, self.root, x, bound, float(self.weights[x])))

    def compute(self) -> TauResult:
        tau, ms, infeasible = tree_compute(self._fl, self._it, self.root, self.d)
        return TauResult(float(tau), float(ms), bool(infeasible))

    def frontier(self) -> Frontier:
        return Frontier(self.dims, tuple(self.weights.tolist()), [0] * len(self.dims),
                        self.bounds.tolist(), self.d)

    def inorder(self) -> list[int]:
        """Query dims in key order."""
        out: list[int] = []
        stack: list[int] = []
        t = self.root
        while stack or t >= 0:
            while t >= 0:
                stack.append(t)
                t = int(self._it[LEFT, t])
            t = stack.pop()
            out.append(self.dims[t])
            t = int(self._it[RIGHT, t])
        return out

    def keys(self) -> list[float]:
        return [self.bounds[self._slot[d]] / self.weights[self._slot[d]] for d in self.inorder()]

    def aggregate_error(self) -> float:
        """Largest gap between stored subtree sums and a fresh recount."""
        worst = 0.0

        def walk(t: int) -> tuple[float, float, float, int]:
            nonlocal worst
            if t < 0:
                return 0.0, 0.0, 0.0, 0
            a = walk(int(self._it[LEFT, t]))
            b = walk(int(self._it[RIGHT, t]))
            x = self.bounds[t]
            q = self.weights[t]
            lq = a[0] + b[0] + x * q
            q2 = a[1] + b[1] + q * q
            l2 = a[2] + b[2] + x * x
            n = a[3] + b[3] + 1
            worst = max(worst, abs(lq - self._fl[ALQ, t]), abs(q2 - self._fl[AQ2, t]),
                        abs(l2 - self._fl[AL2, t]))
            if n != self._it[SIZE, t]:
                worst = math.inf
            return lq, q2, l2, n

        walk(self.root)
        return worst


def tight_stop(state: TauState, theta: float) -> bool:
    res = state.compute()
    return res.infeasible or res.ms < theta
