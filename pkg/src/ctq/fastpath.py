"""Compiled query kernel.

Runs gathering and verification for one query in a single numba call.  The
loop mirrors :func:`ctq.engine.gather` and :func:`ctq.verify.verify_candidate`
operation for operation (same sums in the same order, the same treap
routines, the same tie-breaks), so both paths return identical pools,
metrics and decisions; the test suite checks this.
"""

from __future__ import annotations

from typing import NamedTuple

import numba as nb
import numpy as np

from .engine import GatherMetrics, QueryResult, _ranked, space_dim
from .index import InvertedIndex
from .stopping import tree_build, tree_compute, tree_priorities, tree_set
from .traversal import epsilon_bound
from .verify import RADICAND_SLACK, VERIFY_GUARD
from .vectors import SparseVector

LOCKSTEP, MAXRED, HULL = 0, 1, 2
_CODES = {"lockstep": LOCKSTEP, "maxred": MAXRED, "hull": HULL}


class IndexArrays(NamedTuple):
    list_start: dict
    post_ids: np.ndarray
    post_vals: np.ndarray
    hull_start: dict
    hull_pos: np.ndarray
    st_off: np.ndarray
    by_value_dims: np.ndarray
    by_value_vals: np.ndarray
    by_dim_dims: np.ndarray
    by_dim_vals: np.ndarray
    st_sq: np.ndarray


def index_arrays(index: InvertedIndex) -> IndexArrays:
    """Flat copies of postings, hulls and store, built once per index."""
    arr = index.cache.get("arrays")
    if arr is not None:
        return arr
    list_start, hull_start = {}, {}
    ids, vals, hulls = [], [], []
    p = h = 0
    for dim in sorted(index.lists):
        pl = index.lists[dim]
        list_start[dim] = p
        hull_start[dim] = h
        ids.append(np.asarray(pl.ids, dtype=np.int64))
        vals.append(np.asarray(pl.values, dtype=np.float64))
        hulls.append(np.asarray(index.hulls[dim].vertices, dtype=np.int64))
        p += len(pl)
        h += len(index.hulls[dim].vertices)

    store = index.store
    off = np.zeros(len(store) + 1, dtype=np.int64)
    off[1:] = np.cumsum([len(v.dims) for v in store])
    vd, vv, ad, av = [], [], [], []
    for v in store:
        dims, values = v.by_value
        vd.extend(dims)
        vv.extend(values)
        ad.extend(v.dims)
        av.extend(v.values)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    arr = IndexArrays(
        list_start, cat(ids, np.int64), cat(vals, np.float64), hull_start, cat(hulls, np.int64),
        off, np.asarray(vd, dtype=np.int64), np.asarray(vv, dtype=np.float64),
        np.asarray(ad, dtype=np.int64), np.asarray(av, dtype=np.float64),
        np.asarray([v.sq_norm for v in store], dtype=np.float64),
    )
    index.cache["arrays"] = arr
    return arr


@nb.njit(cache=True, nogil=True, inline="always")
def _prof(post_vals, start, length, p):
    if p == length:
        return 0.0
    if p == 0:
        return 1.0
    return post_vals[start + p - 1]


@nb.njit(cache=True, nogil=True, inline="always")
def _f(q, x, capped, tau_tilde):
    if capped:
        return q * min(q * tau_tilde, x)
    return q * x


@nb.njit(cache=True, nogil=True, inline="always")
def _vertex(hull_pos, hstart, first, t):
    if t == 0:
        return 0
    return hull_pos[hstart + first - 1 + t]


@nb.njit(cache=True, nogil=True, inline="always")
def _better(ra, da, rb, db):
    return ra > rb or (ra == rb and da < db)


@nb.njit(cache=True, nogil=True)
def _sift_down(hr, hd, hs, size, i):
    while True:
        l = 2 * i + 1
        if l >= size:
            return
        best = l
        r = l + 1
        if r < size and _better(hr[r], hd[r], hr[l], hd[l]):
            best = r
        if _better(hr[best], hd[best], hr[i], hd[i]):
            hr[i], hr[best] = hr[best], hr[i]
            hd[i], hd[best] = hd[best], hd[i]
            hs[i], hs[best] = hs[best], hs[i]
            i = best
        else:
            return


@nb.njit(cache=True, nogil=True)
def _project_first(post_vals, start, length, hull_pos, hstart, hlen, q, tau_tilde):
    """Index into the raw hull where the capped hull resumes after vertex 0."""
    if hlen <= 2:
        return 1
    cap = q * tau_tilde
    lo = 1
    hi = hlen - 1
    while lo < hi:
        mid = (lo + hi) // 2
        j = hull_pos[hstart + mid]
        v = _prof(post_vals, start, length, j)
        j2 = hull_pos[hstart + mid + 1]
        v2 = _prof(post_vals, start, length, j2)
        if (cap - v) / j >= (v - v2) / (j2 - j):
            hi = mid
        else:
            lo = mid + 1
    return lo


@nb.njit(cache=True, nogil=True)
def _segment_rate(post_vals, start, length, hull_pos, hstart, first, t, q, capped, tau_tilde):
    j0 = _vertex(hull_pos, hstart, first, t)
    j1 = _vertex(hull_pos, hstart, first, t + 1)
    f0 = _f(q, _prof(post_vals, start, length, j0), capped, tau_tilde)
    f1 = _f(q, _prof(post_vals, start, length, j1), capped, tau_tilde)
    return (f0 - f1) / (j1 - j0)


@nb.njit(cache=True, nogil=True)
def kernel(sdims, qw, starts, lengths, hstarts, hlens, priorities,
           post_ids, post_vals, hull_pos,
           st_off, vdims, vvals, adims, avals, st_sq,
           slot_of_dim, q_total, d, theta, strategy, tight, capped, tau_tilde):
    m = sdims.shape[0]
    n = st_off.shape[0] - 1

    # -- gathering --
    b = np.zeros(m, dtype=np.int64)
    bounds = np.empty(m, dtype=np.float64)
    live = 0
    for k in range(m):
        bounds[k] = _prof(post_vals, starts[k], lengths[k], 0)
        if lengths[k] > 0:
            live += 1

    fl = np.zeros((7, m), dtype=np.float64)
    it = np.full((5, m), -1, dtype=np.int64)
    root = -1
    if tight:
        root = tree_build(fl, it, qw, bounds, sdims, priorities)

    first = np.ones(m, dtype=np.int64)
    nvert = np.empty(m, dtype=np.int64)
    for k in range(m):
        if capped:
            first[k] = _project_first(post_vals, starts[k], lengths[k], hull_pos, hstarts[k], hlens[k],
                                      qw[k], tau_tilde)
        nvert[k] = hlens[k] - first[k] + 1
    nv = np.ones(m, dtype=np.int64)
    seg = np.zeros(m, dtype=np.int64)
    off_vertex = 0

    hr = np.empty(m, dtype=np.float64)
    hd = np.empty(m, dtype=np.int64)
    hs = np.empty(m, dtype=np.int64)
    hsize = 0
    if strategy != LOCKSTEP:
        for k in range(m):
            if lengths[k] > 0:
                if strategy == MAXRED:
                    r = (_f(qw[k], _prof(post_vals, starts[k], lengths[k], 0), capped, tau_tilde)
                         - _f(qw[k], _prof(post_vals, starts[k], lengths[k], 1), capped, tau_tilde))
                else:
                    r = _segment_rate(post_vals, starts[k], lengths[k], hull_pos, hstarts[k], first[k], 0,
                                      qw[k], capped, tau_tilde)
                hr[hsize] = r
                hd[hsize] = sdims[k]
                hs[hsize] = k
                hsize += 1
        for i in range(hsize // 2 - 1, -1, -1):
            _sift_down(hr, hd, hs, hsize, i)

    total_len = 0
    for k in range(m):
        total_len += lengths[k]
    pool = np.empty(total_len, dtype=np.int64)
    npool = 0
    seen = np.zeros(n, dtype=np.uint8)
    cost = 0
    steps = 0
    last_boundary = 0
    have_l = False
    ms_l = 0.0
    f_l = 0.0

    while True:
        ms = 0.0
        if tight:
            tau, ms, infeasible = tree_compute(fl, it, root, d)
            stopped = infeasible or ms < theta
        else:
            s = 0.0
            for k in range(m):
                s += qw[k] * bounds[k]
            stopped = s < theta
        if off_vertex == 0:
            last_boundary = cost
            if tight and not stopped:
                ms_l = ms
                f = 0.0
                for k in range(m):
                    f += _f(qw[k], bounds[k], capped, tau_tilde)
                f_l = f
                have_l = True
        if stopped or live == 0:
            break

        if strategy == LOCKSTEP:
            slot = -1
            st = steps % m
            for j in range(m):
                k = (st + j) % m
                if b[k] < lengths[k]:
                    slot = k
                    break
        else:
            slot = hs[0]

        pos = b[slot]
        vec = post_ids[starts[slot] + pos]
        pos += 1
        b[slot] = pos
        cost += 1
        steps += 1
        bound = _prof(post_vals, starts[slot], lengths[slot], pos)
        bounds[slot] = bound
        if pos == lengths[slot]:
            live -= 1

        if strategy != LOCKSTEP:
            if pos < lengths[slot]:
                if strategy == MAXRED:
                    r = (_f(qw[slot], bound, capped, tau_tilde)
                         - _f(qw[slot], _prof(post_vals, starts[slot], lengths[slot], pos + 1), capped, tau_tilde))
                else:
                    t = seg[slot]
                    if pos == _vertex(hull_pos, hstarts[slot], first[slot], t + 1) and t + 2 < nvert[slot]:
                        seg[slot] = t + 1
                    r = _segment_rate(post_vals, starts[slot], lengths[slot], hull_pos, hstarts[slot],
                                      first[slot], seg[slot], qw[slot], capped, tau_tilde)
                hr[0] = r
                _sift_down(hr, hd, hs, hsize, 0)
            else:
                hsize -= 1
                hr[0] = hr[hsize]
                hd[0] = hd[hsize]
                hs[0] = hs[hsize]
                _sift_down(hr, hd, hs, hsize, 0)

        if tight:
            root = tree_set(fl, it, root, slot, bound, qw[slot])

        t = nv[slot]
        if pos - 1 == _vertex(hull_pos, hstarts[slot], first[slot], t - 1):
            off_vertex += 1
        if pos == _vertex(hull_pos, hstarts[slot], first[slot], t):
            off_vertex -= 1
            nv[slot] = t + 1

        if seen[vec] == 0:
            seen[vec] = 1
            pool[npool] = vec
            npool += 1

    # -- verification --
    qorder = np.argsort(qw, kind="mergesort")
    # ties in weight go to the lower dim; argsort keeps slot order, which is dim order
    zero_dims = d - m
    mark = np.full(m, -1, dtype=np.int64)
    accepted = np.zeros(npool, dtype=np.bool_)
    scores = np.zeros(npool, dtype=np.float64)
    accesses = 0
    for c in range(npool):
        sid = pool[c]
        a0 = st_off[sid]
        a1 = st_off[sid + 1]
        length = a1 - a0
        pd = 0.0
        ssq = 0.0
        qsq = 0.0
        zero_seen = 0
        p = 0
        decided = False
        ok = False
        for k in range(length):
            dim = vdims[a0 + k]
            v = vvals[a0 + k]
            sl = slot_of_dim[dim]
            qv = qw[sl] if sl >= 0 else 0.0
            pd += v * qv
            ssq += v * v
            qsq += qv * qv
            if qv == 0.0:
                zero_seen += 1
            else:
                mark[sl] = c
            if k + 1 == length:
                break
            qmin = 0.0
            if zero_seen >= zero_dims:
                while p < m and mark[qorder[p]] == c:
                    p += 1
                if p < m:
                    qmin = qw[qorder[p]]
            rest_s = st_sq[sid] - ssq
            rest_q = q_total - qsq
            lb = pd + np.sqrt(max(0.0, rest_s - RADICAND_SLACK)) * qmin
            ub = pd + np.sqrt(max(0.0, rest_s + RADICAND_SLACK)) * np.sqrt(max(0.0, rest_q + RADICAND_SLACK))
            if lb >= theta + VERIFY_GUARD:
                accesses += k + 1
                decided = True
                ok = True
                break
            if ub < theta - VERIFY_GUARD:
                accesses += k + 1
                decided = True
                break
        exact = 0.0
        for k in range(a0, a1):
            sl = slot_of_dim[adims[k]]
            if sl >= 0:
                exact += avals[k] * qw[sl]
        if not decided:
            accesses += length
            ok = exact >= theta
        accepted[c] = ok
        scores[c] = exact

    return pool[:npool], cost, cost - last_boundary, have_l, ms_l, f_l, accepted, scores, accesses


def run_query(index: InvertedIndex, qv: SparseVector, theta: float, strategy: str, stop: str,
              tau_tilde: float | None = None) -> QueryResult:
    """Gather and verify through :func:`kernel`; arguments as for the reference."""
    arr = index_arrays(index)
    m = len(qv.dims)
    tight = stop == "tight"
    capped = tight or tau_tilde is not None
    tt = (tau_tilde if tau_tilde is not None else 1.0 / theta) if capped else 1.0

    sdims = np.asarray(qv.dims, dtype=np.int64)
    qw = np.asarray(qv.values, dtype=np.float64)
    starts = np.zeros(m, dtype=np.int64)
    lengths = np.zeros(m, dtype=np.int64)
    hstarts = np.zeros(m, dtype=np.int64)
    hlens = np.ones(m, dtype=np.int64)
    slot_of_dim = np.full(index.d, -1, dtype=np.int64)
    hull_pos = arr.hull_pos
    for k, dim in enumerate(qv.dims):
        if dim < index.d:
            slot_of_dim[dim] = k
        s = arr.list_start.get(dim)
        if s is None:
            continue
        starts[k] = s
        lengths[k] = len(index.lists[dim])
        hstarts[k] = arr.hull_start[dim]
        hlens[k] = len(index.hulls[dim].vertices)
    if hull_pos.shape[0] == 0:
        hull_pos = np.zeros(1, dtype=np.int64)

    pool, cost, gap, have_l, ms_l, f_l, accepted, scores, accesses = kernel(
        sdims, qw, starts, lengths, hstarts, hlens, tree_priorities(m),
        arr.post_ids, arr.post_vals, hull_pos,
        arr.st_off, arr.by_value_dims, arr.by_value_vals, arr.by_dim_dims, arr.by_dim_vals, arr.st_sq,
        slot_of_dim, qv.sq_norm, space_dim(index, qv), float(theta), _CODES[strategy], tight, capped, float(tt))

    metrics = GatherMetrics(access_cost=int(cost), last_gap=int(gap), candidate_count=len(pool),
                            verification_accesses=int(accesses))
    if tight and have_l:
        metrics.epsilon_upper = epsilon_bound(float(ms_l), float(f_l), tt)
    ids = pool.tolist()
    hits = [(vid, sc) for vid, sc, ok in zip(ids, scores.tolist(), accepted.tolist()) if ok]
    metrics.result_count = len(hits)
    return QueryResult(_ranked(index, hits), metrics, ids)

