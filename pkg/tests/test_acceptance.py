"""End-to-end acceptance checks, one per criterion.

Each test prints a single ``PASS``/``FAIL`` line with its measurements, then
asserts.  Run with ``pytest tests/test_acceptance.py -v`` to see the lines
inline, or ``python tests/test_acceptance.py`` for just the report.
"""

import csv
import io
import json
import math
import time
from contextlib import redirect_stderr

import numpy as np
import pytest

from ctq import cli
from ctq.datasets import (
    convex_instance,
    cosine_instance,
    fig1_database,
    fig1_query,
    near_convex_instance,
    write_vector_file,
    zipf_vectors,
)
from ctq.engine import (
    brute_force_opt,
    default_score,
    gather,
    linear_scan,
    list_views,
    query,
    query_topk,
    topk_scan,
)
from ctq.index import build
from ctq.stopping import Frontier, TauState, baseline_stop, maximizer, solve_tau_direct, tight_stop
from ctq.traversal import STRATEGIES, active_vertices, inner_product
from ctq.vectors import SparseVector, dot, normalize
from ctq.verify import PartialView, bounds, verify_candidate

from helpers import random_frontier, sample_below

SEED = 20240611


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


@pytest.fixture(scope="module", autouse=True)
def warm_kernel():
    # compile (or load cached) numba code before any clock starts
    idx = build(zipf_vectors(20, 10, 3, seed=0))
    for strategy in STRATEGIES:
        for stop in ("baseline", "tight"):
            query(idx, idx.store[0], 0.5, strategy, stop)
    query_topk(idx, idx.store[0], 2)


def test_fig1_fixture(report):
    idx = build(fig1_database())
    q = fig1_query()
    g = gather(idx, q, 0.6, "lockstep", "baseline")
    value = g.frontier.weighted_sum()
    pool = {idx.store[v].id for v in g.candidates}
    runs = []
    for _ in range(50):
        t0 = time.perf_counter()
        gather(idx, q, 0.6, "lockstep", "baseline")
        runs.append(time.perf_counter() - t0)
    elapsed = sorted(runs)[len(runs) // 2]
    ok = (abs(value - (0.8 * 0.3 + 0.3 * 0.3 + 0.5 * 0.2)) <= 1e-12 and g.frontier.b == [3, 3, 3]
          and pool == {"s1", "s2", "s3", "s5"} and elapsed < 1e-3)
    report("six-vector walkthrough", ok,
           f"stop value {value:.12f}, cursors {g.frontier.b}, pool {sorted(pool)}, median {elapsed * 1e6:.0f} us")


def test_partial_verification_fixture(report):
    view = PartialView()
    for s, qv in ((0.8, 0.0), (0.4, 0.7), (0.3, 0.5)):
        view.observe(s, qv)
    lb, ub = bounds(view)
    exact_ub = 0.43 + math.sqrt(0.11) * math.sqrt(0.26)
    tail = math.sqrt(0.055)
    s = SparseVector.from_pairs("s", {0: 0.8, 1: 0.4, 2: 0.3, 3: tail, 4: tail})
    q = SparseVector.from_pairs("q", {1: 0.7, 2: 0.5, 5: math.sqrt(0.26)})
    accept, reads = verify_candidate(s, q, 0.7, d=6)
    ok = (abs(lb - 0.43) <= 1e-12 and abs(ub - exact_ub) <= 1e-9 and abs(ub - 0.6) <= 5e-3
          and not accept and reads < len(s.dims))
    report("partial verification bounds", ok, f"lb {lb:.12f}, ub {ub:.10f}, rejected after {reads}/{len(s.dims)} reads")


def test_exactness_suite(report):
    t0 = time.perf_counter()
    mismatches = total = 0
    for db_seed in range(50):
        db = zipf_vectors(200, 50, 10, seed=db_seed)
        idx = build(db)
        qs = db[:25] + zipf_vectors(25, 50, 10, seed=10_000 + db_seed, prefix="q")
        for q in qs:
            for theta in (0.3, 0.6, 0.9):
                want = [v for v, _ in linear_scan(idx, q, theta)]
                for strategy in STRATEGIES:
                    for stop in ("baseline", "tight"):
                        got = [v for v, _ in query(idx, q, theta, strategy, stop).matches]
                        total += 1
                        mismatches += got != want
    elapsed = time.perf_counter() - t0
    report("exactness suite", mismatches == 0 and total == 45_000 and elapsed < 30,
           f"{total} queries, {mismatches} mismatches, {elapsed:.1f} s")


def test_stop_attainability_and_soundness(report):
    rng = np.random.default_rng(SEED)
    frontiers = bad = samples = violations = 0
    worst = -math.inf
    while frontiers < 1000:
        f = random_frontier(rng)
        r = solve_tau_direct(f)
        if r.infeasible:
            continue
        frontiers += 1
        coords, free = maximizer(f, r)
        norm_err = abs(math.fsum(c * c for c in coords) + free - 1.0)
        ms_err = abs(math.fsum(c * w for c, w in zip(coords, f.weights)) - r.ms)
        feasible = all(c <= x for c, x in zip(coords, f.bounds)) and (free == 0.0 or f.d > f.m)
        bad += not (feasible and norm_err <= 1e-9 and ms_err <= 1e-9)
        drawn = 0
        while drawn < 10:
            s = sample_below(rng, f)
            if s is None:
                continue
            drawn += 1
            val = math.fsum(a * w for a, w in zip(s[0], f.weights))
            worst = max(worst, val - r.ms)
            violations += val > r.ms + 1e-9
        samples += drawn
    report("max-similarity attainable and sound", bad == 0 and violations == 0 and samples >= 10_000,
           f"{frontiers} frontiers, {samples} samples, worst excess {worst:.2e}")


def test_incremental_equivalence(report):
    rng = np.random.default_rng(SEED + 1)
    updates = traversals = 0
    worst = 0.0
    monotone = True
    while updates < 10_000:
        d = 200
        m = int(rng.integers(150, 201))
        w = rng.uniform(0.01, 1.0, m)
        w /= np.linalg.norm(w)
        f = Frontier.start(tuple(sorted(rng.choice(d, m, replace=False).tolist())), tuple(w.tolist()), d)
        state = TauState(f)
        prev = state.compute()
        traversals += 1
        for _ in range(500):
            dim = f.dims[int(rng.integers(0, m))]
            old = state.bound(dim)
            state.update(dim, 0.0 if rng.uniform() < 0.05 else old * float(rng.uniform(0.3, 1.0)))
            cur = state.compute()
            ref = solve_tau_direct(state.frontier())
            updates += 1
            worst = max(worst, abs(cur.ms - ref.ms))
            if math.isfinite(ref.tau) and math.isfinite(cur.tau):
                worst = max(worst, abs(cur.tau - ref.tau) / max(1.0, ref.tau))
            elif cur.tau != ref.tau or cur.infeasible != ref.infeasible:
                worst = math.inf
            if cur.ms > prev.ms + 1e-12 or (not cur.infeasible and cur.tau < prev.tau - 1e-12):
                monotone = False
            prev = cur
    report("incremental tree equals direct solver", worst <= 1e-9 and monotone,
           f"{updates} updates over {traversals} traversals at d=200, worst diff {worst:.2e}, monotone {monotone}")


def test_non_tightness_demonstration(report):
    f = Frontier.from_bounds({0: 0.6, 1: 0.8}, {0: 0.55, 1: 0.55}, 2)
    base, tight = baseline_stop(f, 0.7), tight_stop(TauState(f), 0.7)
    report("baseline stop is not tight", not base and tight,
           f"weighted sum {f.weighted_sum():.2f}, baseline {base}, tight {tight}")


def test_max_reduction_optimal_on_convex_lists(report):
    rng = np.random.default_rng(SEED + 2)
    misses = 0
    for _ in range(100):
        inst = convex_instance(rng)
        cost = gather(inst.index, inst.query, inst.theta, "maxred", "baseline").metrics.access_cost
        opt = brute_force_opt(inst.index, inst.query, inst.theta, score=inner_product(inst.query.as_dict))
        misses += cost != opt
    report("max-reduction cost equals optimum on convex lists", misses == 0, f"100 instances, {misses} misses")


def test_hull_near_optimal_inner_product(report):
    rng = np.random.default_rng(SEED + 3)
    worst = -math.inf
    fails = 0
    for _ in range(100):
        inst = near_convex_instance(rng, c=3)
        c = inst.index.c
        cost = gather(inst.index, inst.query, inst.theta, "hull", "baseline").metrics.access_cost
        opt = brute_force_opt(inst.index, inst.query, inst.theta, score=inner_product(inst.query.as_dict))
        worst = max(worst, cost - opt - c)
        fails += not cost < opt + c
    report("hull cost below optimum plus gap (inner product)", fails == 0,
           f"100 instances, {fails} failures, max cost-opt-c {worst}")


def test_hull_near_optimal_cosine(report):
    rng = np.random.default_rng(SEED + 4)
    fails = vacuous = 0
    worst = -math.inf
    for _ in range(50):
        inst = cosine_instance(rng)
        qv, theta = inst.query, inst.theta
        g = gather(inst.index, qv, theta, "hull", "tight")
        eps = g.metrics.epsilon_upper
        score = default_score(qv, "tight", theta)
        c = max(int(np.diff(active_vertices(v, score)).max(initial=0)) for v in list_views(inst.index, qv))
        opt = brute_force_opt(inst.index, qv, theta - eps) if theta - eps > 0 else None
        if opt is None:
            vacuous += 1
            continue
        worst = max(worst, g.metrics.access_cost - opt - c)
        fails += not g.metrics.access_cost <= opt + c
    report("hull cost near optimum at relaxed threshold (cosine)", fails == 0,
           f"50 instances, {fails} failures, {vacuous} vacuous (threshold minus bound <= 0), "
           f"max cost-opt-c {worst}")


def test_verification_skewness_bound(report):
    rng = np.random.default_rng(SEED + 5)
    d = 40
    wrong = over = qualifying = short = 0

    def skewed(k):
        dims = rng.choice(d, size=k, replace=False)
        vals = (np.arange(1, k + 1) ** -float(rng.uniform(0.5, 3.0))) * rng.uniform(0.8, 1.2, k)
        return normalize(SparseVector.from_pairs("x", zip(dims.tolist(), vals.tolist())))

    for _ in range(1000):
        s, q = skewed(int(rng.integers(2, 25))), skewed(int(rng.integers(2, 25)))
        cos = dot(s, q)
        theta = float(rng.uniform(0.01, 1.0))
        mass = np.cumsum(np.square(s.by_value[1]))
        gap = abs(cos - theta)
        k = next((i + 1 for i, m in enumerate(mass) if m >= 1.0 - gap * gap), None)
        accept, reads = verify_candidate(s, q, theta, d=d)
        wrong += accept != (cos >= theta)
        if k is not None:
            qualifying += 1
            short += k < len(mass)
            over += reads > k
    report("verification reads at most k on skewed vectors", wrong == 0 and over == 0 and short >= 100,
           f"{qualifying} qualifying of 1000 ({short} with k below length), {over} over budget, "
           f"{wrong} wrong decisions")


def test_topk_matches_sort_all(report):
    wrong = 0
    for seed in range(50):
        db = zipf_vectors(100, 30, 6, seed=500 + seed)
        idx = build(db)
        qs = [db[seed % 100], *zipf_vectors(2, 30, 5, seed=900 + seed, prefix="q")]
        for q in qs:
            for k in (1, 3, 10):
                got = query_topk(idx, q, k).matches
                want = topk_scan(idx, q, k)
                wrong += [v for v, _ in got] != [v for v, _ in want]
    report("top-k equals sort-all", wrong == 0, f"50 databases x 3 queries x k in (1,3,10), {wrong} wrong")


def test_synthetic_bench(tmp_path, report):
    src = tmp_path / "zipf.tsv"
    write_vector_file(zipf_vectors(100_000, 1000, 10, seed=7), src)
    with redirect_stderr(io.StringIO()):
        assert cli.main(["build", str(src), str(tmp_path / "idx")]) == 0
    out = tmp_path / "bench.csv"
    err = io.StringIO()
    t0 = time.perf_counter()
    with redirect_stderr(err):
        code = cli.main(["bench", str(tmp_path / "idx"), "--theta", "0.6", "--queries", "100",
                         "--seed", "1", "--emit-csv", str(out)])
    elapsed = time.perf_counter() - t0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    cost = {}
    for r in rows:
        cost.setdefault(r["queryId"], {})[r["strategy"]] = int(r["accessCost"])
    share = sum(c["hull"] <= c["lockstep"] for c in cost.values()) / len(cost)
    fractions = [float(r["gapFraction"]) for r in rows]
    summary = json.loads(err.getvalue())
    ok = (code == 0 and len(cost) == 100 and share >= 0.95 and elapsed < 60
          and all(0.0 <= g <= 1.0 for g in fractions))
    report("synthetic bench: hull no worse than lockstep", ok,
           f"{share:.0%} of {len(cost)} queries, mean hull gap fraction "
           f"{np.mean([float(r['gapFraction']) for r in rows if r['strategy'] == 'hull']):.3f}, "
           f"{elapsed:.1f} s, summary {summary['hullNotWorseThanLockstep']}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
