"""Command line: ``ctq build``, ``ctq query`` and ``ctq bench``.

Vector files are text, one vector per line::

    id<TAB>dim:value dim:value ...

Blank lines and lines starting with ``#`` are skipped.  Exit status is 0 on
success, 1 for bad arguments or unparseable input, 2 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from . import datasets
from .errors import CTQError, EmptyVector, IndexFormatError, InstanceTooLarge
from .engine import (
    LATTICE_LIMIT,
    SIMILARITY_TOLERANCE,
    STOPS,
    QueryResult,
    brute_force_opt,
    default_score,
    query,
    query_topk,
)
from .index import InvertedIndex, build, load, save
from .traversal import STRATEGIES
from .vectors import SparseVector, normalize


class UsageError(Exception):
    """Bad flags or unparseable input; exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def parse_vector_file(path: str | Path) -> list[SparseVector]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                out.append(parse_vector_line(text))
            except (ValueError, CTQError) as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return out


def parse_vector_line(text: str) -> SparseVector:
    parts = text.split()
    vid, entries = parts[0], parts[1:]
    if not entries:
        raise ValueError(f"vector {vid!r} has no entries")
    pairs = []
    for tok in entries:
        dim, sep, value = tok.partition(":")
        if not sep:
            raise ValueError(f"expected dim:value, got {tok!r}")
        try:
            d, v = int(dim), float(value)
        except ValueError:
            raise ValueError(f"expected dim:value, got {tok!r}") from None
        if not v > 0:
            raise ValueError(f"value must be positive in {tok!r}")
        pairs.append((d, v))
    return SparseVector.from_pairs(vid, pairs)


def _threads() -> int:
    raw = os.environ.get("CTQ_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CTQ_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("CTQ_THREADS must be at least 1")
    return n


def _map(fn, items: Sequence) -> list:
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


# -- build --------------------------------------------------------------------

def cmd_build(args) -> int:
    paths = list(args.paths)
    if args.fixture_fig1:
        if len(paths) != 1:
            raise UsageError("build --fixture-fig1 takes only the output directory")
        vectors, out = datasets.fig1_database(), paths[0]
    else:
        if len(paths) != 2:
            raise UsageError("build needs an input file and an output directory")
        vectors, out = parse_vector_file(paths[0]), paths[1]
    try:
        index = build(vectors, normalize_vectors=not args.no_normalize)
    except (EmptyVector, ValueError) as exc:
        raise UsageError(str(exc)) from None
    save(index, out)
    print(json.dumps({"n": index.n, "d": index.d, "c": index.c, "hullVertexCount": index.hull_vertex_count}))
    return 0


# -- query --------------------------------------------------------------------

def _load_inputs(args) -> tuple[InvertedIndex, list[SparseVector]]:
    paths = list(args.paths)
    if args.fixture_fig1:
        if paths:
            raise UsageError("--fixture-fig1 replaces the index and query arguments")
        return build(datasets.fig1_database()), [datasets.fig1_query()]
    if len(paths) != 2:
        raise UsageError("expected an index directory and a query file")
    return load(paths[0]), parse_vector_file(paths[1])


def _run_one(index: InvertedIndex, qv: SparseVector, args) -> QueryResult:
    if args.topk is not None:
        return query_topk(index, qv, args.topk, strategy=args.strategy or "lockstep", tau_tilde=args.tau_tilde)
    return query(index, qv, args.theta, strategy=args.strategy or "hull", stop=args.stop,
                 tau_tilde=args.tau_tilde)


def cmd_query(args) -> int:
    if (args.theta is None) == (args.topk is None):
        raise UsageError("give exactly one of --theta and --topk")
    if args.theta is not None and not (0.0 < args.theta <= 1.0):
        raise UsageError("--theta must lie in (0, 1]")
    if args.topk is not None and args.topk < 1:
        raise UsageError("--topk must be at least 1")
    if args.tau_tilde is not None and not args.tau_tilde > 0:
        raise UsageError("--tau-tilde must be positive")
    index, queries = _load_inputs(args)
    if not index.normalized and args.topk is None and args.stop == "tight":
        raise UsageError("index was built with --no-normalize; use --stop baseline")

    def run(qv):
        return _run_one(index, qv, args)

    try:
        results = _map(run, queries)
    except EmptyVector as exc:
        raise UsageError(str(exc)) from None
    out = sys.stdout
    for qv, res in zip(queries, results):
        for vid, score in res.matches:
            out.write(f"{qv.id}\t{vid}\t{score!r}\n")
        if args.stats:
            stats = {"queryId": str(qv.id), **res.metrics.as_dict(),
                     "candidates": [str(index.store[c].id) for c in res.candidates]}
            print(json.dumps(stats), file=sys.stderr)
    return 0


# -- bench --------------------------------------------------------------------

BENCH_FIELDS = ["queryId", "strategy", "theta", "accessCost", "opt", "lastGap", "epsilonUpper",
                "gapFraction"]


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t]
    except ValueError:
        raise UsageError(f"bad threshold list {text!r}") from None
    if not vals or any(not (0.0 < v <= 1.0) for v in vals):
        raise UsageError("thresholds must lie in (0, 1]")
    return vals


def _strategy_list(text: str) -> list[str]:
    names = [t for t in text.split(",") if t]
    for s in names:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}; expected one of {', '.join(STRATEGIES)}")
    return names


def bench_rows(index: InvertedIndex, queries: Sequence[SparseVector], thetas: Sequence[float],
               strategies: Sequence[str], stop: str, opt_limit: int = LATTICE_LIMIT) -> list[dict]:
    rows = []

    def run(qv):
        out = []
        unit = normalize(qv) if index.normalized else qv
        for theta in thetas:
            try:
                score = None if stop == "tight" else default_score(unit, stop, theta)
                opt = brute_force_opt(index, unit, theta - SIMILARITY_TOLERANCE, score=score, limit=opt_limit)
            except InstanceTooLarge:
                opt = None
            for strategy in strategies:
                m = query(index, qv, theta, strategy=strategy, stop=stop).metrics
                gap = m.last_gap / m.access_cost if m.access_cost else 0.0
                out.append({"queryId": str(qv.id), "strategy": strategy, "theta": repr(theta),
                            "accessCost": m.access_cost, "opt": "" if opt is None else opt,
                            "lastGap": m.last_gap, "epsilonUpper": _fmt(m.epsilon_upper),
                            "gapFraction": repr(gap)})
        return out

    for chunk in _map(run, list(queries)):
        rows.extend(chunk)
    return rows


def bench_summary(rows: Sequence[dict], index: InvertedIndex) -> dict:
    """Per-threshold share of queries where the hull strategy costs no more than lockstep."""
    by_key: dict[tuple[str, str], dict[str, int]] = {}
    for r in rows:
        by_key.setdefault((r["queryId"], r["theta"]), {})[r["strategy"]] = r["accessCost"]
    share: dict[str, list[int]] = {}
    for (qid, theta), costs in by_key.items():
        if "hull" in costs and "lockstep" in costs:
            share.setdefault(theta, []).append(int(costs["hull"] <= costs["lockstep"]))
    worst_opt_excess = None
    for r in rows:
        if r["strategy"] == "hull" and r["opt"] != "":
            excess = r["accessCost"] - r["opt"]
            worst_opt_excess = excess if worst_opt_excess is None else max(worst_opt_excess, excess)
    return {
        "rows": len(rows),
        "c": index.c,
        "hullNotWorseThanLockstep": {t: sum(v) / len(v) for t, v in share.items()},
        "maxHullCostMinusOpt": worst_opt_excess,
    }


def cmd_bench(args) -> int:
    thetas = _float_list(args.theta)
    strategies = _strategy_list(args.strategies)
    paths = list(args.paths)
    if not 1 <= len(paths) <= 2:
        raise UsageError("bench needs an index directory and optionally a query file")
    index = load(paths[0])
    if not index.normalized and args.stop == "tight":
        raise UsageError("index was built with --no-normalize; use --stop baseline")
    if len(paths) == 2:
        queries = parse_vector_file(paths[1])
    else:
        if index.n == 0:
            raise UsageError("cannot sample queries from an empty index")
        rng = random.Random(args.seed)
        picks = sorted(rng.sample(range(index.n), min(args.queries, index.n)))
        queries = [index.store[k] for k in picks]

    rows = bench_rows(index, queries, thetas, strategies, args.stop, args.opt_limit)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.emit_csv:
        Path(args.emit_csv).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    print(json.dumps(bench_summary(rows, index)), file=sys.stderr)
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ctq", description="exact cosine threshold queries over sparse vectors")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="index a vector file")
    b.add_argument("paths", nargs="*", metavar="PATH", help="INPUT OUTDIR")
    b.add_argument("--no-normalize", action="store_true", help="keep raw values (inner-product index)")
    b.add_argument("--fixture-fig1", action="store_true", help=argparse.SUPPRESS)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="run threshold or top-k queries")
    q.add_argument("paths", nargs="*", metavar="PATH", help="INDEX QUERYFILE")
    q.add_argument("--theta", type=float)
    q.add_argument("--topk", type=int)
    q.add_argument("--strategy", choices=STRATEGIES)
    q.add_argument("--stop", choices=STOPS, default="tight")
    q.add_argument("--tau-tilde", type=float)
    q.add_argument("--stats", action="store_true", help="per-query JSON stats on stderr")
    q.add_argument("--fixture-fig1", action="store_true", help=argparse.SUPPRESS)
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("bench", help="compare strategies and report access costs as CSV")
    r.add_argument("paths", nargs="+", metavar="PATH", help="INDEX [QUERYFILE]")
    r.add_argument("--theta", default="0.6", help="comma-separated thresholds")
    r.add_argument("--strategies", default=",".join(STRATEGIES))
    r.add_argument("--stop", choices=STOPS, default="tight")
    r.add_argument("--seed", type=int, default=0, help="seed for sampling queries from the index")
    r.add_argument("--queries", type=int, default=100, help="queries to sample when no file is given")
    r.add_argument("--opt-limit", type=int, default=LATTICE_LIMIT,
                   help="largest cursor lattice searched for the optimal cost")
    r.add_argument("--emit-csv", metavar="PATH")
    r.set_defaults(func=cmd_bench)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, IndexFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
