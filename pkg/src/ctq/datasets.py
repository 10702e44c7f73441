"""Synthetic data: skewed sparse vectors, small worked fixtures, and tiny
instances with controlled list shapes for optimality checks.

Run as a module to write a Zipf-skewed vector file::

    python -m ctq.datasets --n 100000 --d 1000 --seed 7 out.tsv
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .index import InvertedIndex, build, lower_hull
from .vectors import SparseVector, normalize


def fig1_database() -> list[SparseVector]:
    """Six unit vectors over ten dims whose lists for dims 0, 2, 3 are the
    standard three-list walkthrough."""
    rows = {
        "s1": {0: 0.8, 3: 0.6},
        "s2": {2: 0.6, 3: 0.8},
        "s3": {0: 0.3, 2: 0.3, 3: 0.2, 5: 0.8, 7: 0.3, 8: 0.2, 9: 0.1},
        "s4": {0: 0.2, 1: 0.9, 3: 0.1, 4: 0.3, 6: 0.2, 9: 0.1},
        "s5": {0: 0.7, 2: 0.5, 6: 0.5, 8: 0.1},
        "s6": {1: 0.7, 2: 0.1, 4: 0.7, 9: 0.1},
    }
    return [SparseVector.from_pairs(k, v) for k, v in rows.items()]


def fig1_query() -> SparseVector:
    # squared norm 0.98; left unnormalized on purpose
    return SparseVector.from_pairs("q", {0: 0.8, 2: 0.3, 3: 0.5})


def zipf_vectors(n: int, d: int, nnz: int = 10, seed: int = 0, value_skew: float = 1.0,
                 dim_skew: float = 1.0, prefix: str = "v") -> list[SparseVector]:
    """Unit vectors with Zipf-distributed dim popularity and value ranks.

    Each vector draws about ``nnz`` dims, favouring popular ones, and gives
    its r-th heaviest coordinate a weight near ``r ** -value_skew``.
    """
    rng = np.random.default_rng(seed)
    popularity = 1.0 / np.arange(1, d + 1) ** dim_skew
    popularity = popularity[rng.permutation(d)]
    popularity /= popularity.sum()
    out = []
    for k in range(n):
        size = int(np.clip(rng.poisson(nnz), 1, d))
        dims = rng.choice(d, size=size, replace=False, p=popularity)
        ranks = np.arange(1, size + 1) ** -value_skew
        vals = ranks * rng.uniform(0.5, 1.5, size)
        out.append(normalize(SparseVector.from_pairs(f"{prefix}{k}", zip(dims.tolist(), vals.tolist()))))
    return out


def write_vector_file(vectors: Iterable[SparseVector], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in vectors:
            body = " ".join(f"{dim}:{val!r}" for dim, val in zip(v.dims, v.values))
            fh.write(f"{v.id}\t{body}\n")


# -- tiny instances with controlled list shapes -------------------------------

@dataclass
class Instance:
    index: InvertedIndex
    query: SparseVector
    theta: float


def _profile_from_drops(drops: Sequence[float]) -> list[float]:
    prof = [1.0]
    for x in drops:
        prof.append(prof[-1] - x)
    prof[-1] = 0.0
    return prof


def _lists_to_index(profiles: Sequence[Sequence[float]], rng: np.random.Generator) -> InvertedIndex:
    """One single-coordinate vector per list entry, so lists are independent."""
    vecs = []
    for dim, prof in enumerate(profiles):
        n = len(prof) - 1
        tail = prof[n - 1] if n > 1 else 1.0
        values = [*prof[1:n], float(rng.uniform(0.05, 1.0)) * tail]
        for j, v in enumerate(values):
            vecs.append(SparseVector(f"d{dim}e{j}", (dim,), (v,)))
    return build(vecs, normalize_vectors=False)


def _unit_query(rng: np.random.Generator, d: int) -> SparseVector:
    w = rng.uniform(0.1, 1.0, d)
    w /= np.linalg.norm(w)
    return SparseVector("q", tuple(range(d)), tuple(w.tolist()))


def convex_instance(rng: np.random.Generator, max_dims: int = 3, max_len: int = 6) -> Instance:
    """Lists whose per-step drops never increase, ending at bound 0."""
    d = int(rng.integers(1, max_dims + 1))
    profiles = []
    for _ in range(d):
        n = int(rng.integers(1, max_len + 1))
        drops = np.sort(rng.uniform(0.05, 1.0, n))[::-1]
        profiles.append(_profile_from_drops((drops / drops.sum()).tolist()))
    return Instance(_lists_to_index(profiles, rng), _unit_query(rng, d), float(rng.uniform(0.05, 0.95)))


def near_convex_instance(rng: np.random.Generator, max_dims: int = 3, max_len: int = 8,
                         c: int = 3) -> Instance:
    """Convex lists with short shuffled runs of drops, hull gaps at most ``c``."""
    while True:
        d = int(rng.integers(1, max_dims + 1))
        profiles = []
        for _ in range(d):
            n = int(rng.integers(1, max_len + 1))
            drops = np.sort(rng.uniform(0.05, 1.0, n))[::-1]
            width = int(rng.integers(2, c + 1))
            if n >= width:
                at = int(rng.integers(0, n - width + 1))
                drops[at:at + width] = rng.permutation(drops[at:at + width])
            profiles.append(_profile_from_drops((drops / drops.sum()).tolist()))
        gaps = [max(np.diff(lower_hull(p[1:])), default=0) for p in profiles]
        if max(gaps) <= c:
            return Instance(_lists_to_index(profiles, rng), _unit_query(rng, d), float(rng.uniform(0.05, 0.95)))


def cosine_instance(rng: np.random.Generator, d: int = 4, n: int = 8) -> Instance:
    """A handful of unit vectors with two or three nonzeros each."""
    vecs = []
    for k in range(n):
        size = int(rng.integers(2, 4))
        dims = rng.choice(d, size=size, replace=False)
        vals = rng.uniform(0.05, 1.0, size)
        vecs.append(normalize(SparseVector.from_pairs(f"c{k}", zip(dims.tolist(), vals.tolist()))))
    index = build(vecs, d=d)
    qdims = rng.choice(d, size=int(rng.integers(2, d + 1)), replace=False)
    q = normalize(SparseVector.from_pairs("q", zip(qdims.tolist(), rng.uniform(0.1, 1.0, len(qdims)).tolist())))
    return Instance(index, q, float(rng.uniform(0.3, 0.9)))


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m ctq.datasets", description="write a Zipf-skewed vector file")
    ap.add_argument("out")
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--d", type=int, default=1000)
    ap.add_argument("--nnz", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--prefix", default="v")
    args = ap.parse_args(argv)
    write_vector_file(zipf_vectors(args.n, args.d, args.nnz, args.seed, prefix=args.prefix), args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
