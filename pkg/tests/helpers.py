"""Random instance builders shared by several test modules."""

from __future__ import annotations

import math

import numpy as np

from ctq.stopping import Frontier


def random_frontier(rng: np.random.Generator, m_max: int = 10, extra_dims: bool | None = None) -> Frontier:
    m = int(rng.integers(1, m_max + 1))
    w = rng.uniform(0.05, 1.0, m)
    w /= np.linalg.norm(w)
    kind = rng.uniform(size=m)
    bounds = np.where(kind < 0.1, 0.0, np.where(kind < 0.25, 1.0, rng.uniform(0.0, 1.0, m)))
    if extra_dims is None:
        extra_dims = bool(rng.integers(0, 2))
    d = m + (int(rng.integers(1, 5)) if extra_dims else 0)
    dims = tuple(sorted(rng.choice(d, m, replace=False).tolist()))
    return Frontier(dims, tuple(w.tolist()), [0] * m, bounds.tolist(), d)


def sample_below(rng: np.random.Generator, f: Frontier) -> tuple[list[float], float] | None:
    """A random unit vector under the frontier: support coords plus mass on free dims."""
    bounds = np.asarray(f.bounds)
    x = rng.uniform(0.0, 1.0, f.m) * bounds
    if rng.uniform() < 0.3:
        x = bounds * rng.uniform(0.9, 1.0, f.m)
    mass = float(x @ x)
    if mass > 1.0:
        return (x / math.sqrt(mass)).tolist(), 0.0
    if f.d > f.m:
        return x.tolist(), 1.0 - mass
    # nowhere to park the leftover: stretch towards the bounds if that reaches unit norm
    with np.errstate(divide="ignore", invalid="ignore"):
        room = np.where(x > 0, bounds / x, np.inf)
    t = min(1.0 / math.sqrt(mass) if mass > 0 else np.inf, float(room.min()))
    y = x * t
    if not np.isfinite(t) or abs(float(y @ y) - 1.0) > 1e-12:
        return None
    return y.tolist(), 0.0
