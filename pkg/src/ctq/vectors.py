"""Sparse non-negative vectors and the similarity arithmetic over them.

A :class:`SparseVector` keeps its entries twice: ascending by dimension for
merge-style dot products, and descending by value for partial verification,
where the heaviest coordinates are scanned first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping

from .errors import EmptyVector, NegativeValue

NORM_TOLERANCE = 1e-9
DROP_BELOW = 1e-12


@dataclass(frozen=True)
class SparseVector:
    id: Hashable
    dims: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.dims) != len(self.values):
            raise ValueError("dims and values differ in length")
        prev = -1
        for dim, value in zip(self.dims, self.values):
            if dim <= prev:
                raise ValueError(f"dims must be strictly increasing (got {dim} after {prev})")
            if value < 0:
                raise NegativeValue(f"vector {self.id!r}: negative value {value} on dim {dim}")
            if not value > 0:
                raise ValueError(f"vector {self.id!r}: zero entries must be omitted (dim {dim})")
            prev = dim

    @classmethod
    def from_pairs(cls, id: Hashable, pairs: Iterable[tuple[int, float]] | Mapping[int, float]) -> SparseVector:
        """Build from arbitrary (dim, value) pairs; zeros dropped, dims sorted.

        Repeated dims are rejected rather than summed.
        """
        items = pairs.items() if isinstance(pairs, Mapping) else pairs
        acc: dict[int, float] = {}
        for dim, value in items:
            dim = int(dim)
            value = float(value)
            if dim < 0:
                raise ValueError(f"vector {id!r}: negative dimension {dim}")
            if value < 0:
                raise NegativeValue(f"vector {id!r}: negative value {value} on dim {dim}")
            if dim in acc:
                raise ValueError(f"vector {id!r}: dim {dim} given twice")
            acc[dim] = value
        dims = sorted(d for d, v in acc.items() if v > 0)
        return cls(id, tuple(dims), tuple(acc[d] for d in dims))

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return len(self.dims)

    @cached_property
    def sq_norm(self) -> float:
        return math.fsum(v * v for v in self.values)

    @cached_property
    def norm(self) -> float:
        return math.sqrt(self.sq_norm)

    @cached_property
    def by_value(self) -> tuple[tuple[int, ...], tuple[float, ...]]:
        # value descending, ties by ascending dim
        order = sorted(range(len(self.dims)), key=lambda k: (-self.values[k], self.dims[k]))
        return tuple(self.dims[k] for k in order), tuple(self.values[k] for k in order)

    @cached_property
    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.dims, self.values))

    def get(self, dim: int) -> float:
        return self.as_dict.get(dim, 0.0)

    def dense(self, d: int) -> list[float]:
        out = [0.0] * d
        for dim, value in zip(self.dims, self.values):
            out[dim] = value
        return out

    def is_unit(self, tol: float = NORM_TOLERANCE) -> bool:
        return abs(self.sq_norm - 1.0) <= tol


def normalize(v: SparseVector) -> SparseVector:
    """Scale ``v`` to unit L2 norm, keeping its id and support."""
    if not v.dims:
        raise EmptyVector(f"vector {v.id!r} has no entries")
    n = v.norm
    if n == 0.0 or not math.isfinite(n):
        raise EmptyVector(f"vector {v.id!r} has zero or non-finite norm")
    dims = []
    values = []
    for dim, value in zip(v.dims, v.values):
        scaled = value / n
        if scaled >= DROP_BELOW:
            dims.append(dim)
            values.append(scaled)
    if not dims:
        raise EmptyVector(f"vector {v.id!r} vanished under normalization")
    return SparseVector(v.id, tuple(dims), tuple(values))


def dot(a: SparseVector, b: SparseVector) -> float:
    """Sum of products over shared dims, by a two-pointer merge."""
    ad, av, bd, bv = a.dims, a.values, b.dims, b.values
    i = j = 0
    na, nb = len(ad), len(bd)
    total = 0.0
    while i < na and j < nb:
        x, y = ad[i], bd[j]
        if x == y:
            total += av[i] * bv[j]
            i += 1
            j += 1
        elif x < y:
            i += 1
        else:
            j += 1
    return total


def cosine(a: SparseVector, b: SparseVector) -> float:
    if not a.dims or not b.dims:
        raise EmptyVector("cosine of an empty vector is undefined")
    return dot(a, b) / (a.norm * b.norm)


@dataclass(frozen=True)
class Query:
    """A query vector plus its threshold.

    ``theta`` may be ``None`` for top-k use.  ``support`` lists the dims with
    a positive query weight, in ascending order.
    """

    vector: SparseVector
    theta: float | None = None
    support: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if not self.vector.dims:
            raise EmptyVector("query vector has no entries")
        if self.theta is not None and not (0.0 < self.theta <= 1.0):
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        object.__setattr__(self, "support", self.vector.dims)

    @classmethod
    def make(cls, vector: SparseVector, theta: float | None = None, *, unit: bool = True) -> Query:
        return cls(normalize(vector) if unit else vector, theta)

    @property
    def weights(self) -> dict[int, float]:
        return self.vector.as_dict

    @property
    def m(self) -> int:
        return len(self.support)

    def with_theta(self, theta: float | None) -> Query:
        return Query(self.vector, theta)
