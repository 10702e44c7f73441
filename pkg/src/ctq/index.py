"""Inverted index: per-dimension descending posting lists plus lower hulls.

Positions along a list are 1-based for stored entries.  Position 0 is the
sentinel with value 1, and the position equal to the list length means the
list is exhausted, where the bound on any unseen vector drops to 0.  The
resulting sequence ``[1, L[1], ..., L[n-1], 0]`` is the *bound profile*; it is
what both the stopping conditions and the hull strategies look at, so hulls
are computed over it.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import (
    ChecksumMismatch,
    DimensionOutOfRange,
    DuplicateId,
    FormatVersionMismatch,
    IndexFormatError,
)
from .vectors import SparseVector, normalize

MAGIC = b"CTQ1"
FORMAT_VERSION = 1

MANIFEST = "manifest.bin"
POSTINGS = "postings.bin"
HULLS = "hulls.bin"
VECTORS = "vectors.bin"


def lower_hull(values: Sequence[float]) -> list[int]:
    """Positions of the lower convex hull of ``[1, *values]`` against index.

    One monotone-chain pass; collinear interior points are dropped, so the
    slopes between successive vertices strictly increase.
    """
    xs = [0]
    ys = [1.0]
    for x, y in enumerate(values, start=1):
        while len(xs) >= 2:
            ox, oy = xs[-2], ys[-2]
            ax, ay = xs[-1], ys[-1]
            if (ax - ox) * (y - oy) - (ay - oy) * (x - ox) <= 0.0:
                xs.pop()
                ys.pop()
            else:
                break
        xs.append(x)
        ys.append(y)
    return xs


def bound_profile(values: Sequence[float]) -> list[float]:
    """Bound on unseen vectors at each cursor position 0..len(values)."""
    if not values:
        return [0.0]
    return [1.0, *values[:-1], 0.0]


@dataclass
class PostingList:
    dim: int
    ids: list[int]
    values: list[float]

    def __len__(self) -> int:
        return len(self.ids)

    @cached_property
    def profile(self) -> list[float]:
        return bound_profile(self.values)

    def value_at(self, pos: int) -> float:
        """``L[pos]`` in the 1-based convention, with ``L[0] = 1``."""
        return 1.0 if pos == 0 else self.values[pos - 1]


@dataclass
class HullIndex:
    dim: int
    vertices: list[int]

    @property
    def gaps(self) -> list[int]:
        v = self.vertices
        return [b - a for a, b in zip(v, v[1:])]

    @property
    def max_gap(self) -> int:
        return max(self.gaps, default=0)


@dataclass
class InvertedIndex:
    d: int
    lists: dict[int, PostingList]
    hulls: dict[int, HullIndex]
    store: list[SparseVector]
    normalized: bool = True
    c: int = 0
    _by_ext: dict[Hashable, int] = field(default_factory=dict, repr=False, compare=False)
    # derived flat arrays for compiled kernels, filled on first use
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.store)

    def posting(self, dim: int) -> PostingList | None:
        return self.lists.get(dim)

    def list_length(self, dim: int) -> int:
        pl = self.lists.get(dim)
        return 0 if pl is None else len(pl)

    def bound(self, dim: int, pos: int) -> float:
        pl = self.lists.get(dim)
        if pl is None:
            return 0.0
        return pl.profile[pos]

    def lookup(self, ext_id: Hashable) -> int:
        if not self._by_ext:
            self._by_ext.update((v.id, k) for k, v in enumerate(self.store))
        return self._by_ext[ext_id]

    @property
    def hull_vertex_count(self) -> int:
        return sum(len(h.vertices) for h in self.hulls.values())


def build(db: Iterable[SparseVector], normalize_vectors: bool = True, d: int | None = None) -> InvertedIndex:
    """Index ``db``; internal vector ids follow input order."""
    store: list[SparseVector] = []
    seen: set = set()
    for v in db:
        if v.id in seen:
            raise DuplicateId(f"duplicate vector id {v.id!r}")
        seen.add(v.id)
        if normalize_vectors:
            v = normalize(v)
        elif v.values and max(v.values) > 1.0:
            raise ValueError(f"vector {v.id!r}: values above 1 need normalization")
        store.append(v)

    max_dim = max((v.dims[-1] for v in store if v.dims), default=-1)
    if d is None:
        d = max_dim + 1
    elif max_dim >= d:
        raise DimensionOutOfRange(f"dimension {max_dim} outside [0, {d})")

    total = sum(len(v.dims) for v in store)
    dims = np.empty(total, dtype=np.int64)
    ids = np.empty(total, dtype=np.int64)
    vals = np.empty(total, dtype=np.float64)
    at = 0
    for k, v in enumerate(store):
        m = len(v.dims)
        dims[at:at + m] = v.dims
        ids[at:at + m] = k
        vals[at:at + m] = v.values
        at += m

    # by dim, then value descending, then vector id ascending
    order = np.lexsort((ids, -vals, dims))
    dims, ids, vals = dims[order], ids[order], vals[order]
    cuts = np.flatnonzero(np.diff(dims)) + 1
    starts = np.concatenate(([0], cuts)) if total else np.empty(0, dtype=np.int64)
    ends = np.concatenate((cuts, [total])) if total else np.empty(0, dtype=np.int64)

    lists: dict[int, PostingList] = {}
    hulls: dict[int, HullIndex] = {}
    for s, e in zip(starts.tolist(), ends.tolist()):
        dim = int(dims[s])
        pl = PostingList(dim, ids[s:e].tolist(), vals[s:e].tolist())
        lists[dim] = pl
        hulls[dim] = HullIndex(dim, lower_hull(pl.profile[1:]))
    c = max((h.max_gap for h in hulls.values()), default=0)
    return InvertedIndex(d=d, lists=lists, hulls=hulls, store=store, normalized=normalize_vectors, c=c)


# -- persistence --------------------------------------------------------------
#
# Byte layout (all integers little-endian, floats IEEE-754 binary64):
#
# manifest.bin
#   magic      4s  b"CTQ1"
#   version    u16
#   flags      u16  bit 0: vectors were normalized at build
#   d, n, c    u32 x3
#   nlists     u32
#   nlists x (dim u32, length u32, hull_len u32)
#   payload    32s  SHA-256 over postings.bin || hulls.bin || vectors.bin
#   crc        u32  CRC-32 of every preceding manifest byte
# postings.bin  per list in manifest order: ids u32[length], values f64[length]
# hulls.bin     per list in manifest order: vertex positions u32[hull_len]
# vectors.bin   n records: id_len u32, id utf-8 bytes, nnz u32,
#               dims u32[nnz], values f64[nnz]
#
# Vector ids are persisted as strings.

_HEAD = struct.Struct("<4sHHIIII")
_ENTRY = struct.Struct("<III")


def save(index: InvertedIndex, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    order = sorted(index.lists)

    postings = bytearray()
    hull_bytes = bytearray()
    for dim in order:
        pl = index.lists[dim]
        postings += np.asarray(pl.ids, dtype="<u4").tobytes()
        postings += np.asarray(pl.values, dtype="<f8").tobytes()
        hull_bytes += np.asarray(index.hulls[dim].vertices, dtype="<u4").tobytes()

    vec_bytes = bytearray()
    for v in index.store:
        raw = str(v.id).encode("utf-8")
        vec_bytes += struct.pack("<I", len(raw)) + raw
        vec_bytes += struct.pack("<I", len(v.dims))
        vec_bytes += np.asarray(v.dims, dtype="<u4").tobytes()
        vec_bytes += np.asarray(v.values, dtype="<f8").tobytes()

    digest = hashlib.sha256(bytes(postings) + bytes(hull_bytes) + bytes(vec_bytes)).digest()
    manifest = bytearray(_HEAD.pack(MAGIC, FORMAT_VERSION, 1 if index.normalized else 0,
                                    index.d, index.n, index.c, len(order)))
    for dim in order:
        manifest += _ENTRY.pack(dim, len(index.lists[dim]), len(index.hulls[dim].vertices))
    manifest += digest
    manifest += struct.pack("<I", zlib.crc32(manifest))

    (path / POSTINGS).write_bytes(postings)
    (path / HULLS).write_bytes(hull_bytes)
    (path / VECTORS).write_bytes(vec_bytes)
    (path / MANIFEST).write_bytes(manifest)


def load(path: str | Path) -> InvertedIndex:
    path = Path(path)
    manifest = (path / MANIFEST).read_bytes()
    if len(manifest) < _HEAD.size or manifest[:4] != MAGIC:
        if len(manifest) >= 4 and manifest[:4] != MAGIC:
            raise IndexFormatError(f"{path}: not a CTQ1 index")
        raise ChecksumMismatch(f"{path}: manifest truncated")
    magic, version, flags, d, n, c, nlists = _HEAD.unpack_from(manifest, 0)
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    expected = _HEAD.size + nlists * _ENTRY.size + 32 + 4
    if len(manifest) != expected:
        raise ChecksumMismatch(f"{path}: manifest is {len(manifest)} bytes, expected {expected}")
    (crc,) = struct.unpack_from("<I", manifest, expected - 4)
    if zlib.crc32(manifest[:-4]) != crc:
        raise ChecksumMismatch(f"{path}: manifest CRC mismatch")

    entries = [_ENTRY.unpack_from(manifest, _HEAD.size + k * _ENTRY.size) for k in range(nlists)]
    digest = manifest[expected - 36:expected - 4]
    postings = (path / POSTINGS).read_bytes()
    hull_bytes = (path / HULLS).read_bytes()
    vec_bytes = (path / VECTORS).read_bytes()
    if hashlib.sha256(postings + hull_bytes + vec_bytes).digest() != digest:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")

    lists: dict[int, PostingList] = {}
    hulls: dict[int, HullIndex] = {}
    p = h = 0
    for dim, length, hull_len in entries:
        ids = np.frombuffer(postings, dtype="<u4", count=length, offset=p).tolist()
        p += 4 * length
        vals = np.frombuffer(postings, dtype="<f8", count=length, offset=p).tolist()
        p += 8 * length
        verts = np.frombuffer(hull_bytes, dtype="<u4", count=hull_len, offset=h).tolist()
        h += 4 * hull_len
        lists[dim] = PostingList(dim, ids, vals)
        hulls[dim] = HullIndex(dim, verts)

    store: list[SparseVector] = []
    at = 0
    for _ in range(n):
        (id_len,) = struct.unpack_from("<I", vec_bytes, at)
        at += 4
        ext = vec_bytes[at:at + id_len].decode("utf-8")
        at += id_len
        (nnz,) = struct.unpack_from("<I", vec_bytes, at)
        at += 4
        vdims = np.frombuffer(vec_bytes, dtype="<u4", count=nnz, offset=at).tolist()
        at += 4 * nnz
        vvals = np.frombuffer(vec_bytes, dtype="<f8", count=nnz, offset=at).tolist()
        at += 8 * nnz
        store.append(SparseVector(ext, tuple(vdims), tuple(vvals)))
    return InvertedIndex(d=d, lists=lists, hulls=hulls, store=store, normalized=bool(flags & 1), c=c)
