import struct
import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctq.datasets import fig1_database, zipf_vectors
from ctq.errors import ChecksumMismatch, DimensionOutOfRange, DuplicateId, FormatVersionMismatch
from ctq.index import MANIFEST, POSTINGS, bound_profile, build, load, lower_hull, save
from ctq.vectors import SparseVector

from oracles import brute_lower_hull

descending = st.lists(st.floats(0.001, 1.0), min_size=0, max_size=40).map(lambda xs: sorted(xs, reverse=True))


def test_fig1_first_list(fig1_index):
    pl = fig1_index.lists[0]
    got = [(fig1_index.store[i].id, round(v, 12)) for i, v in zip(pl.ids, pl.values)]
    assert got == [("s1", 0.8), ("s5", 0.7), ("s3", 0.3), ("s4", 0.2)]


def test_empty_database():
    idx = build([])
    assert idx.n == 0 and idx.lists == {} and idx.c == 0


def test_duplicate_id_and_dim_range():
    a = SparseVector("a", (0,), (1.0,))
    with pytest.raises(DuplicateId):
        build([a, a])
    with pytest.raises(DimensionOutOfRange):
        build([SparseVector("b", (5,), (1.0,))], d=3)


def test_random_lists_sorted_and_complete():
    db = zipf_vectors(20, 15, 5, seed=3)
    idx = build(db)
    seen = set()
    for dim, pl in idx.lists.items():
        assert all(a >= b for a, b in zip(pl.values, pl.values[1:]))
        assert all(v > 0 for v in pl.values)
        for vid, v in zip(pl.ids, pl.values):
            assert idx.store[vid].get(dim) == v
            seen.add((vid, dim))
    expected = {(k, d) for k, v in enumerate(idx.store) for d in v.dims}
    assert seen == expected


def test_ties_break_by_ingestion_order():
    db = [SparseVector(f"x{k}", (0,), (0.5,)) for k in range(4)]
    idx = build(db, normalize_vectors=False)
    assert idx.lists[0].ids == [0, 1, 2, 3]


def test_lower_hull_examples():
    assert lower_hull([0.9, 0.3, 0.28, 0.05]) == [0, 2, 4]
    assert brute_lower_hull([1.0, 0.9, 0.3, 0.28, 0.05]) == [0, 2, 4]
    # drops strictly shrinking: every point is a vertex
    assert lower_hull([0.5, 0.25, 0.125, 0.0625]) == [0, 1, 2, 3, 4]
    assert lower_hull([0.75, 0.5, 0.25, 0.0]) == [0, 4]
    assert lower_hull([]) == [0]


@settings(max_examples=300, deadline=None)
@given(descending)
def test_lower_hull_matches_brute_force(values):
    assert lower_hull(values) == brute_lower_hull([1.0, *values])


@settings(max_examples=200, deadline=None)
@given(descending)
def test_hull_lies_below_every_point(values):
    pts = [1.0, *values]
    hull = lower_hull(values)
    assert hull[0] == 0 and hull[-1] == len(values)
    for a, b in zip(hull, hull[1:]):
        for j in range(a, b + 1):
            chord = pts[a] + (pts[b] - pts[a]) * (j - a) / (b - a)
            assert pts[j] >= chord - 1e-12
    slopes = [(pts[b] - pts[a]) / (b - a) for a, b in zip(hull, hull[1:])]
    assert all(s1 < s2 for s1, s2 in zip(slopes, slopes[1:]))


def test_profile_and_hulls_built_on_it(fig1_index):
    pl = fig1_index.lists[2]
    assert pl.profile == pytest.approx([1.0, 0.6, 0.5, 0.3, 0.0])
    assert fig1_index.hulls[2].vertices == lower_hull(pl.profile[1:])
    assert bound_profile([0.4]) == [1.0, 0.0]


def test_c_is_max_hull_gap():
    idx = build(zipf_vectors(60, 20, 6, seed=5))
    gaps = [b - a for h in idx.hulls.values() for a, b in zip(h.vertices, h.vertices[1:])]
    assert idx.c == max(gaps)


def test_convex_list_hull_keeps_every_position():
    # drops 0.4, 0.3, 0.2, 0.1 then the exhausted step to 0
    db = [SparseVector(f"e{k}", (0,), (v,)) for k, v in enumerate([0.6, 0.3, 0.1, 0.05])]
    idx = build(db, normalize_vectors=False)
    assert idx.lists[0].profile == pytest.approx([1.0, 0.6, 0.3, 0.1, 0.0])
    assert idx.hulls[0].vertices == [0, 1, 2, 3, 4]


def _same(a, b):
    assert a.d == b.d and a.n == b.n and a.c == b.c and a.normalized == b.normalized
    assert a.lists == b.lists and a.hulls == b.hulls
    assert [(v.id, v.dims, v.values) for v in a.store] == [(v.id, v.dims, v.values) for v in b.store]


def test_roundtrip_fig1(tmp_path, fig1_index):
    save(fig1_index, tmp_path / "ix")
    _same(fig1_index, load(tmp_path / "ix"))


def test_roundtrip_random_is_bit_exact(tmp_path):
    idx = build(zipf_vectors(300, 40, 8, seed=9))
    save(idx, tmp_path / "ix")
    back = load(tmp_path / "ix")
    _same(idx, back)
    save(back, tmp_path / "again")
    for name in ("manifest.bin", "postings.bin", "hulls.bin", "vectors.bin"):
        assert (tmp_path / "ix" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_truncated_files_fail_checksum(tmp_path, fig1_index):
    save(fig1_index, tmp_path / "ix")
    p = tmp_path / "ix" / POSTINGS
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ChecksumMismatch):
        load(tmp_path / "ix")
    save(fig1_index, tmp_path / "iy")
    m = tmp_path / "iy" / MANIFEST
    m.write_bytes(m.read_bytes()[:20])
    with pytest.raises(ChecksumMismatch):
        load(tmp_path / "iy")


def test_future_version_rejected(tmp_path, fig1_index):
    save(fig1_index, tmp_path / "ix")
    m = tmp_path / "ix" / MANIFEST
    raw = bytearray(m.read_bytes())
    struct.pack_into("<H", raw, 4, 2)
    raw[-4:] = struct.pack("<I", zlib.crc32(bytes(raw[:-4])))
    m.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionMismatch):
        load(tmp_path / "ix")


def test_fig1_database_is_unit():
    assert all(abs(v.sq_norm - 1.0) <= 1e-12 for v in fig1_database())
