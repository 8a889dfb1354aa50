from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decigibbs.lattice import (
    Boundary,
    Box,
    Site,
    SpinField,
    enumerate_saw,
    extract_contours,
    interior_flood_fill,
    interior_ray_cast,
    neighbors,
    telescope_index,
    telescope_set,
    unequal_bonds,
)


def random_field(n: int, seed: int, bc: Boundary | None = None, p: float = 0.5) -> SpinField:
    rng = np.random.default_rng(seed)
    vals = np.where(rng.random((2 * n + 1, 2 * n + 1)) < p, -1, 1).astype(np.int8)
    return SpinField(Box(n), vals, bc or Boundary.plus())


fields = st.builds(random_field, st.integers(0, 4), st.integers(0, 10**6), st.just(None), st.floats(0.1, 0.9))


def test_site_order_is_lexicographic():
    assert Site(0, 5) < Site(1, -5)
    assert Site(1, 0) < Site(1, 1)
    assert sorted([Site(1, 0), Site(0, 1), Site(0, -1)]) == [Site(0, -1), Site(0, 1), Site(1, 0)]


def test_neighbors_examples():
    assert neighbors((0, 0)) == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    assert neighbors((2, 3)) == [(1, 3), (2, 2), (2, 4), (3, 3)]


@given(st.integers(-50, 50), st.integers(-50, 50))
def test_site_not_own_neighbor(x, y):
    assert Site(x, y) not in neighbors((x, y))


@pytest.mark.parametrize("n", [0, 1, 2, 5])
def test_box_size_and_membership(n):
    box = Box(n)
    assert len(box.sites) == (2 * n + 1) ** 2 == box.size
    assert list(box.sites) == sorted(box.sites)
    assert all(s in box for s in box.sites)
    assert Site(n + 1, 0) not in box


def test_contours_all_plus_empty():
    assert extract_contours(SpinField.constant(3, 1, Boundary.plus())) == ()


def test_contour_single_minus():
    (c,) = extract_contours(SpinField.from_sites(2, [(0, 0)]))
    assert c.length == 4
    assert c.interior == {Site(0, 0)}


def test_contour_domino():
    (c,) = extract_contours(SpinField.from_sites(2, [(0, 0), (1, 0)]))
    assert c.length == 6
    assert c.interior == {Site(0, 0), Site(1, 0)}


def test_free_boundary_has_no_contours():
    with pytest.raises(ValueError, match="contours undefined without exterior spins"):
        extract_contours(SpinField.constant(2, 1, Boundary.free()))


def test_corner_rule_diagonal_pairs():
    # the fixed pairing joins a diagonal pair into one loop and splits the anti-diagonal pair
    diag = extract_contours(SpinField.from_sites(2, [(0, 0), (1, 1)]))
    anti = extract_contours(SpinField.from_sites(2, [(0, 1), (1, 0)]))
    assert sorted(c.length for c in diag) == [8]
    assert sorted(c.length for c in anti) == [4, 4]


@settings(max_examples=60, deadline=None)
@given(fields)
def test_contours_flip_symmetric(field):
    plus = set(extract_contours(field))
    minus = set(extract_contours(field.flipped()))
    assert plus == minus


@settings(max_examples=60, deadline=None)
@given(fields)
def test_contour_length_counts_unequal_bonds(field):
    total = sum(c.length for c in extract_contours(field))
    assert total == len(unequal_bonds(field))


@settings(max_examples=60, deadline=None)
@given(fields)
def test_interior_ray_cast_matches_flood_fill(field):
    for c in extract_contours(field):
        assert interior_ray_cast(c) == interior_flood_fill(c)


def test_contours_are_closed_nn_loops():
    for c in extract_contours(random_field(4, 3)):
        pts = c.dual_points
        for a, b in zip(pts, pts[1:] + pts[:1]):
            assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def test_fixed_boundary_contours():
    ring = {s: -1 for s in Box(1).ring}
    field = SpinField.constant(1, -1, Boundary.fixed(ring))
    assert extract_contours(field) == ()


def test_telescope_examples():
    L0 = telescope_set((0, 0), 0)
    assert L0.members == {Site(0, 0)} and L0.v is None
    L1 = telescope_set((0, 0), 1)
    assert L1.members == {Site(-1, 0), Site(0, -1), Site(0, 0)}
    assert L1.v == 2


@pytest.mark.parametrize("m", range(7))
def test_telescope_size(m):
    L = telescope_set((3, -2), m)
    assert len(L.members) == m * m + m + 1
    assert Site(3, -2) in L.members
    if m:
        assert telescope_set((3, -2), m - 1).members < L.members
        assert L.v >= 2 * m


@settings(max_examples=200)
@given(st.sets(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=1, max_size=8))
def test_telescope_partition(A):
    A = {Site(*s) for s in A}
    hits = []
    for i in A:
        for m in range(0, 17):
            if A <= telescope_set(i, m).members and (m == 0 or not A <= telescope_set(i, m - 1).members):
                hits.append((i, m))
    assert hits == [telescope_index(A)]


def _brute_saw_count(max_len):
    count = 0

    def walk(path, seen):
        nonlocal count
        if len(path) - 1 == max_len:
            return
        x, y = path[-1]
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = (x + dx, y + dy)
            if t not in seen:
                count += 1
                walk(path + [t], seen | {t})

    walk([(0, 0)], {(0, 0)})
    return count


def test_saw_counts():
    assert len(enumerate_saw((0, 0), None, 1)) == 4
    assert len(enumerate_saw((0, 0), None, 2)) == 4 + 12
    assert len(enumerate_saw((0, 0), Box(10), 4)) == _brute_saw_count(4)


def test_saw_paths_valid_and_boxed():
    box = Box(1)
    for p in enumerate_saw((1, 1), box, 5):
        assert len(set(p)) == len(p)
        assert all(s in box for s in p)
        assert all(abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 for a, b in zip(p, p[1:]))


def test_saw_budget():
    with pytest.raises(ValueError, match="path enumeration budget exceeded"):
        enumerate_saw((0, 0), None, 17)


@pytest.mark.parametrize("bc", [Boundary.plus(), Boundary.minus(), Boundary.free()])
def test_text_round_trip(bc):
    f = random_field(3, 11, bc)
    assert SpinField.from_text(f.to_text()) == f


def test_text_round_trip_fixed():
    rng = np.random.default_rng(5)
    ring = {s: int(rng.choice([-1, 1])) for s in Box(2).ring}
    f = random_field(2, 7, Boundary.fixed(ring))
    g = SpinField.from_text(f.to_text())
    assert g == f
    assert all(g.boundary.value(s) == v for s, v in ring.items())
