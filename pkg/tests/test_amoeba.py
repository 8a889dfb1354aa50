from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decigibbs.amoeba import (
    Amoeba,
    amoeba_census,
    compatibility_report,
    constraint_of,
    group_amoebas,
    is_amoeba,
    is_benign,
    is_compatible,
    make_amoeba,
    pld_statistic,
    quenched_length,
)
from decigibbs.decimation import EvenConstraint, pattern, to_original
from decigibbs.lattice import Boundary, Box, SpinField, extract_contours
from decigibbs.sampler import ChainConfig, iter_snapshots
from decigibbs.spec_engine import IsingParams


def block(lo, hi):
    return [(x, y) for x in range(lo, hi + 1) for y in range(lo, hi + 1)]


def annulus_field(n=6, outer=4, inner=1):
    """Minus square [-outer, outer]^2 with a plus island [-inner, inner]^2."""
    island = set(block(-inner, inner))
    return SpinField.from_sites(n, [s for s in block(-outer, outer) if s not in island], Boundary.plus())


def single_loop(minus, n=6):
    (c,) = extract_contours(SpinField.from_sites(n, minus, Boundary.plus()))
    return c


def test_is_amoeba_examples():
    assert is_amoeba([single_loop(block(-1, 1))])
    a, b = single_loop([(-3, 0)]), single_loop([(3, 0)])
    assert not is_amoeba([a, b])
    # inner loop around the odd site (1, 0) only
    outer = single_loop(block(-3, 3))
    inner = single_loop([(1, 0)])
    assert not is_amoeba([outer, inner])
    with pytest.raises(ValueError):
        is_amoeba([])


def test_annulus_is_amoeba():
    field = annulus_field()
    G = make_amoeba(extract_contours(field))
    assert len(G.internals) == 1
    assert G.size == 36 + 12
    assert G.diam == 9


def test_compatibility_all_minus_inside():
    field = SpinField.from_sites(6, block(-2, 2), Boundary.plus())
    (G,) = group_amoebas(extract_contours(field))
    assert is_compatible(G, constraint_of(field))


def test_compatibility_twelve_by_twelve_fixture():
    # 13x13 window, minus annulus around a plus island holding the even site (0, 0)
    field = annulus_field()
    xi = constraint_of(field)
    G = make_amoeba(extract_contours(field))
    assert compatibility_report(G, xi) == {
        "realizable": True,
        "plus_covered": True,
        "internals_plus": True,
        "component_clear": True,
    }
    assert is_compatible(G, xi)
    bare = Amoeba(G.exterior, ())
    report = compatibility_report(bare, xi)
    assert not report["plus_covered"] and report["realizable"]
    assert not is_compatible(bare, xi)


def test_compatibility_unrealizable():
    field = SpinField.from_sites(6, block(-2, 2), Boundary.plus())
    (G,) = group_amoebas(extract_contours(field))
    xi = pattern("all-plus", 6)
    assert not compatibility_report(G, xi)["realizable"]


def test_compatibility_outside_window_raises():
    field = SpinField.from_sites(8, block(-7, 7), Boundary.plus())
    (G,) = group_amoebas(extract_contours(field))
    with pytest.raises(ValueError):
        is_compatible(G, pattern("all-minus", 4))


def test_benign_examples():
    field = SpinField.from_sites(4, [(0, 0), (1, 0), (0, 1)], Boundary.plus())
    xi = constraint_of(field)
    (G,) = group_amoebas(extract_contours(field))
    assert G.size == 8
    assert is_benign(G, xi, 0.25)
    assert not is_benign(G, xi, 0.1)
    with pytest.raises(ValueError):
        is_benign(G, pattern("all-plus", 4), 0.25)


def test_benign_plus_interior():
    field = annulus_field(outer=3, inner=2)
    xi = constraint_of(field)
    G = make_amoeba(extract_contours(field))
    if is_compatible(G, xi):
        assert is_benign(G, xi, 1e-6) == (len(set(G.interior) & {s for s, v in xi.xi.items() if v == -1}) == 0)


def test_benign_monotone_in_lambda():
    field = SpinField.from_sites(6, block(-2, 2), Boundary.plus())
    xi = constraint_of(field)
    (G,) = group_amoebas(extract_contours(field))
    flags = [is_benign(G, xi, lam) for lam in np.linspace(0.01, 0.49, 25)]
    assert flags == sorted(flags)
    # 9 even minuses inside a loop of length 20: benign iff lambda >= 0.45
    assert not flags[0] and flags[-1]
    assert is_benign(G, xi, 0.45) and not is_benign(G, xi, 0.44)


# quenched length ----------------------------------------------------------


def brute_quenched_boxes(xi: EvenConstraint, i, lam):
    """Exhaustive scan of every image square through i, written with plain loops."""
    n = xi.window.n // 2
    worst, full_bad = None, False
    for side in range(1, 2 * n + 2):
        for x0 in range(-n, n - side + 2):
            for y0 in range(-n, n - side + 2):
                if not (x0 <= i[0] < x0 + side and y0 <= i[1] < y0 + side):
                    continue
                count = 0
                for a in range(x0, x0 + side):
                    for b in range(y0, y0 + side):
                        count += xi[to_original((a, b))] == -1
                if count > lam * side * side:
                    worst = side - 1 if worst is None else max(worst, side - 1)
                    full_bad = full_bad or side == 2 * n + 1
    if full_bad:
        return None
    return 0 if worst is None else worst


def random_constraint(rng, n, p):
    win = Box(n)
    return EvenConstraint({s: (-1 if rng.random() < p else 1) for s in win.even_sites()}, win)


def test_quenched_examples():
    assert quenched_length(pattern("all-plus", 8), (0, 0)).value == 0
    q = quenched_length(pattern("all-minus", 8), (0, 0), 0.3)
    assert q.infinite and str(q) == "inf"
    q = quenched_length(pattern("all-minus", 8), (0, 0), 0.3, family="saw", max_len=4)
    assert q.infinite


def test_quenched_three_by_three_block():
    xi = EvenConstraint.from_image({(a, b): -1 for a in (-1, 0, 1) for b in (-1, 0, 1)}, 8)
    q = quenched_length(xi, (0, 0), 0.3)
    assert q.value == brute_quenched_boxes(xi, (0, 0), 0.3)
    assert not q.infinite and q.value == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.6), st.sampled_from([0.1, 0.25, 0.4]))
def test_quenched_boxes_matches_brute_force(seed, p, lam):
    rng = np.random.default_rng(seed)
    xi = random_constraint(rng, 8, p)
    i = tuple(int(v) for v in rng.integers(-4, 5, size=2))
    q = quenched_length(xi, i, lam)
    ref = brute_quenched_boxes(xi, i, lam)
    assert (q.infinite and ref is None) or q.value == ref


def test_quenched_monotone_in_lambda_and_D():
    rng = np.random.default_rng(8)
    for _ in range(30):
        xi = random_constraint(rng, 8, rng.uniform(0.05, 0.5))
        i = tuple(int(v) for v in rng.integers(-4, 5, size=2))
        as_num = lambda q: math.inf if q.infinite else q.value  # noqa: E731
        vals = [as_num(quenched_length(xi, i, lam)) for lam in (0.1, 0.2, 0.3, 0.45)]
        assert vals == sorted(vals, reverse=True)
        plus_sites = [s for s, v in xi.xi.items() if v == 1]
        if plus_sites:
            s = plus_sites[rng.integers(len(plus_sites))]
            more = EvenConstraint({**xi.xi, s: -1}, xi.window)
            assert as_num(quenched_length(more, i, 0.25)) >= as_num(quenched_length(xi, i, 0.25))


def test_quenched_saw_family():
    xi = EvenConstraint.from_image({(0, 0): -1, (1, 0): -1}, 8)
    assert quenched_length(xi, (0, 0), 0.25).value == 1
    # a k-site path through both minuses violates iff 2 > k / 4, i.e. k <= 7 sites (6 steps)
    assert quenched_length(xi, (0, 0), 0.25, family="saw", max_len=6).infinite
    # with 8 steps the violators are short; image coordinates stop at 4, so the widest spans 4
    q = quenched_length(xi, (0, 0), 0.25, family="saw", max_len=8)
    assert q.value == 4 and not q.infinite
    with pytest.raises(ValueError):
        quenched_length(xi, (0, 0), family="saw", max_len=17)
    with pytest.raises(ValueError):
        quenched_length(xi, (9, 0))


# path large deviation -----------------------------------------------------


def test_pld_examples():
    plus = SpinField.constant(3, 1)
    minus = SpinField.constant(3, -1, Boundary.plus())
    for mode, kw in (("walks", {}), ("saw", {"max_len": 6})):
        assert pld_statistic(plus, 1.0, mode, **kw) == 0.0
        assert pld_statistic(minus, 1.0, mode, **kw) == 2.0
    with pytest.raises(ValueError):
        pld_statistic(SpinField.constant(3, 1, Boundary.minus()), 1.0)
    with pytest.raises(ValueError):
        pld_statistic(plus, 1.0, "saw", max_len=20)


def brute_saw_deficit(field, mstar, max_len):
    """Depth-first enumeration of self-avoiding paths from the origin to the box edge."""
    box = field.box
    best = -math.inf

    def rec(path, seen):
        nonlocal best
        end = path[-1]
        if len(path) > 1 and (abs(end[0]) == box.n or abs(end[1]) == box.n):
            best = max(best, mstar - sum(field[p] for p in path) / len(path))
        if len(path) - 1 == max_len:
            return
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = (end[0] + d[0], end[1] + d[1])
            if t in box and t not in seen:
                seen.add(t)
                path.append(t)
                rec(path, seen)
                path.pop()
                seen.discard(t)

    rec([(0, 0)], {(0, 0)})
    return best


def test_pld_saw_matches_brute_and_is_dominated():
    rng = np.random.default_rng(11)
    for _ in range(3):
        field = SpinField(Box(3), rng.choice([-1, 1], size=(7, 7)), Boundary.plus())
        saw = pld_statistic(field, 0.9, "saw", max_len=12)
        assert saw == pytest.approx(brute_saw_deficit(field, 0.9, 12), abs=1e-12)
        assert pld_statistic(field, 0.9, "walks") >= saw - 1e-12


# census -------------------------------------------------------------------


def test_census_all_plus_trivially_benign():
    fields = [SpinField.from_sites(8, [(1, 1)], Boundary.plus()), SpinField.from_sites(8, [(3, 0), (3, 1)], Boundary.plus())]
    rows = amoeba_census(fields, 0.25)
    assert sum(r.compatible for r in rows) > 0
    assert all(r.benign == r.compatible for r in rows)


def test_census_malignant_fixture():
    field = SpinField.from_sites(8, block(-3, 3), Boundary.plus())
    rows = amoeba_census([field], 0.25)
    (row,) = [r for r in rows if r.compatible]
    assert row.lo == 4 and row.fraction == 0.0
    assert all(math.isnan(r.fraction) for r in rows if r is not row)


def _census_samples(beta, seed, n_samples=40):
    box = Box(16)
    cfg = ChainConfig(IsingParams(beta), box, Boundary.plus(), seed=seed, sweeps=200 + 10 * n_samples, burn_in=200, thin=10)
    out = []
    for snaps in iter_snapshots(cfg):
        out.extend(SpinField(box, s[1:-1, 1:-1], Boundary.plus()) for s in snaps)
    return out


def test_census_beta_trend():
    # on a 33x33 plus box, beta 2.0 has no contours and beta 0.8 none of diam >= 8: NaN is vacuous
    hot = amoeba_census(_census_samples(0.8, 1), 0.25, bins=(0, 8))
    cold = amoeba_census(_census_samples(2.0, 2), 0.25, bins=(0, 8))
    big_hot, big_cold = hot[-1].fraction, cold[-1].fraction
    assert math.isnan(big_cold) or math.isnan(big_hot) or big_cold >= big_hot


def test_census_beta_trend_populated():
    hot = amoeba_census(_census_samples(0.45, 3, 100), 0.25, bins=(0, 4))
    warm = amoeba_census(_census_samples(0.6, 3, 100), 0.25, bins=(0, 4))
    assert hot[-1].compatible > 0 and warm[-1].compatible > 0
    assert hot[-1].benign < hot[-1].compatible
    assert warm[-1].fraction >= hot[-1].fraction
