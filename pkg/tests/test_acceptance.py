"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds are the contract values; a failing criterion is reported and
asserted, never relaxed.
"""
from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest
from conftest import fast_cli_cases, manifest_for
from test_amoeba import brute_quenched_boxes, random_constraint

from decigibbs.analysis import (
    boundary_sandwich,
    ks_entropy,
    peierls_check,
    planted_terms,
    probe_discontinuity,
    qcd_pipeline,
    relative_entropy_density,
)
from decigibbs.cli import main
from decigibbs.lattice import Boundary, Box, Site, exterior_neighbors
from decigibbs.potential import (
    IsingSource,
    SetFunction,
    TelescopedPotential,
    free_hamiltonian,
    moebius_invert,
    qcd_fit,
    vacuum_potential,
    zeta,
)
from decigibbs.amoeba import quenched_length
from decigibbs.sampler import ChainConfig, FrozenMask, config_index, iter_snapshots, sample_chain
from decigibbs.spec_engine import IsingParams, kernel_compose, kernel_exact, keybar_residual

BLOCK16 = [Site(x, y) for x in range(4) for y in range(4)]


def random_volume(rng, k):
    """k sites of the 4x4 block, grown from a random seed site so the set is connected."""
    start = BLOCK16[rng.integers(16)]
    chosen = [start]
    while len(chosen) < k:
        frontier = sorted({t for s in chosen for t in exterior_neighbors([s]) if t in BLOCK16 and t not in chosen})
        chosen.append(frontier[rng.integers(len(frontier))])
    return sorted(chosen)


def random_ring(rng, sites):
    return Boundary.fixed({s: int(rng.choice([-1, 1])) for s in exterior_neighbors(sites)})


def test_criterion_01_dlr_consistency(report):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        outer = random_volume(rng, int(rng.integers(2, 17)))
        inner = [s for s in outer if rng.random() < 0.5] or [outer[0]]
        worst = max(worst, kernel_compose(outer, inner, random_ring(rng, outer), IsingParams(rng.uniform(0.1, 2.0))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and elapsed < 30
    assert report(1, ok, f"max deviation {worst:.2e} over 100 instances in {elapsed:.1f}s")


def test_criterion_02_keybar(report):
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        outer = random_volume(rng, int(rng.integers(2, 9)))
        inner = [s for s in outer if rng.random() < 0.5] or [outer[0]]
        tau = {s: int(rng.choice([-1, 1])) for s in outer}
        a = {s: int(rng.choice([-1, 1])) for s in inner}
        b = {s: int(rng.choice([-1, 1])) for s in inner}
        params = IsingParams(rng.uniform(0.1, 2.0), rng.uniform(-0.5, 0.5))
        worst = max(worst, keybar_residual(inner, outer, a, b, tau, random_ring(rng, outer), params))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and elapsed < 60
    assert report(2, ok, f"max residual {worst:.2e} over 1000 instances in {elapsed:.1f}s")


def test_criterion_03_moebius_and_vacuum(report):
    rng = np.random.default_rng(103)
    worst_rt = 0.0
    for n in range(11):
        for _ in range(5):
            vals = rng.normal(size=1 << n)
            vals[0] = 0.0
            H = SetFunction(tuple(range(n)), vals)
            worst_rt = max(worst_rt, float(np.max(np.abs(zeta(moebius_invert(H)).values - vals))))
    source = IsingSource(IsingParams(0.7))
    worst_vac, checked = 0.0, 0
    for _ in range(200):
        k = int(rng.integers(1, 7))
        A = [Site(*p) for p in {(int(x), int(y)) for x, y in rng.integers(-2, 3, size=(k, 2))}]
        sigma = {s: int(rng.choice([-1, 1])) for s in Box(3)}
        sigma[A[rng.integers(len(A))]] = 1
        worst_vac = max(worst_vac, abs(vacuum_potential(A, sigma, source)))
        checked += 1
    ok = worst_rt < 1e-12 and worst_vac < 1e-10
    assert report(3, ok, f"round trip {worst_rt:.1e} (|A|<=10), vacuum {worst_vac:.1e} over {checked} sets (|A|<=6)")


def test_criterion_04_conservation(report):
    rng = np.random.default_rng(104)
    source = IsingSource(IsingParams(0.8))
    psi = TelescopedPotential(source)
    worst = 0.0
    for _ in range(50):
        sigma = {s: int(rng.choice([-1, 1])) for s in Box(1)}
        worst = max(worst, abs(psi.conservation_sum(Box(1), sigma) - free_hamiltonian(Box(1), sigma, source)))
    assert report(4, worst < 1e-9, f"max error {worst:.2e} over 50 configurations of a 3x3 volume")


def test_criterion_05_peierls(report):
    start = time.perf_counter()
    rows = peierls_check(4, (0.5, 1.0))
    elapsed = time.perf_counter() - start
    bad = [r for r in rows if not r.ok]
    worst = max(r.probability / r.bound for r in rows)
    ok = not bad and elapsed < 300
    assert report(5, ok, f"{len(rows) // 2} contours x 2 betas, worst P/bound {worst:.3f}, {elapsed:.1f}s")


def _tv(series, probs):
    emp = np.bincount(series.astype(np.int64), minlength=probs.size) / series.size
    return 0.5 * float(np.abs(emp - probs).sum())


@pytest.mark.slow
def test_criterion_06_sampler_law(report):
    block = [Site(0, 0), Site(0, 1), Site(1, 0), Site(1, 1)]
    box = Box(1)
    tvs = []
    for k, beta in enumerate((0.3, 0.8)):
        exact = kernel_exact(block, Boundary.plus(), IsingParams(beta))
        mask = FrozenMask.of({s: 1 for s in box if s not in block})
        cfg = ChainConfig(IsingParams(beta), box, Boundary.plus(), mask, 600 + k, 1_000_000, 1000)
        tvs.append(_tv(sample_chain(cfg, [config_index(box, block)]).series["config"], exact.probs))
    frozen = {Site(-1, -1): -1, Site(0, 0): 1, Site(1, 0): -1, Site(1, 1): 1}
    free = [s for s in box if s not in frozen]
    ring = {s: 1 for s in exterior_neighbors(free) if s not in frozen}
    exact = kernel_exact(free, Boundary.fixed({**ring, **frozen}), IsingParams(0.8))
    cfg = ChainConfig(IsingParams(0.8), box, Boundary.plus(), FrozenMask.of(frozen), 606, 1_000_000, 1000)
    tvs.append(_tv(sample_chain(cfg, [config_index(box, free)]).series["config"], exact.probs))
    ok = all(t < 0.01 for t in tvs)
    assert report(6, ok, "TV 2x2 b=0.3 {:.4f}, b=0.8 {:.4f}, frozen mask {:.4f} (10^6 sweeps)".format(*tvs))


def test_criterion_07_domination(report):
    parts, ok = [], True
    for k, beta in enumerate((0.5, 1.0)):
        s = boundary_sandwich(beta, 8, seed=700 + k, sweeps=40000, burn_in=2000)
        ok = ok and s.ordered(5.0)
        parts.append(f"b={beta}: minus {s.minus.mean:+.4f} plus {s.plus.mean:+.4f}")
    assert report(7, ok, "; ".join(parts) + " on Box(8)")


@pytest.mark.slow
def test_criterion_08_discontinuity(report):
    start = time.perf_counter()
    alt = probe_discontinuity(1.0, "alternating", (16, 32, 48), seed=801)
    plus = probe_discontinuity(1.0, "all-plus", (16, 32, 48), seed=802)
    elapsed = time.perf_counter() - start
    alt_ok = all(alt.significant())
    plus_ok = plus.gaps[-1] <= plus.gaps[0] or plus.gaps[-1] < 3 * plus.gap_stderr[-1]
    ordered = all(
        p <= a + 5 * math.hypot(sp, sa) for p, a, sp, sa in zip(plus.gaps, alt.gaps, plus.gap_stderr, alt.gap_stderr)
    )
    ok = alt_ok and plus_ok and ordered and elapsed <= 900
    z = ", ".join(f"{v:.1f}" for v in alt.z_scores())
    pz = ", ".join(f"{v:.1f}" for v in plus.z_scores())
    assert report(8, ok, f"alternating z = [{z}], all-plus z = [{pz}], {elapsed:.0f}s")


def test_criterion_09_quenched_oracle(report):
    rng = np.random.default_rng(109)
    mismatches, checks = 0, 0
    for _ in range(50):
        xi = random_constraint(rng, 8, rng.uniform(0.05, 0.6))
        lam = float(rng.choice([0.1, 0.25, 0.4]))
        sites = [(0, 0), tuple(int(v) for v in rng.integers(-4, 5, size=2))]
        for i in sites:
            q = quenched_length(xi, i, lam, "boxes")
            ref = brute_quenched_boxes(xi, i, lam)
            mismatches += not ((q.infinite and ref is None) or (not q.infinite and q.value == ref))
            checks += 1
    assert report(9, mismatches == 0, f"{checks - mismatches}/{checks} agree on 50 random 16x16 constraints")


@pytest.mark.slow
def test_criterion_10_qcd(report):
    start = time.perf_counter()
    rows = qcd_pipeline(1.2, 5, 8, seed=1010)
    elapsed = time.perf_counter() - start
    n_sig = sum(1 for r in rows if r.fit is not None and r.fit.significant and r.fit.lam > 0)
    planted = qcd_fit(planted_terms(0.3), 0)
    planted_ok = abs(planted.lam - 0.3) < 1e-3
    statuses = sorted({r.status for r in rows})
    ok = n_sig >= 4 and planted_ok and elapsed <= 1800
    detail = f"{n_sig}/5 fields with lambda > 0 at 2 sigma ({'; '.join(statuses)}), planted 0.3 -> {planted.lam:.6f}, {elapsed:.0f}s"
    assert report(10, ok, detail)


def test_criterion_11_entropy(report):
    box = Box(8)
    cfg = ChainConfig(IsingParams(0.0), box, Boundary.plus(), seed=1101, sweeps=1100, burn_in=100)
    x = np.concatenate([b[:, 1:-1, 1:-1] for b in iter_snapshots(cfg)])
    h0 = ks_entropy(x, 1).value
    same = relative_entropy_density(x, x.copy(), 2).value
    rng = np.random.default_rng(1102)
    mu = np.where(rng.random((200, 50, 50)) < 0.5, 1, -1)
    nu = np.where(rng.random((200, 50, 50)) < 0.9, 1, -1)
    kl = relative_entropy_density(mu, nu, 1).value
    ok = abs(h0 - math.log(2)) <= 0.01 and same == 0.0 and abs(kl - 0.5108) <= 0.005
    assert report(11, ok, f"beta=0 entropy {h0:.4f} (ln2 {math.log(2):.4f}), identical {same}, Bernoulli KL {kl:.4f}")


def test_criterion_12_replay(tmp_path, report, capsys):
    results = []
    for name, argv in fast_cli_cases(tmp_path):
        code = main(argv)
        manifest = manifest_for(argv)
        outputs = json.loads(manifest.read_text())["outputs"] if code == 0 else {}
        capsys.readouterr()
        rc = main(["replay", str(manifest)]) if code == 0 else 1
        text = capsys.readouterr().out
        results.append((name, code == 0 and rc == 0 and bool(outputs) and "DIFFERS" not in text))
    bad = [n for n, good in results if not good]
    assert report(12, not bad, f"{len(results) - len(bad)}/{len(results)} subcommand manifests replay byte-identical" + (f"; failing: {bad}" if bad else ""))


@pytest.fixture(autouse=True)
def _show(capsys):
    # keep the per-criterion line visible even when the output is captured
    yield
    out = capsys.readouterr().out
    if out:
        with capsys.disabled():
            print(out, end="")
