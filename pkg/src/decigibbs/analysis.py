"""Experiment drivers and estimators built on the lower modules.

Probe of the essential discontinuity, contour tails, Peierls occurrence
checks, the quenched-decay pipeline, boundary sandwich and plug-in entropy
estimators. Every driver takes an explicit seed and returns plain records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .amoeba import DEFAULT_LAMBDA, QuenchedLength, quenched_length
from .decimation import EvenConstraint, decimate, decimated_kernel_estimate, pattern, window_from_side
from .lattice import Boundary, Box, Site, SpinField, contours_from_padded, l1
from .potential import MCTerm, QCDFit, derive_seed, qcd_fit, telescoped_term_mc
from .sampler import ChainConfig, Estimate, iter_snapshots, sample_chain, spin_at
from .spec_engine import IsingParams, KernelTable, contour_occurrence

GAP_Z = 5.0
ENTROPY_BLOCK_CAP = 4


# --------------------------------------------------------------------------
# discontinuity probe


@dataclass(frozen=True)
class ProbeRow:
    window: int
    bc: str
    p_plus: float
    stderr: float


@dataclass(frozen=True)
class ProbeResult:
    beta: float
    pattern: str
    windows: tuple[int, ...]
    rows: tuple[ProbeRow, ...]
    gaps: tuple[float, ...]
    gap_stderr: tuple[float, ...]
    z: float = GAP_Z

    def significant(self) -> tuple[bool, ...]:
        return tuple(g > self.z * s for g, s in zip(self.gaps, self.gap_stderr))

    def z_scores(self) -> tuple[float, ...]:
        return tuple(g / s if s > 0 else (math.inf if g > 0 else 0.0) for g, s in zip(self.gaps, self.gap_stderr))


def probe_discontinuity(
    beta: float,
    pattern_name: str = "alternating",
    windows: Sequence[int] = (16, 32, 48),
    seed: int = 0,
    sweeps: int = 20000,
    burn_in: int = 2000,
    z: float = GAP_Z,
    source: SpinField | None = None,
) -> ProbeResult:
    """P(sigma'_0 = +1) under the constrained system with plus and minus rings.

    Windows are quoted by side length; the origin's even site is released and
    every other even site carries the pattern.
    """
    params = IsingParams(beta)
    rows, gaps, ses = [], [], []
    for w_idx, side in enumerate(windows):
        xi = pattern(pattern_name, window_from_side(side), source)
        est: dict[str, Estimate] = {}
        for b_idx, bc in enumerate((Boundary.plus(), Boundary.minus())):
            table = decimated_kernel_estimate(
                [(0, 0)], xi, params, bc, derive_seed(seed, side, b_idx), sweeps, burn_in
            )
            e = table.p_plus((0, 0))
            est[bc.token] = e
            rows.append(ProbeRow(side, bc.token, e.mean, e.stderr))
        gaps.append(est["+"].mean - est["-"].mean)
        ses.append(math.hypot(est["+"].stderr, est["-"].stderr))
    return ProbeResult(float(beta), pattern_name, tuple(windows), tuple(rows), tuple(gaps), tuple(ses), z)


# --------------------------------------------------------------------------
# boundary sandwich


@dataclass(frozen=True)
class Sandwich:
    plus: Estimate
    minus: Estimate

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.plus.stderr, self.minus.stderr)

    def ordered(self, z: float = GAP_Z) -> bool:
        """<sigma_0>^- <= <sigma_0>^+ up to z combined standard errors."""
        return self.minus.mean <= self.plus.mean + z * self.combined_stderr


def boundary_sandwich(beta: float, half_width: int, seed: int = 0, sweeps: int = 8192, burn_in: int = 1024) -> Sandwich:
    """Magnetization at the origin under plus and minus rings on the same box."""
    box = Box(half_width)
    params = IsingParams(beta)
    out = {}
    for k, bc in enumerate((Boundary.plus(), Boundary.minus())):
        cfg = ChainConfig(params, box, bc, seed=derive_seed(seed, k), sweeps=sweeps, burn_in=burn_in)
        out[bc.token] = sample_chain(cfg, [spin_at(box, (0, 0), "s0")]).estimates()["s0"]
    return Sandwich(out["+"], out["-"])


# --------------------------------------------------------------------------
# Peierls occurrence


@dataclass(frozen=True)
class PeierlsRow:
    length: int
    beta: float
    probability: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.probability <= self.bound * (1 + 1e-12)


def peierls_check(side: int = 4, betas: Sequence[float] = (0.5, 1.0)) -> list[PeierlsRow]:
    """Exact occurrence probability of every realizable contour against exp(-2 beta |gamma|)."""
    occ = contour_occurrence(side, side, betas)
    rows = []
    for c, probs in occ.items():
        for beta, p in zip(betas, probs):
            rows.append(PeierlsRow(c.length, float(beta), float(p), math.exp(-2.0 * beta * c.length)))
    return rows


# --------------------------------------------------------------------------
# contour tails


def origin_contour_diam(pad: np.ndarray, origin: Sequence[int]) -> int:
    """diam of the outermost contour surrounding site (0, 0), 0 when there is none."""
    best = 0
    for c in contours_from_padded(pad, origin):
        if c.surrounds((0, 0)):
            best = max(best, c.diam)
    return best


@dataclass(frozen=True)
class ContourTail:
    L: tuple[int, ...]
    freq: tuple[float, ...]
    n_samples: int
    beta: float
    c: float | None
    c_stderr: float | None
    status: str


def contour_tail(diams: Sequence[int], beta: float, L_max: int | None = None, l0: int = 0) -> ContourTail:
    """Empirical P(diam(Theta_0) > L) and a weighted fit of ln P = a - c beta L over L > l0.

    Weights are n p / (1 - p), the inverse delta-method variance of ln p.
    """
    d = np.asarray(diams, dtype=np.int64)
    if d.size < 100:
        raise ValueError("contour tail needs at least 100 samples")
    top = int(d.max()) if L_max is None else int(L_max)
    Ls = tuple(range(0, top + 1))
    freq = tuple(float(np.mean(d > L)) for L in Ls)
    if beta == 0:
        return ContourTail(Ls, freq, int(d.size), beta, None, None, "refused: beta = 0")
    pts = [(L, p) for L, p in zip(Ls, freq) if L > l0 and 0 < p < 1]
    if len(pts) < 2:
        return ContourTail(Ls, freq, int(d.size), beta, None, None, "insufficient nonzero tail points")
    x = np.array([L for L, _ in pts], dtype=np.float64)
    p = np.array([q for _, q in pts])
    w = d.size * p / (1 - p)
    A = np.stack([np.ones_like(x), x], axis=1)
    Aw = A * np.sqrt(w)[:, None]
    yw = np.log(p) * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    cov = np.linalg.inv(Aw.T @ Aw)
    c = -float(coef[1]) / beta
    return ContourTail(Ls, freq, int(d.size), beta, c, math.sqrt(cov[1, 1]) / beta, "fitted")


def sample_origin_diams(cfg: ChainConfig) -> list[int]:
    """diam(Theta_0) at every retained sweep of a chain."""
    origin = (-cfg.box.n - 1, -cfg.box.n - 1)
    out = []
    for block in iter_snapshots(cfg):
        out.extend(origin_contour_diam(s, origin) for s in block)
    return out


# --------------------------------------------------------------------------
# entropy


@dataclass(frozen=True)
class EntropyEstimate:
    k: int
    value: float
    n_samples: int
    n_blocks: int


def _block_codes(samples: np.ndarray, k: int) -> np.ndarray:
    """Integer code of every k x k block, over all translations of every sample."""
    if not 1 <= k <= ENTROPY_BLOCK_CAP:
        raise ValueError(f"block size must be in 1..{ENTROPY_BLOCK_CAP}")
    x = np.asarray(samples)
    if x.ndim == 2:
        x = x[None]
    n, H, W = x.shape
    if k > H or k > W:
        raise ValueError("block larger than the samples")
    bits = (x > 0).astype(np.int64)
    codes = np.zeros((n, H - k + 1, W - k + 1), dtype=np.int64)
    b = 0
    for a in range(k):
        for c in range(k):
            codes |= bits[:, a : a + H - k + 1, c : c + W - k + 1] << b
            b += 1
    return codes.ravel()


def _n_samples(samples) -> int:
    x = np.asarray(samples)
    return 1 if x.ndim == 2 else int(x.shape[0])


def ks_entropy(samples, k: int) -> EntropyEstimate:
    """Plug-in entropy of k x k blocks divided by k^2."""
    codes = _block_codes(samples, k)
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    h = float(-(p * np.log(p)).sum()) / (k * k)
    return EntropyEstimate(k, h + 0.0, _n_samples(samples), int(codes.size))


def relative_entropy_density(mu_samples, nu_samples, k: int) -> EntropyEstimate:
    """Plug-in sum mu log(mu / nu) over k x k blocks, divided by k^2.

    Both histograms get one pseudo-count on every block seen in either sample,
    so both are proper laws on a common support and the estimate is >= 0.
    """
    a = _block_codes(mu_samples, k)
    b = _block_codes(nu_samples, k)
    support = np.union1d(a, b)
    ca = np.bincount(np.searchsorted(support, a), minlength=support.size) + 1.0
    cb = np.bincount(np.searchsorted(support, b), minlength=support.size) + 1.0
    pa = ca / ca.sum()
    pb = cb / cb.sum()
    d = float((pa * (np.log(pa) - np.log(pb))).sum()) / (k * k)
    return EntropyEstimate(k, max(d, 0.0), _n_samples(mu_samples), int(a.size))


def exact_entropy(table: KernelTable) -> float:
    """Entropy of an exact kernel per site."""
    p = table.probs
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) / len(table.sites)


# --------------------------------------------------------------------------
# quenched decay pipeline


@dataclass(frozen=True)
class QCDRow:
    field_index: int
    site: Site
    quenched: QuenchedLength
    terms: tuple[MCTerm, ...]
    fit: QCDFit | None
    status: str


def plus_phase_image(beta: float, image_half: int, seed: int, sweeps: int = 2048) -> SpinField:
    """Final state of a plus-ring chain on the doubled box, decimated."""
    box = Box(2 * image_half)
    cfg = ChainConfig(IsingParams(beta), box, Boundary.plus(), seed=seed, sweeps=sweeps, burn_in=sweeps - 1)
    last = None
    for block in iter_snapshots(cfg):
        last = block[-1]
    field_ = SpinField(box, last[1:-1, 1:-1], Boundary.plus())
    return decimate(field_)


def anchor_site(image: SpinField) -> Site:
    """Minus site nearest the origin (L1, then lexicographic); the origin when there is none."""
    minus = [s for s in image.box if image[s] < 0]
    if not minus:
        return Site(0, 0)
    return min(minus, key=lambda s: (l1(s, (0, 0)), s))


def qcd_for_field(
    image: SpinField,
    params: IsingParams,
    mmax: int,
    lam: float,
    window: int,
    seed: int,
    sweeps: int,
    burn_in: int,
    field_index: int = 0,
    site: Site | None = None,
) -> QCDRow:
    i = anchor_site(image) if site is None else Site(*site)
    omega = image.as_dict()
    xi = EvenConstraint.from_image(lambda k: omega.get(k, 1), 2 * image.box.n)
    ql = quenched_length(xi, i, lam, "boxes")
    terms = tuple(
        telescoped_term_mc(i, m, omega, params, window, derive_seed(seed, field_index, m), sweeps, burn_in)
        for m in range(1, mmax + 1)
    )
    if ql.infinite:
        return QCDRow(field_index, i, ql, terms, None, "quenched length infinite within window")
    try:
        fit = qcd_fit([(t.m, t.value) for t in terms], ql.value)
        status = fit.status
    except ValueError as exc:
        fit, status = None, str(exc)
    return QCDRow(field_index, i, ql, terms, fit, status)


def qcd_pipeline(
    beta: float,
    n_fields: int,
    mmax: int,
    lam: float = DEFAULT_LAMBDA,
    seed: int = 0,
    image_half: int = 12,
    proxy_sweeps: int = 2048,
    sweeps: int = 4096,
    burn_in: int = 512,
) -> list[QCDRow]:
    """Per-field evidence table: plus-phase proxy, decimation, quenched length, MC terms, fit.

    The MC window is the doubled image box, so the telescoping sets up to
    ``mmax`` must fit inside it.
    """
    params = IsingParams(beta)
    window = 2 * image_half
    rows = []
    for f in range(n_fields):
        image = plus_phase_image(beta, image_half, derive_seed(seed, f, -1), proxy_sweeps)
        rows.append(qcd_for_field(image, params, mmax, lam, window, seed, sweeps, burn_in, f))
    return rows


def planted_terms(lam: float, C2: float = 1.0, ms: Iterable[int] = range(1, 13)) -> list[tuple[int, float]]:
    """Synthetic C2 m exp(-lam m) terms for checking the fit."""
    return [(m, C2 * m * math.exp(-lam * m)) for m in ms]
