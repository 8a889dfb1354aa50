"""Decimation to the even sublattice and the constrained systems it induces.

Image coordinates ``i`` correspond to original sites ``2i``; every translation
between the two lives here. A *window* is a centred original-lattice box of
even half-width, so its exterior ring consists of odd sites only and the even
constraint is defined on the whole window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .lattice import Box, Boundary, Site, SpinField, exterior_neighbors
from .sampler import ChainConfig, Estimate, FrozenMask, Observable, batch_means, config_index, sample_chain
from .spec_engine import IsingParams, KernelTable, is_increasing, kernel_exact, site_tuple

IMAGE_CAP = 4


def to_original(i: Sequence[int]) -> Site:
    return Site(2 * i[0], 2 * i[1])


def to_image(s: Sequence[int]) -> Site:
    if s[0] % 2 or s[1] % 2:
        raise ValueError(f"{tuple(s)} is not an even site")
    return Site(s[0] // 2, s[1] // 2)


def window_box(half_width: int) -> Box:
    if half_width % 2:
        raise ValueError("window half-width must be even")
    return Box(half_width)


def window_from_side(side: int) -> int:
    """Half-width of the window quoted by its side length (16 -> 8)."""
    if side % 4:
        raise ValueError("window side must be a multiple of 4")
    return side // 2


@dataclass(frozen=True)
class EvenConstraint:
    """Values xi on every even site of a window."""

    xi: Mapping[Site, int]
    window: Box

    def __post_init__(self):
        if self.window.n % 2:
            raise ValueError("window half-width must be even")
        for s in self.window.even_sites():
            if self.xi.get(s) not in (-1, 1):
                raise ValueError(f"constraint missing at even site {tuple(s)}")

    def __getitem__(self, s) -> int:
        return self.xi[Site(*s)]

    @classmethod
    def from_image(cls, values: Callable[[Site], int] | Mapping, half_width: int, default: int = 1) -> "EvenConstraint":
        """Build xi_{2i} = values(i); a mapping falls back to ``default`` off its keys."""
        box = window_box(half_width)
        if callable(values):
            get = values
        else:
            vals = {Site(*k): int(v) for k, v in values.items()}
            get = lambda i: vals.get(i, default)  # noqa: E731
        return cls({s: int(get(to_image(s))) for s in box.even_sites()}, box)

    def image_field(self) -> SpinField:
        n = self.window.n // 2
        box = Box(n)
        arr = np.ones((box.side, box.side), dtype=np.int8)
        for i in box:
            arr[box.index(i)] = self.xi[to_original(i)]
        return SpinField(box, arr, Boundary.plus())

    def mask(self, release: Sequence[Site] = ()) -> FrozenMask:
        rel = {Site(*s) for s in release}
        return FrozenMask({s: v for s, v in self.xi.items() if s not in rel})


def pattern(name: str, half_width: int, source: SpinField | None = None) -> EvenConstraint:
    """Standard image patterns: ``alternating``, ``all-plus``, ``all-minus`` or ``file``."""
    if name == "alternating":
        return EvenConstraint.from_image(lambda i: -1 if (i[0] + i[1]) % 2 else 1, half_width)
    if name in ("all-plus", "plus"):
        return EvenConstraint.from_image(lambda i: 1, half_width)
    if name in ("all-minus", "minus"):
        return EvenConstraint.from_image(lambda i: -1, half_width)
    if name == "file":
        if source is None:
            raise ValueError("file pattern needs a field")
        # image sites outside the file's box read its boundary (plus/minus) value
        def get(i):
            if i in source.box:
                return source[i]
            v = source.boundary.value(i)
            return v if v else 1

        return EvenConstraint.from_image(get, half_width)
    raise ValueError(f"unknown pattern {name!r}")


@dataclass(frozen=True)
class SparsenessSet:
    D: frozenset

    def __len__(self) -> int:
        return len(self.D)

    def __contains__(self, s) -> bool:
        return Site(*s) in self.D


def sparseness(xi: EvenConstraint) -> SparsenessSet:
    return SparsenessSet(frozenset(s for s, v in xi.xi.items() if v == -1))


def decimate(field: SpinField) -> SpinField:
    """omega'_i = omega_{2i}. A fixed exterior has no decimated counterpart and becomes free."""
    n2 = field.box.n
    if n2 % 2:
        raise ValueError("source box half-width must be even")
    box = Box(n2 // 2)
    arr = field.values[:: 2, :: 2]
    if arr.shape != (box.side, box.side):
        raise ValueError("size mismatch")
    bd = field.boundary if field.boundary.kind != "fixed" else Boundary.free()
    return SpinField(box, arr, bd)


def embed(image: SpinField, fill: int = 1) -> SpinField:
    """Place omega' on the even sites of the doubled box; odd sites get ``fill``."""
    box = Box(2 * image.box.n)
    arr = np.full((box.side, box.side), fill, dtype=np.int8)
    arr[::2, ::2] = image.values
    bd = image.boundary if image.boundary.kind != "fixed" else Boundary.free()
    return SpinField(box, arr, bd)


# --------------------------------------------------------------------------
# exact constrained kernels


def constrained_kernel(delta, S, omega: Boundary, params: IsingParams) -> KernelTable:
    """Exact kernel on the free part of ``delta`` (its sites in ``S``); everything else reads ``omega``."""
    S = {Site(*s) for s in S}
    free = [s for s in site_tuple(delta) if s in S]
    return kernel_exact(free, omega, params)


def _table_under(sites_outer, boundary, params, f_sites, f_table) -> float:
    table = kernel_exact(sites_outer, boundary, params)
    n = len(sites_outer)
    idx = np.arange(1 << n, dtype=np.int64)
    sub = np.zeros_like(idx)
    for j, s in enumerate(f_sites):
        k = sites_outer.index(s)
        sub |= ((idx >> k) & 1) << j
    return float(np.dot(table.probs, np.asarray(f_table, dtype=np.float64)[sub]))


def global_kernel_expectation(S, omega: Boundary, params: IsingParams, f_sites, f_table, delta) -> float:
    """E[f] under gamma^I_{delta cap S}( . | +_{S \\ delta} omega_{S^c})."""
    S = {Site(*s) for s in S}
    d_sites = set(site_tuple(delta))
    free = tuple(sorted(s for s in d_sites if s in S))
    f_sites = tuple(Site(*s) for s in f_sites)
    if not set(f_sites) <= set(free):
        raise ValueError("f must depend on free sites of the window")

    def value(t):
        t = Site(*t)
        if t in S and t not in d_sites:
            return 1
        return omega.value(t)

    bvals = {t: value(t) for t in exterior_neighbors(free)}
    return _table_under(free, Boundary.fixed(bvals), params, f_sites, f_table)


def global_kernel_monotonicity(S, omega: Boundary, params: IsingParams, f_sites, f_table, delta1, delta2) -> bool:
    """Plus filling on S outside the window: the larger window cannot raise an increasing f."""
    if not is_increasing(np.asarray(f_table, dtype=np.float64), len(tuple(f_sites))):
        raise ValueError("f is not increasing")
    if not set(site_tuple(delta1)) <= set(site_tuple(delta2)):
        raise ValueError("windows must be nested")
    e1 = global_kernel_expectation(S, omega, params, f_sites, f_table, delta1)
    e2 = global_kernel_expectation(S, omega, params, f_sites, f_table, delta2)
    return e2 <= e1 + 1e-12


# --------------------------------------------------------------------------
# Monte Carlo constrained measures


@dataclass(frozen=True)
class ConstrainedResult:
    estimates: dict[str, Estimate]
    window: int
    bc: str
    sweeps: int
    burn_in: int
    seed: int


def constrained_config(
    xi: EvenConstraint,
    params: IsingParams,
    bc: Boundary,
    seed: int,
    sweeps: int,
    burn_in: int,
    release: Sequence[Site] = (),
    thin: int = 1,
) -> ChainConfig:
    return ChainConfig(params, xi.window, bc, xi.mask(release), seed, sweeps, burn_in, thin)


def constrained_measure_estimate(
    xi: EvenConstraint,
    params: IsingParams,
    bc: Boundary,
    observables: Sequence[Observable],
    seed: int = 0,
    sweeps: int = 4096,
    burn_in: int = 512,
    release: Sequence[Site] = (),
) -> ConstrainedResult:
    """Even sites frozen to xi (except ``release``), odd sites sampled, ``bc`` on the window ring."""
    if bc.kind not in ("plus", "minus"):
        raise ValueError("constrained measures use a plus or minus far boundary")
    cfg = constrained_config(xi, params, bc, seed, sweeps, burn_in, release)
    run = sample_chain(cfg, observables)
    return ConstrainedResult(run.estimates(), xi.window.n, bc.token, sweeps, burn_in, seed)


def wilson_interval(p: float, n_eff: float, z: float = 1.96) -> tuple[float, float]:
    if n_eff <= 0 or not math.isfinite(n_eff):
        return (0.0, 1.0) if n_eff <= 0 else (p, p)
    den = 1 + z * z / n_eff
    centre = (p + z * z / (2 * n_eff)) / den
    half = z * math.sqrt(p * (1 - p) / n_eff + z * z / (4 * n_eff * n_eff)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class TableEstimate:
    """Estimated kernel over configurations of an image region (bit k <-> k-th site)."""

    sites: tuple[Site, ...]
    probs: np.ndarray
    stderr: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_samples: int
    window: int
    bc: str
    seed: int
    series: np.ndarray = field(repr=False, default=None)

    def prob(self, config) -> float:
        idx = sum(1 << k for k, s in enumerate(self.sites) if config[s] > 0)
        return float(self.probs[idx])

    def p_plus(self, i: Sequence[int]) -> Estimate:
        """Marginal P(sigma'_i = +1) with its batch-means error."""
        k = self.sites.index(Site(*i))
        return batch_means(((self.series.astype(np.int64) >> k) & 1).astype(np.float64), self.seed)


def decimated_kernel_estimate(
    region: Sequence[Sequence[int]],
    omega_prime: EvenConstraint,
    params: IsingParams,
    bc: Boundary,
    seed: int = 0,
    sweeps: int = 4096,
    burn_in: int = 512,
) -> TableEstimate:
    """Histogram estimate of the decimated kernel on an image region.

    Evens outside the doubled region are frozen to the constraint, the rest of
    the window (odd sites plus the doubled region) is sampled with ``bc`` on the
    ring, and the spins at the doubled region are histogrammed. Per-cell errors
    use batch means; Wilson intervals use the matching effective sample size.
    """
    img = tuple(sorted(Site(*i) for i in region))
    if len(img) > IMAGE_CAP:
        raise ValueError("image region over cap")
    orig = [to_original(i) for i in img]
    for s in orig:
        if s not in omega_prime.window:
            raise ValueError("region outside window")
    box = omega_prime.window
    cfg = constrained_config(omega_prime, params, bc, seed, sweeps, burn_in, release=orig)
    run = sample_chain(cfg, [config_index(box, orig)])
    series = run.series["config"]
    k = 1 << len(img)
    probs = np.empty(k)
    se = np.empty(k)
    lo = np.empty(k)
    hi = np.empty(k)
    for c in range(k):
        est = batch_means((series == c).astype(np.float64), seed)
        probs[c], se[c] = est.mean, est.stderr
        p = est.mean
        n_eff = p * (1 - p) / est.stderr**2 if est.stderr > 0 else (math.inf if 0 < p < 1 else est.n_samples)
        lo[c], hi[c] = wilson_interval(p, n_eff)
    return TableEstimate(img, probs, se, lo, hi, len(series), box.n, bc.token, seed, series)
