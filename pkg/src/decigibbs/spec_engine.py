"""Exact finite-volume Ising kernels.

Configurations of a volume with sites ``s_0 < s_1 < ... < s_{N-1}`` (lexicographic)
are encoded as integers: bit ``k`` set means ``sigma_{s_k} = +1``. All tables store
log-weights and normalize with a max-subtraction so large beta never overflows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .lattice import Box, Boundary, Site, SpinField, exterior_neighbors, internal_bonds, neighbors

ENUM_CAP = 25
TRANSFER_CAP = 14
_CHUNK = 1 << 18


@dataclass(frozen=True)
class IsingParams:
    """Nearest-neighbour ferromagnet at inverse temperature ``beta`` in field ``h``.

    ``beta = 0`` is allowed: it is the product-measure limit used by many checks.
    """

    beta: float
    h: float = 0.0

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be a finite non-negative number")
        if not math.isfinite(self.h):
            raise ValueError("h must be finite")


def site_tuple(volume) -> tuple[Site, ...]:
    if isinstance(volume, Box):
        return volume.sites
    return tuple(sorted({Site(*s) for s in volume}))


def spins_of(indices: np.ndarray, n: int) -> np.ndarray:
    """(len(indices), n) int8 matrix of +-1 spins for the given config indices."""
    bits = (indices[:, None] >> np.arange(n, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int8)


def encode(sites: Sequence[Site], config) -> int:
    """Bitmask of ``config`` (mapping site -> spin, or SpinField) restricted to ``sites``."""
    idx = 0
    for k, s in enumerate(sites):
        if config[s] > 0:
            idx |= 1 << k
    return idx


def decode(sites: Sequence[Site], idx: int) -> dict[Site, int]:
    return {s: (1 if (idx >> k) & 1 else -1) for k, s in enumerate(sites)}


def with_outside(values: Mapping, boundary: Boundary) -> Boundary:
    """Boundary that reads ``values`` first and falls back to ``boundary``."""
    if boundary.kind == "fixed":
        merged = dict(boundary.values)
        merged.update({Site(*k): int(v) for k, v in values.items()})
        return Boundary("fixed", merged, boundary.default)
    default = {"plus": 1, "minus": -1, "free": 0}[boundary.kind]
    return Boundary("fixed", {Site(*k): int(v) for k, v in values.items()}, default)


class _LocalEnergy:
    """Vectorized evaluation of H over all configurations of a site tuple."""

    def __init__(self, sites: Sequence[Site], boundary: Boundary, h: float, touching: Iterable[Site] | None = None):
        self.sites = tuple(sites)
        pos = {s: k for k, s in enumerate(self.sites)}
        keep = None if touching is None else {Site(*s) for s in touching}
        bonds = internal_bonds(self.sites)
        if keep is not None:
            bonds = [(a, b) for a, b in bonds if a in keep or b in keep]
        self.bond_a = np.array([pos[a] for a, _ in bonds], dtype=np.int64)
        self.bond_b = np.array([pos[b] for _, b in bonds], dtype=np.int64)
        ext = np.zeros(len(self.sites))
        inside = set(self.sites)
        for k, s in enumerate(self.sites):
            if keep is not None and s not in keep:
                continue
            total = 0
            for t in neighbors(s):
                if t in inside:
                    continue
                try:
                    total += boundary.value(t)
                except KeyError as exc:
                    raise ValueError(str(exc)) from None
            ext[k] = total + h
        self.linear = ext

    def energies(self, start: int, stop: int) -> np.ndarray:
        spins = spins_of(np.arange(start, stop, dtype=np.int64), len(self.sites))
        e = -spins.astype(np.float64) @ self.linear
        if len(self.bond_a):
            e -= (spins[:, self.bond_a].astype(np.int32) * spins[:, self.bond_b]).sum(axis=1)
        return e

    def all_energies(self) -> np.ndarray:
        total = 1 << len(self.sites)
        return np.concatenate([self.energies(a, min(a + _CHUNK, total)) for a in range(0, total, _CHUNK)])


def hamiltonian(sigma, boundary: Boundary, volume, params: IsingParams) -> float:
    """Energy of ``sigma`` on the volume: bonds touching it plus field, exterior read from ``boundary``."""
    sites = site_tuple(volume)
    inside = set(sites)
    e = 0.0
    for a, b in internal_bonds(sites):
        e -= sigma[a] * sigma[b]
    for s in sites:
        e -= params.h * sigma[s]
        for t in neighbors(s):
            if t not in inside:
                try:
                    e -= sigma[s] * boundary.value(t)
                except KeyError as exc:
                    raise ValueError(str(exc)) from None
    return float(e)


def _probs_from_log(logw: np.ndarray) -> np.ndarray:
    """Normalized probabilities along the last axis; the max shift makes uniform tables exact."""
    w = np.exp(logw - logw.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def _normalize(logw: np.ndarray) -> tuple[np.ndarray, float]:
    m = float(np.max(logw))
    logz = m + math.log(float(np.sum(np.exp(logw - m))))
    return logw - logz, logz


@dataclass(frozen=True, eq=False)
class KernelTable:
    """gamma_Lambda(. | omega) as a normalized table over all 2^|Lambda| configurations."""

    sites: tuple[Site, ...]
    boundary: Boundary
    log_probs: np.ndarray
    logZ: float

    log_weights: np.ndarray | None = None

    @cached_property
    def probs(self) -> np.ndarray:
        return _probs_from_log(self.log_probs if self.log_weights is None else self.log_weights)

    def index(self, config) -> int:
        return encode(self.sites, config)

    def prob(self, config) -> float:
        return float(self.probs[self.index(config)])

    def log_prob(self, config) -> float:
        return float(self.log_probs[self.index(config)])

    def expectation(self, f) -> float:
        """``f`` is a table indexed by config or a callable on the (2^N, N) spin matrix."""
        if callable(f):
            f = f(spins_of(np.arange(1 << len(self.sites), dtype=np.int64), len(self.sites)))
        return float(np.dot(self.probs, np.asarray(f, dtype=np.float64)))

    def marginal_plus(self, s: Sequence[int]) -> float:
        k = self.sites.index(Site(*s))
        mask = (np.arange(len(self.probs)) >> k) & 1
        return float(self.probs[mask == 1].sum())


def log_weights(volume, boundary: Boundary, params: IsingParams) -> tuple[tuple[Site, ...], np.ndarray]:
    sites = site_tuple(volume)
    if len(sites) > ENUM_CAP:
        raise ValueError("exact enumeration infeasible")
    if boundary.kind == "fixed":
        for t in exterior_neighbors(sites):
            try:
                boundary.value(t)
            except KeyError as exc:
                raise ValueError(str(exc)) from None
    return sites, -params.beta * _LocalEnergy(sites, boundary, params.h).all_energies()


def kernel_exact(volume, boundary: Boundary, params: IsingParams) -> KernelTable:
    sites, logw = log_weights(volume, boundary, params)
    logp, logz = _normalize(logw)
    return KernelTable(sites, boundary, logp, logz, logw)


def kernel_compose(outer, inner, boundary: Boundary, params: IsingParams) -> float:
    """Largest |(gamma_outer gamma_inner)(sigma) - gamma_outer(sigma)| over configurations of ``outer``."""
    d_sites = site_tuple(outer)
    l_sites = site_tuple(inner)
    if not set(l_sites) <= set(d_sites):
        raise ValueError("inner volume must lie inside the outer one")
    if len(d_sites) > ENUM_CAP:
        raise ValueError("exact enumeration infeasible")
    outer_table = kernel_exact(d_sites, boundary, params)
    n = len(d_sites)
    in_pos = [d_sites.index(s) for s in l_sites]
    out_pos = [k for k, s in enumerate(d_sites) if s not in set(l_sites)]
    idx = np.arange(1 << n, dtype=np.int64)
    lam = np.zeros_like(idx)
    for j, k in enumerate(in_pos):
        lam |= ((idx >> k) & 1) << j
    tau = np.zeros_like(idx)
    for j, k in enumerate(out_pos):
        tau |= ((idx >> k) & 1) << j
    # inner kernel from inner-local energies only, one row per outside configuration
    local = _LocalEnergy(d_sites, boundary, params.h, touching=l_sites).all_energies()
    logw = np.empty((1 << len(out_pos), 1 << len(l_sites)))
    logw[tau, lam] = -params.beta * local
    inner_probs = _probs_from_log(logw)
    p_out = np.zeros(1 << len(out_pos))
    if out_pos:
        np.add.at(p_out, tau, outer_table.probs)
    else:
        p_out[0] = 1.0
    composed = p_out[tau] * inner_probs[tau, lam]
    return float(np.max(np.abs(composed - outer_table.probs)))


def keybar_residual(inner, outer, sigma_tilde, sigma, tau, boundary: Boundary, params: IsingParams) -> float:
    """Relative mismatch between the outer-kernel and inner-kernel ratios of two inner configurations.

    Both configurations share ``tau`` on ``outer \\ inner``. The residual is
    ``|L - R| / max(1, |R|)``: the ratios reach ~1e7 at large beta, where an
    absolute 1e-12 would be below double precision.
    """
    l_sites = site_tuple(inner)
    d_sites = site_tuple(outer)
    ring = [s for s in d_sites if s not in set(l_sites)]
    big = kernel_exact(d_sites, boundary, params)
    a = {**{s: tau[s] for s in ring}, **{s: sigma_tilde[s] for s in l_sites}}
    b = {**{s: tau[s] for s in ring}, **{s: sigma[s] for s in l_sites}}
    lhs = math.exp(big.log_prob(a) - big.log_prob(b))
    small = kernel_exact(l_sites, with_outside({s: tau[s] for s in ring}, boundary), params)
    rhs = math.exp(small.log_prob(sigma_tilde) - small.log_prob(sigma))
    return abs(lhs - rhs) / max(1.0, abs(rhs))


# --------------------------------------------------------------------------
# transfer matrix


def transfer_logZ(beta: float, h: float, fixed: np.ndarray, field: np.ndarray | None = None) -> float:
    """log Z of an Ising rectangle with some sites frozen.

    ``fixed[r, c]`` is 0 for a free site and +-1 for a frozen one; ``field`` adds a
    per-site external field (used for couplings to exterior spins). Frozen sites
    still contribute their bonds and field terms. Rows are processed one at a
    time with a per-bit factorization of the vertical transfer matrix.
    """
    fixed = np.asarray(fixed)
    rows, width = fixed.shape
    if width > TRANSFER_CAP:
        raise ValueError("transfer width over cap")
    if field is None:
        field = np.zeros((rows, width))
    spins = spins_of(np.arange(1 << width, dtype=np.int64), width).astype(np.float64)
    horiz = (spins[:, :-1] * spins[:, 1:]).sum(axis=1) if width > 1 else np.zeros(1 << width)
    ratio = math.exp(-2.0 * beta)

    def diag(r):
        d = beta * (horiz + spins @ (h + field[r]))
        for c in range(width):
            if fixed[r, c]:
                d = np.where(spins[:, c] == fixed[r, c], d, -np.inf)
        return d

    d = diag(0)
    acc = float(np.max(d))
    v = np.exp(d - acc)
    for r in range(1, rows):
        for j in range(width):
            w = v.reshape(-1, 2, 1 << j)
            a, b = w[:, 0, :].copy(), w[:, 1, :].copy()
            w[:, 0, :] = a + ratio * b
            w[:, 1, :] = ratio * a + b
        acc += beta * width
        d = diag(r)
        dm = float(np.max(d))
        v = v * np.exp(d - dm)
        acc += dm
        s = float(v.max())
        if s == 0.0:
            return -math.inf
        v /= s
        acc += math.log(s)
    total = float(v.sum())
    return acc + math.log(total) if total > 0 else -math.inf


def transfer_matrix_logZ(width: int, height: int, boundary: Boundary, params: IsingParams) -> float:
    """log Z on a ``height x width`` rectangle with uniform plus, minus or free exterior."""
    if width > TRANSFER_CAP:
        raise ValueError("transfer width over cap")
    if boundary.kind == "fixed":
        raise ValueError("use transfer_logZ for site-dependent exteriors")
    b = boundary.value((0, 0))
    field = np.zeros((height, width))
    field[0, :] += b
    field[-1, :] += b
    field[:, 0] += b
    field[:, -1] += b
    return transfer_logZ(params.beta, params.h, np.zeros((height, width), dtype=np.int8), field)


def box_transfer_logZ(box: Box, boundary: Boundary, params: IsingParams, frozen: Mapping | None = None) -> float:
    """log Z on a centred box with arbitrary exterior values and optional frozen interior sites."""
    n = box.n
    fixed = np.zeros((box.side, box.side), dtype=np.int8)
    for s, v in (frozen or {}).items():
        fixed[box.index(s)] = v
    field = np.zeros((box.side, box.side))
    for s in box.ring:
        v = boundary.value(s)
        if v == 0:
            continue
        for t in neighbors(s):
            if t in box:
                field[t[0] + n, t[1] + n] += v
    return transfer_logZ(params.beta, params.h, fixed, field)


# --------------------------------------------------------------------------
# monotonicity


def is_increasing(f: np.ndarray, n: int) -> bool:
    """Checks f(c) <= f(c with one more plus spin) over all covering pairs."""
    f = np.asarray(f, dtype=np.float64)
    idx = np.arange(1 << n, dtype=np.int64)
    for k in range(n):
        low = idx[((idx >> k) & 1) == 0]
        if np.any(f[low] > f[low | (1 << k)]):
            return False
    return True


def monotonicity_check(volume, params: IsingParams, f, omega: Boundary, omega_prime: Boundary) -> bool:
    """True iff the kernel average of the increasing ``f`` under ``omega`` does not exceed that under ``omega_prime``."""
    sites = site_tuple(volume)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (1 << len(sites),):
        raise ValueError("f must be a table over all configurations")
    if not is_increasing(f, len(sites)):
        raise ValueError("f is not increasing")
    for t in exterior_neighbors(sites):
        if omega.value(t) > omega_prime.value(t):
            raise ValueError("boundary conditions are not ordered")
    lo = kernel_exact(sites, omega, params).expectation(f)
    hi = kernel_exact(sites, omega_prime, params).expectation(f)
    return lo <= hi + 1e-12


# --------------------------------------------------------------------------
# contour occurrence (Peierls)


def contour_occurrence(height: int, width: int, betas: Sequence[float], h: float = 0.0) -> dict:
    """Exact probability of every contour realizable in a rectangle with plus exterior.

    Returns ``{contour: [P_beta for beta in betas]}``.
    """
    from .lattice import contours_from_padded

    n = height * width
    if n > 16:
        raise ValueError("exact enumeration infeasible")
    sites = tuple(Site(x, y) for x in range(height) for y in range(width))
    energies = _LocalEnergy(sites, Boundary.plus(), h).all_energies()
    probs = []
    for beta in betas:
        logp, _ = _normalize(-beta * energies)
        probs.append(np.exp(logp))
    out: dict = {}
    pad = np.ones((height + 2, width + 2), dtype=np.int8)
    for idx in range(1 << n):
        pad[1:-1, 1:-1] = ((idx >> np.arange(n)) & 1).reshape(height, width) * 2 - 1
        for c in contours_from_padded(pad, (-1, -1)):
            acc = out.setdefault(c, [0.0] * len(betas))
            for b in range(len(betas)):
                acc[b] += probs[b][idx]
    return out
