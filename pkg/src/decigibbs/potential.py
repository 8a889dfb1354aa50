"""Potentials recovered from kernels.

A *kernel source* exposes ``log_weight(sites, config)``: the unnormalized log
probability of ``config`` on ``sites`` with every other site held at +1. Ratios
of kernels on one volume with plus outside are differences of these weights,
which is all the vacuum and telescoped potentials need.

Configurations are mappings site -> +-1; sites a mapping omits read +1.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .lattice import Box, Boundary, Site, l1, telescope_index, telescope_set
from .sampler import ChainConfig, FrozenMask, batch_matrix, exp_field, sample_chain
from .spec_engine import IsingParams, box_transfer_logZ, hamiltonian, site_tuple

MOEBIUS_CAP = 20
VACUUM_CAP = 12
NEAR_CUTOFF = 4


class _PlusDefault(dict):
    def __missing__(self, key):
        return 1


def plus_default(config: Mapping | None) -> Mapping:
    out = _PlusDefault()
    for k, v in (config or {}).items():
        out[Site(*k)] = int(v)
    return out


def restrict(config: Mapping, sites: Iterable) -> dict:
    """omega^X: ``config`` on ``sites`` and +1 everywhere else."""
    cfg = plus_default(config)
    return {Site(*s): cfg[Site(*s)] for s in sites}


# --------------------------------------------------------------------------
# set functions and Moebius inversion


@dataclass(frozen=True, eq=False)
class SetFunction:
    """Real function on all subsets of a ground set; subsets are bitmasks over ``ground``."""

    ground: tuple
    values: np.ndarray

    def __post_init__(self):
        if len(self.ground) > MOEBIUS_CAP:
            raise ValueError("ground set over cap")
        if self.values.shape != (1 << len(self.ground),):
            raise ValueError("values must cover every subset")

    @classmethod
    def from_dict(cls, table: Mapping) -> "SetFunction":
        keys = [frozenset(k) for k in table]
        ground = tuple(sorted(set().union(*keys))) if keys else ()
        pos = {s: k for k, s in enumerate(ground)}
        vals = np.full(1 << len(ground), np.nan)
        for k, v in table.items():
            vals[sum(1 << pos[s] for s in k)] = v
        if np.isnan(vals).any():
            raise ValueError("domain not subset-closed")
        return cls(ground, vals)

    def mask(self, subset) -> int:
        pos = {s: k for k, s in enumerate(self.ground)}
        return sum(1 << pos[s] for s in subset)

    def __getitem__(self, subset) -> float:
        return float(self.values[self.mask(subset)])

    def subsets(self):
        for m in range(len(self.values)):
            yield frozenset(s for k, s in enumerate(self.ground) if (m >> k) & 1)

    def as_dict(self) -> dict:
        return {b: float(self.values[m]) for m, b in enumerate(self.subsets())}


def moebius_invert(H: SetFunction) -> SetFunction:
    """Phi_A = sum_{B subset A} (-1)^{|A \\ B|} H_B for every A, by the fast subset transform."""
    if H.values[0] != 0:
        raise ValueError("H of the empty set must be 0")
    f = H.values.astype(np.float64).copy()
    n = len(H.ground)
    idx = np.arange(1 << n)
    for k in range(n):
        hi = idx[(idx >> k) & 1 == 1]
        f[hi] -= f[hi ^ (1 << k)]
    return SetFunction(H.ground, f)


def zeta(phi: SetFunction) -> SetFunction:
    """H_A = sum_{B subset A} Phi_B (inverse of :func:`moebius_invert`)."""
    f = phi.values.astype(np.float64).copy()
    n = len(phi.ground)
    idx = np.arange(1 << n)
    for k in range(n):
        hi = idx[(idx >> k) & 1 == 1]
        f[hi] += f[hi ^ (1 << k)]
    return SetFunction(phi.ground, f)


# --------------------------------------------------------------------------
# kernel sources


class KernelSource(Protocol):
    def log_weight(self, sites: Sequence[Site], config: Mapping) -> float: ...


@dataclass(frozen=True)
class IsingSource:
    """The nearest-neighbour Ising specification itself."""

    params: IsingParams

    def log_weight(self, sites, config) -> float:
        cfg = plus_default(config)
        return -self.params.beta * hamiltonian(cfg, Boundary.plus(), site_tuple(sites), self.params)

    def tag(self) -> str:
        return f"ising(beta={self.params.beta!r},h={self.params.h!r})"


@dataclass(frozen=True)
class DecimatedSource:
    """Decimated kernels at finite window, computed exactly by transfer matrix.

    Image sites ``i`` sit at original ``2i``. Inside the window every even site
    is frozen (to ``config`` on the doubled volume, +1 elsewhere), odd sites are
    summed out, and ``bc`` fills the window ring.
    """

    params: IsingParams
    window: int
    bc: Boundary = field(default_factory=Boundary.plus)

    def __post_init__(self):
        if self.window % 2:
            raise ValueError("window half-width must be even")

    def log_weight(self, sites, config) -> float:
        cfg = plus_default(config)
        box = Box(self.window)
        frozen = {s: 1 for s in box.even_sites()}
        for i in site_tuple(sites):
            s = Site(2 * i[0], 2 * i[1])
            if s not in box:
                raise ValueError("volume does not fit the window")
            frozen[s] = cfg[i]
        return box_transfer_logZ(box, self.bc, self.params, frozen)

    def tag(self) -> str:
        return f"decimated(beta={self.params.beta!r},h={self.params.h!r},window={self.window},bc={self.bc.token})"


# --------------------------------------------------------------------------
# vacuum potential


def free_hamiltonian(volume, sigma: Mapping, source: KernelSource) -> float:
    """-ln gamma(sigma | +) / gamma(+ | +) on the volume."""
    sites = site_tuple(volume)
    cfg = restrict(sigma, sites)
    return -(source.log_weight(sites, cfg) - source.log_weight(sites, {}))


def vacuum_set_function(A, sigma: Mapping, source: KernelSource) -> SetFunction:
    ground = site_tuple(A)
    if len(ground) > VACUUM_CAP:
        raise ValueError("vacuum potential volume over cap")
    vals = np.zeros(1 << len(ground))
    for m in range(1, len(vals)):
        B = [s for k, s in enumerate(ground) if (m >> k) & 1]
        vals[m] = free_hamiltonian(B, sigma, source)
    return SetFunction(ground, vals)


def vacuum_potential(A, sigma: Mapping, source: KernelSource) -> float:
    """Phi^+_A(sigma): Moebius inversion of the free Hamiltonians over subsets of A."""
    H = vacuum_set_function(A, sigma, source)
    return float(moebius_invert(H).values[-1])


def vacuum_potential_all(A, sigma: Mapping, source: KernelSource) -> SetFunction:
    """Phi^+_B(sigma) for every B subset of A."""
    return moebius_invert(vacuum_set_function(A, sigma, source))


# --------------------------------------------------------------------------
# telescoped potential


def _telescope_parts(i, m, omega):
    L = telescope_set(i, m)
    i = Site(*i)
    members = L.sorted_members()
    if m == 0:
        return members, [restrict(omega, members)], []
    prev = telescope_set(i, m - 1).members
    plus = [restrict(omega, members), restrict(omega, prev - {i})]
    minus = [restrict(omega, L.members - {i}), restrict(omega, prev)]
    return members, plus, minus


def telescoped_term(i, m: int, omega: Mapping, source: KernelSource) -> float:
    """Psi_{L_{i,m}}(omega) as the four-kernel log ratio on L_{i,m} (two kernels for m = 0)."""
    i = Site(*i)
    if m == 0:
        return -(source.log_weight([i], restrict(omega, [i])) - source.log_weight([i], {}))
    members, plus, minus = _telescope_parts(i, m, omega)
    return -(
        source.log_weight(members, plus[0])
        + source.log_weight(members, plus[1])
        - source.log_weight(members, minus[0])
        - source.log_weight(members, minus[1])
    )


def _single_site_log_odds(i, volume, omega, source) -> float:
    """ln gamma_i(omega | omega_V +) / gamma_i(+ | omega_V +), from weights on V."""
    members = site_tuple(volume)
    with_i = restrict(omega, members)
    without = dict(with_i)
    without[Site(*i)] = 1
    return source.log_weight(members, with_i) - source.log_weight(members, without)


def telescoped_term_single_site(i, m: int, omega: Mapping, source: KernelSource) -> float:
    """The same term written with single-site kernels on L_{i,m} and L_{i,m-1}."""
    i = Site(*i)
    first = -_single_site_log_odds(i, telescope_set(i, m).members, omega, source)
    if m == 0:
        return first
    return first + _single_site_log_odds(i, telescope_set(i, m - 1).members, omega, source)


def omega_hash(i, m: int, omega: Mapping, tag: str) -> str:
    """Canonical key: the source tag plus omega on L_{i,m} as a +/- string in lexicographic order."""
    cfg = plus_default(omega)
    bits = "".join("+" if cfg[s] > 0 else "-" for s in telescope_set(i, m).sorted_members())
    return f"{tag}|{bits}"


class TelescopedPotential:
    """Memoized Psi with support restricted to the sets L_{i,m}."""

    def __init__(self, source: KernelSource):
        self.source = source
        self._memo: dict = {}

    def term(self, i, m: int, omega: Mapping) -> float:
        i = Site(*i)
        tag = getattr(self.source, "tag", lambda: repr(self.source))()
        key = (i, m, omega_hash(i, m, omega, tag))
        if key not in self._memo:
            self._memo[key] = telescoped_term(i, m, omega, self.source)
        return self._memo[key]

    def __call__(self, A, omega: Mapping) -> float:
        A = frozenset(Site(*s) for s in A)
        i, m = telescope_index(A)
        if A != telescope_set(i, m).members:
            return 0.0
        return self.term(i, m, omega)

    def conservation_sum(self, volume, sigma: Mapping) -> float:
        """Sum of Psi_{L_{i,m}}(sigma_V +) over i in V and all m that can reach a minus spin."""
        sites = site_tuple(volume)
        cfg = restrict(sigma, sites)
        minus = [s for s in sites if cfg[s] < 0]
        if not minus:
            return 0.0
        total = 0.0
        for i in minus:
            reach = max(l1(i, s) for s in minus)
            for m in range(reach + 1):
                total += self.term(i, m, cfg)
        return total


def nonnull_constant(source: KernelSource, i, region) -> float:
    """min over configurations of the region of gamma_i(omega_i | omega_{region \\ i} +)."""
    i = Site(*i)
    members = site_tuple(set(site_tuple(region)) | {i})
    if len(members) > VACUUM_CAP:
        raise ValueError("region over cap")
    best = 1.0
    for bits in itertools.product((-1, 1), repeat=len(members)):
        cfg = dict(zip(members, bits))
        if cfg[i] > 0:
            continue
        # log-odds of minus against plus at i under this conditioning
        p = 1.0 / (1.0 + math.exp(-_single_site_log_odds(i, members, cfg, source)))
        best = min(best, p, 1.0 - p)
    return best


def vacuum_tail_bound(source: KernelSource, i, omega: Mapping, inner, outer) -> dict:
    """Compares partial vacuum sums over subsets of ``inner`` and of ``outer`` (both containing i).

    The gap between the two is at most 2 g / m_i, with g the change of the
    single-site kernel between the two conditionings and m_i the non-nullness
    constant over ``inner``.
    """
    i = Site(*i)
    inner = site_tuple(inner)
    outer = site_tuple(outer)
    lo_in = _single_site_log_odds(i, inner, omega, source)
    lo_out = _single_site_log_odds(i, outer, omega, source)
    p_in = 1.0 / (1.0 + math.exp(-lo_in))
    p_out = 1.0 / (1.0 + math.exp(-lo_out))
    g = abs(p_in - p_out)
    m_i = nonnull_constant(source, i, [s for s in inner if l1(s, i) <= 1])
    gap = abs(lo_in - lo_out)
    return {"partial_inner": -lo_in, "partial_outer": -lo_out, "gap": gap, "g": g, "m_i": m_i, "bound": 2 * g / m_i}


# --------------------------------------------------------------------------
# Monte Carlo telescoped terms


def derive_seed(seed: int, *keys: int) -> int:
    ent = [int(seed) & (2**63 - 1)] + [int(k) + 2**31 for k in keys]
    return int(np.random.SeedSequence(ent).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MCTerm:
    i: Site
    m: int
    value: float
    stderr: float
    status: str
    n_active: int
    window: int


def _summand(beta, h, window, frozen_xi, i, j, seed, sweeps, burn_in):
    """-(ln E[XY] - ln E[X] - ln E[Y]) with delta-method variance, X = exp(2 beta (F_i + h))."""
    box = Box(window)
    s_i, s_j = Site(2 * i[0], 2 * i[1]), Site(2 * j[0], 2 * j[1])
    cfg = ChainConfig(IsingParams(beta, h), box, Boundary.plus(), FrozenMask(frozen_xi), seed, sweeps, burn_in)
    obs_x = exp_field(box, s_i, beta, h, "X")
    obs_y = exp_field(box, s_j, beta, h, "Y")
    if l1(i, j) <= NEAR_CUTOFF:
        # joint weight of raising both frozen minuses at once
        def joint(snaps):
            return obs_x[1](snaps) * obs_y[1](snaps)
    else:
        def joint(snaps):
            return np.exp(np.log(obs_x[1](snaps)) + np.log(obs_y[1](snaps)))
    run = sample_chain(cfg, [obs_x, obs_y, ("XY", joint)])
    mat = batch_matrix(np.stack([run.series["X"], run.series["Y"], run.series["XY"]], axis=1))
    means = np.array([run.series["X"].mean(), run.series["Y"].mean(), run.series["XY"].mean()])
    cov = np.cov(mat, rowvar=False) / mat.shape[0]
    grad = np.array([1.0 / means[0], 1.0 / means[1], -1.0 / means[2]])
    var = float(grad @ cov @ grad)
    se_rel = np.sqrt(np.maximum(np.diag(cov), 0)) / means
    indeterminate = bool(np.any(means <= 0) or np.any(se_rel > 0.5))
    value = -(math.log(means[2]) - math.log(means[0]) - math.log(means[1]))
    return value, max(var, 0.0), indeterminate


def _frozen_for(window: int, omega: Mapping, Q) -> dict:
    box = Box(window)
    cfg = plus_default(omega)
    frozen = {s: 1 for s in box.even_sites()}
    for k in Q:
        s = Site(2 * k[0], 2 * k[1])
        if s not in box:
            raise ValueError("telescoping set does not fit the window")
        frozen[s] = cfg[Site(*k)]
    return frozen


def telescoped_term_mc(
    i,
    m: int,
    omega: Mapping,
    params: IsingParams,
    window: int,
    seed: int = 0,
    sweeps: int = 4096,
    burn_in: int = 512,
) -> MCTerm:
    """Psi_{L_{i,m}} of the decimated measure from constrained-measure expectations.

    The annulus is added one site at a time; summand r compares raising the
    frozen minus at 2i and at 2j_r, separately and together, under the measure
    with evens frozen to omega on 2Q_r and to +1 elsewhere. Summands vanish
    exactly unless omega is -1 at both i and j_r, and are then estimated by
    Monte Carlo with delta-method errors.
    """
    if window % 2:
        raise ValueError("window half-width must be even")
    i = Site(*i)
    cfg = plus_default(omega)
    beta, h = params.beta, params.h
    if cfg[i] > 0:
        return MCTerm(i, m, 0.0, 0.0, "exact", 0, window)
    if m == 0:
        box = Box(window)
        frozen = _frozen_for(window, omega, [i])
        run = sample_chain(
            ChainConfig(params, box, Boundary.plus(), FrozenMask(frozen), derive_seed(seed, i.x, i.y, 0, 0), sweeps, burn_in),
            [exp_field(box, Site(2 * i.x, 2 * i.y), beta, h, "X")],
        )
        est = run.estimates()["X"]
        return MCTerm(i, 0, math.log(est.mean), est.stderr / est.mean, "estimated", 1, window)
    L = telescope_set(i, m)
    prev = set(telescope_set(i, m - 1).members)
    total, var, active, bad = 0.0, 0.0, 0, False
    for r, j in enumerate(L.annulus, start=1):
        if cfg[j] > 0:
            continue
        Q = prev | set(L.annulus[:r])
        frozen = _frozen_for(window, omega, Q)
        val, v, ind = _summand(beta, h, window, frozen, i, j, derive_seed(seed, i.x, i.y, m, r), sweeps, burn_in)
        total += val
        var += v
        active += 1
        bad = bad or ind
    status = "exact" if active == 0 else ("indeterminate" if bad else "estimated")
    return MCTerm(i, m, total, math.sqrt(var), status, active, window)


# --------------------------------------------------------------------------
# quenched decay fit


@dataclass(frozen=True)
class QCDFit:
    C1: float
    C2: float
    lam: float
    lam_stderr: float
    l_i: int
    n_points: int
    accepted: bool
    significant: bool
    status: str


def qcd_fit(terms: Sequence[tuple[int, float]], l_i: int, z: float = 2.0) -> QCDFit:
    """Least squares of ln(|Psi| / m) against m over m > l_i.

    ``C1`` is the largest |Psi|/m at m <= l_i. Exact zeros carry no slope
    information and are excluded; fewer than four remaining points raise.
    The fit is accepted when lambda exceeds a 1e-12 numerical-zero guard and is
    significant when lambda > z * stderr.
    """
    pts = [(int(m), abs(float(v))) for m, v in terms]
    head = [v / m for m, v in pts if 0 < m <= l_i]
    c1 = max(head) if head else 0.0
    tail = [(m, v) for m, v in pts if m > l_i and m > 0 and v > 0]
    if len(tail) < 4:
        raise ValueError("insufficient points beyond the quenched length")
    x = np.array([m for m, _ in tail], dtype=np.float64)
    y = np.log(np.array([v / m for m, v in tail]))
    A = np.stack([np.ones_like(x), -x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(A.T @ A)
    lam = float(coef[1])
    se = float(math.sqrt(max(cov[1, 1], 0.0)))
    accepted = lam > 1e-12
    significant = accepted and lam > z * se
    return QCDFit(c1, float(math.exp(coef[0])), lam, se, int(l_i), len(x), accepted, significant, "fitted")
