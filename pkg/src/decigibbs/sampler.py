"""Monte Carlo sampling of the Ising model on a box with frozen sites.

Spins live in a ring-padded ``int8`` array of shape ``(2n+3, 2n+3)``; the ring
holds the boundary condition (0 for free) and is never updated, exactly like a
frozen site. Random numbers come from numpy's ``Philox`` counter-based
generator (4x64 rounds=10, keyed by the chain seed through ``SeedSequence``);
uniforms are drawn in fixed-size blocks, so a seed determines the stream
independently of chunking elsewhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, Sequence

import numba
import numpy as np

from .lattice import Box, Boundary, Site
from .spec_engine import IsingParams

N_BATCHES = 32
_CHUNK_SWEEPS = 256

Observable = tuple[str, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class FrozenMask:
    """Sites held fixed at given values throughout a chain."""

    frozen_values: Mapping[Site, int] = field(default_factory=dict)

    @property
    def frozen(self) -> frozenset:
        return frozenset(self.frozen_values)

    def __len__(self) -> int:
        return len(self.frozen_values)

    @classmethod
    def of(cls, values: Mapping) -> "FrozenMask":
        out = {}
        for k, v in values.items():
            if v not in (-1, 1):
                raise ValueError("frozen values must be +-1")
            out[Site(*k)] = int(v)
        return cls(out)


@dataclass(frozen=True)
class ChainConfig:
    params: IsingParams
    box: Box
    boundary: Boundary
    mask: FrozenMask = field(default_factory=FrozenMask)
    seed: int = 0
    sweeps: int = 4096
    burn_in: int = 512
    thin: int = 1
    init: str = "boundary"

    def __post_init__(self):
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError("burn_in must lie in [0, sweeps)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.init not in ("boundary", "plus", "minus", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        for s in self.mask.frozen_values:
            if s not in self.box:
                raise ValueError(f"frozen site {tuple(s)} outside the box")

    @property
    def n_samples(self) -> int:
        return (self.sweeps - self.burn_in) // self.thin

    def with_seed(self, seed: int) -> "ChainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.stderr < 0 or self.n_samples < 2:
            raise ValueError("invalid estimate")


def batch_means(series: np.ndarray, seed: int = 0, n_batches: int = N_BATCHES) -> Estimate:
    """Mean with a batch-means standard error; needs at least ``n_batches`` samples."""
    x = np.asarray(series, dtype=np.float64)
    if x.size < n_batches:
        raise ValueError(f"need at least {n_batches} samples for batch means, got {x.size}")
    b = x.size // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    se = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    return Estimate(float(x.mean()), se, int(x.size), int(seed))


def batch_matrix(series: np.ndarray, n_batches: int = N_BATCHES) -> np.ndarray:
    """(n_batches, k) matrix of per-batch means for a (n, k) array of series."""
    x = np.asarray(series, dtype=np.float64)
    if x.shape[0] < n_batches:
        raise ValueError(f"need at least {n_batches} samples for batch means, got {x.shape[0]}")
    b = x.shape[0] // n_batches
    return x[: b * n_batches].reshape(n_batches, b, *x.shape[1:]).mean(axis=1)


# --------------------------------------------------------------------------
# state setup


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def initial_state(cfg: ChainConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Padded spin array and boolean array of updatable sites."""
    box, n = cfg.box, cfg.box.n
    pad = np.zeros((box.side + 2,) * 2, dtype=np.int8)
    for s in box.ring:
        pad[s[0] + n + 1, s[1] + n + 1] = cfg.boundary.value(s)
    inner = pad[1:-1, 1:-1]
    if cfg.init == "random":
        inner[:] = np.where(rng.random(inner.shape) < 0.5, -1, 1)
    else:
        start = {"plus": 1, "minus": -1}.get(cfg.init, -1 if cfg.boundary.kind == "minus" else 1)
        inner[:] = start
    free = np.zeros_like(pad, dtype=np.bool_)
    free[1:-1, 1:-1] = True
    for s, v in cfg.mask.frozen_values.items():
        pad[s[0] + n + 1, s[1] + n + 1] = v
        free[s[0] + n + 1, s[1] + n + 1] = False
    return pad, free


@numba.njit(cache=True)
def _heat_bath(pad, rows, cols, beta, h, u, thin, record, out):
    n_sweeps = u.shape[0]
    k = 0
    for s in range(n_sweeps):
        for j in range(rows.shape[0]):
            r = rows[j]
            c = cols[j]
            f = pad[r - 1, c] + pad[r + 1, c] + pad[r, c - 1] + pad[r, c + 1] + h
            if u[s, j] * (1.0 + math.exp(-2.0 * beta * f)) < 1.0:
                pad[r, c] = 1
            else:
                pad[r, c] = -1
        if record and (s + 1) % thin == 0:
            out[k] = pad
            k += 1
    return k


@numba.njit(cache=True)
def _wolff(pad, free, rows, cols, p_add, u, pos, max_moves):
    """Up to ``max_moves`` single-cluster moves reading uniforms from ``u[pos:]``.

    Bonds to frozen or ring spins of the cluster's sign are tested like any
    other; if one activates, that cluster is left unflipped. Stops early when
    fewer than ``1 + 4 * n_free`` uniforms remain (the worst case for one move).
    Returns (moves done, new position).
    """
    n_free = rows.shape[0]
    side = pad.shape[0]
    incl = np.zeros(pad.shape, dtype=np.bool_)
    stack_r = np.empty(n_free, dtype=np.int64)
    stack_c = np.empty(n_free, dtype=np.int64)
    mem_r = np.empty(n_free, dtype=np.int64)
    mem_c = np.empty(n_free, dtype=np.int64)
    dr = (-1, 1, 0, 0)
    dc = (0, 0, -1, 1)
    moves = 0
    while moves < max_moves and pos + 1 + 4 * n_free <= u.shape[0]:
        j = int(u[pos] * n_free)
        pos += 1
        if j >= n_free:
            j = n_free - 1
        r0 = rows[j]
        c0 = cols[j]
        sign = pad[r0, c0]
        incl[r0, c0] = True
        mem_r[0] = r0
        mem_c[0] = c0
        size = 1
        top = 1
        stack_r[0] = r0
        stack_c[0] = c0
        blocked = False
        while top > 0 and not blocked:
            top -= 1
            r = stack_r[top]
            c = stack_c[top]
            for d in range(4):
                rr = r + dr[d]
                cc = c + dc[d]
                if rr < 0 or cc < 0 or rr >= side or cc >= side:
                    continue
                if pad[rr, cc] != sign or incl[rr, cc]:
                    continue
                x = u[pos]
                pos += 1
                if x >= p_add:
                    continue
                if not free[rr, cc]:
                    blocked = True
                    break
                incl[rr, cc] = True
                mem_r[size] = rr
                mem_c[size] = cc
                size += 1
                stack_r[top] = rr
                stack_c[top] = cc
                top += 1
        for q in range(size):
            if not blocked:
                pad[mem_r[q], mem_c[q]] = -sign
            incl[mem_r[q], mem_c[q]] = False
        moves += 1
    return moves, pos


def wolff_moves_per_sweep(n_free: int) -> int:
    """A cluster sweep is a fixed, state-independent number of moves: round(sqrt(N))."""
    return max(1, int(round(math.sqrt(n_free))))


def _free_lists(free: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r, c = np.nonzero(free)  # row-major = lexicographic
    return r.astype(np.int64), c.astype(np.int64)


def iter_snapshots(cfg: ChainConfig, algorithm: str = "heatbath", rng=None, state=None) -> Iterator[np.ndarray]:
    """Yield blocks of recorded padded snapshots ``(k, P, P)`` after burn-in.

    The final state is available as the last snapshot; the state array is
    updated in place if passed.
    """
    if algorithm == "wolff":
        check_wolff(cfg)
    elif algorithm != "heatbath":
        raise ValueError(f"unknown algorithm {algorithm!r}")
    rng = rng if rng is not None else make_rng(cfg.seed)
    if state is None:
        pad, free = initial_state(cfg, rng)
    else:
        pad, free = state
    rows, cols = _free_lists(free)
    n_free = rows.shape[0]
    beta, h = float(cfg.params.beta), float(cfg.params.h)
    p_add = 1.0 - math.exp(-2.0 * beta)

    moves = wolff_moves_per_sweep(n_free)
    block_len = max(1 << 16, 8 * (1 + 4 * n_free))
    buf = {"u": np.empty(0), "pos": 0}

    def wolff_sweep():
        todo = moves
        while todo > 0:
            done, buf["pos"] = _wolff(pad, free, rows, cols, p_add, buf["u"], buf["pos"], todo)
            todo -= done
            if todo > 0:
                buf["u"] = rng.random(block_len)
                buf["pos"] = 0

    def run(n_sweeps, record, thin):
        n_rec = n_sweeps // thin if record else 0
        out = np.empty((max(n_rec, 1),) + pad.shape, dtype=np.int8)
        if n_free == 0:
            for q in range(n_rec):
                out[q] = pad
            return out[:n_rec]
        if algorithm == "heatbath":
            u = rng.random((n_sweeps, n_free))
            got = _heat_bath(pad, rows, cols, beta, h, u, thin, record, out)
            return out[:got] if record else out[:0]
        got = 0
        for sw in range(n_sweeps):
            wolff_sweep()
            if record and (sw + 1) % thin == 0:
                out[got] = pad
                got += 1
        return out[:got] if record else out[:0]

    left = cfg.burn_in
    while left > 0:
        step = min(left, _CHUNK_SWEEPS)
        run(step, False, 1)
        left -= step
    left = cfg.n_samples * cfg.thin
    block = max(cfg.thin, (_CHUNK_SWEEPS // cfg.thin) * cfg.thin)
    while left > 0:
        step = min(left, block)
        yield run(step, True, cfg.thin)
        left -= step


def check_wolff(cfg: ChainConfig) -> None:
    if len(cfg.mask) or cfg.params.h != 0.0:
        raise ValueError("cluster update invalid under constraints")


@dataclass
class ChainRun:
    series: dict[str, np.ndarray]
    final: np.ndarray
    cfg: ChainConfig

    def estimates(self) -> dict[str, Estimate]:
        return {k: batch_means(v, self.cfg.seed) for k, v in self.series.items()}


def sample_chain(cfg: ChainConfig, observables: Sequence[Observable], algorithm: str = "heatbath") -> ChainRun:
    """Run one chain and record every observable at every retained sweep."""
    parts: dict[str, list] = {name: [] for name, _ in observables}
    last = None
    for block in iter_snapshots(cfg, algorithm):
        for name, fn in observables:
            parts[name].append(np.asarray(fn(block), dtype=np.float64))
        last = block[-1]
    if last is None:
        rng = make_rng(cfg.seed)
        last = initial_state(cfg, rng)[0]
    series = {k: (np.concatenate(v) if v else np.empty(0)) for k, v in parts.items()}
    return ChainRun(series, last.copy(), cfg)


def run_chain(cfg: ChainConfig, observables: Sequence[Observable]) -> dict[str, Estimate]:
    """Single-site heat-bath sweeps in lexicographic order; frozen sites never change.

    Heat-bath rather than Metropolis acceptance: with a fixed sweep order the
    Metropolis rule accepts every proposal at beta = 0 and the chain becomes periodic.
    """
    return sample_chain(cfg, observables, "heatbath").estimates()


def run_wolff(cfg: ChainConfig, observables: Sequence[Observable]) -> dict[str, Estimate]:
    check_wolff(cfg)
    return sample_chain(cfg, observables, "wolff").estimates()


# --------------------------------------------------------------------------
# observables


def spin_at(box: Box, s: Sequence[int], name: str | None = None) -> Observable:
    r, c = box.pad_index(s)
    return (name or f"sigma{tuple(s)}", lambda snaps: snaps[:, r, c].astype(np.float64))


def plus_indicator(box: Box, s: Sequence[int], name: str | None = None) -> Observable:
    r, c = box.pad_index(s)
    return (name or f"plus{tuple(s)}", lambda snaps: (snaps[:, r, c] > 0).astype(np.float64))


def magnetization(box: Box, name: str = "magnetization") -> Observable:
    return (name, lambda snaps: snaps[:, 1:-1, 1:-1].astype(np.float64).mean(axis=(1, 2)))


def config_index(box: Box, sites: Sequence[Sequence[int]], name: str = "config") -> Observable:
    """Bitmask of the spins at ``sites`` (bit k set iff site k is +1)."""
    idx = [box.pad_index(s) for s in sites]

    def fn(snaps):
        out = np.zeros(snaps.shape[0], dtype=np.int64)
        for k, (r, c) in enumerate(idx):
            out |= (snaps[:, r, c] > 0).astype(np.int64) << k
        return out.astype(np.float64)

    return (name, fn)


def exp_field(box: Box, s: Sequence[int], beta: float, h: float = 0.0, name: str | None = None) -> Observable:
    """exp(2 beta (sum of the four neighbours of s + h)): the weight ratio for raising a frozen -1 at s."""
    r, c = box.pad_index(s)

    def fn(snaps):
        f = (
            snaps[:, r - 1, c].astype(np.float64)
            + snaps[:, r + 1, c]
            + snaps[:, r, c - 1]
            + snaps[:, r, c + 1]
        )
        return np.exp(2.0 * beta * (f + h))

    return (name or f"expfield{tuple(s)}", fn)


# --------------------------------------------------------------------------
# coupled chains


@numba.njit(cache=True)
def _coupled_stats(a, b, free, in_f, in_g):
    """Returns (E(F,G) occurred, l-infinity diameter of the open cluster attached to F)."""
    side = a.shape[0]
    openm = np.zeros(a.shape, dtype=np.bool_)
    for r in range(1, side - 1):
        for c in range(1, side - 1):
            openm[r, c] = free[r, c] and not (a[r, c] > 0 and b[r, c] > 0)
    dr = (-1, 1, 0, 0)
    dc = (0, 0, -1, 1)
    seen = np.zeros(a.shape, dtype=np.bool_)
    qr = np.empty(side * side, dtype=np.int64)
    qc = np.empty(side * side, dtype=np.int64)
    # path from G to F through open sites
    head = 0
    tail = 0
    for r in range(side):
        for c in range(side):
            if in_g[r, c]:
                seen[r, c] = True
                qr[tail] = r
                qc[tail] = c
                tail += 1
    hit = False
    while head < tail and not hit:
        r = qr[head]
        c = qc[head]
        head += 1
        for d in range(4):
            rr = r + dr[d]
            cc = c + dc[d]
            if rr < 1 or cc < 1 or rr >= side - 1 or cc >= side - 1 or seen[rr, cc]:
                continue
            if in_f[rr, cc]:
                hit = True
                break
            if openm[rr, cc]:
                seen[rr, cc] = True
                qr[tail] = rr
                qc[tail] = cc
                tail += 1
    # open cluster attached to F
    seen[:, :] = False
    head = 0
    tail = 0
    for r in range(side):
        for c in range(side):
            if in_f[r, c]:
                for d in range(4):
                    rr = r + dr[d]
                    cc = c + dc[d]
                    if openm[rr, cc] and not in_f[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        qr[tail] = rr
                        qc[tail] = cc
                        tail += 1
    while head < tail:
        r = qr[head]
        c = qc[head]
        head += 1
        for d in range(4):
            rr = r + dr[d]
            cc = c + dc[d]
            if openm[rr, cc] and not in_f[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                qr[tail] = rr
                qc[tail] = cc
                tail += 1
    if tail == 0:
        return hit, 0
    rmin = side
    rmax = -1
    cmin = side
    cmax = -1
    for q in range(tail):
        rmin = min(rmin, qr[q])
        rmax = max(rmax, qr[q])
        cmin = min(cmin, qc[q])
        cmax = max(cmax, qc[q])
    return hit, max(rmax - rmin, cmax - cmin)


@dataclass(frozen=True)
class CoupledResult:
    event: Estimate
    diam_tail: dict[int, Estimate]
    event_series: np.ndarray
    diam_series: np.ndarray


def run_coupled(cfg: ChainConfig, F, G, radii: Sequence[int] = (0, 2, 4, 8)) -> CoupledResult:
    """Two independent chains with the same mask; per retained sweep, disagreement statistics.

    A site is open when it is updatable and the pair of spins is not (+1, +1).
    E(F, G) is the existence of a nearest-neighbour path from G to F whose
    intermediate sites are all open; C_F is the open cluster touching F.
    """
    F = {Site(*s) for s in F}
    G = {Site(*s) for s in G}
    if F & G:
        raise ValueError("F and G must be disjoint")
    if not F or not G or any(s not in cfg.box for s in F | G):
        raise ValueError("F and G must be nonempty and inside the box")
    kids = np.random.SeedSequence(int(cfg.seed) & (2**64 - 1)).spawn(2)
    rngs = [np.random.Generator(np.random.Philox(k)) for k in kids]
    shape = (cfg.box.side + 2,) * 2
    in_f = np.zeros(shape, dtype=np.bool_)
    in_g = np.zeros(shape, dtype=np.bool_)
    for s in F:
        in_f[cfg.box.pad_index(s)] = True
    for s in G:
        in_g[cfg.box.pad_index(s)] = True
    _, free = initial_state(cfg, make_rng(0))
    ev, dm = [], []
    for a_blk, b_blk in zip(iter_snapshots(cfg, rng=rngs[0]), iter_snapshots(cfg, rng=rngs[1])):
        for a, b in zip(a_blk, b_blk):
            hit, d = _coupled_stats(a, b, free, in_f, in_g)
            ev.append(float(hit))
            dm.append(d)
    ev = np.array(ev)
    dm = np.array(dm, dtype=np.int64)
    tails = {m: batch_means((dm > m).astype(np.float64), cfg.seed) for m in radii}
    return CoupledResult(batch_means(ev, cfg.seed), tails, ev, dm)
