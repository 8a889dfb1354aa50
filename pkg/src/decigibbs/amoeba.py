"""Amoebas over even-sublattice constraints, quenched lengths and path statistics.

An amoeba is an exterior contour with mutually external internal contours,
each internal one enclosing at least one even site. Compatibility with a
constraint xi, benignity and the quenched length are the finite, checkable
versions of the sparseness conditions on the set D(xi) of even minus sites.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .decimation import EvenConstraint, sparseness, to_original
from .lattice import (
    SAW_HARD_CAP,
    Box,
    Contour,
    Site,
    SpinField,
    _bond_dual_edge,
    diam,
    extract_contours,
    iter_saw,
    neighbors,
)

DEFAULT_LAMBDA = 0.25


def surrounds(outer: Contour, inner: Contour) -> bool:
    """``outer`` encloses ``inner``: distinct loops and inner's interior lies in outer's."""
    return outer != inner and bool(inner.interior) and inner.interior <= outer.interior


def _has_even(sites) -> bool:
    return any(s.is_even() for s in sites)


@dataclass(frozen=True)
class Amoeba:
    exterior: Contour
    internals: tuple[Contour, ...] = ()

    @property
    def size(self) -> int:
        return self.exterior.length + sum(g.length for g in self.internals)

    @property
    def diam(self) -> int:
        return self.exterior.diam

    @cached_property
    def interior(self) -> frozenset:
        """Int Gamma minus the interiors of the internal contours."""
        out = set(self.exterior.interior)
        for g in self.internals:
            out -= g.interior
        return frozenset(out)

    @property
    def contours(self) -> tuple[Contour, ...]:
        return (self.exterior,) + tuple(self.internals)


def is_amoeba(contours: Sequence[Contour]) -> bool:
    """Unique exterior contour, mutually external internals, each around an even site."""
    cs = list(contours)
    if not cs:
        raise ValueError("empty contour collection")
    ext = [c for c in cs if all(c == d or surrounds(c, d) for d in cs)]
    if len(ext) != 1:
        return False
    gamma = ext[0]
    internals = [c for c in cs if c != gamma]
    if any(surrounds(c, gamma) for c in internals):
        return False
    for a_idx, a in enumerate(internals):
        if not _has_even(a.interior):
            return False
        for b in internals[a_idx + 1 :]:
            if a.interior & b.interior:
                return False
    return True


def make_amoeba(contours: Sequence[Contour]) -> Amoeba:
    if not is_amoeba(contours):
        raise ValueError("not an amoeba")
    cs = list(contours)
    gamma = next(c for c in cs if all(c == d or surrounds(c, d) for d in cs))
    return Amoeba(gamma, tuple(c for c in cs if c != gamma))


# --------------------------------------------------------------------------
# compatibility and benignity


def _sides(contour: Contour) -> tuple[set, set]:
    """(sites just inside, sites just outside) across the loop's edges."""
    inside, outside = set(), set()
    interior = contour.interior
    for s in interior:
        for t in neighbors(s):
            if t in interior:
                continue
            a, b = (s, t) if s < t else (t, s)
            p, q = _bond_dual_edge(a, b)
            if ((p, q) if p < q else (q, p)) in contour.edges:
                inside.add(s)
                outside.add(t)
    return inside, outside


def realizable(G: Amoeba, xi: EvenConstraint) -> bool:
    """Paints -1 just inside Gamma and just outside each internal, +1 on the other sides.

    Realizable when the painting is self-consistent and agrees with xi on every
    painted even site inside the window.
    """
    paint: dict = {}

    def put(sites, v):
        for s in sites:
            if paint.setdefault(s, v) != v:
                return False
        return True

    ins, outs = _sides(G.exterior)
    if not (put(ins, -1) and put(outs, 1)):
        return False
    for g in G.internals:
        ins, outs = _sides(g)
        if not (put(ins, 1) and put(outs, -1)):
            return False
    for s, v in paint.items():
        if s.is_even() and s in xi.window and xi[s] != v:
            return False
    return True


def _boundary_component(G: Amoeba, D: frozenset) -> set:
    """Component of D inside Gamma (even-lattice adjacency) touching Gamma's inner boundary."""
    inside = {s for s in D if s in G.exterior.interior}
    ins, _ = _sides(G.exterior)
    near = {s for s in inside if s in ins or any(t in ins for t in neighbors(s))}
    comp = set(near)
    stack = list(near)
    while stack:
        s = stack.pop()
        for d in ((2, 0), (-2, 0), (0, 2), (0, -2)):
            t = Site(s[0] + d[0], s[1] + d[1])
            if t in inside and t not in comp:
                comp.add(t)
                stack.append(t)
    return comp


def compatibility_report(G: Amoeba, xi: EvenConstraint) -> dict:
    D = sparseness(xi).D
    plus = {s for s, v in xi.xi.items() if v == 1}
    covered = set().union(*(g.interior for g in G.internals)) if G.internals else set()
    c1 = realizable(G, xi)
    c2 = all(s in covered for s in plus if s in G.exterior.interior)
    c3 = all(any(s.is_even() and s in plus for s in g.interior) for g in G.internals)
    comp = _boundary_component(G, D)
    c4 = all(not (g.interior & comp) for g in G.internals)
    return {"realizable": c1, "plus_covered": c2, "internals_plus": c3, "component_clear": c4}


def is_compatible(G: Amoeba, xi: EvenConstraint) -> bool:
    for s in G.exterior.interior:
        if s.is_even() and s not in xi.window:
            raise ValueError("amoeba leaves the constraint window")
    return all(compatibility_report(G, xi).values())


def is_benign(G: Amoeba, xi: EvenConstraint, lam: float = DEFAULT_LAMBDA) -> bool:
    """|D(xi) cap Int G| <= lambda |G| for a compatible amoeba."""
    if not is_compatible(G, xi):
        raise ValueError("amoeba is not compatible with the constraint")
    D = sparseness(xi).D
    return bool(len(D & G.interior) <= lam * G.size)


# --------------------------------------------------------------------------
# quenched length


@dataclass(frozen=True)
class QuenchedLength:
    site: Site
    lam: float
    family: str
    value: int | None
    infinite: bool

    def __str__(self) -> str:
        return "inf" if self.infinite else str(self.value)


def _image_minus_grid(xi: EvenConstraint) -> tuple[np.ndarray, int]:
    n = xi.window.n // 2
    grid = np.zeros((2 * n + 1, 2 * n + 1), dtype=np.int64)
    for a in range(-n, n + 1):
        for b in range(-n, n + 1):
            grid[a + n, b + n] = xi[to_original((a, b))] == -1
    return grid, n


def quenched_length(
    xi: EvenConstraint,
    i: Sequence[int],
    lam: float = DEFAULT_LAMBDA,
    family: str = "boxes",
    max_len: int = 8,
) -> QuenchedLength:
    """Smallest l such that every family member T through image site i with diam(T) > l
    has |T cap D| <= lambda |T|, scanned inside the window.

    ``boxes``: squares of image sites (diam = side - 1, |T| = side^2).
    ``saw``: self-avoiding image paths from i with up to ``max_len`` steps.
    The value is reported infinite when a violation survives at the largest
    scale the window (or the path budget) allows.
    """
    i = Site(*i)
    grid, n = _image_minus_grid(xi)
    if abs(i[0]) > n or abs(i[1]) > n:
        raise ValueError("site outside the window")
    if family == "boxes":
        pref = np.zeros((2 * n + 2, 2 * n + 2), dtype=np.int64)
        pref[1:, 1:] = grid.cumsum(0).cumsum(1)
        r0, c0 = i[0] + n, i[1] + n
        side_max = 2 * n + 1
        worst = -1
        for s in range(1, side_max + 1):
            lo_r, hi_r = max(0, r0 - s + 1), min(r0, side_max - s)
            lo_c, hi_c = max(0, c0 - s + 1), min(c0, side_max - s)
            if lo_r > hi_r or lo_c > hi_c:
                continue
            rs = np.arange(lo_r, hi_r + 1)[:, None]
            cs = np.arange(lo_c, hi_c + 1)[None, :]
            counts = pref[rs + s, cs + s] - pref[rs, cs + s] - pref[rs + s, cs] + pref[rs, cs]
            if np.any(counts > lam * s * s):
                worst = s
        if worst == side_max:
            return QuenchedLength(i, lam, family, None, True)
        return QuenchedLength(i, lam, family, max(worst - 1, 0), False)
    if family == "saw":
        if max_len > SAW_HARD_CAP:
            raise ValueError("path enumeration budget exceeded")
        box = Box(n)
        worst, at_cap = -1, False
        for path in iter_saw(i, box, max_len):
            bad = sum(grid[p[0] + n, p[1] + n] for p in path)
            if bad > lam * len(path):
                d = diam(path)
                if d > worst:
                    worst = d
                at_cap = at_cap or len(path) - 1 == max_len
        if grid[i[0] + n, i[1] + n] > lam:
            worst = max(worst, 0)
        if at_cap:
            return QuenchedLength(i, lam, family, None, True)
        return QuenchedLength(i, lam, family, max(worst, 0), False)
    raise ValueError(f"unknown family {family!r}")


# --------------------------------------------------------------------------
# path large deviation statistic


def _on_edge(box: Box, s) -> bool:
    return abs(s[0]) == box.n or abs(s[1]) == box.n


def pld_statistic(field: SpinField, mstar: float, mode: str = "walks", max_len: int | None = None) -> float:
    """max over paths pi from the origin to the box edge of m* - mean(sigma on pi).

    ``walks``: dynamic programming over nearest-neighbour walks with up to
    |box| - 1 steps, an upper bound for the self-avoiding value.
    ``saw``: exact enumeration of self-avoiding paths with up to ``max_len`` steps.
    """
    if field.boundary.kind != "plus":
        raise ValueError("path statistic needs a plus boundary")
    box = field.box
    vals = field.values.astype(np.float64)
    edge = np.zeros_like(vals, dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    origin = box.index((0, 0))
    best = -math.inf
    if box.n == 0:
        return mstar - vals[origin]
    if mode == "walks":
        steps = box.size - 1 if max_len is None else max_len
        cur = np.full_like(vals, np.inf)
        cur[origin] = vals[origin]
        for k in range(1, steps + 1):
            nxt = np.full_like(vals, np.inf)
            nxt[1:, :] = np.minimum(nxt[1:, :], cur[:-1, :])
            nxt[:-1, :] = np.minimum(nxt[:-1, :], cur[1:, :])
            nxt[:, 1:] = np.minimum(nxt[:, 1:], cur[:, :-1])
            nxt[:, :-1] = np.minimum(nxt[:, :-1], cur[:, 1:])
            cur = nxt + vals
            m = cur[edge].min()
            if np.isfinite(m):
                best = max(best, mstar - m / (k + 1))
        return float(best)
    if mode == "saw":
        if max_len is None:
            raise ValueError("saw mode needs max_len")
        if max_len > SAW_HARD_CAP:
            raise ValueError("path enumeration budget exceeded")
        for path in iter_saw((0, 0), box, max_len):
            if _on_edge(box, path[-1]):
                avg = sum(field[p] for p in path) / len(path)
                best = max(best, mstar - avg)
        return float(best)
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# census


def group_amoebas(contours: Iterable[Contour]) -> list[Amoeba]:
    """One amoeba per maximal contour, with the maximal contours inside it that enclose an even site."""
    cs = list(contours)
    out = []
    for c in cs:
        if any(surrounds(d, c) for d in cs):
            continue
        inner = [d for d in cs if surrounds(c, d)]
        direct = [d for d in inner if not any(surrounds(e, d) for e in inner)]
        out.append(Amoeba(c, tuple(d for d in direct if _has_even(d.interior))))
    return out


def constraint_of(field: SpinField) -> EvenConstraint:
    """xi = the field's spins on its even sites (box half-width rounded down to even)."""
    n = field.box.n - (field.box.n % 2)
    win = Box(n)
    return EvenConstraint({s: field[s] for s in win.even_sites()}, win)


@dataclass(frozen=True)
class CensusRow:
    lo: int
    hi: int | None
    compatible: int
    benign: int

    @property
    def fraction(self) -> float:
        return self.benign / self.compatible if self.compatible else math.nan


def amoeba_census(samples: Iterable[SpinField], lam: float = DEFAULT_LAMBDA, bins: Sequence[int] = (0, 2, 4, 8, 16)) -> list[CensusRow]:
    """Benign fraction of compatible amoebas per diameter bin ``[bins[k], bins[k+1])``; the last bin is open."""
    edges = list(bins)
    comp = [0] * len(edges)
    ben = [0] * len(edges)
    for field in samples:
        xi = constraint_of(field)
        for G in group_amoebas(extract_contours(field)):
            try:
                ok = is_compatible(G, xi)
            except ValueError:
                continue
            if not ok:
                continue
            k = max(j for j, e in enumerate(edges) if G.diam >= e) if G.diam >= edges[0] else None
            if k is None:
                continue
            comp[k] += 1
            D = sparseness(xi).D
            ben[k] += len(D & G.interior) <= lam * G.size
    return [
        CensusRow(edges[k], edges[k + 1] if k + 1 < len(edges) else None, comp[k], ben[k])
        for k in range(len(edges))
    ]
