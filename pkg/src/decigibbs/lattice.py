"""Finite-box geometry on Z^2.

Sites are ordered lexicographically (first coordinate, then second), which is
exactly tuple order for :class:`Site`. Boxes are the centred squares
``[-n, n]^2``; numpy arrays holding a box use the layout ``arr[x + n, y + n]``,
so row-major traversal is lexicographic traversal.

Dual points ``(a + 1/2, b + 1/2)`` are stored as the integer pair ``(a, b)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

SAW_HARD_CAP = 16


class Site(NamedTuple):
    x: int
    y: int

    def __add__(self, other):  # type: ignore[override]
        return Site(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Site(self.x - other[0], self.y - other[1])

    def scaled(self, k: int) -> "Site":
        return Site(k * self.x, k * self.y)

    def is_even(self) -> bool:
        """True on the sublattice 2Z^2."""
        return self.x % 2 == 0 and self.y % 2 == 0


_STEPS = ((-1, 0), (0, -1), (0, 1), (1, 0))  # lexicographic order of s + step


def l1(a: Sequence[int], b: Sequence[int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def neighbors(s: Sequence[int]) -> list[Site]:
    """The four nearest neighbours of ``s`` in lexicographic order."""
    return [Site(s[0] + dx, s[1] + dy) for dx, dy in _STEPS]


def diam(sites: Iterable[Sequence[int]]) -> int:
    """l-infinity diameter of a finite point set (0 for the empty set)."""
    pts = list(sites)
    if not pts:
        return 0
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return max(max(xs) - min(xs), max(ys) - min(ys))


@dataclass(frozen=True)
class Box:
    """The centred square [-n, n]^2."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("half width must be non-negative")

    @property
    def side(self) -> int:
        return 2 * self.n + 1

    @property
    def size(self) -> int:
        return self.side ** 2

    @cached_property
    def sites(self) -> tuple[Site, ...]:
        r = range(-self.n, self.n + 1)
        return tuple(Site(x, y) for x in r for y in r)

    def __contains__(self, s) -> bool:
        return abs(s[0]) <= self.n and abs(s[1]) <= self.n

    def __iter__(self) -> Iterator[Site]:
        return iter(self.sites)

    def __len__(self) -> int:
        return self.size

    def index(self, s: Sequence[int]) -> tuple[int, int]:
        """Array index of ``s`` in an unpadded ``(side, side)`` array."""
        return s[0] + self.n, s[1] + self.n

    def pad_index(self, s: Sequence[int]) -> tuple[int, int]:
        """Array index of ``s`` in a ring-padded ``(side + 2, side + 2)`` array."""
        return s[0] + self.n + 1, s[1] + self.n + 1

    def on_edge(self, s: Sequence[int]) -> bool:
        return s in self and (abs(s[0]) == self.n or abs(s[1]) == self.n)

    @cached_property
    def ring(self) -> tuple[Site, ...]:
        """Exterior sites adjacent to the box, lexicographic."""
        return exterior_neighbors(self.sites)

    def even_sites(self) -> tuple[Site, ...]:
        return tuple(s for s in self.sites if s.is_even())

    def odd_sites(self) -> tuple[Site, ...]:
        return tuple(s for s in self.sites if not s.is_even())


def exterior_neighbors(sites: Iterable[Sequence[int]]) -> tuple[Site, ...]:
    inside = {Site(*s) for s in sites}
    out = {t for s in inside for t in neighbors(s) if t not in inside}
    return tuple(sorted(out))


def internal_bonds(sites: Sequence[Site]) -> list[tuple[Site, Site]]:
    """Nearest-neighbour pairs inside ``sites``, each listed once as (a, b) with a < b."""
    inside = set(sites)
    return [(a, b) for a in sorted(inside) for b in (a + (1, 0), a + (0, 1)) if b in inside]


# --------------------------------------------------------------------------
# boundary conditions and spin fields


@dataclass(frozen=True)
class Boundary:
    """Exterior spins: ``plus``, ``minus``, ``free`` or ``fixed``.

    ``fixed`` looks sites up in ``values``; ``default`` (if set) fills every
    site that is not listed, so ``Boundary.fixed(vals, default=1)`` encodes
    ``omega_L +_{L^c}``.
    """

    kind: str
    values: Mapping[Site, int] = field(default_factory=dict)
    default: int | None = None

    def __post_init__(self):
        if self.kind not in ("plus", "minus", "free", "fixed"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def plus(cls) -> "Boundary":
        return cls("plus")

    @classmethod
    def minus(cls) -> "Boundary":
        return cls("minus")

    @classmethod
    def free(cls) -> "Boundary":
        return cls("free")

    @classmethod
    def fixed(cls, values: Mapping, default: int | None = None) -> "Boundary":
        return cls("fixed", {Site(*k): int(v) for k, v in values.items()}, default)

    @classmethod
    def parse(cls, token: str) -> "Boundary":
        token = token.strip().lower()
        table = {"+": "plus", "plus": "plus", "-": "minus", "minus": "minus", "free": "free", "f": "free"}
        if token not in table:
            raise ValueError(f"unknown boundary {token!r}")
        return cls(table[token])

    @property
    def token(self) -> str:
        return {"plus": "+", "minus": "-", "free": "free", "fixed": "fixed"}[self.kind]

    def value(self, s: Sequence[int]) -> int:
        """Exterior spin at ``s``; 0 encodes a free (absent) neighbour."""
        if self.kind == "plus":
            return 1
        if self.kind == "minus":
            return -1
        if self.kind == "free":
            return 0
        v = self.values.get(Site(*s), self.default)
        if v is None:
            raise KeyError(f"boundary value missing at {tuple(s)}")
        return v

    def flipped(self) -> "Boundary":
        if self.kind == "plus":
            return Boundary.minus()
        if self.kind == "minus":
            return Boundary.plus()
        if self.kind == "free":
            return self
        d = None if self.default is None else -self.default
        return Boundary("fixed", {k: -v for k, v in self.values.items()}, d)


class SpinField:
    """A +-1 configuration on a box together with its boundary condition."""

    def __init__(self, box: Box, values, boundary: Boundary):
        arr = np.array(values, dtype=np.int8, copy=True)
        if arr.shape != (box.side, box.side):
            raise ValueError(f"expected shape {(box.side, box.side)}, got {arr.shape}")
        if not np.all(np.abs(arr) == 1):
            raise ValueError("spins must be +-1")
        if boundary.kind == "fixed":
            for s in box.ring:
                boundary.value(s)
        arr.setflags(write=False)
        self.box = box
        self.values = arr
        self.boundary = boundary

    @classmethod
    def constant(cls, n: int, spin: int, boundary: Boundary | None = None) -> "SpinField":
        box = Box(n)
        bd = boundary or (Boundary.plus() if spin > 0 else Boundary.minus())
        return cls(box, np.full((box.side, box.side), spin, dtype=np.int8), bd)

    @classmethod
    def from_sites(cls, n: int, minus: Iterable[Sequence[int]], boundary: Boundary | None = None) -> "SpinField":
        box = Box(n)
        arr = np.ones((box.side, box.side), dtype=np.int8)
        for s in minus:
            arr[box.index(s)] = -1
        return cls(box, arr, boundary or Boundary.plus())

    def __getitem__(self, s: Sequence[int]) -> int:
        if s in self.box:
            return int(self.values[self.box.index(s)])
        return self.boundary.value(s)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpinField)
            and self.box == other.box
            and self.boundary == other.boundary
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"SpinField(n={self.box.n}, bc={self.boundary.token})"

    def as_dict(self) -> dict[Site, int]:
        return {s: int(self.values[self.box.index(s)]) for s in self.box}

    def padded(self) -> np.ndarray:
        """``(side+2, side+2)`` int8 array with the ring filled in (0 where free)."""
        n = self.box.n
        out = np.zeros((self.box.side + 2,) * 2, dtype=np.int8)
        out[1:-1, 1:-1] = self.values
        for s in self.box.ring:
            out[s[0] + n + 1, s[1] + n + 1] = self.boundary.value(s)
        return out

    def flipped(self) -> "SpinField":
        return SpinField(self.box, -self.values, self.boundary.flipped())

    # text format --------------------------------------------------------
    def to_text(self) -> str:
        lines = [
            "# rows are x = -n..n, columns are y = -n..n; '+' is +1, '-' is -1",
        ]
        if self.boundary.kind == "fixed":
            lines.append("# fixed: grid includes the exterior ring; corners are '.'")
        lines.append(f"n={self.box.n} bc={self.boundary.token}")
        grid = self.padded() if self.boundary.kind == "fixed" else self.values
        m = grid.shape[0]
        for r in range(m):
            row = []
            for c in range(m):
                corner = self.boundary.kind == "fixed" and r in (0, m - 1) and c in (0, m - 1)
                row.append("." if corner else ("+" if grid[r, c] > 0 else "-"))
            lines.append("".join(row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SpinField":
        rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows:
            raise ValueError("empty field file")
        head = dict(tok.split("=", 1) for tok in rows[0].split())
        n = int(head["n"])
        bc = head.get("bc", "+")
        box = Box(n)
        grid = rows[1:]
        conv = {"+": 1, "-": -1, ".": 0}
        if bc == "fixed":
            if len(grid) != box.side + 2:
                raise ValueError("fixed boundary needs 2n+3 rows")
            arr = np.array([[conv[c] for c in r] for r in grid], dtype=np.int8)
            ring = {s: int(arr[box.pad_index(s)]) for s in box.ring}
            return cls(box, arr[1:-1, 1:-1], Boundary.fixed(ring))
        if len(grid) != box.side or any(len(r) != box.side for r in grid):
            raise ValueError("grid must be (2n+1) x (2n+1)")
        arr = np.array([[conv[c] for c in r] for r in grid], dtype=np.int8)
        return cls(box, arr, Boundary.parse(bc))


# --------------------------------------------------------------------------
# contours


@dataclass(frozen=True, eq=False)
class Contour:
    """A closed loop of dual edges.

    ``dual_points`` is the cyclic vertex sequence; identity (equality, hashing)
    is the edge set, so the starting point of the cycle does not matter.
    """

    dual_points: tuple[tuple[int, int], ...]
    edges: frozenset

    @property
    def length(self) -> int:
        return len(self.dual_points)

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        return isinstance(other, Contour) and self.edges == other.edges

    def __hash__(self) -> int:
        return hash(self.edges)

    @cached_property
    def interior(self) -> frozenset:
        return interior_ray_cast(self)

    @property
    def diam(self) -> int:
        return diam(self.dual_points)

    def surrounds(self, s: Sequence[int]) -> bool:
        return Site(*s) in self.interior


def _edge(p, q):
    return (p, q) if p < q else (q, p)


def _bond_dual_edge(a: Site, b: Site):
    """Dual edge crossing the bond {a, b} (a < b lexicographically)."""
    if b[0] == a[0] + 1:  # horizontal bond: vertical dual edge at x = a.x + 1/2
        return ((a[0], a[1] - 1), (a[0], a[1]))
    return ((a[0] - 1, a[1]), (a[0], a[1]))  # vertical bond: horizontal dual edge


def _pair_partner(v, arrive_from):
    """Corner rule at a four-valent dual vertex: west pairs with north, east with south."""
    d = (arrive_from[0] - v[0], arrive_from[1] - v[1])
    table = {(-1, 0): (0, 1), (0, 1): (-1, 0), (1, 0): (0, -1), (0, -1): (1, 0)}
    step = table[d]
    return (v[0] + step[0], v[1] + step[1])


def unequal_bonds_padded(pad: np.ndarray, origin: Sequence[int]) -> list[tuple[Site, Site]]:
    """Unequal nearest-neighbour pairs of a ring-padded array, skipping ring-ring pairs.

    ``origin`` is the lattice coordinate of ``pad[0, 0]``.
    """
    ox, oy = origin
    out = []
    hx = pad[:-1, 1:-1] != pad[1:, 1:-1]
    for r, c in zip(*np.nonzero(hx)):
        a = Site(int(r) + ox, int(c) + 1 + oy)
        out.append((a, a + (1, 0)))
    vy = pad[1:-1, :-1] != pad[1:-1, 1:]
    for r, c in zip(*np.nonzero(vy)):
        a = Site(int(r) + 1 + ox, int(c) + oy)
        out.append((a, a + (0, 1)))
    return out


def unequal_bonds(field: SpinField) -> list[tuple[Site, Site]]:
    """Nearest-neighbour pairs with different spins and at least one end in the box."""
    n = field.box.n
    return unequal_bonds_padded(field.padded(), (-n - 1, -n - 1))


def extract_contours(field: SpinField) -> tuple[Contour, ...]:
    """Closed dual loops separating unequal nearest-neighbour spins.

    At a dual vertex where four such edges meet, the loop arriving from the
    west leaves to the north and the loop arriving from the east leaves to the
    south; the rule is purely geometric, so a global spin flip leaves the
    contour set unchanged.
    """
    if field.boundary.kind == "free":
        raise ValueError("contours undefined without exterior spins")
    n = field.box.n
    return contours_from_padded(field.padded(), (-n - 1, -n - 1))


def contours_from_padded(pad: np.ndarray, origin: Sequence[int]) -> tuple[Contour, ...]:
    edges = {_edge(*_bond_dual_edge(a, b)) for a, b in unequal_bonds_padded(pad, origin)}
    return trace_loops(edges)


def trace_loops(edges) -> tuple[Contour, ...]:
    """Split an even-degree set of dual edges into loops with the corner rule."""
    adj: dict = {}
    for p, q in edges:
        adj.setdefault(p, []).append(q)
        adj.setdefault(q, []).append(p)
    if any(len(v) % 2 for v in adj.values()):
        raise ValueError("boundary ring does not close the contours")
    unused = set(edges)
    loops = []
    for start_edge in sorted(edges):
        if start_edge not in unused:
            continue
        p0, p1 = start_edge
        unused.discard(start_edge)
        pts = [p0]
        loop_edges = {start_edge}
        prev, cur = p0, p1
        while True:
            if cur == p0 and (len(adj[cur]) == 2 or _pair_partner(cur, prev) == p1):
                break
            pts.append(cur)
            nbrs = adj[cur]
            if len(nbrs) == 2:
                nxt = nbrs[0] if nbrs[1] == prev else nbrs[1]
            else:
                nxt = _pair_partner(cur, prev)
            e = _edge(cur, nxt)
            unused.discard(e)
            loop_edges.add(e)
            prev, cur = cur, nxt
        loops.append(Contour(tuple(pts), frozenset(loop_edges)))
    return tuple(loops)


def interior_ray_cast(contour: Contour) -> frozenset:
    """Sites enclosed by the loop, by parity of vertical-edge crossings to the right."""
    crossings: dict[int, list[int]] = {}
    for p, q in contour.edges:
        if p[0] == q[0]:  # vertical dual edge at x = p.x + 1/2 spanning height max(p.y, q.y)
            crossings.setdefault(max(p[1], q[1]), []).append(p[0])
    inside = set()
    for y, xs in crossings.items():
        xs = sorted(xs)
        # sites with x in (xs[2k], xs[2k+1]] ... crossing edges at a+1/2 for a in xs
        for k in range(0, len(xs) - 1, 2):
            for x in range(xs[k] + 1, xs[k + 1] + 1):
                inside.add(Site(x, y))
    return frozenset(inside)


def interior_flood_fill(contour: Contour) -> frozenset:
    """Sites not reachable from outside the bounding box without crossing the loop.

    Where the loop passes a dual vertex twice, the corner rule leaves the sites
    (a, b) and (a + 1, b + 1) around vertex (a, b) connected, so the fill may
    step diagonally there.
    """
    blocked = set(contour.edges)
    degree: dict = {}
    for p, q in contour.edges:
        degree[p] = degree.get(p, 0) + 1
        degree[q] = degree.get(q, 0) + 1
    pinch = {v for v, d in degree.items() if d == 4}
    xs = [p[0] for p in contour.dual_points]
    ys = [p[1] for p in contour.dual_points]
    x0, x1, y0, y1 = min(xs), max(xs) + 1, min(ys), max(ys) + 1
    start = Site(x0 - 1, y0 - 1)
    seen = {start}
    dq = deque([start])
    while dq:
        s = dq.popleft()
        for t in neighbors(s):
            if not (x0 - 1 <= t[0] <= x1 + 1 and y0 - 1 <= t[1] <= y1 + 1) or t in seen:
                continue
            a, b = (s, t) if s < t else (t, s)
            if _edge(*_bond_dual_edge(a, b)) in blocked:
                continue
            seen.add(t)
            dq.append(t)
        for v, t in (((s[0], s[1]), Site(s[0] + 1, s[1] + 1)), ((s[0] - 1, s[1] - 1), Site(s[0] - 1, s[1] - 1))):
            if v in pinch and t not in seen and x0 - 1 <= t[0] <= x1 + 1 and y0 - 1 <= t[1] <= y1 + 1:
                seen.add(t)
                dq.append(t)
    return frozenset(
        Site(x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1) if Site(x, y) not in seen
    )


# --------------------------------------------------------------------------
# telescoping sets L_{i,m}


@dataclass(frozen=True)
class TelescopeSet:
    anchor: Site
    m: int
    members: frozenset
    annulus: tuple[Site, ...]

    @property
    def v(self) -> int | None:
        """Annulus size; undefined for m = 0."""
        return None if self.m == 0 else len(self.annulus)

    def sorted_members(self) -> tuple[Site, ...]:
        return tuple(sorted(self.members))


def _half_ball(i: Site, m: int) -> set[Site]:
    return {
        Site(i.x + dx, i.y + dy)
        for dx in range(-m, 1)
        for dy in range(-(m - abs(dx)), m - abs(dx) + 1)
        if dx < 0 or dy <= 0
    }


def telescope_set(i: Sequence[int], m: int) -> TelescopeSet:
    """L_{i,m}: sites k <= i (lexicographic, k = i included) with |k - i|_1 <= m."""
    if m < 0:
        raise ValueError("m must be non-negative")
    i = Site(*i)
    members = _half_ball(i, m)
    annulus = tuple(sorted(members - _half_ball(i, m - 1))) if m > 0 else ()
    return TelescopeSet(i, m, frozenset(members), annulus)


def telescope_index(a: Iterable[Sequence[int]]) -> tuple[Site, int]:
    """The unique (i, m) with A containing i, A inside L_{i,m}, A not inside L_{i,m-1}."""
    pts = [Site(*s) for s in a]
    if not pts:
        raise ValueError("empty set")
    i = max(pts)
    return i, max(l1(k, i) for k in pts)


# --------------------------------------------------------------------------
# self-avoiding walks


def iter_saw(start: Sequence[int], box: Box | None, max_len: int) -> Iterator[tuple[Site, ...]]:
    """Self-avoiding paths from ``start`` with 1..max_len steps, depth first."""
    if max_len > SAW_HARD_CAP:
        raise ValueError("path enumeration budget exceeded")
    start = Site(*start)
    if box is not None and start not in box:
        raise ValueError("start outside box")
    path = [start]
    visited = {start}

    def rec():
        if len(path) > max_len:
            return
        for t in neighbors(path[-1]):
            if t in visited or (box is not None and t not in box):
                continue
            path.append(t)
            visited.add(t)
            yield tuple(path)
            yield from rec()
            visited.discard(t)
            path.pop()

    yield from rec()


def enumerate_saw(start: Sequence[int], box: Box | None, max_len: int) -> list[tuple[Site, ...]]:
    return list(iter_saw(start, box, max_len))
