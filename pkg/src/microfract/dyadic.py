"""Finite-depth dyadic-cube representations of compact subsets of [0,1]^d.

A :class:`DyadicSet` stores the surviving level-``depth`` cells of the unit
cube; every ancestor of a stored leaf counts as alive, so queries at a
coarser level return the projected cell set.  All operations are pure and
exact: coordinates are integers, distances are returned as ``Fraction``.

Distance computations exploit that for unions of same-grid cells the
sup-metric Hausdorff distance is always attained on the half-step lattice
(every constraint surface is axis-aligned at half-cell coordinates), so a
finite candidate scan is exact.  Euclidean cube-union distances in d >= 2
have algebraic optima off every fixed lattice and are not offered; in one
dimension the two metrics coincide.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from itertools import product as iter_product
from typing import Sequence

import numpy as np

from .errors import ResourceLimitError
from .seq import Word

__all__ = [
    "CubeIdx",
    "DyadicSet",
    "kx_set",
    "full_cube",
    "singleton_chain",
    "product",
    "hausdorff_distance",
    "zoom",
    "meets_open_cube",
    "decompose",
    "verify_sandwich",
    "to_json",
    "from_json",
    "pack_bits",
    "unpack_bits",
]

_MAX_LEAVES = 1 << 24


@dataclass(frozen=True)
class CubeIdx:
    """A dyadic cell: level ``n`` and per-axis integer coordinates in [0, 2^n)."""

    level: int
    coords: tuple[int, ...]

    def __post_init__(self):
        hi = 1 << self.level
        if any(not 0 <= c < hi for c in self.coords):
            raise ValueError(f"coords {self.coords} out of range at level {self.level}")

    @property
    def parent(self) -> "CubeIdx":
        if self.level == 0:
            raise ValueError("level-0 cell has no parent")
        return CubeIdx(self.level - 1, tuple(c >> 1 for c in self.coords))


@dataclass(frozen=True)
class DyadicSet:
    """An antichain-free union of level-``depth`` cells of [0,1]^d."""

    d: int
    depth: int
    leaves: frozenset

    @property
    def is_empty(self) -> bool:
        return not self.leaves

    def level_cells(self, m: int) -> frozenset:
        """Alive cells at level ``m`` <= depth (ancestors of the leaves)."""
        if not 0 <= m <= self.depth:
            raise ValueError(f"level {m} out of range for depth {self.depth}")
        k = self.depth - m
        if k == 0:
            return self.leaves
        return frozenset(tuple(c >> k for c in leaf) for leaf in self.leaves)

    def count(self, m: int) -> int:
        return len(self.level_cells(m))

    def __contains__(self, cube: CubeIdx) -> bool:
        return cube.coords in self.level_cells(cube.level)

    def _coord_array(self) -> np.ndarray:
        arr = np.fromiter(
            (c for leaf in sorted(self.leaves) for c in leaf),
            dtype=np.int64,
            count=len(self.leaves) * self.d,
        )
        return arr.reshape(len(self.leaves), self.d)


def _validated(d: int, depth: int, leaves) -> DyadicSet:
    hi = 1 << depth
    fs = frozenset(tuple(int(c) for c in leaf) for leaf in leaves)
    for leaf in fs:
        if len(leaf) != d or any(not 0 <= c < hi for c in leaf):
            raise ValueError(f"bad leaf {leaf} for d={d}, depth={depth}")
    return DyadicSet(d, depth, fs)


def kx_set(x: Word | str) -> DyadicSet:
    """Digit-restriction set of a word prefix: d=1, depth=len(x).

    Binary digit ``i`` of a leaf's left endpoint is forced to 0 where
    ``x(i) = 0`` and free where ``x(i) = 1``, so there are exactly
    ``2^sigma(x)`` leaves.
    """
    if isinstance(x, str):
        x = Word.from_string(x)
    n = len(x)
    if x.sigma > 24:
        raise ResourceLimitError(f"kx_set would have 2^{x.sigma} leaves")
    coords = [0]
    for i, b in enumerate(x.bits):
        if b:
            hi_bit = 1 << (n - 1 - i)
            coords += [c | hi_bit for c in coords]
    return DyadicSet(1, n, frozenset((c,) for c in coords))


def full_cube(d: int, depth: int) -> DyadicSet:
    """All cells of [0,1]^d at ``depth`` alive."""
    if (1 << (d * depth)) > _MAX_LEAVES:
        raise ResourceLimitError(f"full cube at d={d}, depth={depth} too large")
    side = range(1 << depth)
    return DyadicSet(d, depth, frozenset(iter_product(side, repeat=d)))


def singleton_chain(d: int, depth: int, corner: tuple[int, ...] | None = None) -> DyadicSet:
    """The single leaf cell at ``corner`` (default: the origin cell)."""
    corner = tuple(corner) if corner is not None else (0,) * d
    return _validated(d, depth, [corner])


def product(a: DyadicSet, b: DyadicSet) -> DyadicSet:
    """Cartesian product; leaf count multiplies, ambient dimensions add."""
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} != {b.depth}")
    if len(a.leaves) * len(b.leaves) > _MAX_LEAVES:
        raise ResourceLimitError("product would exceed the leaf budget")
    leaves = frozenset(la + lb for la in a.leaves for lb in b.leaves)
    return DyadicSet(a.d + b.d, a.depth, leaves)


# ---------------------------------------------------------------------------
# Hausdorff metric
# ---------------------------------------------------------------------------

def _intervals_half_units(s: DyadicSet) -> list[tuple[int, int]]:
    """Maximal closed intervals of a 1-D cell union, in units of 2^-(depth+1)."""
    cs = sorted(c for (c,) in s.leaves)
    out = []
    run_start = prev = cs[0]
    for c in cs[1:]:
        if c == prev + 1:
            prev = c
            continue
        out.append((2 * run_start, 2 * prev + 2))
        run_start = prev = c
    out.append((2 * run_start, 2 * prev + 2))
    return out


def _dist_to_intervals(x: int, starts: list[int], ends: list[int]) -> int:
    j = bisect_right(starts, x) - 1
    best = None
    if j >= 0:
        best = 0 if x <= ends[j] else x - ends[j]
    if j + 1 < len(starts):
        dnext = starts[j + 1] - x
        best = dnext if best is None else min(best, dnext)
    return best


def _directed_1d(a_iv, b_iv) -> int:
    starts = [s for s, _ in b_iv]
    ends = [e for _, e in b_iv]
    a_starts = [s for s, _ in a_iv]
    cands = []
    for s, e in a_iv:
        cands += [s, e]
    # Inside a gap of B the distance peaks at the midpoint; off-midpoint
    # optima inside A are interval endpoints, already candidates.
    for i in range(len(b_iv) - 1):
        mid = (ends[i] + starts[i + 1]) // 2
        j = bisect_right(a_starts, mid) - 1
        if j >= 0 and a_iv[j][0] <= mid <= a_iv[j][1]:
            cands.append(mid)
    return max(_dist_to_intervals(x, starts, ends) for x in cands)


def _half_lattice_candidates(s: DyadicSet) -> np.ndarray:
    cells = s._coord_array()
    offs = np.array(list(iter_product((0, 1, 2), repeat=s.d)), dtype=np.int64)
    pts = (2 * cells[:, None, :] + offs[None, :, :]).reshape(-1, s.d)
    return np.unique(pts, axis=0)


def _directed_sup(a: DyadicSet, b: DyadicSet) -> int:
    pts = _half_lattice_candidates(a)
    cells = b._coord_array()
    lo = 2 * cells
    hi = lo + 2
    best = 0
    chunk = max(1, (1 << 22) // max(1, cells.shape[0] * a.d))
    for i in range(0, pts.shape[0], chunk):
        p = pts[i:i + chunk][:, None, :]
        gaps = np.maximum(lo[None, :, :] - p, p - hi[None, :, :])
        np.maximum(gaps, 0, out=gaps)
        dist = gaps.max(axis=2).min(axis=1)
        best = max(best, int(dist.max()))
    return best


def hausdorff_distance(a: DyadicSet, b: DyadicSet, metric: str = "sup") -> Fraction:
    """Exact Hausdorff distance between two same-depth cell unions.

    ``metric="sup"`` is supported in every dimension; ``"euclidean"`` only
    for d = 1, where the two coincide.  The result is an exact rational
    (always a multiple of the half cell side).
    """
    if a.d != b.d or a.depth != b.depth:
        raise ValueError("operands must share ambient dimension and depth")
    if a.is_empty or b.is_empty:
        raise ValueError("Hausdorff distance needs nonempty operands")
    if metric not in ("sup", "euclidean"):
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "euclidean" and a.d > 1:
        raise ValueError(
            "euclidean cube-union distance is exact only for d=1; "
            "use metric='sup' (the metrics agree within a sqrt(d) factor)"
        )
    if a.d == 1:
        ai, bi = _intervals_half_units(a), _intervals_half_units(b)
        val = max(_directed_1d(ai, bi), _directed_1d(bi, ai))
    else:
        val = max(_directed_sup(a, b), _directed_sup(b, a))
    return Fraction(val, 1 << (a.depth + 1))


# ---------------------------------------------------------------------------
# Zooming and decomposition
# ---------------------------------------------------------------------------

def zoom(a: DyadicSet, m: int, u) -> DyadicSet:
    """The magnified view ``(2^m * a + u)`` clipped to [0,1]^d, at depth-m.

    ``u`` must be aligned to the result grid (denominator dividing
    ``2^(depth-m)``); cells that only touch the boundary of the unit cube
    are dropped.  Raises if the view is empty or ``m`` exceeds the depth.
    """
    if m < 0:
        raise ValueError("zoom exponent must be nonnegative")
    if m > a.depth:
        raise ValueError(f"zoom exponent {m} exceeds depth {a.depth}")
    new_depth = a.depth - m
    u = _as_tuple(u, a.d)
    shift = []
    for ua in u:
        t = Fraction(ua) * (1 << new_depth)
        if t.denominator != 1:
            raise ValueError(
                f"translation {ua} not aligned to the level-{new_depth} grid"
            )
        shift.append(int(t))
    hi = 1 << new_depth
    leaves = set()
    for leaf in a.leaves:
        moved = tuple(c + s for c, s in zip(leaf, shift))
        if all(0 <= c < hi for c in moved):
            leaves.add(moved)
    if not leaves:
        raise ValueError("zoom produced an empty view")
    return DyadicSet(a.d, new_depth, frozenset(leaves))


def meets_open_cube(a: DyadicSet) -> bool:
    """Finite-depth proxy for "meets (0,1)^d": some cell interior does.

    Full cells inside the unit cube always have interior in (0,1)^d, so for
    this representation the flag is simply nonemptiness; the limit object a
    deep set approximates may still sit on the boundary.
    """
    return not a.is_empty


def decompose(x: Word | str, n: int) -> list[tuple[Fraction, DyadicSet]]:
    """Split ``kx_set(x)`` into its level-``n`` pieces.

    Returns ``(u, piece)`` pairs where ``u`` runs over the ``2^sigma(x[:n])``
    admissible left endpoints at level ``n`` and ``piece`` is the full-depth
    cell set under ``u``.  Pieces have pairwise non-overlapping convex hulls
    and their union is the whole set.
    """
    if isinstance(x, str):
        x = Word.from_string(x)
    if n > len(x):
        raise ValueError(f"level {n} exceeds available prefix length {len(x)}")
    whole = kx_set(x)
    k = whole.depth - n
    groups: dict[int, set] = {}
    for (c,) in whole.leaves:
        groups.setdefault(c >> k, set()).add((c,))
    return [
        (Fraction(anc, 1 << n), DyadicSet(1, whole.depth, frozenset(g)))
        for anc, g in sorted(groups.items())
    ]


def verify_sandwich(e: DyadicSet, c: DyadicSet, translates: Sequence) -> bool:
    """Check ``c + v_0 <= e <= union_i (c + v_i)`` as cell-set inclusions."""
    if e.d != c.d or e.depth != c.depth:
        raise ValueError("operands must share ambient dimension and depth")
    if not translates:
        raise ValueError("at least one translate is required")
    shifted_sets = [frozenset(_translate_cells(c, v)) for v in translates]
    if not shifted_sets[0] <= e.leaves:
        return False
    union = frozenset().union(*shifted_sets)
    return e.leaves <= union


def _translate_cells(c: DyadicSet, v) -> set:
    v = _as_tuple(v, c.d)
    shift = []
    for va in v:
        t = Fraction(va) * (1 << c.depth)
        if t.denominator != 1:
            raise ValueError(f"translate {va} not aligned to the level-{c.depth} grid")
        shift.append(int(t))
    return {tuple(x + s for x, s in zip(leaf, shift)) for leaf in c.leaves}


def _as_tuple(u, d: int) -> tuple:
    if isinstance(u, (int, float, Fraction, str)):
        u = (u,) * d
    u = tuple(u)
    if len(u) != d:
        raise ValueError(f"expected {d} translation components, got {len(u)}")
    return u


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def to_json(a: DyadicSet) -> str:
    return json.dumps(
        {"d": a.d, "depth": a.depth, "leaves": sorted(map(list, a.leaves))},
        separators=(",", ":"),
    )


def from_json(s: str) -> DyadicSet:
    obj = json.loads(s)
    return _validated(obj["d"], obj["depth"], obj["leaves"])


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def push(self, bit: int):
        self.acc = (self.acc << 1) | bit
        self.nbits += 1
        if self.nbits == 8:
            self.buf.append(self.acc)
            self.acc = self.nbits = 0

    def bytes(self) -> bytes:
        if self.nbits:
            self.buf.append(self.acc << (8 - self.nbits))
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def pull(self) -> int:
        byte = self.data[self.pos >> 3]
        bit = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit


_MAGIC = b"DYB1"


def pack_bits(a: DyadicSet) -> bytes:
    """Compact binary form: breadth-first child bitmap per live cell."""
    w = _BitWriter()
    w_header = _MAGIC + bytes([a.d, a.depth])
    w.push(0 if a.is_empty else 1)
    offs = list(iter_product((0, 1), repeat=a.d))
    level_sets = [a.level_cells(m) for m in range(a.depth + 1)]
    for k in range(a.depth):
        nxt = level_sets[k + 1]
        for cell in sorted(level_sets[k]):
            for off in offs:
                child = tuple(2 * c + o for c, o in zip(cell, off))
                w.push(1 if child in nxt else 0)
    return w_header + w.bytes()


def unpack_bits(data: bytes) -> DyadicSet:
    if data[:4] != _MAGIC:
        raise ValueError("bad magic for packed dyadic set")
    d, depth = data[4], data[5]
    r = _BitReader(data[6:])
    if not r.pull():
        return DyadicSet(d, depth, frozenset())
    offs = list(iter_product((0, 1), repeat=d))
    alive = [(0,) * d]
    for _ in range(depth):
        nxt = []
        for cell in alive:
            for off in offs:
                if r.pull():
                    nxt.append(tuple(2 * c + o for c, o in zip(cell, off)))
        alive = sorted(nxt)
    return DyadicSet(d, depth, frozenset(alive))
