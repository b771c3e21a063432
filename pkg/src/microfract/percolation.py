"""Fractal percolation with generation-dependent retention probabilities.

Every (copy, cell) pair gets one uniform variate from a counter-based keyed
hash of the cell path, so variates are independent of evaluation order,
thread schedule, and retention schedule.  That single shared field is what
makes exact monotone coupling possible: running two schedules against the
same field keeps the lower-retention survivor set inside the higher one,
cell for cell, not merely in distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import ceil, log2, sqrt
from typing import Sequence

import numpy as np

from .dyadic import CubeIdx, DyadicSet
from .errors import ResourceLimitError
from .realize import TargetSpec, VarphiMap
from .seq import Word

__all__ = [
    "RetentionSchedule",
    "PercField",
    "PercSample",
    "Completion",
    "sample",
    "gw_extinction",
    "coupled_pair",
    "hawkes_experiment",
    "HawkesReport",
    "HawkesRow",
    "GammaStarConfig",
    "gamma_star",
    "estimate_survival_constant",
    "choose_copies",
    "select_anchor_cell",
]

_M64 = (1 << 64) - 1
_GOLD = 0x9E3779B97F4A7C15
_SALT = 0xD1B54A32D192ED03


def _mix64(z: int) -> int:
    z &= _M64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _M64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


class PercField:
    """Deterministic uniform field over (copy key, dyadic cell) pairs."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _M64
        self._base = _mix64(self.seed ^ _GOLD)
        self._copy_cache: dict = {}

    def _copy_hash(self, copy_key) -> int:
        h = self._copy_cache.get(copy_key)
        if h is None:
            h = self._base
            parts = copy_key if isinstance(copy_key, tuple) else (copy_key,)
            for p in parts:
                if isinstance(p, str):
                    p = int.from_bytes(p.encode(), "little") & _M64
                h = _mix64(h ^ _mix64((int(p) + _SALT) & _M64))
            self._copy_cache[copy_key] = h
        return h

    @staticmethod
    def _check_width(level: int, d: int):
        if level * d > 62:
            raise ResourceLimitError(
                f"cell paths at level {level}, d={d} exceed the 62-bit counter"
            )

    def variate(self, copy_key, level: int, coords: tuple[int, ...]) -> float:
        """Uniform [0,1) variate of one cell, identical to the vector path."""
        d = len(coords)
        self._check_width(level, d)
        code = 1 << (level * d)
        for a, c in enumerate(coords):
            code |= c << (level * a)
        v = _mix64(self._copy_hash(copy_key) ^ code)
        return (v >> 11) * 2.0 ** -53

    def variate_cube(self, copy_key, cube: CubeIdx) -> float:
        return self.variate(copy_key, cube.level, cube.coords)

    def variates(self, copy_key, level: int, coords: np.ndarray) -> np.ndarray:
        """Vectorized variates for an (m, d) array of same-level cells."""
        m, d = coords.shape
        self._check_width(level, d)
        code = np.full(m, 1 << (level * d), dtype=np.uint64)
        for a in range(d):
            code |= coords[:, a].astype(np.uint64) << np.uint64(level * a)
        h = np.uint64(self._copy_hash(copy_key))
        v = _mix64_np(code ^ h)
        return (v >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@dataclass(frozen=True)
class RetentionSchedule:
    """Per-generation exponents: cells at generation n survive with
    probability ``2^-alpha_n``; an optional limit extends the sequence."""

    alphas: tuple[Fraction, ...]
    limit: Fraction | None = None

    def __post_init__(self):
        if any(a < 0 for a in self.alphas) or (self.limit is not None and self.limit < 0):
            raise ValueError("retention exponents must be nonnegative")

    @classmethod
    def constant(cls, alpha) -> "RetentionSchedule":
        return cls((), Fraction(alpha))

    @classmethod
    def from_list(cls, alphas: Sequence, limit=None) -> "RetentionSchedule":
        return cls(tuple(Fraction(a) for a in alphas),
                   None if limit is None else Fraction(limit))

    def alpha(self, n: int) -> Fraction:
        if n < 1:
            raise ValueError("generations start at 1")
        if n <= len(self.alphas):
            return self.alphas[n - 1]
        if self.limit is not None:
            return self.limit
        raise ValueError(f"schedule undefined at generation {n}")

    def retention(self, n: int) -> float:
        return 2.0 ** -float(self.alpha(n))

    def dominates(self, other: "RetentionSchedule", depth: int) -> bool:
        """Pointwise ``alpha_n >= other.alpha_n`` through ``depth``."""
        return all(self.alpha(n) >= other.alpha(n) for n in range(1, depth + 1))

    def validate_dim(self, d: int, depth: int):
        for n in range(1, depth + 1):
            if self.alpha(n) > d:
                raise ValueError(f"alpha_{n}={self.alpha(n)} exceeds ambient dim {d}")


@dataclass(frozen=True)
class Completion:
    """Marker point for a cell that died: the lexicographically least deepest
    reference-set cell inside it, with the level at which its cube died."""

    level: int
    cell: tuple[int, ...]
    z_cell: tuple[int, ...]


@dataclass(frozen=True)
class PercSample:
    survivors: DyadicSet
    completions: tuple[Completion, ...]
    depth: int
    copy_key: object
    level_counts: tuple[int, ...] = ()  # alive cells per level, index 0 = root


def _expand(frontier: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m, d = frontier.shape
    kids = (2 * frontier[:, None, :] + offsets[None, :, :]).reshape(-1, d)
    parents = np.repeat(np.arange(m), offsets.shape[0])
    return kids, parents


def _child_offsets(d: int) -> np.ndarray:
    out = np.zeros((1 << d, d), dtype=np.int64)
    for i in range(1 << d):
        for a in range(d):
            out[i, a] = (i >> (d - 1 - a)) & 1
    return out


def _pack(coords: np.ndarray, level: int) -> np.ndarray:
    code = np.zeros(coords.shape[0], dtype=np.int64)
    for a in range(coords.shape[1]):
        code = (code << level) | coords[:, a]
    return code


class _KRestriction:
    """Per-level membership filter plus deepest-cell lookup for a reference set."""

    def __init__(self, k_set: DyadicSet):
        self.k_set = k_set
        self.depth = k_set.depth
        self.d = k_set.d
        self._leaf_codes = np.sort(_pack(k_set._coord_array(), k_set.depth))
        self._level_codes = {}

    def codes(self, level: int) -> np.ndarray:
        c = self._level_codes.get(level)
        if c is None:
            c = np.unique(self._leaf_codes >> ((self.depth - level) * self.d))
            self._level_codes[level] = c
        return c

    def member_mask(self, coords: np.ndarray, level: int) -> np.ndarray:
        codes = _pack(coords, level)
        table = self.codes(level)
        idx = np.searchsorted(table, codes)
        idx[idx == len(table)] = 0
        return table[idx] == codes

    def lex_least_leaf(self, cell: tuple[int, ...], level: int) -> tuple[int, ...]:
        shift = (self.depth - level) * self.d
        code = 0
        for c in cell:
            code = (code << level) | int(c)
        i = np.searchsorted(self._leaf_codes, code << shift)
        leaf_code = int(self._leaf_codes[i])
        if leaf_code >> shift != code:
            raise ValueError(f"cell {cell} does not meet the reference set")
        mask = (1 << self.depth) - 1
        leaf = []
        for a in range(self.d - 1, -1, -1):
            leaf.append((leaf_code >> (a * self.depth)) & mask)
        return tuple(leaf)


def sample(schedule: RetentionSchedule, field: PercField, copy_key,
           depth: int, d: int = 1, k_set: DyadicSet | None = None,
           completions: bool = False) -> PercSample:
    """Run one percolation to ``depth``.

    With ``k_set`` given, only cells meeting the reference set are grown
    (sufficient for anything about the intersection with it), and dead ends
    can be recorded as completion points.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    restriction = None
    if k_set is not None:
        if k_set.depth < depth:
            raise ValueError("reference set must be rasterized at least to depth")
        d = k_set.d
        restriction = _KRestriction(k_set)
    schedule.validate_dim(d, depth)
    offsets = _child_offsets(d)
    frontier = np.zeros((1, d), dtype=np.int64)
    done: list[Completion] = []
    level_counts = [1]
    for level in range(1, depth + 1):
        kids, parents = _expand(frontier, offsets)
        if restriction is not None:
            keep = restriction.member_mask(kids, level)
            kids, parents = kids[keep], parents[keep]
        u = field.variates(copy_key, level, kids)
        alive = u <= schedule.retention(level)
        if completions and restriction is not None:
            alive_parents = set(parents[alive].tolist())
            for p in range(frontier.shape[0]):
                if p not in alive_parents:
                    cell = tuple(frontier[p].tolist())
                    done.append(Completion(
                        level - 1, cell,
                        restriction.lex_least_leaf(cell, level - 1)))
        frontier = kids[alive]
        level_counts.append(frontier.shape[0])
        if frontier.shape[0] == 0:
            level_counts += [0] * (depth - level)
            break
    leaves = frozenset(map(tuple, frontier.tolist())) if frontier.shape[0] else frozenset()
    return PercSample(DyadicSet(d, depth, leaves), tuple(done), depth, copy_key,
                      tuple(level_counts))


def coupled_pair(sched_a: RetentionSchedule, sched_b: RetentionSchedule,
                 field: PercField, copy_key, depth: int, d: int = 1,
                 k_set: DyadicSet | None = None) -> tuple[PercSample, PercSample]:
    """Two schedules against identical variates; if ``sched_a`` dominates
    pointwise, its survivors are contained in the other's, exactly."""
    sa = sample(sched_a, field, copy_key, depth, d, k_set)
    sb = sample(sched_b, field, copy_key, depth, d, k_set)
    return sa, sb


def gw_extinction(p: float, children: int) -> float:
    """Extinction probability of a branching process with Binomial(children, p)
    offspring: the smallest fixed point of ``q = (1 - p + p*q)^children``.

    Monotone iteration from 0; the children=2 case uses the closed-form root
    of the quadratic.
    """
    if not 0 <= p <= 1:
        raise ValueError("retention probability must lie in [0, 1]")
    if children < 1:
        raise ValueError("need at least one child per cell")
    if p * children <= 1:
        return 1.0
    if children == 2:
        disc = sqrt(1.0 - 4.0 * p * (1.0 - p))
        return ((1.0 - disc) / (2.0 * p)) ** 2
    q = 0.0
    for _ in range(1_000_000):
        q_next = (1.0 - p + p * q) ** children
        if abs(q_next - q) < 1e-14:
            return q_next
        q = q_next
    return q


# ---------------------------------------------------------------------------
# Intersection-survival experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HawkesRow:
    depth: int
    survival: float
    ci_low: float
    ci_high: float
    cond_slope: float | None
    n_alive: int


@dataclass(frozen=True)
class HawkesReport:
    beta: Fraction
    trials: int
    rows: tuple[HawkesRow, ...]
    survival_nonincreasing: bool
    slope_flagged_levels: tuple[int, ...]

    def to_csv(self) -> str:
        lines = ["depth,survival_frac,ci_low,ci_high,cond_slope"]
        for r in self.rows:
            slope = "" if r.cond_slope is None else repr(r.cond_slope)
            lines.append(f"{r.depth},{r.survival!r},{r.ci_low!r},{r.ci_high!r},{slope}")
        return "\n".join(lines) + "\n"


def hawkes_experiment(k_set: DyadicSet | None, beta, depths: Sequence[int],
                      trials: int, field: PercField, d: int = 1,
                      copy_prefix: str = "hawkes") -> HawkesReport:
    """Monte Carlo survival of ``K intersect Gamma(beta)`` at finite depths.

    One percolation per trial is truncated at ``max(depths)``; each trial's
    survival flags at the several depths therefore come from one coupled run,
    making the per-depth survival fractions monotone by construction rather
    than only statistically.
    """
    beta = Fraction(beta)
    depths = sorted(set(depths))
    max_depth = depths[-1]
    if k_set is not None:
        d = k_set.d
        restriction = _KRestriction(k_set)
        if k_set.depth < max_depth:
            raise ValueError("reference set shallower than requested depth")
    else:
        restriction = None
    if not 0 < beta < d:
        raise ValueError(f"beta must lie in (0, {d})")
    schedule = RetentionSchedule.constant(beta)
    offsets = _child_offsets(d)
    retention = [0.0] + [schedule.retention(n) for n in range(1, max_depth + 1)]

    alive_through = np.zeros((trials, len(depths)), dtype=bool)
    counts_at = np.zeros((trials, len(depths)), dtype=np.int64)
    for t in range(trials):
        frontier = np.zeros((1, d), dtype=np.int64)
        key = (copy_prefix, t)
        level_reached = 0
        counts = {}
        for level in range(1, max_depth + 1):
            kids, _ = _expand(frontier, offsets)
            if restriction is not None:
                kids = kids[restriction.member_mask(kids, level)]
            if kids.shape[0]:
                u = field.variates(key, level, kids)
                frontier = kids[u <= retention[level]]
            else:
                frontier = kids
            if frontier.shape[0] == 0:
                break
            level_reached = level
            if level in depths:
                counts[level] = frontier.shape[0]
        for j, dep in enumerate(depths):
            if level_reached >= dep:
                alive_through[t, j] = True
                counts_at[t, j] = counts[dep]

    rows = []
    flagged = []
    for j, dep in enumerate(depths):
        n_alive = int(alive_through[:, j].sum())
        frac = n_alive / trials
        half = 1.96 * sqrt(max(frac * (1 - frac), 1e-12) / trials)
        if n_alive:
            slopes = np.log2(counts_at[alive_through[:, j], j]) / dep
            cond = float(slopes.mean())
        else:
            cond = None
            flagged.append(dep)
        rows.append(HawkesRow(dep, frac, max(0.0, frac - half),
                              min(1.0, frac + half), cond, n_alive))
    noninc = all(rows[i].survival >= rows[i + 1].survival for i in range(len(rows) - 1))
    return HawkesReport(beta, trials, tuple(rows), noninc, tuple(flagged))


def estimate_survival_constant(k_set: DyadicSet, beta, depth: int, trials: int,
                               field: PercField, copy_prefix="chat") -> float:
    """Monte Carlo estimate of P(K meets the retention-beta limit set), taken
    at finite depth (an upper bound for the true constant)."""
    rep = hawkes_experiment(k_set, beta, [depth], trials, field,
                            copy_prefix=copy_prefix)
    return rep.rows[0].survival


def choose_copies(c_hat: float, cap: int = 64) -> int:
    """Copies needed so that all of them missing is unlikely: the smallest i
    with ``(1 - c_hat/2)^i < 1/2`` (half the estimate as a safety margin),
    hard-capped."""
    if not 0 < c_hat <= 1:
        raise ValueError("survival estimate must lie in (0, 1]")
    margin = c_hat / 2
    i = max(1, ceil(log2(0.5) / log2(1 - margin))) if margin < 1 else 1
    while (1 - margin) ** i >= 0.5:
        i += 1
    return min(i, cap)


def select_anchor_cell(k_set: DyadicSet, window_level: int | None = None) -> tuple[int, ...]:
    """Heuristic full-dimension point: the leaf under the mid-level cell with
    the steepest local count slope, ties broken lexicographically."""
    if k_set.is_empty:
        raise ValueError("cannot anchor an empty set")
    m = k_set.depth // 2 if window_level is None else window_level
    m = max(1, min(k_set.depth, m))
    shift = k_set.depth - m
    groups: dict[tuple, int] = {}
    for leaf in k_set.leaves:
        anc = tuple(c >> shift for c in leaf)
        groups[anc] = groups.get(anc, 0) + 1
    top = max(groups.values())
    best = min(a for a, c in groups.items() if c == top)
    return min(leaf for leaf in k_set.leaves
               if tuple(c >> shift for c in leaf) == best)


# ---------------------------------------------------------------------------
# The nested-cube union construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaStarConfig:
    """Plan for the union of percolations in nested cubes around an anchor.

    ``betas[k-1]`` is the dimension approximant for stage k, ``copies[k-1]``
    the number of independent runs there, ``c_hats[k-1]`` the estimated
    survival constants; stages live in the level-k ancestors of ``y0_leaf``.
    """

    gamma: Fraction
    betas: tuple[Fraction, ...]
    copies: tuple[int, ...]
    c_hats: tuple[float, ...]
    y0_leaf: tuple[int, ...]
    k_max: int

    def __post_init__(self):
        if not len(self.betas) == len(self.copies) == len(self.c_hats) == self.k_max:
            raise ValueError("need betas, copies, c_hats per stage")
        for b in self.betas:
            if not 0 < b < self.gamma:
                raise ValueError(f"beta {b} must lie in (0, gamma)")
        if any(self.betas[i] > self.betas[i + 1] for i in range(self.k_max - 1)):
            raise ValueError("betas must be nondecreasing")
        for c, i in zip(self.c_hats, self.copies):
            if i < 1 or not 0 < c <= 1:
                raise ValueError("bad copy count or survival estimate")
            if (1 - c) ** i >= 0.5:
                raise ValueError(
                    f"(1 - {c})^{i} >= 1/2: not enough copies for the estimate"
                )


def gamma_star(config: GammaStarConfig, x: Word | str, spec: TargetSpec,
               field: PercField, depth: int, k_set: DyadicSet,
               varphi: VarphiMap | None = None) -> PercSample:
    """Union over stages k and copies i of reference-restricted percolations
    in the nested cubes around the anchor, with completion points, plus the
    anchor cell itself.

    The retention schedule of branch ``x`` is ``alpha_n = gamma - phi(x[:n])``
    with the positively-clamped value map, so branches with pointwise-ordered
    values yield exactly nested samples under the shared field.
    """
    if isinstance(x, str):
        x = Word.from_string(x)
    if k_set.depth != depth:
        raise ValueError("reference set must be rasterized exactly at depth")
    d = k_set.d
    if config.gamma > d:
        raise ValueError(f"gamma {config.gamma} exceeds ambient dimension {d}")
    vm = varphi or VarphiMap(spec, positive_gamma=config.gamma)
    if len(x) < depth:
        raise ValueError(f"branch prefix must have at least {depth} bits")
    alphas = tuple(config.gamma - vm.value(x.prefix(n)) for n in range(1, depth + 1))
    schedule = RetentionSchedule.from_list(alphas)
    leaves: set = {config.y0_leaf}
    done: list[Completion] = []
    for k in range(1, config.k_max + 1):
        local_depth = depth - k
        if local_depth < 1:
            break
        q = tuple(c >> local_depth for c in config.y0_leaf)
        base = tuple(qc << local_depth for qc in q)
        local_leaves = set()
        for leaf in k_set.leaves:
            if tuple(c >> local_depth for c in leaf) == q:
                local_leaves.add(tuple(c - b for c, b in zip(leaf, base)))
        if not local_leaves:
            continue
        local_k = DyadicSet(d, local_depth, frozenset(local_leaves))
        for i in range(1, config.copies[k - 1] + 1):
            smp = sample(schedule, field, ("gstar", k, i), local_depth,
                         d, local_k, completions=True)
            for leaf in smp.survivors.leaves:
                leaves.add(tuple(c + b for c, b in zip(leaf, base)))
            for comp in smp.completions:
                cell = tuple(c + (qc << comp.level) for c, qc in zip(comp.cell, q))
                z = tuple(c + b for c, b in zip(comp.z_cell, base))
                done.append(Completion(comp.level + k, cell, z))
    return PercSample(DyadicSet(d, depth, frozenset(leaves)), tuple(done),
                      depth, ("gstar", str(x)))
