"""Ball-tree families of compact subsets of a compact metric space.

The space is presented as a finite net with a metric (Euclidean coordinates
or an explicit distance matrix); all packings and counts run on the net, so
any claim the net cannot certify surfaces as a :class:`ResolutionExhausted`
error instead of a silent bias.

A family member C(x) is grown along a binary word: at each extension the
construction places a packing of exactly ``floor(2^(phi*l))`` net points at
separation ``2^-l`` inside a reference ball, where ``phi`` is the branch's
target value and ``l`` is the smallest admissible scale of the level
schedule.  The box variant packs inside the origin ball and keeps every
older center (the origin is swapped into each new packing); the packing
variant refines every ball separately and keeps only the new points.

Scheduling note: the level function ``g(n) = max(n+1, P_n(K))`` feeds the
net's own packing number back into the next radius exponent, so radii
shrink doubly-exponentially and the points placed at one stage inflate
``P`` at the next; finite nets therefore certify only an initial segment
(typically one or two extensions) before exhausting.  ``g_mode="linear"``
(``g(n) = n+1``) is available as a diagnostic to exercise deeper structure
on purpose-built nets; reports record which mode produced the data.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvariantViolation, ResolutionExhausted
from .realize import TargetSpec, VarphiMap
from .seq import Word

__all__ = [
    "MetricSpaceView",
    "EuclideanNet",
    "MatrixNet",
    "suggest_origin",
    "KSeq",
    "level_schedule",
    "BallTree",
    "BallLevel",
    "root_tree",
    "extend_box",
    "extend_packing",
    "family_member",
    "FamilyDimReport",
    "family_dim_report",
    "FamilyAssembly",
    "packing_family_assembly",
    "floor_pow2",
    "count_reaches_pow2",
]


def _iroot(x: int, q: int) -> int:
    """floor(x ** (1/q)) by integer Newton iteration."""
    if x < 2:
        return x
    r = 1 << (x.bit_length() // q + 1)
    while True:
        nr = ((q - 1) * r + x // r ** (q - 1)) // q
        if nr >= r:
            return r
        r = nr


def floor_pow2(alpha: Fraction, ell: int) -> int:
    """Exact ``floor(2^(alpha*ell))`` for rational alpha >= 0."""
    e = Fraction(alpha) * ell
    p, q = e.numerator, e.denominator
    if p < 0:
        raise ValueError("exponent must be nonnegative")
    return (1 << p) if q == 1 else _iroot(1 << p, q)


def count_reaches_pow2(count: int, alpha: Fraction, ell: int) -> bool:
    """Exact test ``count >= 2^(alpha*ell)``."""
    e = Fraction(alpha) * ell
    if count < 1:
        return e <= 0 and count >= 1
    return count ** e.denominator >= 1 << e.numerator


def _ceil_pow2(alpha: Fraction, ell: int) -> int:
    f = floor_pow2(alpha, ell)
    return f if count_reaches_pow2(f, alpha, ell) else f + 1


# ---------------------------------------------------------------------------
# Net presentations
# ---------------------------------------------------------------------------

class MetricSpaceView:
    """Finite net presentation; subclasses supply the metric."""

    y0: int

    @property
    def n_points(self) -> int:
        raise NotImplementedError

    def dists_from(self, i: int, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dist(self, i: int, j: int) -> float:
        return float(self.dists_from(i, np.array([j]))[0])

    def ball(self, center: int, r: float) -> np.ndarray:
        """Indices (ascending) of net points within closed distance r."""
        idx = np.arange(self.n_points)
        return idx[self.dists_from(center, idx) <= r]

    # minimal pairwise distance when known; lets packing numbers saturate
    min_separation: float | None = None

    def greedy_packing_indices(self, candidates: np.ndarray, delta: float,
                               stop_at: int | None = None) -> list[int]:
        """Canonical packing: greedy over candidates in ascending index order."""
        if self.min_separation is not None and delta < self.min_separation:
            # every pair is already separated; the candidates pack as-is
            out = [int(c) for c in candidates]
            return out if stop_at is None else out[:stop_at]
        alive = np.ones(len(candidates), dtype=bool)
        chosen: list[int] = []
        while True:
            rest = np.nonzero(alive)[0]
            if rest.size == 0:
                return chosen
            i = int(rest[0])
            chosen.append(int(candidates[i]))
            if stop_at is not None and len(chosen) >= stop_at:
                return chosen
            d = self.dists_from(int(candidates[i]), candidates[rest])
            alive[rest[d <= delta]] = False

    def packing_count(self, center: int, r: float, delta: float,
                      stop_at: int | None = None) -> int:
        return len(self.greedy_packing_indices(self.ball(center, r), delta, stop_at))

    def global_packing_number(self, delta: float) -> int:
        if self.min_separation is not None and delta < self.min_separation:
            return self.n_points
        return len(self.greedy_packing_indices(np.arange(self.n_points), delta))


class EuclideanNet(MetricSpaceView):
    def __init__(self, points, y0: int | None = None,
                 min_separation: float | None = None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        self.y0 = 0 if y0 is None else int(y0)
        self.min_separation = min_separation

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def dists_from(self, i: int, idx: np.ndarray) -> np.ndarray:
        diff = self.points[np.asarray(idx, dtype=np.int64)] - self.points[i]
        return np.sqrt((diff * diff).sum(axis=1))

    @classmethod
    def grid_2d(cls, side: int, y0_center: bool = True) -> "EuclideanNet":
        """side x side grid on [0,1]^2 (a net of resolution ~1/side)."""
        xs = np.linspace(0.0, 1.0, side)
        pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
        y0 = (side // 2) * side + side // 2 if y0_center else 0
        return cls(pts, y0=y0, min_separation=1.0 / (side - 1))

    @classmethod
    def from_csv(cls, path: str, y0: int = 0) -> "EuclideanNet":
        """Load a net from a CSV of coordinates, one point per row."""
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(pts, y0=y0)


class MatrixNet(MetricSpaceView):
    def __init__(self, dmatrix, y0: int = 0, check_triples: int = 64, seed: int = 0):
        dm = np.asarray(dmatrix, dtype=float)
        if dm.ndim != 2 or dm.shape[0] != dm.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(dm, dm.T) or np.diagonal(dm).any():
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        rng = np.random.default_rng(seed)
        n = dm.shape[0]
        for _ in range(min(check_triples, n ** 3)):
            i, j, k = rng.integers(0, n, size=3)
            if dm[i, k] > dm[i, j] + dm[j, k] + 1e-12:
                raise ValueError(f"triangle inequality fails on ({i},{j},{k})")
        self.dm = dm
        self.y0 = int(y0)
        off = dm[~np.eye(n, dtype=bool)]
        self.min_separation = float(off.min()) if off.size else None

    @property
    def n_points(self) -> int:
        return self.dm.shape[0]

    def dists_from(self, i: int, idx: np.ndarray) -> np.ndarray:
        return self.dm[i, np.asarray(idx, dtype=np.int64)]

    @classmethod
    def from_csv(cls, path: str, y0: int = 0) -> "MatrixNet":
        """Load an explicit distance matrix from CSV."""
        return cls(np.loadtxt(path, delimiter=",", ndmin=2), y0=y0)


def suggest_origin(view: MetricSpaceView, radius: float = 0.25) -> int:
    """Point with the most neighbors within ``radius`` (a crude stand-in for
    a full-dimension point), ties to the smallest index."""
    best, best_n = 0, -1
    for i in range(view.n_points):
        n = len(view.ball(i, radius))
        if n > best_n:
            best, best_n = i, n
    return best


# ---------------------------------------------------------------------------
# Level schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KSeq:
    """Radius exponents ``k_0 < k_1 < ...`` with their witnesses.

    ``g_values[n] = g(k_n)``; ``witnesses[n]`` is a scale j in
    ``[g(k_n), k_{n+1} - gap]`` whose ball packing certifies the
    ``alphas[n]``-exponent bound.
    """

    variant: str
    alphas: tuple[Fraction, ...]
    ks: tuple[int, ...]
    g_values: tuple[int, ...]
    witnesses: tuple[int, ...]
    g_mode: str

    @property
    def levels(self) -> int:
        return len(self.ks) - 1


def _g_of(view: MetricSpaceView, k: int, g_mode: str) -> int:
    if g_mode == "linear":
        return k + 1
    return max(k + 1, view.global_packing_number(2.0 ** -k))


def level_schedule(view: MetricSpaceView, alphas: Sequence, variant: str,
                   levels: int | None = None, j_cap: int = 200,
                   g_mode: str = "strict") -> KSeq:
    """Choose ``k_0 = 0 < k_1 < ...`` with certified packing witnesses.

    Box variant: the witness ball sits at the origin point; packing variant:
    every net point must admit a witness, and the recorded j is the largest
    needed.  Raises :class:`ResolutionExhausted` (with the failing level)
    when no admissible scale exists below ``j_cap`` -- on finite nets with
    the strict level function this is the norm beyond a couple of levels.
    """
    if variant not in ("box", "packing"):
        raise ValueError(f"unknown variant {variant!r}")
    if g_mode not in ("strict", "linear"):
        raise ValueError(f"unknown g_mode {g_mode!r}")
    alphas = tuple(Fraction(a) for a in alphas)
    if levels is None:
        levels = len(alphas)
    if len(alphas) < levels:
        raise ValueError("need one alpha per level")
    gap = 3 if variant == "box" else 2
    ks, gs, js = [0], [], []
    for n in range(levels):
        g_kn = _g_of(view, ks[n], g_mode)
        r = 2.0 ** -g_kn
        alpha = alphas[n]
        centers = [view.y0] if variant == "box" else list(range(view.n_points))
        j_needed = None
        for center in centers:
            members = view.ball(center, r)
            j = None
            for cand in range(g_kn, j_cap + 1):
                need = _ceil_pow2(alpha, cand)
                if need > len(members):
                    continue  # not even enough points in the ball
                got = view.greedy_packing_indices(members, 2.0 ** -cand, stop_at=need)
                if len(got) >= need:
                    j = cand
                    break
            if j is None:
                span = (f"scales [{g_kn}, {j_cap}]" if g_kn <= j_cap
                        else f"required scale start {g_kn} beyond the cap {j_cap}")
                raise ResolutionExhausted(
                    f"level {n + 1}: no admissible scale ({span}) packs "
                    f"2^({alpha}*j) points in the radius 2^-{g_kn} ball at "
                    f"point {center} ({len(members)} net points inside)",
                    level=n + 1,
                )
            j_needed = j if j_needed is None else max(j_needed, j)
        ks.append(j_needed + gap)
        gs.append(g_kn)
        js.append(j_needed)
    return KSeq(variant, alphas, tuple(ks), tuple(gs), tuple(js), g_mode)


# ---------------------------------------------------------------------------
# Ball trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PackingRecord:
    parent_center: int
    ell: int
    selected: tuple[int, ...]  # net indices, the exact-size packing
    phi: Fraction


@dataclass(frozen=True)
class BallLevel:
    n: int                       # prefix length
    k: int                       # ball radius exponent at this level
    centers: tuple[int, ...]
    records: tuple[PackingRecord, ...]  # packings used to enter this level


@dataclass(frozen=True)
class BallTree:
    view: MetricSpaceView
    kseq: KSeq
    variant: str
    prefix: str
    levels: tuple[BallLevel, ...]

    @property
    def centers(self) -> tuple[int, ...]:
        return self.levels[-1].centers

    @property
    def m(self) -> int:
        return len(self.centers)

    def center_points(self) -> np.ndarray:
        if isinstance(self.view, EuclideanNet):
            return self.view.points[np.array(self.centers, dtype=np.int64)]
        raise TypeError("coordinate trace needs a Euclidean net")


def root_tree(view: MetricSpaceView, kseq: KSeq, variant: str) -> BallTree:
    lvl = BallLevel(0, kseq.ks[0], (view.y0,), ())
    return BallTree(view, kseq, variant, "", (lvl,))


def _swap_in_origin(view: MetricSpaceView, s: list[int], ell: int) -> list[int]:
    """The two-case origin swap: returns a packing T at separation 2^-(ell+1)
    with the origin included and the same cardinality."""
    y0 = view.y0
    if y0 in s:
        return list(s)
    d = view.dists_from(y0, np.array(s, dtype=np.int64))
    near = [p for p, dd in zip(s, d) if dd <= 2.0 ** -(ell + 1)]
    if not near:
        # S + {y0} still packs at the halved separation; drop the point
        # closest to the origin to keep the cardinality.
        drop = s[int(np.argmin(d))]
        return sorted([p for p in s if p != drop] + [y0])
    # the packing separation of S makes the near point unique
    return sorted([p for p in s if p != near[0]] + [y0])


def _min_ell_and_packing(view, center: int, radius: float, phi: Fraction,
                         lo: int, hi: int, who: str):
    members = view.ball(center, radius)
    for ell in range(lo, hi + 1):
        need = floor_pow2(phi, ell)
        if need > len(members):
            continue
        got = view.greedy_packing_indices(members, 2.0 ** -ell, stop_at=need)
        if len(got) >= need:
            return ell, got[:need]
    raise ResolutionExhausted(
        f"{who}: no scale in [{lo}, {hi}] yields a floor(2^({phi}*l))-point "
        f"packing in the radius {radius} ball at point {center}"
    )


def _check_separation(view, centers: Sequence[int], threshold: float, what: str):
    arr = np.array(centers, dtype=np.int64)
    for i in range(len(arr)):
        d = view.dists_from(int(arr[i]), arr[i + 1:])
        if (d <= threshold).any():
            j = int(np.nonzero(d <= threshold)[0][0]) + i + 1
            raise InvariantViolation(
                f"{what}: centers {centers[i]} and {centers[j]} are "
                f"{d.min()} apart, need > {threshold}"
            )


def extend_box(tree: BallTree, c: int, varphi) -> BallTree:
    """One box-variant extension: pack inside the origin ball, swap the
    origin in at halved separation, keep all older centers."""
    n = len(tree.prefix)
    kseq = tree.kseq
    if n >= kseq.levels:
        raise ResolutionExhausted(f"schedule has only {kseq.levels} levels")
    phi = min(Fraction(varphi), kseq.alphas[n])
    g_kn = kseq.g_values[n]
    k_next = kseq.ks[n + 1]
    ell, s = _min_ell_and_packing(
        tree.view, tree.view.y0, 2.0 ** -g_kn, phi,
        g_kn, k_next - 3, "box extension")
    t_set = _swap_in_origin(tree.view, s, ell)
    _check_separation(tree.view, t_set, 2.0 ** -(ell + 1), "swapped packing")
    old = tree.centers
    fresh = [p for p in t_set if p not in old]
    centers = tuple(list(old) + sorted(fresh))
    if len(centers) != len(old) + len(t_set) - 1:
        raise InvariantViolation("box bookkeeping: m(t) != m(s) + #T - 1")
    _check_separation(tree.view, centers, 2.0 ** (2 - k_next), "box level")
    rec = PackingRecord(tree.view.y0, ell, tuple(t_set), phi)
    lvl = BallLevel(n + 1, k_next, centers, (rec,))
    return BallTree(tree.view, kseq, tree.variant, tree.prefix + str(c),
                    tree.levels + (lvl,))


def extend_packing(tree: BallTree, c: int, varphi) -> BallTree:
    """One packing-variant extension: refine every ball with its own scale;
    old centers are replaced by the union of the per-ball packings."""
    n = len(tree.prefix)
    kseq = tree.kseq
    if n >= kseq.levels:
        raise ResolutionExhausted(f"schedule has only {kseq.levels} levels")
    phi = min(Fraction(varphi), kseq.alphas[n])
    g_kn = kseq.g_values[n]
    k_next = kseq.ks[n + 1]
    records = []
    union: list[int] = []
    for y in tree.centers:
        ell, s = _min_ell_and_packing(
            tree.view, y, 2.0 ** -g_kn, phi, g_kn, k_next - 2,
            f"packing extension at {y}")
        records.append(PackingRecord(y, ell, tuple(s), phi))
        union.extend(s)
    centers = tuple(sorted(set(union)))
    if len(centers) != sum(len(r.selected) for r in records):
        raise InvariantViolation("packing balls overlapped; union lost points")
    _check_separation(tree.view, centers, 2.0 ** (2 - k_next), "packing level")
    lvl = BallLevel(n + 1, k_next, centers, tuple(records))
    return BallTree(tree.view, kseq, tree.variant, tree.prefix + str(c),
                    tree.levels + (lvl,))


def family_member(x, spec: TargetSpec, view: MetricSpaceView, variant: str,
                  levels: int, kseq: KSeq | None = None,
                  varphi: VarphiMap | None = None,
                  g_mode: str = "strict") -> BallTree:
    """Construction trace of the member at branch ``x`` (the deepest level's
    centers are the finite-depth trace of C(x))."""
    x = x if isinstance(x, Word) else Word.from_string(x)
    if len(x) < levels:
        raise ValueError(f"branch must supply {levels} bits")
    if kseq is None:
        kseq = level_schedule(view, [spec.b] * levels, variant, levels,
                              g_mode=g_mode)
    vm = varphi or VarphiMap(spec)
    tree = root_tree(view, kseq, variant)
    step = extend_box if variant == "box" else extend_packing
    for i in range(levels):
        tree = step(tree, x[i], vm.value(x.prefix(i + 1)))
    return tree


# ---------------------------------------------------------------------------
# Verification report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyDimReport:
    cardinalities_exact: bool
    separations_ok: bool
    nested: bool
    origin_anchored: bool     # box variant only; True for packing
    upper_chain_ok: bool      # N_l(C) <= l + 2^(phi*l) at realized scales
    count_bound_ok: bool      # m(x[:n]) <= g(k_n), needed by the upper chain
    local_richness_ok: bool   # packing variant: per-ball mandated packings
    g_mode: str
    details: tuple[str, ...] = ()


def family_dim_report(tree: BallTree, variant: str | None = None) -> FamilyDimReport:
    """Re-verify everything the construction stored: exact packing sizes,
    separations, ball nesting, the origin anchor, and the covering chain at
    the realized scales."""
    variant = variant or tree.variant
    view, kseq = tree.view, tree.kseq
    notes = []
    cards = True
    seps = True
    for lvl in tree.levels[1:]:
        for rec in lvl.records:
            want = floor_pow2(rec.phi, rec.ell)
            if len(rec.selected) != want:
                cards = False
                notes.append(f"level {lvl.n}: packing size {len(rec.selected)} != {want}")
            sep = 2.0 ** -(rec.ell + 1) if variant == "box" else 2.0 ** -rec.ell
            try:
                _check_separation(view, rec.selected, sep, f"record at level {lvl.n}")
            except InvariantViolation as e:
                seps = False
                notes.append(str(e))
        try:
            _check_separation(view, lvl.centers, 2.0 ** (2 - lvl.k), f"level {lvl.n}")
        except InvariantViolation as e:
            seps = False
            notes.append(str(e))

    nested = True
    for prev, cur in zip(tree.levels, tree.levels[1:]):
        r_prev, r_cur = 2.0 ** -prev.k, 2.0 ** -cur.k
        prev_arr = np.array(prev.centers, dtype=np.int64)
        for y in cur.centers:
            d = view.dists_from(int(y), prev_arr)
            if not (d + r_cur <= r_prev + 1e-12).any():
                nested = False
                notes.append(f"center {y} at level {cur.n} escapes every parent ball")

    anchored = all(view.y0 in lvl.centers for lvl in tree.levels) \
        if variant == "box" else True

    count_ok = all(
        len(tree.levels[n].centers) <= kseq.g_values[n]
        for n in range(min(len(tree.levels) - 1, len(kseq.g_values)))
    )

    chain_ok = True
    for lvl in tree.levels[1:]:
        for rec in lvl.records:
            ell = rec.ell
            pts = np.array(lvl.centers, dtype=np.int64)
            covered = np.zeros(len(pts), dtype=bool)
            n_balls = 0
            while not covered.all():
                i = int(np.nonzero(~covered)[0][0])
                covered |= view.dists_from(int(pts[i]), pts) <= 2.0 ** -ell
                n_balls += 1
            bound = ell + floor_pow2(rec.phi, ell) + 1
            if n_balls > bound:
                chain_ok = False
                notes.append(
                    f"level {lvl.n}: N_{ell}(C) ~ {n_balls} exceeds l + 2^(phi*l)"
                )

    rich = True
    if variant == "packing":
        for lvl in tree.levels[1:]:
            for rec in lvl.records:
                inside = view.dists_from(
                    rec.parent_center, np.array(rec.selected, dtype=np.int64))
                if (inside > 2.0 ** -kseq.g_values[lvl.n - 1]).any():
                    rich = False
                    notes.append(f"level {lvl.n}: packing leaks its parent ball")

    return FamilyDimReport(cards, seps, nested, anchored, chain_ok,
                           count_ok, rich, kseq.g_mode, tuple(notes))


# ---------------------------------------------------------------------------
# Assembly for target sets reaching the top dimension
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyAssembly:
    kind: str                                # "empty" | "whole" | "layered"
    beta0: Fraction | None = None
    stage_targets: tuple[TargetSpec, ...] = ()
    stage_radii: tuple[float, ...] = ()
    includes_whole: bool = False
    k0_member: BallTree | None = None


def _clip_target(target: TargetSpec, bound: Fraction) -> TargetSpec:
    if target.mode == "finite_set":
        vals = [v for v in target.values if v <= bound]
        return TargetSpec.finite_set(vals)
    if target.mode == "interval_union":
        ivs = [(lo, min(hi, bound)) for lo, hi in target.intervals if lo <= bound]
        return TargetSpec.interval_union(ivs)
    raise ValueError("assembly needs an explicit (finite/interval) presentation")


def packing_family_assembly(target: TargetSpec | None, view: MetricSpaceView,
                            dim_top, stages: int = 3,
                            k0_member: BallTree | None = None) -> FamilyAssembly:
    """Three-part family plan: a clipped family near the bottom value, the
    whole space for the top, and per-stage families in shrinking origin
    balls glued over the bottom member."""
    if target is None:
        return FamilyAssembly("empty")
    dim_top = Fraction(dim_top)
    if target.a == target.b == dim_top:
        return FamilyAssembly("whole", includes_whole=True)
    if target.a >= dim_top:
        raise ValueError("need a target value below the top dimension "
                         "or the top singleton")
    beta0 = target.a
    betas = [dim_top - (dim_top - beta0) / (1 << n) for n in range(stages)]
    stage_targets = tuple(_clip_target(target, b) for b in betas)
    stage_radii = tuple(2.0 ** -n for n in range(stages))
    if k0_member is not None and view.y0 not in k0_member.centers:
        raise ValueError("the bottom member must pass through the origin point")
    return FamilyAssembly("layered", beta0, stage_targets, stage_radii,
                          includes_whole=True, k0_member=k0_member)
