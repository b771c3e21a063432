"""Constructive realization of a target value set along binary branches.

A :class:`TargetSpec` presents a set of rationals through cylinder oracles:
either explicitly (finite set, union of closed intervals) or via pluggable
callables (an increasing closed family hit-index, an open-part hit test, and
a shrinking rational interval for the coded map).  :class:`VarphiMap` runs
the four-case induction assigning a value to every finite word so that the
values converge along each branch; :class:`BlockMap` turns those values into
blocks of two balanced sequences whose mixing ratio realizes the value as a
density, and ``build_psi_prefix`` concatenates the blocks.

All values are exact ``Fraction``; determinism is guaranteed by canonical
tie-breaking (lexicographically least branch, midpoints, minimal indices).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt
from typing import Callable, Iterator, Sequence

from .dyadic import DyadicSet
from .errors import InvariantViolation, OracleError
from .seq import SeqProgram, Word, beatty_balanced, block_program, concat, factor

__all__ = [
    "TargetSpec",
    "VarphiMap",
    "build_varphi",
    "choose_k",
    "closest_k",
    "BlockMap",
    "PsiPrefix",
    "build_psi_prefix",
    "psi_program",
    "DensityReport",
    "realized_density_check",
    "assemble_gallery",
]


def _as_word(s) -> Word:
    return s if isinstance(s, Word) else Word.from_string(s)


class TargetSpec:
    """Effective presentation of a closed-in-the-limit target value set.

    Modes:
      * ``finite_set`` -- an explicit list of rationals;
      * ``interval_union`` -- a union of closed rational intervals;
      * ``effective`` -- user oracles.  ``m_index(s)`` returns the smallest
        index of the increasing closed family hit by the cylinder of the
        0/1-string ``s`` (``None`` if the cylinder misses the whole family),
        ``meets_g(s)`` says whether the cylinder meets the open part, and
        ``f_range(s)`` returns a rational interval containing the coded map's
        image of the cylinder, with widths shrinking along branches.

    ``a`` and ``b`` are the attained minimum and maximum of the presented
    set; every produced value is clamped into ``[a, b]``.
    """

    def __init__(self, mode: str, *, a: Fraction, b: Fraction,
                 values: tuple[Fraction, ...] = (),
                 intervals: tuple[tuple[Fraction, Fraction], ...] = (),
                 m_index: Callable[[str], int | None] | None = None,
                 meets_g: Callable[[str], bool] | None = None,
                 f_range: Callable[[str], tuple] | None = None,
                 nesting_slack: Fraction = Fraction(0)):
        if a > b:
            raise ValueError("need a <= b")
        self.mode = mode
        self.a = Fraction(a)
        self.b = Fraction(b)
        self.values = values
        self.intervals = intervals
        self._m_index = m_index
        self._meets_g = meets_g
        self._f_range = f_range
        self.nesting_slack = Fraction(nesting_slack)
        n_branches = max(len(values), len(intervals), 1)
        self.selector_bits = max(0, (n_branches - 1).bit_length())
        self.canonical_pad = max(16, self.selector_bits)

    # -- constructors -------------------------------------------------------

    @classmethod
    def finite_set(cls, values: Sequence) -> "TargetSpec":
        vals = tuple(sorted({Fraction(v) for v in values}))
        if not vals:
            raise ValueError("finite target set must be nonempty")
        return cls("finite_set", a=vals[0], b=vals[-1], values=vals)

    @classmethod
    def interval_union(cls, intervals: Sequence) -> "TargetSpec":
        ivs = []
        for lo, hi in intervals:
            lo, hi = Fraction(lo), Fraction(hi)
            if lo > hi:
                raise ValueError(f"interval [{lo}, {hi}] is empty")
            ivs.append((lo, hi))
        if not ivs:
            raise ValueError("interval union must be nonempty")
        ivs.sort()
        return cls("interval_union",
                   a=min(lo for lo, _ in ivs), b=max(hi for _, hi in ivs),
                   intervals=tuple(ivs))

    @classmethod
    def effective(cls, *, m_index, meets_g, f_range, a, b,
                  nesting_slack=Fraction(0)) -> "TargetSpec":
        return cls("effective", a=Fraction(a), b=Fraction(b),
                   m_index=m_index, meets_g=meets_g, f_range=f_range,
                   nesting_slack=nesting_slack)

    def to_json(self) -> str:
        """Serialize explicit presentations; effective mode is a pluggable
        component (callables in, rationals out) and has no wire form."""
        if self.mode == "finite_set":
            return json.dumps({"mode": "finite_set",
                               "values": [str(v) for v in self.values]})
        if self.mode == "interval_union":
            return json.dumps({"mode": "interval_union",
                               "intervals": [[str(lo), str(hi)]
                                             for lo, hi in self.intervals]})
        raise TypeError("effective-mode presentations are not serializable")

    @classmethod
    def from_json(cls, s: str) -> "TargetSpec":
        obj = json.loads(s)
        if obj["mode"] == "finite_set":
            return cls.finite_set([Fraction(v) for v in obj["values"]])
        if obj["mode"] == "interval_union":
            return cls.interval_union(
                [(Fraction(lo), Fraction(hi)) for lo, hi in obj["intervals"]])
        raise ValueError(f"unknown mode {obj['mode']!r}")

    # -- oracle surface -----------------------------------------------------

    def m_index(self, s: Word) -> int | None:
        if self.mode == "effective":
            m = self._m_index(str(s))
            if m is not None and m < 0:
                raise OracleError(f"negative family index {m}")
            return m
        return None  # explicit modes present closed sets: the family is empty

    def meets_g(self, s: Word) -> bool:
        if self.mode == "effective":
            return bool(self._meets_g(str(s)))
        return True

    def f_range(self, s: Word) -> tuple[Fraction, Fraction]:
        if self.mode == "effective":
            lo, hi = self._f_range(str(s))
            lo, hi = Fraction(lo), Fraction(hi)
            if lo > hi:
                raise OracleError(f"f_range returned an empty interval at {s}")
            return lo, hi
        idx_lo, idx_hi = self._selector_range(s)
        if self.mode == "finite_set":
            return self.values[idx_lo], self.values[idx_hi]
        rest = s.bits[self.selector_bits:]
        if idx_lo != idx_hi:
            return (min(self.intervals[i][0] for i in range(idx_lo, idx_hi + 1)),
                    max(self.intervals[i][1] for i in range(idx_lo, idx_hi + 1)))
        lo, hi = self.intervals[idx_lo]
        v = Fraction(0)
        for j, bit in enumerate(rest, start=1):
            v += Fraction(bit, 1 << j)
        width = Fraction(1, 1 << len(rest))
        return lo + (hi - lo) * v, lo + (hi - lo) * (v + width)

    def _selector_range(self, s: Word) -> tuple[int, int]:
        n_branches = max(len(self.values), len(self.intervals))
        k = self.selector_bits
        head = s.bits[:k]
        free = k - len(head)
        base = 0
        for bit in head:
            base = base * 2 + bit
        lo = base << free
        hi = ((base + 1) << free) - 1
        return min(lo, n_branches - 1), min(hi, n_branches - 1)


class VarphiMap:
    """Memoized value map over finite words, built by the four-case induction.

    Cases for a child cylinder ``s^c``: (1) it misses the closed family
    entirely -- take a fresh canonical value from ``f_range``; (2) it misses
    the open part -- inherit; (3) its family hit-index equals the parent's --
    inherit; (4) the hit-index grew -- take a fresh canonical value.  The
    root gets the presented minimum.  Values are clamped into ``[a, b]``, or
    with ``positive_gamma`` set, into ``(0, gamma]`` with a depth-dependent
    floor ``gamma * 2^-n``.
    """

    def __init__(self, spec: TargetSpec, positive_gamma: Fraction | None = None):
        self.spec = spec
        self.positive_gamma = None if positive_gamma is None else Fraction(positive_gamma)
        self.memo: dict[tuple[int, ...], Fraction] = {}
        self.m_memo: dict[tuple[int, ...], int | None] = {}

    def _m_index(self, s: Word) -> int | None:
        key = s.bits
        if key not in self.m_memo:
            self.m_memo[key] = self.spec.m_index(s)
        return self.m_memo[key]

    def _clamp(self, val: Fraction, depth: int) -> Fraction:
        if self.positive_gamma is not None:
            g = self.positive_gamma
            if val <= 0:
                return g / (1 << depth)
            return min(val, g)
        return min(max(val, self.spec.a), self.spec.b)

    def _canonical(self, s: Word) -> Fraction:
        # Deterministic choice: follow the lexicographically least branch as
        # far as the open part allows, then take the interval midpoint.
        best = s
        for _ in range(self.spec.canonical_pad):
            cand = Word(best.bits + (0,))
            if not self.spec.meets_g(cand):
                break
            best = cand
        lo, hi = self.spec.f_range(best)
        return (lo + hi) / 2

    def value(self, s) -> Fraction:
        s = _as_word(s)
        key = s.bits
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        if len(s) == 0:
            val = self._clamp(self.spec.a, 0)
            self.memo[key] = val
            return val
        parent = Word(s.bits[:-1])
        parent_val = self.value(parent)
        m_child = self._m_index(s)
        m_parent = self._m_index(parent)
        if m_child is not None:
            if m_parent is None or m_parent > m_child:
                raise OracleError(
                    f"family hit-index not monotone: {m_parent} at {parent} "
                    f"vs {m_child} at {s}"
                )
        if self.spec.nesting_slack is not None and len(parent) > 0:
            self._check_nesting(parent, s)
        if m_child is None:
            val = self._canonical(s)
        elif not self.spec.meets_g(s):
            val = parent_val
        elif m_child == m_parent:
            val = parent_val
        else:
            val = self._canonical(s)
        val = self._clamp(val, len(s))
        self.memo[key] = val
        return val

    def _check_nesting(self, parent: Word, child: Word):
        if not (self.spec.meets_g(parent) and self.spec.meets_g(child)):
            return
        plo, phi = self.spec.f_range(parent)
        clo, chi = self.spec.f_range(child)
        slack = self.spec.nesting_slack
        if clo < plo - slack or chi > phi + slack:
            raise OracleError(
                f"f_range not nested at {child}: [{clo},{chi}] vs [{plo},{phi}]"
            )


def build_varphi(spec: TargetSpec, s, varphi: VarphiMap | None = None) -> Fraction:
    """Value of the induction at word ``s`` (fresh map unless one is passed)."""
    return (varphi or VarphiMap(spec)).value(s)


# ---------------------------------------------------------------------------
# Block-length selection
# ---------------------------------------------------------------------------

def _k_bounds(n: int) -> tuple[int, int]:
    # integers strictly between sqrt(n)-1 and n*sqrt(n)+1
    kmin = isqrt(n)
    c = n ** 3
    r = isqrt(c)
    kmax = r if r * r == c else r + 1
    return kmin, kmax


def _mix(n: int, k: int, a: Fraction, b: Fraction) -> Fraction:
    return (a * n + b * k) / (n + k)


def _int_ctx(n: int, a: Fraction, b: Fraction, t: Fraction):
    """Common-denominator integer view of (a, b, t): the admissibility test
    |mix(k) - t| <= 2/sqrt(n) becomes n*N(k)^2 <= 4*D(k)^2 in integers."""
    da, db, dt = a.denominator, b.denominator, t.denominator
    q = math.lcm(da, db, dt)
    return q, a.numerator * (q // da), b.numerator * (q // db), \
        t.numerator * (q // dt)


def _valid_int(n, k, q, pa, pb, pt) -> bool:
    num = pa * n + pb * k - pt * (n + k)
    den = q * (n + k)
    return n * num * num <= 4 * den * den


def choose_k(n: int, a, b, target) -> int:
    """Minimal admissible block length ratio index.

    Returns the smallest integer ``k`` with ``sqrt(n)-1 < k < n*sqrt(n)+1``
    and ``|(n*a + k*b)/(n+k) - target| <= 2/sqrt(n)``; such a ``k`` always
    exists for ``0 <= a <= target <= b <= 1``.  For ``a == b`` the value is
    ``ceil(sqrt(n))``.
    """
    if type(a) is not Fraction:
        a = Fraction(a)
    if type(b) is not Fraction:
        b = Fraction(b)
    t = target if type(target) is Fraction else Fraction(target)
    if n < 1:
        raise ValueError("block index must be >= 1")
    if not (0 <= a <= t <= b <= 1):
        raise ValueError(f"need 0 <= a <= target <= b <= 1, got {a}, {t}, {b}")
    kmin, kmax = _k_bounds(n)
    if a == b:
        s = isqrt(n)
        return s if s * s == n else s + 1  # ceil(sqrt(n))
    ctx = _int_ctx(n, a, b, t)
    # Float seed for the smallest k with mix(k) >= t - 2/sqrt(n), then exact
    # certification; the admissible k form a contiguous interval.
    fa, fb, ft, fs = float(a), float(b), float(t), math.sqrt(n)
    denom = fb - ft + 2.0 / fs
    seed = kmin if denom <= 0 else n * (ft - fa - 2.0 / fs) / denom
    k = max(kmin, int(math.ceil(seed)) - 2)
    bail = max(kmin, int(math.ceil(seed))) + 8
    while k <= kmax and not _valid_int(n, k, *ctx):
        k += 1
        if k > bail:
            return _choose_k_bisect(n, ctx, kmin, kmax, a, b, t)  # seed was off
    if k > kmax:
        raise InvariantViolation(
            f"no admissible k for n={n}, a={a}, b={b}, target={t}"
        )
    if k > kmin and _valid_int(n, k - 1, *ctx):
        return _choose_k_bisect(n, ctx, kmin, kmax, a, b, t)
    return k


def _choose_k_bisect(n, ctx, kmin, kmax, a, b, t) -> int:
    q, pa, pb, pt = ctx

    def past_lower(k):  # mix(k) >= t - 2/sqrt(n)
        num = pa * n + pb * k - pt * (n + k)
        return num >= 0 or n * num * num <= 4 * (q * (n + k)) ** 2

    lo, hi = kmin, kmax
    if not past_lower(hi):
        raise InvariantViolation(f"no admissible k for n={n}, a={a}, b={b}, target={t}")
    while lo < hi:
        mid = (lo + hi) // 2
        if past_lower(mid):
            hi = mid
        else:
            lo = mid + 1
    if not _valid_int(n, lo, *ctx):
        raise InvariantViolation(f"no admissible k for n={n}, a={a}, b={b}, target={t}")
    return lo


def closest_k(n: int, a, b, target) -> int:
    """Admissible ``k`` minimizing the mixing error, smaller ``k`` on ties.

    Satisfies the same range and tolerance invariants as :func:`choose_k`;
    preferred in the block pipeline because the minimal admissible ``k``
    systematically undershoots mid-range targets.
    """
    a, b, t = Fraction(a), Fraction(b), Fraction(target)
    if not (0 <= a <= t <= b <= 1):
        raise ValueError(f"need 0 <= a <= target <= b <= 1, got {a}, {t}, {b}")
    kmin, kmax = _k_bounds(n)
    if a == b:
        s = isqrt(n)
        return s if s * s == n else s + 1
    # mix(k) is increasing; the best k is adjacent to the exact crossing.
    if b > t:
        cross = Fraction(n) * (t - a) / (b - t)
    else:
        cross = Fraction(kmax)
    base = int(cross)
    cands = sorted({min(max(base + d, kmin), kmax) for d in (-1, 0, 1, 2)})
    q, pa, pb, pt = _int_ctx(n, a, b, t)
    best = cands[0]
    best_num = abs(pa * n + pb * best - pt * (n + best))
    for k in cands[1:]:
        num = abs(pa * n + pb * k - pt * (n + k))
        # compare num/(n+k) vs best_num/(n+best)
        if num * (n + best) < best_num * (n + k):
            best, best_num = k, num
    if not _valid_int(n, best, q, pa, pb, pt):
        raise InvariantViolation(
            f"closest k fails tolerance for n={n}, a={a}, b={b}, target={t}"
        )
    return best


# ---------------------------------------------------------------------------
# Blocks and the coded sequence
# ---------------------------------------------------------------------------

class BlockMap:
    """Word-to-block map: ``s`` of length n >= 1 maps to the first n bits of
    the low-density balanced sequence followed by ``k(s)`` bits of the
    high-density one, with ``k(s)`` admissible for the value map at ``s``."""

    def __init__(self, spec: TargetSpec, policy: str = "closest",
                 varphi: VarphiMap | None = None):
        if policy not in ("closest", "minimal"):
            raise ValueError(f"unknown k policy {policy!r}")
        self.spec = spec
        self.policy = policy
        self.varphi = varphi or VarphiMap(spec)
        self.alpha = beatty_balanced(spec.a)
        self.beta = beatty_balanced(spec.b)

    def k_choice(self, s) -> int:
        s = _as_word(s)
        n = len(s)
        if n == 0:
            raise ValueError("blocks are defined for nonempty prefixes")
        target = self.varphi.value(s)
        pick = closest_k if self.policy == "closest" else choose_k
        return pick(n, self.spec.a, self.spec.b, target)

    def block_for(self, s) -> Word:
        s = _as_word(s)
        if len(s) == 0:
            return Word(())
        k = self.k_choice(s)
        return concat([factor(self.alpha, 0, len(s)), factor(self.beta, 0, k)])


@dataclass(frozen=True)
class PsiPrefix:
    """Concatenation of the blocks of ``x``'s prefixes, with bookkeeping."""

    word: Word
    boundaries: tuple[int, ...]          # boundaries[i] = start of block i
    block_lengths: tuple[tuple[int, int], ...]  # (n, k) per block i >= 1
    phi_values: tuple[Fraction, ...]     # value map at x[:i] per block i >= 1

    @property
    def blocks(self) -> int:
        return len(self.boundaries) - 1

    def block_word(self, i: int) -> Word:
        return Word(self.word.bits[self.boundaries[i]:self.boundaries[i + 1]])


def build_psi_prefix(x, spec: TargetSpec, blocks: int,
                     policy: str = "closest",
                     block_map: BlockMap | None = None) -> PsiPrefix:
    """First ``blocks`` blocks of the coded sequence of branch ``x``.

    Block ``i`` is the block of ``x[:i]``; block 0 is empty.  Requires
    ``blocks <= len(x) + 1``.
    """
    x = _as_word(x)
    if blocks < 0 or blocks > len(x) + 1:
        raise ValueError(f"blocks must lie in [0, {len(x) + 1}]")
    bm = block_map or BlockMap(spec, policy)
    bits: list[int] = []
    bounds = [0]
    lengths: list[tuple[int, int]] = []
    phis: list[Fraction] = []
    for i in range(blocks):
        w = bm.block_for(x.prefix(i))
        bits.extend(w.bits)
        bounds.append(len(bits))
        if i >= 1:
            k = len(w) - i
            lengths.append((i, k))
            phis.append(bm.varphi.value(x.prefix(i)))
    word = Word(tuple(bits))
    if spec.b > 0 and word.sigma == 0:
        # The high-density tails alone contribute floor(k*b) ones per block.
        forced = sum((k * spec.b.numerator) // spec.b.denominator for _, k in lengths)
        if forced > 0:
            raise InvariantViolation("coded prefix is all-zero despite b > 0")
    return PsiPrefix(word, tuple(bounds), tuple(lengths), tuple(phis))


def psi_program(x: SeqProgram, spec: TargetSpec, policy: str = "closest") -> SeqProgram:
    """The full coded sequence of an infinite branch, as a block program."""
    bm = BlockMap(spec, policy)

    def gen() -> Iterator[Word]:
        i = 1
        while True:
            yield bm.block_for(factor(x, 0, i))
            i += 1

    return block_program(gen())


@dataclass(frozen=True)
class BlockCheck:
    index: int
    n: int
    k: int
    phi: Fraction
    density: Fraction
    error: Fraction
    bound_ok: bool
    length_fraction: Fraction


@dataclass(frozen=True)
class DensityReport:
    blocks: tuple[BlockCheck, ...]
    cumulative_density: Fraction
    expected: Fraction
    cumulative_error: Fraction
    fractions_vanish: bool


def realized_density_check(p: PsiPrefix, expected) -> DensityReport:
    """Verify the per-block density errors against the exact mixing bound.

    Each block of index n with tail length k must satisfy
    ``|density - phi| <= 2/(n+k) + 2/sqrt(n)``; a violation aborts, since it
    indicates a construction bug.  Also reports the cumulative density
    against ``expected`` and whether the block/prefix length ratios shrink.
    """
    if p.blocks < 2:
        raise ValueError("need at least two blocks")
    expected = Fraction(expected)
    checks = []
    for idx, ((n, k), phi) in enumerate(zip(p.block_lengths, p.phi_values), start=1):
        w = p.block_word(idx)
        rho = w.density
        err = abs(rho - phi)
        # err <= 2/(n+k) + 2/sqrt(n), exactly
        rem = err - Fraction(2, n + k)
        ok = rem <= 0 or n * rem * rem <= 4
        if not ok:
            raise InvariantViolation(
                f"block {idx}: density error {float(err):.4f} breaks the bound"
            )
        frac = Fraction(len(w), p.boundaries[idx + 1])
        checks.append(BlockCheck(idx, n, k, phi, rho, err, ok, frac))
    fracs = [c.length_fraction for c in checks]
    vanish = len(fracs) >= 2 and fracs[-1] <= max(fracs)
    # a priori bound: block n has length < n + n*sqrt(n) + 1 within a prefix
    # of length >= n(n+1)/2, so the tail ratio must fall under 4/sqrt(n).
    n_last = checks[-1].n
    vanish = vanish and (fracs[-1] * isqrt(n_last) <= 4)
    cum = p.word.density
    return DensityReport(tuple(checks), cum, expected, abs(cum - expected), vanish)


# ---------------------------------------------------------------------------
# Gallery assembly
# ---------------------------------------------------------------------------

def assemble_gallery(generators: Sequence[Callable[[int], DyadicSet]],
                     depth: int) -> DyadicSet:
    """One compact set containing shrinking copies of every generator's sets.

    Placement ``j`` (j = 1..depth-1) occupies the cube ``[2^-j, 2^-j+1]^d``
    and holds generator ``(j-1) mod len(generators)`` rasterized at depth
    ``depth - j``, so each generator recurs at unboundedly deep placements as
    the depth grows; the origin cell is included as the accumulation point.
    Zooming by ``(m=j, u=-1)`` recovers placement ``j`` exactly.
    """
    if not generators:
        raise ValueError("need at least one generator")
    n_place = depth - 1
    if len(generators) > n_place:
        raise ValueError(
            f"placement overflow: {len(generators)} generators need depth "
            f">= {len(generators) + 1}"
        )
    d = None
    leaves: set = set()
    for j in range(1, n_place + 1):
        g = generators[(j - 1) % len(generators)]
        piece = g(depth - j)
        if piece.depth != depth - j:
            raise ValueError(
                f"generator returned depth {piece.depth}, wanted {depth - j}"
            )
        if d is None:
            d = piece.d
            leaves.add((0,) * d)
        elif piece.d != d:
            raise ValueError("generators disagree on ambient dimension")
        offset = 1 << (depth - j)
        for leaf in piece.leaves:
            leaves.add(tuple(c + offset for c in leaf))
    return DyadicSet(d, depth, frozenset(leaves))
