import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microfract import dyadic
from microfract.dyadic import (
    DyadicSet,
    decompose,
    from_json,
    full_cube,
    hausdorff_distance,
    kx_set,
    meets_open_cube,
    pack_bits,
    product,
    singleton_chain,
    to_json,
    unpack_bits,
    verify_sandwich,
    zoom,
)
from microfract.seq import Word, beatty_balanced, factor


def enumerate_admissible(bits):
    """Oracle: direct enumeration of admissible digit strings."""
    n = len(bits)
    out = set()
    for digits in itertools.product((0, 1), repeat=n):
        if all(d == 0 or x == 1 for d, x in zip(digits, bits)):
            out.add(sum(d << (n - 1 - i) for i, d in enumerate(digits)))
    return out


def random_word(rng, n):
    return Word.from_bits(rng.integers(0, 2, size=n).tolist())


class TestKxSet:
    def test_all_ones_is_full(self):
        assert kx_set("1111") == full_cube(1, 4)

    def test_all_zeros_is_origin_chain(self):
        s = kx_set("0000")
        assert s.leaves == frozenset({(0,)})

    def test_101101_has_sixteen_leaves(self):
        s = kx_set("101101")
        assert len(s.leaves) == 16
        assert {c for (c,) in s.leaves} == enumerate_admissible([1, 0, 1, 1, 0, 1])

    @given(st.lists(st.integers(0, 1), min_size=0, max_size=12))
    @settings(max_examples=100, deadline=None)
    def test_leaf_count_is_two_to_sigma(self, bits):
        w = Word.from_bits(bits)
        assert len(kx_set(w).leaves) == 2 ** w.sigma

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=12), st.data())
    @settings(max_examples=60, deadline=None)
    def test_level_counts_project_to_prefix(self, bits, data):
        w = Word.from_bits(bits)
        m = data.draw(st.integers(0, len(bits)))
        assert kx_set(w).count(m) == 2 ** w.prefix(m).sigma


class TestProduct:
    def test_full_times_full(self):
        assert product(kx_set("11"), kx_set("11")) == full_cube(2, 2)

    def test_counts_multiply(self):
        a, b = kx_set("101"), kx_set("110")
        p = product(a, b)
        assert len(p.leaves) == len(a.leaves) * len(b.leaves)

    def test_kx_10_squared(self):
        p = product(kx_set("10"), kx_set("10"))
        assert p.leaves == frozenset({(0, 0), (0, 2), (2, 0), (2, 2)})

    def test_depth_mismatch(self):
        with pytest.raises(ValueError):
            product(kx_set("10"), kx_set("101"))


class TestHausdorff:
    def test_identical_sets(self):
        a = kx_set("10110")
        assert hausdorff_distance(a, a) == 0

    def test_unit_vs_left_half(self):
        n = 4
        a = full_cube(1, n)
        b = DyadicSet(1, n, frozenset((c,) for c in range(1 << (n - 1))))
        assert hausdorff_distance(a, b) == Fraction(1, 2)

    def test_empty_operand_rejected(self):
        a = kx_set("1")
        with pytest.raises(ValueError):
            hausdorff_distance(a, DyadicSet(1, 1, frozenset()))

    def test_contraction_bound_over_random_pairs(self):
        rng = np.random.default_rng(7)
        n = 10
        for _ in range(200):
            x, y = random_word(rng, n), random_word(rng, n)
            if x == y:
                continue
            first_diff = next(i for i in range(n) if x[i] != y[i])
            d = hausdorff_distance(kx_set(x), kx_set(y))
            assert d <= Fraction(1, 1 << first_diff)

    def test_metric_axioms_1d(self):
        rng = np.random.default_rng(3)
        sets = [kx_set(random_word(rng, 6)) for _ in range(6)]
        for a, b in itertools.combinations(sets, 2):
            assert hausdorff_distance(a, b) == hausdorff_distance(b, a)
            assert (hausdorff_distance(a, b) == 0) == (a.leaves == b.leaves)
        for a, b, c in itertools.combinations(sets, 3):
            assert hausdorff_distance(a, c) <= (
                hausdorff_distance(a, b) + hausdorff_distance(b, c)
            )

    def test_metric_axioms_2d_sup(self):
        rng = np.random.default_rng(5)
        sets = [
            product(kx_set(random_word(rng, 4)), kx_set(random_word(rng, 4)))
            for _ in range(5)
        ]
        for a, b in itertools.combinations(sets, 2):
            assert hausdorff_distance(a, b, "sup") == hausdorff_distance(b, a, "sup")
        for a, b, c in itertools.combinations(sets, 3):
            assert hausdorff_distance(a, c, "sup") <= (
                hausdorff_distance(a, b, "sup") + hausdorff_distance(b, c, "sup")
            )

    def test_1d_paths_agree(self):
        # The interval sweep and the lattice scan must give identical values.
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b = kx_set(random_word(rng, 8)), kx_set(random_word(rng, 8))
            iv = max(
                dyadic._directed_1d(
                    dyadic._intervals_half_units(a), dyadic._intervals_half_units(b)
                ),
                dyadic._directed_1d(
                    dyadic._intervals_half_units(b), dyadic._intervals_half_units(a)
                ),
            )
            lat = max(dyadic._directed_sup(a, b), dyadic._directed_sup(b, a))
            assert iv == lat

    def test_2d_against_dense_sampling(self):
        # A quarter-step lattice scan (finer superset of the half-step one)
        # must reproduce the claimed exact value.
        rng = np.random.default_rng(13)
        for _ in range(20):
            a = product(kx_set(random_word(rng, 3)), kx_set(random_word(rng, 3)))
            b = product(kx_set(random_word(rng, 3)), kx_set(random_word(rng, 3)))
            exact = hausdorff_distance(a, b, "sup")
            dense = max(self._sampled_directed(a, b), self._sampled_directed(b, a))
            assert Fraction(dense, 1 << (a.depth + 2)) == exact

    @staticmethod
    def _sampled_directed(a, b):
        # quarter-cell lattice, integer arithmetic
        offs = np.array(list(itertools.product(range(5), repeat=a.d)))
        pa = np.unique(
            (4 * a._coord_array()[:, None, :] + offs[None, :, :]).reshape(-1, a.d),
            axis=0,
        )
        lo = 4 * b._coord_array()
        hi = lo + 4
        gaps = np.maximum(lo[None, :, :] - pa[:, None, :], pa[:, None, :] - hi[None, :, :])
        np.maximum(gaps, 0, out=gaps)
        return int(gaps.max(axis=2).min(axis=1).max())

    def test_euclidean_1d_matches_sup(self):
        a, b = kx_set("1010"), kx_set("0110")
        assert hausdorff_distance(a, b, "euclidean") == hausdorff_distance(a, b, "sup")

    def test_euclidean_2d_rejected(self):
        a = product(kx_set("10"), kx_set("10"))
        with pytest.raises(ValueError):
            hausdorff_distance(a, a, "euclidean")


class TestZoom:
    def test_identity(self):
        a = kx_set("10110")
        assert zoom(a, 0, 0) == a

    def test_zoom_is_shift(self):
        x = beatty_balanced(Fraction(2, 5)).prefix(8)
        lhs = zoom(kx_set(x), 1, 0)
        rhs = kx_set(Word(x.bits[1:]))
        assert lhs == rhs

    def test_composition(self):
        a = kx_set("11011")
        m1, u1 = 1, Fraction(1, 4)
        m2, u2 = 2, Fraction(-5, 4)
        lhs = zoom(zoom(a, m1, u1), m2, u2)
        rhs = zoom(a, m1 + m2, (1 << m2) * u1 + u2)
        assert lhs == rhs

    def test_negative_translation_in_range(self):
        a = DyadicSet(1, 3, frozenset({(6,), (7,)}))
        out = zoom(a, 1, -Fraction(3, 2))
        assert out.leaves == frozenset({(0,), (1,)})

    def test_empty_view_rejected(self):
        a = singleton_chain(1, 3, (7,))
        with pytest.raises(ValueError):
            zoom(a, 1, -Fraction(7, 2))  # lands exactly on the right boundary cell

    def test_misaligned_translation_rejected(self):
        a = kx_set("1111")
        with pytest.raises(ValueError):
            zoom(a, 2, Fraction(1, 8))

    def test_exponent_bounds(self):
        a = kx_set("11")
        with pytest.raises(ValueError):
            zoom(a, 3, 0)

    def test_meets_open_cube_flag(self):
        assert meets_open_cube(kx_set("000"))


class TestDecompose:
    def test_level_zero(self):
        pieces = decompose("1011", 0)
        assert len(pieces) == 1
        u, piece = pieces[0]
        assert u == 0 and piece == kx_set("1011")

    def test_word_11_level_1(self):
        pieces = decompose("11", 1)
        assert [u for u, _ in pieces] == [Fraction(0), Fraction(1, 2)]

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=10), st.data())
    @settings(max_examples=60, deadline=None)
    def test_union_and_count(self, bits, data):
        w = Word.from_bits(bits)
        n = data.draw(st.integers(0, len(bits)))
        pieces = decompose(w, n)
        assert len(pieces) == 2 ** w.prefix(n).sigma
        union = frozenset().union(*(p.leaves for _, p in pieces))
        assert union == kx_set(w).leaves
        ancs = [frozenset(c >> (len(bits) - n) for (c,) in p.leaves) for _, p in pieces]
        for s in ancs:
            assert len(s) == 1  # each piece sits in a single level-n cell

    def test_pieces_are_translates_of_shifted_set(self):
        w = Word.from_string("110101")
        n = 2
        for u, piece in decompose(w, n):
            view = zoom(piece, n, -u * (1 << n))
            assert view == kx_set(Word(w.bits[n:]))


class TestSandwich:
    def test_equal_sets(self):
        c = kx_set("101")
        assert verify_sandwich(c, c, [0])

    def test_strictly_larger_fails(self):
        c = singleton_chain(1, 2, (0,))
        e = DyadicSet(1, 2, frozenset({(0,), (3,)}))
        assert not verify_sandwich(e, c, [0])

    def test_union_of_translates(self):
        c = singleton_chain(1, 2, (0,))
        e = DyadicSet(1, 2, frozenset({(0,), (2,)}))
        assert verify_sandwich(e, c, [0, Fraction(1, 2)])

    def test_zoomed_square_view(self):
        x = Word.from_string("1101")
        sq = product(kx_set(x), kx_set(x))
        m = 1
        view = zoom(sq, m, 0)
        c = product(kx_set(Word(x.bits[m:])), kx_set(Word(x.bits[m:])))
        assert verify_sandwich(view, c, [(0, 0)])

    def test_depth_mismatch(self):
        with pytest.raises(ValueError):
            verify_sandwich(kx_set("10"), kx_set("101"), [0])


class TestSerialization:
    @given(st.lists(st.integers(0, 1), min_size=0, max_size=10))
    @settings(max_examples=60, deadline=None)
    def test_json_roundtrip(self, bits):
        s = kx_set(Word.from_bits(bits))
        assert from_json(to_json(s)) == s

    @given(st.lists(st.integers(0, 1), min_size=0, max_size=10))
    @settings(max_examples=60, deadline=None)
    def test_bitpack_roundtrip(self, bits):
        s = kx_set(Word.from_bits(bits))
        assert unpack_bits(pack_bits(s)) == s

    def test_bitpack_roundtrip_2d(self):
        s = product(kx_set("101"), kx_set("011"))
        assert unpack_bits(pack_bits(s)) == s

    def test_bitpack_empty(self):
        s = DyadicSet(2, 3, frozenset())
        assert unpack_bits(pack_bits(s)) == s

    def test_bitpack_is_compact(self):
        s = kx_set(factor(beatty_balanced(Fraction(1, 2)), 0, 16))
        assert len(pack_bits(s)) < len(to_json(s).encode()) / 4
