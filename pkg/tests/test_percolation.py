from fractions import Fraction

import numpy as np
import pytest

from microfract.dyadic import DyadicSet, full_cube, hausdorff_distance, kx_set
from microfract.errors import ResourceLimitError
from microfract.percolation import (
    Completion,
    GammaStarConfig,
    PercField,
    RetentionSchedule,
    choose_copies,
    coupled_pair,
    estimate_survival_constant,
    gamma_star,
    gw_extinction,
    hawkes_experiment,
    sample,
    select_anchor_cell,
)
from microfract.realize import TargetSpec
from microfract.seq import Word, beatty_balanced, factor


def iterate_extinction(p, children, iters=200000, tol=1e-14):
    """Oracle: plain monotone fixed-point iteration."""
    q = 0.0
    for _ in range(iters):
        nxt = (1 - p + p * q) ** children
        if abs(nxt - q) < tol:
            return nxt
        q = nxt
    return q


class TestPercField:
    def test_deterministic_across_instances(self):
        f1, f2 = PercField(12345), PercField(12345)
        assert f1.variate("a", 3, (5,)) == f2.variate("a", 3, (5,))

    def test_scalar_matches_vector(self):
        f = PercField(99)
        coords = np.array([[0, 1], [2, 3], [7, 5]], dtype=np.int64)
        vec = f.variates(("k", 2), 3, coords)
        for row, v in zip(coords, vec):
            assert f.variate(("k", 2), 3, tuple(row.tolist())) == v

    def test_copy_keys_decorrelate(self):
        f = PercField(7)
        a = f.variate(("copy", 1), 4, (3,))
        b = f.variate(("copy", 2), 4, (3,))
        assert a != b

    def test_seed_changes_field(self):
        assert PercField(1).variate(0, 2, (1,)) != PercField(2).variate(0, 2, (1,))

    def test_uniform_range_and_mean(self):
        f = PercField(2024)
        coords = np.arange(4096, dtype=np.int64)[:, None]
        u = f.variates("m", 12, coords)
        assert (u >= 0).all() and (u < 1).all()
        assert abs(u.mean() - 0.5) < 0.02

    def test_path_width_limit(self):
        f = PercField(0)
        with pytest.raises(ResourceLimitError):
            f.variate("x", 40, (1, 2))


class TestSchedule:
    def test_constant_and_list(self):
        s = RetentionSchedule.constant(Fraction(1, 2))
        assert s.alpha(1) == s.alpha(99) == Fraction(1, 2)
        t = RetentionSchedule.from_list([0, Fraction(1, 3)], limit=1)
        assert t.alpha(1) == 0 and t.alpha(2) == Fraction(1, 3) and t.alpha(5) == 1

    def test_undefined_generation(self):
        t = RetentionSchedule.from_list([0])
        with pytest.raises(ValueError):
            t.alpha(2)

    def test_dim_validation(self):
        s = RetentionSchedule.constant(Fraction(3, 2))
        with pytest.raises(ValueError):
            s.validate_dim(1, 4)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            RetentionSchedule.from_list([-1])


class TestSample:
    def test_zero_exponent_keeps_everything(self):
        smp = sample(RetentionSchedule.constant(0), PercField(5), "k", 4)
        assert smp.survivors == full_cube(1, 4)

    def test_reproducible(self):
        a = sample(RetentionSchedule.constant(Fraction(1, 2)), PercField(31), "c", 10)
        b = sample(RetentionSchedule.constant(Fraction(1, 2)), PercField(31), "c", 10)
        assert a.survivors == b.survivors

    def test_restriction_contains_survivors(self):
        k = kx_set(factor(beatty_balanced(Fraction(1, 2)), 0, 10))
        smp = sample(RetentionSchedule.constant(Fraction(1, 4)), PercField(3),
                     "r", 10, k_set=k)
        assert smp.survivors.leaves <= k.leaves

    def test_marginal_counts_match_product_law(self):
        # mean survivors at level n over many runs ~ 2^n * prod retention
        depth, trials = 6, 4000
        field = PercField(777)
        sched = RetentionSchedule.constant(Fraction(1, 2))
        counts = np.zeros((trials, depth + 1))
        for t in range(trials):
            smp = sample(sched, field, ("m", t), depth)
            counts[t] = smp.level_counts
        for m in range(1, depth + 1):
            expect = 2.0 ** (m / 2)
            se = counts[:, m].std(ddof=1) / np.sqrt(trials)
            assert abs(counts[:, m].mean() - expect) <= 3 * se + 1e-9

    def test_completions_structure(self):
        k = full_cube(1, 6)
        smp = sample(RetentionSchedule.constant(Fraction(9, 10)), PercField(11),
                     "comp", 6, k_set=k, completions=True)
        assert smp.completions  # heavy thinning must kill some branches
        for comp in smp.completions:
            shift = 6 - comp.level
            assert tuple(c >> shift for c in comp.z_cell) == comp.cell
            assert comp.z_cell in k.leaves


class TestCoupling:
    def test_equal_schedules_identical(self):
        f = PercField(42)
        s = RetentionSchedule.constant(Fraction(1, 3))
        a, b = coupled_pair(s, s, f, "e", 8)
        assert a.survivors == b.survivors

    def test_zero_schedule_gives_full_superset(self):
        f = PercField(43)
        a, b = coupled_pair(RetentionSchedule.constant(Fraction(2, 3)),
                            RetentionSchedule.constant(0), f, "z", 6)
        assert b.survivors == full_cube(1, 6)
        assert a.survivors.leaves <= b.survivors.leaves

    def test_ordered_schedules_nest_exactly(self):
        rng = np.random.default_rng(9)
        field = PercField(1001)
        for trial in range(25):
            lo = [Fraction(int(x), 12) for x in rng.integers(0, 9, size=8)]
            hi = [a + Fraction(int(x), 12) for a, x in
                  zip(lo, rng.integers(0, 4, size=8))]
            sa, sb = coupled_pair(RetentionSchedule.from_list(hi),
                                  RetentionSchedule.from_list(lo),
                                  field, ("o", trial), 8)
            assert sa.survivors.leaves <= sb.survivors.leaves


class TestGW:
    def test_sure_survival(self):
        assert gw_extinction(1.0, 2) == 0.0

    def test_subcritical_dies(self):
        assert gw_extinction(0.5, 2) == 1.0
        assert gw_extinction(0.25, 4) == 1.0

    def test_closed_form_value(self):
        q = gw_extinction(2 ** -0.5, 2)
        assert abs(q - 0.17157287525381) < 1e-12  # 3 - 2*sqrt(2)
        assert abs(q - iterate_extinction(2 ** -0.5, 2)) < 1e-10

    def test_iteration_matches_fixed_point(self):
        for p, ch in [(0.5, 4), (0.4, 8), (0.9, 2)]:
            q = gw_extinction(p, ch)
            assert abs((1 - p + p * q) ** ch - q) < 1e-12
            assert abs(q - iterate_extinction(p, ch)) < 1e-10


class TestHawkes:
    def test_full_interval_supercritical(self):
        rep = hawkes_experiment(None, Fraction(1, 2), [4, 8], 400, PercField(5))
        assert rep.survival_nonincreasing
        s8 = rep.rows[1].survival
        assert 0.6 < s8 < 1.0
        assert rep.rows[1].cond_slope is not None

    def test_thin_set_dies_fast(self):
        k = kx_set(factor(beatty_balanced(Fraction(1, 3)), 0, 12))
        rep = hawkes_experiment(k, Fraction(7, 10), [4, 12], 400, PercField(6))
        assert rep.rows[1].survival < rep.rows[0].survival
        assert rep.survival_nonincreasing

    def test_zero_survivors_flagged(self):
        k = kx_set("0" * 8)  # single thin chain: dies almost surely
        rep = hawkes_experiment(k, Fraction(9, 10), [8], 200, PercField(7))
        if rep.rows[0].n_alive == 0:
            assert 8 in rep.slope_flagged_levels
            assert rep.rows[0].cond_slope is None

    def test_beta_range_validated(self):
        with pytest.raises(ValueError):
            hawkes_experiment(None, 2, [4], 10, PercField(0))

    def test_csv_shape(self):
        rep = hawkes_experiment(None, Fraction(1, 2), [3], 50, PercField(8))
        lines = rep.to_csv().strip().split("\n")
        assert lines[0] == "depth,survival_frac,ci_low,ci_high,cond_slope"
        assert len(lines) == 2


class TestGammaStar:
    def _setup(self, depth=8):
        k = full_cube(1, depth)
        y0 = select_anchor_cell(k)
        gamma = Fraction(1)
        cfg = GammaStarConfig(
            gamma=gamma,
            betas=(Fraction(1, 2), Fraction(3, 4)),
            copies=(4, 4),
            c_hats=(0.5, 0.5),
            y0_leaf=y0,
            k_max=2,
        )
        return k, cfg

    def test_full_retention_reproduces_reference(self):
        k, cfg = self._setup()
        spec = TargetSpec.finite_set([Fraction(1)])  # phi == gamma, alpha == 0
        smp = gamma_star(cfg, Word((0,) * 8), spec, PercField(3), 8, k)
        q1 = tuple(c >> 7 for c in cfg.y0_leaf)
        expect = {leaf for leaf in k.leaves if tuple(c >> 7 for c in leaf) == q1}
        expect.add(cfg.y0_leaf)
        assert smp.survivors.leaves == frozenset(expect)

    def test_monotone_in_branch_value(self):
        k, cfg = self._setup()
        spec = TargetSpec.finite_set([Fraction(1, 4), Fraction(3, 4)])
        f = PercField(17)
        hi = gamma_star(cfg, Word((1,) * 8), spec, f, 8, k)  # phi 3/4, alpha 1/4
        lo = gamma_star(cfg, Word((0,) * 8), spec, f, 8, k)  # phi 1/4, alpha 3/4
        assert lo.survivors.leaves <= hi.survivors.leaves

    def test_continuity_modulus(self):
        depth = 10
        k = full_cube(1, depth)
        y0 = select_anchor_cell(k)
        cfg = GammaStarConfig(Fraction(1), (Fraction(1, 2),), (3,), (0.5,), y0, 1)
        spec = TargetSpec.interval_union([(Fraction(2, 5), Fraction(9, 10))])
        f = PercField(23)
        n = 3
        x = Word((0, 1, 0) + (0,) * (depth - n))
        y = Word((0, 1, 0) + (1,) * (depth - n))
        sx = gamma_star(cfg, x, spec, f, depth, k)
        sy = gamma_star(cfg, y, spec, f, depth, k)
        cx = sx.survivors.leaves | {c.z_cell for c in sx.completions}
        cy = sy.survivors.leaves | {c.z_cell for c in sy.completions}
        dh = hausdorff_distance(DyadicSet(1, depth, frozenset(cx)),
                                DyadicSet(1, depth, frozenset(cy)))
        assert dh <= Fraction(1, 1 << (n + 1))  # 2^-n * side(Q_1)

    def test_config_invariant_enforced(self):
        with pytest.raises(ValueError):
            GammaStarConfig(Fraction(1), (Fraction(1, 2),), (1,), (0.2,), (0,), 1)


class TestHelpers:
    def test_choose_copies(self):
        i = choose_copies(0.5)
        assert (1 - 0.5) ** i < 0.5 and (1 - 0.25) ** i < 0.5
        assert choose_copies(0.01, cap=16) == 16

    def test_anchor_prefers_dense_cell(self):
        leaves = {(c,) for c in range(8)} | {(56,)}
        k = DyadicSet(1, 6, frozenset(leaves))
        anchor = select_anchor_cell(k, window_level=3)
        assert anchor == (0,)

    def test_survival_constant_estimate(self):
        k = full_cube(1, 8)
        c = estimate_survival_constant(k, Fraction(1, 2), 8, 300, PercField(2))
        assert 0.5 < c < 1.0


class TestCubeKeyedVariates:
    def test_cube_signature_matches_tuple_path(self):
        from microfract.dyadic import CubeIdx
        f = PercField(55)
        cube = CubeIdx(5, (13,))
        assert f.variate_cube("c", cube) == f.variate("c", 5, (13,))
