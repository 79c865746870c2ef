import numpy as np
import pytest
from hypothesis import given, strategies as st

from l2gdv.schedules import StepSchedule, calligraphic_L, convex_cap, pl_cap, zeta


class TestStepSchedule:
    def test_first_step_is_alpha1(self):
        for theta in (0.0, 0.3, 1.0):
            assert StepSchedule(0.1, theta).step_at(1) == 0.1

    def test_constant_schedule(self):
        s = StepSchedule.constant(0.25)
        assert s.theta == 0.0
        assert s.step_at(1) == s.step_at(1000) == 0.25

    def test_harmonic_value(self):
        assert StepSchedule(0.1, 1.0).step_at(1000) == pytest.approx(1e-4, rel=1e-12)

    def test_rejects_k_zero(self):
        with pytest.raises(ValueError):
            StepSchedule(0.1, 0.5).step_at(0)

    def test_unconstructible_outside_unit_interval(self):
        with pytest.raises(ValueError):
            StepSchedule(0.1, 1.5)
        with pytest.raises(ValueError):
            StepSchedule(0.1, -0.1)
        with pytest.raises(ValueError):
            StepSchedule(0.0, 0.5)
        with pytest.raises(ValueError):
            StepSchedule(float("inf"), 0.5)

    def test_steps_vector_matches_scalar(self):
        s = StepSchedule(0.7, 0.4)
        vec = s.steps(50)
        assert vec.shape == (50,)
        assert all(vec[k - 1] == s.step_at(k) for k in (1, 2, 17, 50))

    @given(st.floats(0.0, 1.0), st.integers(1, 10**6))
    def test_nonincreasing(self, theta, k):
        s = StepSchedule(1.0, theta)
        assert s.step_at(k + 1) <= s.step_at(k) + 1e-18

    def test_harmonic_partial_sums_grow_logarithmically(self):
        # sum_{j<=k} alpha_1/j >= alpha_1 (ln(k+1) - 1): unbounded step sum
        alpha1 = 0.3
        s = StepSchedule(alpha1, 1.0)
        for k in (10**3, 10**5, 10**6):
            partial = s.steps(k).sum()
            assert partial >= alpha1 * np.log(k + 1) - alpha1

    def test_decay_characterization(self):
        # theta in (0, 1]: steps vanish and their sum is unbounded
        for theta in (0.3, 0.7, 1.0):
            s = StepSchedule(1.0, theta)
            assert s.step_at(10**9) < 1e-2
            assert s.steps(10**6).sum() > 10.0
        # theta = 0: steps do not vanish
        s0 = StepSchedule(1.0, 0.0)
        assert s0.step_at(10**9) == 1.0


class TestCaps:
    def test_convex_cap_balanced_example(self):
        # n=1, p=0.5, L=1, lam=1: both branches hit 4, cap = 1/8
        assert calligraphic_L(0.5, 1.0, 1.0, 1) == pytest.approx(4.0)
        assert convex_cap(0.5, 1.0, 1.0, 1) == pytest.approx(0.125)

    def test_convex_cap_lam_zero(self):
        # only the data branch remains: (1+2p)L/(1-p) = 4
        assert convex_cap(0.5, 0.0, 1.0, 1) == pytest.approx(0.125)

    def test_cap_scales_linearly_with_n(self):
        base = convex_cap(0.3, 0.7, 1.2, 1)
        assert convex_cap(0.3, 0.7, 1.2, 10) == pytest.approx(10 * base, rel=1e-12)

    def test_rejects_degenerate_p(self):
        for p in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(ValueError):
                convex_cap(p, 1.0, 1.0, 1)
            with pytest.raises(ValueError):
                pl_cap(p, 1.0, 1.0, 1, 0.5)

    def test_pl_cap_balanced_example(self):
        # n=1, p=0.5, L=1, lam=1: zeta = 8, L_F = 2, cap = mu^2/32
        mu = 0.37
        assert zeta(0.5, 1.0, 1.0, 1) == pytest.approx(8.0)
        assert pl_cap(0.5, 1.0, 1.0, 1, mu) == pytest.approx(mu**2 / 32.0)

    def test_pl_cap_lam_zero_single_term(self):
        p = 0.4
        assert zeta(p, 0.0, 2.0, 3) == pytest.approx((1 + 2 * p) * 4.0 / ((1 - p) * 9))

    def test_pl_cap_quadratic_in_mu(self):
        lo = pl_cap(0.5, 1.0, 1.0, 4, 0.1)
        hi = pl_cap(0.5, 1.0, 1.0, 4, 0.2)
        assert hi == pytest.approx(4 * lo, rel=1e-12)

    def test_pl_cap_rejects_nonpositive_mu(self):
        with pytest.raises(ValueError):
            pl_cap(0.5, 1.0, 1.0, 1, 0.0)
