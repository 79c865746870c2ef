import numpy as np
import pytest
from hypothesis import given, strategies as st

from l2gdv.models import ModelVector, average, psi_grad, psi_value
from l2gdv.objectives import (
    F_grad,
    F_value,
    central_diff_grad,
    make_strongly_convex_problem,
)
from l2gdv._rng import rng_for


def stacks(max_n=8, max_d=6, scale=1e3):
    return st.integers(1, max_n).flatmap(
        lambda n: st.integers(1, max_d).flatmap(
            lambda d: st.lists(
                st.lists(st.floats(-scale, scale), min_size=d, max_size=d),
                min_size=n,
                max_size=n,
            )
        )
    )


class TestModelVector:
    def test_shape_and_views(self):
        x = ModelVector([[1.0, 2.0], [3.0, 4.0]])
        assert (x.n, x.d) == (2, 2)
        assert x.flat.tolist() == [1.0, 2.0, 3.0, 4.0]
        assert x.part(1).tolist() == [3.0, 4.0]

    def test_immutability(self):
        x = ModelVector([[1.0], [2.0]])
        with pytest.raises(ValueError):
            x.parts[0, 0] = 5.0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ModelVector([[np.nan], [1.0]])
        with pytest.raises(ValueError):
            ModelVector([[np.inf], [1.0]])

    def test_from_parts_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ModelVector.from_parts([[1.0, 2.0], [3.0]])

    def test_arithmetic(self):
        x = ModelVector([[1.0], [2.0]])
        y = ModelVector([[0.5], [0.5]])
        assert (x - y).flat.tolist() == [0.5, 1.5]
        assert (2.0 * x).flat.tolist() == [2.0, 4.0]
        assert (x + y).norm() == pytest.approx(np.sqrt(1.5**2 + 2.5**2))

    def test_replicate_is_consensus(self):
        x = ModelVector.replicate([3.0, -1.0], n=5)
        assert psi_value(x) == 0.0


class TestAverage:
    def test_two_points(self):
        assert average(ModelVector([[0.0], [2.0]])).tolist() == [1.0]

    def test_identical_parts(self):
        v = [1.5, -2.0, 7.0]
        x = ModelVector.replicate(v, n=3)
        assert average(x).tolist() == v

    def test_single_client(self):
        assert average(ModelVector([[5.0]])).tolist() == [5.0]


class TestPsi:
    def test_zero_on_consensus(self):
        assert psi_value(ModelVector.replicate([1.0, 2.0], 4)) == 0.0

    def test_two_point_value(self):
        assert psi_value(ModelVector([[0.0], [2.0]])) == pytest.approx(0.5, abs=1e-15)

    def test_four_point_value(self):
        x = ModelVector([[1.0], [1.0], [-1.0], [-1.0]])
        assert psi_value(x) == pytest.approx(0.5, abs=1e-15)

    def test_grad_two_points(self):
        g = psi_grad(ModelVector([[0.0], [2.0]]))
        assert g.parts.tolist() == [[-0.5], [0.5]]

    def test_grad_vanishes_on_consensus(self):
        g = psi_grad(ModelVector.replicate([3.0, 4.0], 6))
        assert np.all(g.parts == 0.0)

    @given(stacks())
    def test_grad_parts_sum_to_zero(self, parts):
        x = ModelVector(parts)
        total = psi_grad(x).parts.sum(axis=0)
        tol = 1e-12 * x.n * max(1.0, float(np.abs(x.parts).max()))
        assert np.all(np.abs(total) <= tol)

    @given(stacks(scale=10.0))
    def test_zero_iff_consensus(self, parts):
        x = ModelVector(parts)
        spread = np.abs(x.parts - x.parts.mean(axis=0)).max()
        if psi_value(x) == 0.0:
            assert spread <= 1e-12
        if spread == 0.0:
            assert psi_value(x) == 0.0

    @given(stacks(scale=50.0), stacks(scale=50.0))
    def test_grad_is_one_over_n_lipschitz(self, a, b):
        x = ModelVector(a)
        nb = np.asarray(b, dtype=float)
        if nb.shape != x.parts.shape:
            nb = np.resize(nb, x.parts.shape)
        y = ModelVector(nb)
        lhs = (psi_grad(x) - psi_grad(y)).norm()
        rhs = (x - y).norm() / x.n
        assert lhs <= rhs + 1e-12 * max(1.0, rhs)


class TestCompositeGradient:
    def test_directional_derivative_matches_gradient(self):
        rng = rng_for(5, "fd-test")
        prob = make_strongly_convex_problem(4, 3, 0.2, 1.5, 0.8, seed=11)
        for _ in range(5):
            x = ModelVector(rng.standard_normal((4, 3)) * 3.0)
            flat_val = lambda flat: F_value(prob, ModelVector(flat.reshape(4, 3)))
            num = central_diff_grad(flat_val, x.flat, step=1e-6)
            ana = F_grad(prob, x).flat
            rel = np.linalg.norm(num - ana) / max(1.0, np.linalg.norm(ana))
            assert rel <= 1e-5
