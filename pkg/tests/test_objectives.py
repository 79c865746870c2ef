import numpy as np
import pytest

from l2gdv._rng import rng_for
from l2gdv.models import ModelVector
from l2gdv.objectives import (
    FLProblem,
    LogisticClient,
    QuadraticClient,
    F_grad,
    F_value,
    f_grad,
    f_value,
    finite_diff_check,
    make_pl_problem,
    make_strongly_convex_problem,
    reference_gd,
)
from l2gdv.theory import hessian_F, measure_mu_pl, solve_exact


class TestQuadraticClient:
    def test_identity_example(self):
        c = QuadraticClient(np.eye(2), np.zeros(2))
        assert c.value(np.array([3.0, 4.0])) == pytest.approx(12.5)
        assert c.grad(np.array([3.0, 4.0])).tolist() == [3.0, 4.0]

    def test_stationary_at_solution(self):
        rng = rng_for(2, "quad-test")
        A = rng.standard_normal((3, 3))
        A = A @ A.T + 0.5 * np.eye(3)
        b = rng.standard_normal(3)
        c = QuadraticClient(A, b)
        v = np.linalg.solve(A, b)
        assert np.linalg.norm(c.grad(v)) <= 1e-12 * np.linalg.norm(b)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            QuadraticClient(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            QuadraticClient(np.array([[-1.0]]), np.zeros(1))

    def test_dimension_mismatch(self):
        c = QuadraticClient(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            c.value(np.zeros(3))


class TestLogisticClient:
    def test_all_zero_labels_at_origin(self):
        X = rng_for(3, "logit-test").standard_normal((20, 4))
        c = LogisticClient(X, np.zeros(20), l2=0.0)
        assert c.value(np.zeros(4)) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_smoothness_is_computed_from_data(self):
        X = rng_for(4, "logit-test").standard_normal((30, 3))
        c = LogisticClient(X, np.ones(30), l2=0.25)
        expected = np.linalg.eigvalsh(X.T @ X)[-1] / (4 * 30) + 0.25
        assert c.smoothness == pytest.approx(expected, rel=1e-12)
        assert c.strong_convexity == 0.25

    def test_label_validation(self):
        with pytest.raises(ValueError):
            LogisticClient(np.ones((3, 1)), np.array([0, 1, 2]))

    def test_gradient_matches_finite_differences(self):
        X = rng_for(5, "logit-test").standard_normal((25, 3))
        y = (rng_for(6, "logit-test").random(25) < 0.4).astype(float)
        c = LogisticClient(X, y, l2=0.1)
        v = rng_for(7, "logit-test").standard_normal(3)
        assert finite_diff_check(c, v, tol=1e-4)


class _BrokenGrad:
    """Quadratic oracle whose gradient is off by +1 on one coordinate."""

    def __init__(self, inner):
        self.inner = inner
        self.dim = inner.dim

    def value(self, v):
        return self.inner.value(v)

    def grad(self, v):
        g = self.inner.grad(v).copy()
        g[0] += 1.0
        return g


class TestFiniteDiffCheck:
    def test_quadratic_passes(self):
        c = QuadraticClient(2.0 * np.eye(2), np.ones(2))
        assert finite_diff_check(c, np.array([0.3, -0.7]), tol=1e-5)

    def test_detects_injected_bug(self):
        c = _BrokenGrad(QuadraticClient(2.0 * np.eye(2), np.ones(2)))
        assert not finite_diff_check(c, np.array([0.3, -0.7]), tol=1e-5)

    def test_rejects_bad_tol(self):
        c = QuadraticClient(np.eye(1), np.zeros(1))
        with pytest.raises(ValueError):
            finite_diff_check(c, np.zeros(1), tol=0.0)


class TestCompositeObjective:
    def test_single_client_half_norm(self):
        prob = FLProblem((QuadraticClient(np.eye(1), np.zeros(1)),), lam=0.0)
        x = ModelVector([[2.0]])
        assert f_value(prob, x) == pytest.approx(2.0)
        assert f_grad(prob, x).parts.tolist() == [[2.0]]

    def test_zero_clients(self):
        zero = QuadraticClient(np.zeros((1, 1)), np.zeros(1))
        prob = FLProblem((zero, zero), lam=1.0)
        x = ModelVector([[0.0], [2.0]])
        assert f_value(prob, x) == 0.0
        assert F_value(prob, x) == pytest.approx(0.5)
        assert F_grad(prob, x).parts.tolist() == [[-0.5], [0.5]]

    def test_lam_zero_reduces_to_f(self):
        prob = make_strongly_convex_problem(3, 2, 0.1, 1.0, lam=0.0, seed=9)
        x = ModelVector(rng_for(9, "x").standard_normal((3, 2)))
        assert F_value(prob, x) == f_value(prob, x)
        assert np.array_equal(F_grad(prob, x).parts, f_grad(prob, x).parts)

    def test_stationarity_at_client_minimizers_with_lam_zero(self):
        prob = make_strongly_convex_problem(4, 3, 0.2, 1.0, lam=0.0, seed=12)
        parts = [np.linalg.solve(c.A, c.b) for c in prob.clients]
        g = f_grad(prob, ModelVector.from_parts(parts))
        assert g.norm() <= 1e-12

    def test_gradient_zero_at_exact_solution(self):
        prob = make_strongly_convex_problem(5, 3, 0.1, 1.0, 1.3, seed=4)
        sol = solve_exact(prob)
        assert F_grad(prob, sol.x_star).norm() <= 1e-10

    def test_dimension_mismatch(self):
        prob = make_strongly_convex_problem(3, 2, 0.1, 1.0, 1.0, seed=1)
        with pytest.raises(ValueError):
            f_value(prob, ModelVector.zeros(2, 2))


class TestStronglyConvexGenerator:
    def test_spectrum_inside_band_with_endpoints(self):
        mu, L = 0.1, 1.0
        prob = make_strongly_convex_problem(6, 4, mu, L, 1.0, seed=8)
        los, his = [], []
        for c in prob.clients:
            eig = np.linalg.eigvalsh(c.A)
            assert eig[0] >= mu - 1e-9 and eig[-1] <= L + 1e-9
            los.append(eig[0])
            his.append(eig[-1])
        assert min(los) == pytest.approx(mu, abs=1e-9)
        assert max(his) == pytest.approx(L, abs=1e-9)
        assert prob.mu == pytest.approx(mu, abs=1e-9)
        assert prob.L == pytest.approx(L, abs=1e-9)

    def test_deterministic_in_seed(self):
        a = make_strongly_convex_problem(4, 3, 0.2, 2.0, 0.5, seed=77)
        b = make_strongly_convex_problem(4, 3, 0.2, 2.0, 0.5, seed=77)
        for ca, cb in zip(a.clients, b.clients):
            assert np.array_equal(ca.A, cb.A) and np.array_equal(ca.b, cb.b)

    def test_forced_scalar_case(self):
        prob = make_strongly_convex_problem(1, 1, 1.0, 1.0, 0.0, seed=0)
        assert prob.clients[0].A.tolist() == [[1.0]]

    def test_rejects_bad_band(self):
        with pytest.raises(ValueError):
            make_strongly_convex_problem(2, 2, 0.0, 1.0, 1.0, seed=0)
        with pytest.raises(ValueError):
            make_strongly_convex_problem(2, 2, 2.0, 1.0, 1.0, seed=0)

    def test_strong_convexity_inequality(self):
        mu = 0.3
        prob = make_strongly_convex_problem(4, 3, mu, 1.5, 1.0, seed=21)
        rng = rng_for(21, "sc-pairs")
        for c in prob.clients:
            for _ in range(8):
                v, w = rng.standard_normal(3), rng.standard_normal(3)
                lhs = c.value(v)
                rhs = c.value(w) + c.grad(w) @ (v - w) + 0.5 * mu * np.sum((v - w) ** 2)
                assert lhs >= rhs - 1e-9

    def test_lipschitz_gradients(self):
        L = 1.5
        prob = make_strongly_convex_problem(4, 3, 0.3, L, 1.0, seed=22)
        rng = rng_for(22, "lip-pairs")
        for c in prob.clients:
            for _ in range(8):
                v, w = rng.standard_normal(3), rng.standard_normal(3)
                assert np.linalg.norm(c.grad(v) - c.grad(w)) <= L * np.linalg.norm(v - w) + 1e-9


class TestPLGenerator:
    def test_rank_deficiency(self):
        prob = make_pl_problem(3, 2, rank=1, L=1.0, lam=1.0, seed=6)
        for c in prob.clients:
            eig = np.linalg.eigvalsh(c.A)
            assert np.sum(np.abs(eig) <= 1e-10) == 1
            assert eig[-1] <= 1.0 + 1e-9

    def test_linear_term_in_range(self):
        prob = make_pl_problem(5, 6, rank=4, L=1.0, lam=1.0, seed=6)
        for c in prob.clients:
            y, *_ = np.linalg.lstsq(c.A, c.b, rcond=None)
            assert np.linalg.norm(c.A @ y - c.b) <= 1e-10

    def test_assembled_curvature_positive_and_flat_directions(self):
        prob = make_pl_problem(5, 6, rank=4, L=1.0, lam=1.0, seed=6)
        eig = np.linalg.eigvalsh(hessian_F(prob))
        nullity = int(np.sum(eig <= 1e-10 * eig[-1]))
        assert nullity == 2  # d - rank shared flat directions
        assert measure_mu_pl(prob) > 0

    def test_gradient_domination_holds_at_random_points(self):
        prob = make_pl_problem(4, 5, rank=3, L=1.0, lam=0.7, seed=13)
        sol = solve_exact(prob)
        mu_pl = measure_mu_pl(prob)
        rng = rng_for(13, "pl-points")
        for _ in range(20):
            x = ModelVector(sol.x_star.parts + rng.standard_normal((4, 5)) * 3.0)
            lhs = 0.5 * F_grad(prob, x).norm() ** 2
            rhs = mu_pl * (F_value(prob, x) - sol.F_star)
            assert lhs >= rhs - 1e-9 * max(1.0, abs(rhs))

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            make_pl_problem(2, 3, rank=3, L=1.0, lam=1.0, seed=0)
        with pytest.raises(ValueError):
            make_pl_problem(2, 3, rank=0, L=1.0, lam=1.0, seed=0)


class TestHessianStructure:
    def test_matches_blockdiag_plus_centering(self):
        prob = make_strongly_convex_problem(4, 2, 0.2, 1.0, 0.9, seed=30)
        n, d = 4, 2
        H = hessian_F(prob)
        expected = np.zeros((n * d, n * d))
        for i, c in enumerate(prob.clients):
            expected[i * d:(i + 1) * d, i * d:(i + 1) * d] = c.A / n
        centering = np.kron(np.eye(n) - np.ones((n, n)) / n, np.eye(d)) / n
        expected += prob.lam * centering
        assert np.allclose(H, expected, atol=1e-14)


class TestReferenceGD:
    def test_reaches_quadratic_minimum(self):
        c = QuadraticClient(np.diag([0.5, 2.0]), np.array([1.0, -1.0]))
        w, val = reference_gd(c, grad_tol=1e-13)
        expected = np.linalg.solve(c.A, c.b)
        assert np.allclose(w, expected, atol=1e-10)
        assert val == pytest.approx(c.value(expected), abs=1e-12)
