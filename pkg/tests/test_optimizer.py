import numpy as np
import pytest
from hypothesis import given, strategies as st

from l2gdv._rng import rng_for
from l2gdv.dataio import partition_iid, synth_gaussian_classes, design_matrix
from l2gdv.harness import problem_from_dataset
from l2gdv.models import ModelVector, average
from l2gdv.objectives import (
    FLProblem,
    QuadraticClient,
    F_grad,
    F_value,
    f_grad,
    make_pl_problem,
    make_strongly_convex_problem,
)
from l2gdv.optimizer import (
    RunConfig,
    StepCapWarning,
    count_communication_rounds,
    l2gdv_step,
    run_fedavg,
    run_fedprox,
    run_l2gd,
    run_l2gdv,
    run_l2gdv_batch,
    stochastic_gradient,
)
from l2gdv.schedules import StepSchedule, convex_cap, zeta
from l2gdv.theory import (
    constants_report,
    expected_error_curve,
    fit_rate,
    solve_exact,
)


class _FixedCoin:
    """Stub generator forcing the coin: random() below/above p."""

    def __init__(self, value):
        self._value = value

    def random(self):
        return self._value


def std_problem():
    prob = make_strongly_convex_problem(10, 5, 0.1, 1.0, 1.0, seed=21)
    sol = solve_exact(prob)
    rep = constants_report(prob, 0.5, sol=sol)
    return prob, sol, rep


class TestStochasticGradient:
    @given(st.floats(0.05, 0.95))
    def test_weighted_average_is_exact_gradient(self, p):
        prob = make_strongly_convex_problem(4, 3, 0.2, 1.0, 1.5, seed=33)
        x = ModelVector(rng_for(33, "sg-point").standard_normal((4, 3)))
        mixed = (1 - p) * stochastic_gradient(prob, x, p, 0) + p * stochastic_gradient(prob, x, p, 1)
        exact = F_grad(prob, x)
        assert (mixed - exact).norm() <= 1e-12 * max(1.0, exact.norm())

    def test_heads_branch_vanishes_on_consensus(self):
        prob = make_strongly_convex_problem(3, 2, 0.2, 1.0, 2.0, seed=1)
        x = ModelVector.replicate([1.0, -2.0], 3)
        assert stochastic_gradient(prob, x, 0.5, 1).norm() == 0.0

    def test_heads_branch_vanishes_without_coupling(self):
        prob = make_strongly_convex_problem(3, 2, 0.2, 1.0, lam=0.0, seed=1)
        x = ModelVector(rng_for(2, "x").standard_normal((3, 2)))
        assert stochastic_gradient(prob, x, 0.5, 1).norm() == 0.0

    def test_rejects_degenerate_p_and_coin(self):
        prob = make_strongly_convex_problem(2, 2, 0.2, 1.0, 1.0, seed=1)
        x = ModelVector.zeros(2, 2)
        with pytest.raises(ValueError):
            stochastic_gradient(prob, x, 0.0, 0)
        with pytest.raises(ValueError):
            stochastic_gradient(prob, x, 0.5, 2)


class TestStep:
    def test_branch_formulas_match_stacked_update(self):
        rng = rng_for(44, "step-equiv")
        for trial in range(10):
            n, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
            prob = make_strongly_convex_problem(
                n, d, 0.2, 1.0, float(rng.uniform(0.1, 2.0)), seed=trial
            )
            x = ModelVector(rng.standard_normal((n, d)))
            config = RunConfig(p=0.4, schedule=StepSchedule(0.3, 0.5), K=10)
            for coin, stub in ((0, _FixedCoin(0.99)), (1, _FixedCoin(0.0))):
                stepped, got_coin, alpha = l2gdv_step(prob, x, 3, config, stub)
                assert got_coin == coin
                direct = x - alpha * stochastic_gradient(prob, x, 0.4, coin)
                assert np.max(np.abs(stepped.parts - direct.parts)) <= 1e-14 * max(
                    1.0, np.abs(direct.parts).max()
                )

    def test_heads_with_step_np_over_lam_jumps_to_average(self):
        prob = make_strongly_convex_problem(4, 2, 0.2, 1.0, lam=2.0, seed=7)
        x = ModelVector(rng_for(7, "jump").standard_normal((4, 2)))
        p = 0.3
        alpha = prob.n * p / prob.lam
        config = RunConfig(p=p, schedule=StepSchedule.constant(alpha), K=1)
        stepped, coin, _ = l2gdv_step(prob, x, 1, config, _FixedCoin(0.0))
        assert coin == 1
        assert np.allclose(stepped.parts, average(x), atol=1e-12)

    def test_tails_keeps_client_at_its_own_minimum(self):
        A = np.diag([1.0, 0.5])
        b = np.array([0.3, -0.4])
        clients = (QuadraticClient(A, b), QuadraticClient(np.eye(2), np.zeros(2)))
        prob = FLProblem(clients, lam=1.0)
        x = ModelVector.from_parts([np.linalg.solve(A, b), np.array([5.0, 5.0])])
        config = RunConfig(p=0.5, schedule=StepSchedule.constant(0.9), K=1)
        stepped, coin, _ = l2gdv_step(prob, x, 1, config, _FixedCoin(0.99))
        assert coin == 0
        assert np.allclose(stepped.part(0), x.part(0), atol=1e-12)
        assert not np.allclose(stepped.part(1), x.part(1))

    def test_rejects_k_zero(self):
        prob = make_strongly_convex_problem(2, 2, 0.2, 1.0, 1.0, seed=1)
        config = RunConfig(p=0.5, schedule=StepSchedule.constant(0.1), K=1)
        with pytest.raises(ValueError):
            l2gdv_step(prob, ModelVector.zeros(2, 2), 0, config, _FixedCoin(0.5))


class TestRunDeterminism:
    def test_identical_configs_identical_traces(self):
        prob, sol, _ = std_problem()
        config = RunConfig(p=0.5, schedule=StepSchedule(0.8, 0.3), K=300, seed=5, record_every=7)
        a = run_l2gdv(prob, config, oracle=sol)
        b = run_l2gdv(prob, config, oracle=sol)
        for attr in ("ks", "alpha", "xi", "sq_dist", "F_gap", "train_loss", "comm_rounds"):
            assert np.array_equal(getattr(a, attr), getattr(b, attr), equal_nan=True)
        assert a.communication_rounds == b.communication_rounds

    def test_batch_matches_reference_loop(self):
        prob, sol, _ = std_problem()
        config = RunConfig(p=0.5, schedule=StepSchedule(1.0, 0.4), K=400, record_every=9)
        batch = run_l2gdv_batch(prob, config, [3, 8], oracle=sol)
        for trace in batch:
            single = run_l2gdv(
                prob,
                RunConfig(p=0.5, schedule=StepSchedule(1.0, 0.4), K=400, seed=trace.seed, record_every=9),
                oracle=sol,
            )
            assert np.array_equal(trace.xi, single.xi)
            assert trace.communication_rounds == single.communication_rounds
            assert trace.aggregation_steps == single.aggregation_steps
            assert np.allclose(trace.sq_dist, single.sq_dist, rtol=1e-11, atol=1e-12)
            assert np.allclose(trace.F_gap, single.F_gap, rtol=1e-9, atol=1e-11)
            assert np.allclose(trace.final_x.parts, single.final_x.parts, rtol=1e-12, atol=1e-13)

    def test_logistic_batch_matches_reference(self):
        ds = synth_gaussian_classes(200, 2, 2, 6.0, seed=3)
        part = partition_iid(ds, 4, seed=3)
        prob = problem_from_dataset(ds, part, lam=3.0, l2=0.05)
        ev = (design_matrix(ds), ds.labels.astype(float))
        config = RunConfig(p=0.4, schedule=StepSchedule(0.1, 0.3), K=120, record_every=10)
        batch = run_l2gdv_batch(prob, config, [2], eval_data=ev)[0]
        single = run_l2gdv(
            prob, RunConfig(p=0.4, schedule=StepSchedule(0.1, 0.3), K=120, seed=2, record_every=10),
            eval_data=ev,
        )
        assert np.array_equal(batch.xi, single.xi)
        assert np.allclose(batch.train_loss, single.train_loss, rtol=1e-12)
        assert np.allclose(batch.train_loss_avg, single.train_loss_avg, rtol=1e-12)
        assert np.array_equal(batch.test_acc_avg, single.test_acc_avg)
        assert np.array_equal(batch.test_acc_local, single.test_acc_local)

    def test_run_l2gd_forces_constant_schedule(self):
        prob, sol, _ = std_problem()
        config = RunConfig(p=0.5, schedule=StepSchedule(0.9, 0.7), K=200, seed=4)
        flat = run_l2gd(prob, config, oracle=sol)
        explicit = run_l2gdv(
            prob, RunConfig(p=0.5, schedule=StepSchedule.constant(0.9), K=200, seed=4), oracle=sol
        )
        assert flat.theta == 0.0
        assert np.array_equal(flat.sq_dist, explicit.sq_dist)

    def test_lam_mismatch_rejected(self):
        prob, _, _ = std_problem()
        config = RunConfig(p=0.5, schedule=StepSchedule.constant(0.1), K=10, lam=2.0)
        with pytest.raises(ValueError):
            run_l2gdv(prob, config)


class TestCapWarning:
    def test_warns_above_cap_and_not_at_cap(self):
        prob, _, rep = std_problem()
        cap = rep.convex_cap
        with pytest.warns(StepCapWarning):
            run_l2gdv(prob, RunConfig(p=0.5, schedule=StepSchedule.constant(2 * cap), K=5))
        import warnings as _warnings

        with _warnings.catch_warnings():
            _warnings.simplefilter("error", StepCapWarning)
            run_l2gdv(prob, RunConfig(p=0.5, schedule=StepSchedule.constant(cap), K=5))


class TestCommunicationAccounting:
    def test_hand_counted_sequences(self):
        assert count_communication_rounds([0, 0, 1, 1, 0, 1]) == 2
        assert count_communication_rounds([1, 1]) == 0
        assert count_communication_rounds([0, 1, 0, 1]) == 2
        assert count_communication_rounds([1, 0, 1]) == 1
        assert count_communication_rounds([0]) == 0

    def test_trace_counters_match_recorded_coins(self):
        prob, _, _ = std_problem()
        config = RunConfig(p=0.5, schedule=StepSchedule.constant(0.5), K=500, seed=11)
        trace = run_l2gdv(prob, config)
        xi = trace.xi.astype(int)
        assert trace.communication_rounds == count_communication_rounds(xi)
        assert trace.aggregation_steps == int(xi.sum())
        assert trace.comm_rounds[-1] == trace.communication_rounds
        assert np.all(np.diff(trace.comm_rounds) >= 0)

    def test_coin_fraction_concentrates(self):
        prob = make_strongly_convex_problem(2, 1, 0.5, 1.0, 1.0, seed=3)
        K, p = 10_000, 0.5
        trace = run_l2gdv(prob, RunConfig(p=p, schedule=StepSchedule.constant(0.1), K=K, seed=0))
        frac = trace.xi.mean()
        assert abs(frac - p) <= 3 * np.sqrt(p * (1 - p) / K)


class TestAgainstExactExpectation:
    def test_monte_carlo_mean_tracks_exact_curve(self):
        prob = make_strongly_convex_problem(4, 3, 0.15, 1.0, 1.0, seed=10)
        sol = solve_exact(prob)
        p, alpha1, theta, K, M = 0.5, 0.5, 0.4, 300, 400
        config = RunConfig(p=p, schedule=StepSchedule(alpha1, theta), K=K, record_every=50)
        traces = run_l2gdv_batch(prob, config, range(M), oracle=sol)
        grid = traces[0].ks
        sq = np.stack([t.sq_dist for t in traces])
        gap = np.stack([t.F_gap for t in traces])
        ks, exact_sq, exact_gap = expected_error_curve(
            prob, StepSchedule(alpha1, theta), p, ModelVector.zeros(4, 3), K, record=grid
        )
        for mc, exact in ((sq, exact_sq), (gap, exact_gap)):
            mean = mc.mean(axis=0)
            se = mc.std(axis=0, ddof=1) / np.sqrt(M)
            assert np.all(np.abs(mean - exact) <= 4 * se + 1e-12)

    def test_constant_step_error_does_not_collapse_below_floor(self):
        """Nonvanishing steps leave a noise floor: the long-run error stays
        within an order of magnitude of the exact stationary level, which in
        turn sits below the worst-case floor scale."""
        prob, sol, rep = std_problem()
        p = 0.5
        alpha = rep.convex_cap
        K, M = 3000, 64
        x1 = ModelVector.zeros(prob.n, prob.d)
        config = RunConfig(p=p, schedule=StepSchedule.constant(alpha), K=K, record_every=10)
        traces = run_l2gdv_batch(prob, config, range(M), oracle=sol, x1=x1)
        grid = traces[0].ks
        mean = np.stack([t.sq_dist for t in traces]).mean(axis=0)
        _, exact_sq, _ = expected_error_curve(
            prob, StepSchedule.constant(alpha), p, x1, K, record=[K]
        )
        floor_estimate = float(exact_sq[-1])
        worst_case_floor = 18 * prob.n * alpha * rep.sigma_sq / prob.mu
        assert floor_estimate <= worst_case_floor
        last_decade = mean[grid >= K // 10]
        assert np.all(last_decade >= 0.1 * floor_estimate)

    def test_decaying_step_error_keeps_decreasing(self):
        prob, sol, _ = std_problem()
        alpha1 = 1.25
        config = RunConfig(p=0.5, schedule=StepSchedule(alpha1, 0.7), K=10_000, record_every=100)
        traces = run_l2gdv_batch(prob, config, range(48), oracle=sol, x1=sol.x_star)
        grid = traces[0].ks
        mean = np.stack([t.sq_dist for t in traces]).mean(axis=0)
        at_100 = mean[grid == 100][0]
        at_10k = mean[grid == 10_000][0]
        assert at_10k <= at_100 / 10.0

    def test_plateau_detection_for_constant_step(self):
        prob, sol, rep = std_problem()
        config = RunConfig(
            p=0.5, schedule=StepSchedule.constant(rep.convex_cap), K=3000, record_every=10
        )
        traces = run_l2gdv_batch(prob, config, range(64), oracle=sol)
        grid = traces[0].ks
        mean = np.stack([t.sq_dist for t in traces]).mean(axis=0)
        window = grid >= 300
        slope = -fit_rate(grid[window], mean[window], 300, 3000)
        assert slope >= -0.05


class TestSecondMomentBounds:
    def test_exact_expectation_under_convex_bound(self):
        prob, sol, rep = std_problem()
        p = 0.5
        rng = rng_for(55, "sm-points")
        for _ in range(40):
            x = ModelVector(sol.x_star.parts + rng.standard_normal((10, 5)) * 10 ** rng.uniform(-2, 1))
            gf = f_grad(prob, x)
            from l2gdv.models import psi_grad

            gpsi = psi_grad(x)
            second = (gf.flat @ gf.flat) / (1 - p) + (prob.lam**2 / p) * (gpsi.flat @ gpsi.flat)
            gap = F_value(prob, x) - sol.F_star
            assert second <= (4 * rep.calligraphic_L * gap + 18 * rep.sigma_sq) * (1 + 1e-12)

    def test_exact_expectation_under_flat_set_bound(self):
        prob = make_pl_problem(10, 6, 4, 1.0, 1.0, seed=5)
        sol = solve_exact(prob)
        rep = constants_report(prob, 0.5, sol=sol)
        p = 0.5
        z = zeta(p, prob.lam, prob.L, prob.n)
        rng = rng_for(56, "sm-points-pl")
        for _ in range(40):
            x = ModelVector(sol.x_star.parts + rng.standard_normal((10, 6)) * 10 ** rng.uniform(-2, 1))
            gf = f_grad(prob, x)
            from l2gdv.models import psi_grad

            gpsi = psi_grad(x)
            second = (gf.flat @ gf.flat) / (1 - p) + (prob.lam**2 / p) * (gpsi.flat @ gpsi.flat)
            gap = F_value(prob, x) - sol.F_star
            bound = (4 * z / rep.mu_pl) * gap + 18 * rep.sigma_m_sq
            assert second <= bound * (1 + 1e-12)


class TestBaselines:
    @staticmethod
    def _toy_data():
        ds = synth_gaussian_classes(400, 2, 2, 10.0, seed=5)
        part = partition_iid(ds, 4, seed=5)
        return ds, part

    def test_single_local_step_full_participation_is_global_gd(self):
        ds, part = self._toy_data()
        lr, l2 = 0.3, 0.01
        trace = run_fedavg(
            ds, part, rounds=3, local_epochs=1, client_fraction=1.0, lr=lr, seed=0, l2=l2
        )
        # replicate: 3 global GD steps on the mean of the client losses
        X = design_matrix(ds)
        y = ds.labels.astype(float)
        blocks = [(X[idx], y[idx]) for idx in part.assignments]
        w = np.zeros(X.shape[1])
        for _ in range(3):
            grads = []
            for Xb, yb in blocks:
                s = 0.5 * (1 + np.tanh(0.5 * (Xb @ w)))
                grads.append(Xb.T @ (s - yb) / len(yb) + l2 * w)
            w = w - lr * np.mean(grads, axis=0)
        assert np.allclose(trace.final_x.part(0), w, atol=1e-12)

    def test_fedprox_zero_prox_equals_fedavg(self):
        ds, part = self._toy_data()
        kw = dict(rounds=5, local_epochs=3, client_fraction=0.5, lr=0.2, seed=9, l2=0.01)
        a = run_fedavg(ds, part, **kw)
        b = run_fedprox(ds, part, prox_mu=0.0, **kw)
        assert np.array_equal(a.train_loss, b.train_loss)
        assert np.array_equal(a.final_x.parts, b.final_x.parts)

    def test_fedprox_prox_term_changes_trajectory(self):
        ds, part = self._toy_data()
        kw = dict(rounds=5, local_epochs=3, client_fraction=1.0, lr=0.2, seed=9, l2=0.01)
        a = run_fedavg(ds, part, **kw)
        b = run_fedprox(ds, part, prox_mu=1.0, **kw)
        assert not np.allclose(a.final_x.parts, b.final_x.parts)

    def test_baselines_learn_separable_data(self):
        ds, part = self._toy_data()
        ev = (design_matrix(ds), ds.labels.astype(float))
        for runner, extra in ((run_fedavg, {}), (run_fedprox, {"prox_mu": 0.1})):
            trace = runner(
                ds, part, rounds=40, local_epochs=5, client_fraction=1.0, lr=0.5,
                seed=1, l2=0.01, eval_data=ev, **extra
            )
            assert trace.test_acc_avg[-1] >= 0.99
            assert trace.communication_rounds == 40

    def test_client_fraction_validation(self):
        ds, part = self._toy_data()
        with pytest.raises(ValueError):
            run_fedavg(ds, part, rounds=1, local_epochs=1, client_fraction=0.0, lr=0.1, seed=0)


class TestL2GDVLearnsLogistic:
    def test_decaying_run_reaches_high_accuracy(self):
        ds = synth_gaussian_classes(1000, 2, 2, 10.0, seed=2)
        part = partition_iid(ds, 10, seed=2)
        prob = problem_from_dataset(ds, part, lam=10.0, l2=0.05)
        ev = (design_matrix(ds), ds.labels.astype(float))
        alpha1 = convex_cap(0.5, prob.lam, prob.L, prob.n)
        config = RunConfig(p=0.5, schedule=StepSchedule(alpha1, 0.3), K=2000, record_every=100)
        trace = run_l2gdv_batch(prob, config, [0], eval_data=ev)[0]
        assert trace.test_acc_avg[-1] >= 0.99
        assert trace.test_acc_local[-1] >= 0.9
