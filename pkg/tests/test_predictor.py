import numpy as np
import pytest

from ikpred.model import Schedule, StateSpaceModel, WarmupConfig, regular_schedule
from ikpred.predictor import (
    MeasurementMismatchError,
    measure_update_cov,
    objective,
    run_covariance,
    run_predictor,
    time_update_cov,
    write_belief_csv,
)
from reference import random_model_arrays, textbook_filter


def scalar_model(**overrides):
    params = dict(
        A=[[1.0]], b=[0.0], G=[[1.0]], Q=[[1.0]], C=[[1.0]], d=[0.0],
        R=[[1.0]], x0_mean=[0.0], x0_cov=[[0.0]],
    )
    params.update(overrides)
    return StateSpaceModel(**params)


def random_model(rng, n, m, **kwargs):
    return StateSpaceModel(**random_model_arrays(rng, n, m, **kwargs))


class TestTimeUpdate:
    def test_process_noise_only(self):
        # Q = 0.05 process noise of the synthetic example, from rest
        model = scalar_model(Q=[[0.05]])
        assert time_update_cov(model, np.array([[0.0]])) == pytest.approx(0.05)

    def test_transition_gain(self):
        model = scalar_model(A=[[2.0]], Q=[[0.0]])
        assert time_update_cov(model, np.array([[1.0]])) == pytest.approx(4.0)

    def test_state_reset(self):
        model = scalar_model(A=[[0.0]], Q=[[3.0]])
        assert time_update_cov(model, np.array([[7.0]])) == pytest.approx(3.0)

    def test_output_symmetric(self):
        rng = np.random.default_rng(0)
        model = random_model(rng, 3, 1)
        P = np.diag([1.0, 2.0, 3.0])
        out = time_update_cov(model, P)
        np.testing.assert_array_equal(out, out.T)


class TestMeasureUpdate:
    def test_scalar_information_form(self):
        assert measure_update_cov(scalar_model(), np.array([[1.0]]), True) == pytest.approx(0.5)

    def test_pass_through_unmeasured(self):
        P = np.array([[2.5]])
        out = measure_update_cov(scalar_model(), P, False)
        assert out is P  # bit-for-bit identity

    def test_infinite_noise_limit(self):
        model = scalar_model(R=[[1e9]])
        out = measure_update_cov(model, np.array([[1.0]]), True)
        assert out[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_singular_prior_falls_back(self):
        # zero prior covariance: the information form would need P^-1
        out = measure_update_cov(scalar_model(), np.array([[0.0]]), True)
        assert out[0, 0] == pytest.approx(0.0)

    def test_gain_form_equivalence(self):
        # information form == P - P C^T (C P C^T + R)^-1 C P
        rng = np.random.default_rng(42)
        for _ in range(50):
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            model = random_model(rng, n, m)
            B = rng.standard_normal((n, n))
            P = B @ B.T / n + 0.2 * np.eye(n)
            got = measure_update_cov(model, P, True)
            PCt = P @ model.C.T
            S = model.C @ PCt + model.R
            want = P - PCt @ np.linalg.solve(S, PCt.T)
            np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)

    def test_never_increases_uncertainty(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(1, 5))
            model = random_model(rng, n, 1)
            B = rng.standard_normal((n, n))
            P = B @ B.T / n + 0.1 * np.eye(n)
            post = measure_update_cov(model, P, True)
            gap_eigs = np.linalg.eigvalsh(P - post)
            assert gap_eigs.min() >= -1e-9


class TestRunCovariance:
    def test_random_walk_no_measurements(self):
        trace = run_covariance(scalar_model(), Schedule((), 3))
        np.testing.assert_allclose(trace.prior_cov[:, 0, 0], [0.0, 1.0, 2.0, 3.0])

    def test_hand_rolled_single_measurement(self):
        trace = run_covariance(scalar_model(), Schedule((1,), 3))
        np.testing.assert_allclose(trace.prior_cov[:, 0, 0], [0.0, 1.0, 1.5, 2.5])

    def test_full_schedule_matches_classical_recursion(self):
        rng = np.random.default_rng(11)
        T = 20
        for _ in range(10):
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            model = random_model(rng, n, m)
            trace = run_covariance(model, regular_schedule(T, T))
            W = model.G @ model.Q @ model.G.T
            P = np.array(model.x0_cov)
            for t in range(T):
                np.testing.assert_allclose(trace.prior_cov[t], P, rtol=1e-8, atol=1e-10)
                S = model.C @ P @ model.C.T + model.R
                K = P @ model.C.T @ np.linalg.inv(S)
                P = P - K @ model.C @ P
                P = model.A @ P @ model.A.T + W
            np.testing.assert_allclose(trace.prior_cov[T], P, rtol=1e-8, atol=1e-10)


class TestObjective:
    def test_random_walk_sum(self):
        model = scalar_model()
        assert objective(model, Schedule((), 3), WarmupConfig(0)) == pytest.approx(6.0)

    def test_warmup_excludes_prefix(self):
        model = scalar_model()
        assert objective(model, Schedule((), 3), WarmupConfig(1)) == pytest.approx(5.0)

    def test_single_measurement_fixture(self):
        model = scalar_model()
        assert objective(model, Schedule((1,), 3), WarmupConfig(0)) == pytest.approx(5.0)

    def test_warmup_must_precede_horizon(self):
        with pytest.raises(ValueError):
            objective(scalar_model(), Schedule((), 3), WarmupConfig(3))

    def test_monotone_in_information(self):
        # adding a measurement time never increases the objective
        rng = np.random.default_rng(17)
        T = 15
        for _ in range(40):
            n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            model = random_model(rng, n, m, stable=False)
            N = int(rng.integers(0, T - 1))
            times = tuple(sorted(rng.choice(T, N, replace=False).tolist()))
            extra = int(rng.choice(np.setdiff1d(np.arange(T), times)))
            warm = WarmupConfig(int(rng.integers(0, T // 2)))
            base = objective(model, Schedule(times, T), warm)
            more = objective(model, Schedule(tuple(sorted(times + (extra,))), T), warm)
            assert more <= base * (1 + 1e-9) + 1e-12

    def test_value_free_and_order_free(self):
        # objective depends only on the set of times
        model = scalar_model()
        a = objective(model, Schedule((1, 4, 7), 10), WarmupConfig(0))
        b = objective(model, Schedule(tuple(sorted({7, 1, 4})), 10), WarmupConfig(0))
        assert a == b

    def test_monte_carlo_trace_identity(self):
        # E ||y - y_hat||^2 summed over the window matches the objective
        model = scalar_model(A=[[0.9]], Q=[[0.4]], R=[[0.5]], x0_cov=[[1.0]], x0_mean=[0.0])
        T = 8
        times = (1, 4, 6)
        schedule = Schedule(times, T)
        runs = 10_000
        rng = np.random.default_rng(2024)
        totals = np.empty(runs)
        for r in range(runs):
            x = rng.normal(0.0, 1.0)
            xs = np.empty(T + 1)
            for t in range(T + 1):
                xs[t] = x
                x = 0.9 * x + np.sqrt(0.4) * rng.standard_normal()
            zs = {t: np.array([xs[t] + np.sqrt(0.5) * rng.standard_normal()]) for t in times}
            belief = run_predictor(model, schedule, list(zs.items()))
            err = belief.pred_pos[1:, 0] - xs[1:]
            totals[r] = np.sum(err**2)
        want = objective(model, schedule, WarmupConfig(0))
        se = totals.std(ddof=1) / np.sqrt(runs)
        assert abs(totals.mean() - want) < 3 * se


class TestRunPredictor:
    def test_no_measurements_is_pure_rollout(self):
        model = scalar_model(A=[[0.5]], b=[1.0], x0_mean=[2.0])
        belief = run_predictor(model, Schedule((), 4), [])
        expect = [2.0]
        for _ in range(4):
            expect.append(0.5 * expect[-1] + 1.0)
        np.testing.assert_allclose(belief.prior_mean[:, 0], expect)
        np.testing.assert_array_equal(belief.post_mean, belief.prior_mean)

    def test_infinite_noise_equals_no_measurement(self):
        rng = np.random.default_rng(5)
        T = 10
        model = random_model(rng, 3, 2)
        loud = StateSpaceModel(
            A=model.A, b=model.b, G=model.G, Q=model.Q, C=model.C, d=model.d,
            R=1e12 * np.eye(2), x0_mean=model.x0_mean, x0_cov=model.x0_cov,
        )
        zs = [(t, rng.standard_normal(2)) for t in range(T)]
        noisy = run_predictor(loud, regular_schedule(T, T), zs)
        silent = run_predictor(model, Schedule((), T), [])
        np.testing.assert_allclose(noisy.prior_mean, silent.prior_mean, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(noisy.prior_cov, silent.prior_cov, rtol=1e-6, atol=1e-6)

    def test_single_measurement_hand_rolled(self):
        model = scalar_model(x0_cov=[[1.0]], Q=[[0.0]])
        belief = run_predictor(model, Schedule((0,), 1), [(0, [2.0])])
        assert belief.post_cov[0, 0, 0] == pytest.approx(0.5)
        assert belief.post_mean[0, 0] == pytest.approx(1.0)
        assert belief.prior_mean[1, 0] == pytest.approx(1.0)

    def test_posterior_equals_prior_off_schedule(self):
        rng = np.random.default_rng(9)
        model = random_model(rng, 2, 1)
        T = 12
        times = (2, 5, 9)
        zs = [(t, rng.standard_normal(1)) for t in times]
        belief = run_predictor(model, Schedule(times, T), zs)
        for t in range(T + 1):
            if t not in times:
                np.testing.assert_array_equal(belief.post_mean[t], belief.prior_mean[t])
                np.testing.assert_array_equal(belief.post_cov[t], belief.prior_cov[t])

    def test_matches_textbook_filter(self):
        rng = np.random.default_rng(100)
        T = 30
        for _ in range(20):
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            model = random_model(rng, n, m)
            times = tuple(sorted(rng.choice(T, size=int(rng.integers(1, T)), replace=False).tolist()))
            zs = {t: rng.standard_normal(m) for t in times}
            belief = run_predictor(model, Schedule(times, T), list(zs.items()))
            ref = textbook_filter(
                model.A, model.b, model.G, model.Q, model.C, model.d, model.R,
                model.x0_mean, model.x0_cov, zs, T,
            )
            np.testing.assert_allclose(belief.prior_mean, ref[0], rtol=1e-8, atol=1e-9)
            np.testing.assert_allclose(belief.prior_cov, ref[1], rtol=1e-8, atol=1e-9)
            np.testing.assert_allclose(belief.post_mean, ref[2], rtol=1e-8, atol=1e-9)
            np.testing.assert_allclose(belief.post_cov, ref[3], rtol=1e-8, atol=1e-9)

    def test_measurement_mismatch_rejected(self):
        model = scalar_model()
        schedule = Schedule((1, 3), 5)
        with pytest.raises(MeasurementMismatchError):
            run_predictor(model, schedule, [(1, [0.0])])
        with pytest.raises(MeasurementMismatchError):
            run_predictor(model, schedule, [(1, [0.0]), (2, [0.0])])
        with pytest.raises(MeasurementMismatchError):
            run_predictor(model, schedule, [(1, [0.0]), (3, [0.0, 1.0])])

    def test_measurement_order_irrelevant(self):
        model = scalar_model()
        schedule = Schedule((1, 3), 5)
        a = run_predictor(model, schedule, [(1, [1.0]), (3, [-1.0])])
        b = run_predictor(model, schedule, [(3, [-1.0]), (1, [1.0])])
        np.testing.assert_array_equal(a.post_mean, b.post_mean)


class TestBeliefCsv:
    def test_export_columns(self, tmp_path):
        model = scalar_model()
        schedule = Schedule((1,), 3)
        belief = run_predictor(model, schedule, [(1, [0.7])])
        path = tmp_path / "belief.csv"
        write_belief_csv(belief, schedule, model, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,pred_pos_1,post_pos_1,trace_prior,measured"
        assert len(lines) == 5
        fields = lines[2].split(",")
        assert fields[0] == "1"
        assert fields[-1] == "1"
        assert float(fields[3]) == pytest.approx(1.0)  # prior variance at t=1
