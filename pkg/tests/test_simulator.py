import json
import math

import numpy as np
import pytest

from stepopt.schedules import (
    LambdaGrid,
    NoiseSchedule,
    uniform_lambda_grid,
)
from stepopt.simulator import (
    AnalyticModel,
    SamplerRun,
    data_prediction,
    evaluate_schedules,
    load_model,
    model_from_dict,
    multistep_sample,
    reference_solution,
    standard_test_mixture,
)
from stepopt.simulator import _reference_batch, _sample_batch
from stepopt.weights import OrderSchedule

VE = NoiseSchedule.ve_edm()
VP = NoiseSchedule.vp_linear()


def single_gaussian(mu, s):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return AnalyticModel(pis=np.array([1.0]), mus=mu[None, :], stds=np.array([s]))


def grid_from_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    t = np.exp(-lam)
    return LambdaGrid(lam=lam, t=t, T=t[0], eps=t[-1])


def random_ve_grid(rng, n_max=15):
    N = int(rng.integers(1, n_max + 1))
    lam_T, lam_eps = -4.3, 6.2
    while True:
        interior = np.sort(rng.uniform(lam_T + 0.01, lam_eps - 0.01, N - 1))
        lam = np.concatenate(([lam_T], interior, [lam_eps]))
        if np.all(np.diff(lam) > 1e-4):
            return grid_from_lambda(lam)


class TestAnalyticModel:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            AnalyticModel(
                pis=np.array([0.5, 0.4]),
                mus=np.zeros((2, 2)),
                stds=np.array([1.0, 1.0]),
            )

    def test_positive_stds(self):
        with pytest.raises(ValueError):
            AnalyticModel(pis=np.array([1.0]), mus=np.zeros((1, 2)), stds=np.array([0.0]))

    def test_dim_cap(self):
        with pytest.raises(ValueError):
            AnalyticModel(pis=np.array([1.0]), mus=np.zeros((1, 17)), stds=np.array([1.0]))

    def test_json_round_trip(self, tmp_path):
        payload = {
            "dim": 2,
            "components": [
                {"pi": 0.5, "mu": [2.0, 2.0], "s": 0.5},
                {"pi": 0.5, "mu": [-2.0, -2.0], "s": 0.5},
            ],
        }
        path = tmp_path / "model.json"
        path.write_text(json.dumps(payload))
        model = load_model(path)
        ref = standard_test_mixture()
        np.testing.assert_array_equal(model.mus, ref.mus)
        np.testing.assert_array_equal(model.pis, ref.pis)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            model_from_dict(
                {"dim": 3, "components": [{"pi": 1.0, "mu": [0.0], "s": 1.0}]}
            )


class TestDataPrediction:
    def test_single_gaussian_balanced_point(self):
        model = single_gaussian([0.0], 1.0)
        t_star = float(VP.t_of_lambda(0.0))
        pred = data_prediction(model, np.array([1.0]), VP, t_star)
        assert pred[0] == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-10)

    def test_small_noise_limit(self):
        # as sigma -> 0 the prediction collapses to x / alpha
        model = single_gaussian([3.0], 2.0)
        t = 0.002  # ve_edm: alpha = 1, sigma = 0.002
        x = np.array([0.7])
        pred = data_prediction(model, x, VE, t)
        assert pred[0] == pytest.approx(0.7, rel=1e-4)

    def test_symmetric_mixture_at_origin(self):
        model = standard_test_mixture()
        pred = data_prediction(model, np.zeros(2), VP, 0.5)
        np.testing.assert_allclose(pred, 0.0, atol=1e-12)

    def test_separated_components_no_overflow(self):
        model = AnalyticModel(
            pis=np.array([0.5, 0.5]),
            mus=np.array([[400.0], [-400.0]]),
            stds=np.array([0.1, 0.1]),
        )
        pred = data_prediction(model, np.array([350.0]), VE, 0.01)
        assert np.all(np.isfinite(pred))

    def test_batch_shape(self):
        model = standard_test_mixture()
        x = np.random.default_rng(0).normal(size=(10, 2))
        pred = data_prediction(model, x, VP, 0.5)
        assert pred.shape == (10, 2)


class TestMultistepSample:
    def test_near_point_mass_constant_prediction(self):
        # with s ~ 0, the prediction is essentially the mean everywhere,
        # so the state matches the constant-prediction closed form
        model = single_gaussian([1.2, -0.4], 1e-6)
        grid = uniform_lambda_grid(VE, 6, 80.0, 0.002)
        run = SamplerRun(grid, OrderSchedule.warmup(6, 3), "lagrange", model, VE)
        x_T = np.array([30.0, -55.0])
        out = multistep_sample(run, x_T)
        lam_T, lam_eps = grid.lam[0], grid.lam[-1]
        sigma_T, sigma_eps = 80.0, 0.002
        closed = (sigma_eps / sigma_T) * x_T + sigma_eps * (
            math.exp(lam_eps) - math.exp(lam_T)
        ) * np.array([1.2, -0.4])
        np.testing.assert_allclose(out, closed, atol=1e-6)

    def test_exact_constant_prediction_any_schedule(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            grid = random_ve_grid(rng)
            N = grid.n_steps
            orders = OrderSchedule(
                tuple(int(rng.integers(1, min(n, 4) + 1)) for n in range(1, N + 1))
            )
            c = rng.normal(size=(1, 2))
            x_T = rng.normal(size=(1, 2))
            out = _sample_batch(
                grid,
                orders,
                "lagrange",
                VE,
                lambda x, lam, a, s: np.repeat(c, x.shape[0], axis=0),
                x_T,
            )
            lam_T, lam_eps = grid.lam[0], grid.lam[-1]
            closed = (math.exp(-lam_eps) / math.exp(-lam_T)) * x_T + math.exp(
                -lam_eps
            ) * (math.exp(lam_eps) - math.exp(lam_T)) * c
            worst = max(
                worst, float(np.max(np.abs(out - closed)) / np.max(np.abs(closed)))
            )
        assert worst < 1e-9

    def test_single_step_is_one_step_update(self):
        model = standard_test_mixture()
        grid = uniform_lambda_grid(VP, 1, 1.0, 1e-3)
        run = SamplerRun(grid, OrderSchedule((1,)), "lagrange", model, VP)
        rng = np.random.default_rng(8)
        x_T = rng.normal(size=2)
        out = multistep_sample(run, x_T)
        # manual first-order update
        a, s = VP.alpha_sigma_of_lambda(grid.lam)
        pred = data_prediction(model, x_T, VP, 1.0)
        h = grid.lam[1] - grid.lam[0]
        expect = (s[1] / s[0]) * x_T + a[1] * (1.0 - math.exp(-h)) * pred
        np.testing.assert_allclose(out, expect, rtol=1e-12)

    def test_convergence_in_steps_single_gaussian(self):
        model = single_gaussian([1.5, -0.5], 0.7)
        rng = np.random.default_rng(4)
        x_T = rng.normal(size=(16, 2)) * 1.1
        ref = _reference_batch(model, VP, x_T, float(VP.lambda_of_t(1.0)), float(VP.lambda_of_t(1e-3)))
        errs = {}
        for N in (5, 10):
            grid = uniform_lambda_grid(VP, N, 1.0, 1e-3)
            out = _sample_batch(
                grid,
                OrderSchedule.warmup(N, 3),
                "lagrange",
                VP,
                lambda x, lam, a, s: _predict(model, x, a, s),
                x_T,
            )
            errs[N] = float(np.mean(np.linalg.norm(out - ref, axis=1)))
        assert errs[10] < errs[5]

    def test_non_finite_reported(self):
        model = standard_test_mixture()
        grid = uniform_lambda_grid(VP, 2, 1.0, 1e-3)
        run = SamplerRun(grid, OrderSchedule.warmup(2, 2), "lagrange", model, VP)
        with pytest.raises(FloatingPointError, match="step"):
            multistep_sample(run, np.array([np.inf, 0.0]))


def _predict(model, x, alpha, sigma):
    from stepopt.simulator import _posterior_mean

    return _posterior_mean(model, x, alpha, sigma)


class TestReferenceSolution:
    def test_closed_form_matches_adaptive(self):
        model = single_gaussian([1.5, -0.5], 0.7)
        # same distribution expressed as a two-component mixture forces
        # the adaptive-integrator route
        split = AnalyticModel(
            pis=np.array([0.5, 0.5]),
            mus=np.array([[1.5, -0.5], [1.5, -0.5]]),
            stds=np.array([0.7, 0.7]),
        )
        rng = np.random.default_rng(1)
        x_T = rng.normal(size=(8, 2)) * 1.2
        closed = reference_solution(model, VP, x_T, 1.0, 1e-3)
        adaptive = reference_solution(split, VP, x_T, 1.0, 1e-3)
        assert np.max(np.abs(closed - adaptive)) < 1e-8

    def test_mean_line_fixed_trajectory(self):
        model = single_gaussian([2.0, -1.0], 0.5)
        alpha_T = float(VP.alpha(1.0))
        alpha_eps = float(VP.alpha(1e-3))
        x_T = alpha_T * model.mus[0]
        out = reference_solution(model, VP, x_T, 1.0, 1e-3)
        np.testing.assert_allclose(out, alpha_eps * model.mus[0], atol=1e-10)

    def test_symmetric_mixture_origin_fixed(self):
        model = standard_test_mixture()
        out = reference_solution(model, VP, np.zeros(2), 1.0, 1e-3)
        np.testing.assert_allclose(out, 0.0, atol=1e-9)


class TestEvaluateSchedules:
    def test_identical_schedules_identical_reports(self):
        model = standard_test_mixture()
        grid = uniform_lambda_grid(VP, 5, 1.0, 1e-3)
        orders = OrderSchedule.warmup(5, 3)
        reports = evaluate_schedules(
            model, VP, [grid, grid], orders, "lagrange", seeds=32, rng_seed=5
        )
        assert reports[0].mean_l2_error == reports[1].mean_l2_error
        np.testing.assert_array_equal(
            reports[0].per_seed_errors, reports[1].per_seed_errors
        )

    def test_reproducible_across_calls(self):
        model = standard_test_mixture()
        grid = uniform_lambda_grid(VP, 5, 1.0, 1e-3)
        orders = OrderSchedule.warmup(5, 3)
        a = evaluate_schedules(model, VP, [grid], orders, "lagrange", 32, 9)[0]
        b = evaluate_schedules(model, VP, [grid], orders, "lagrange", 32, 9)[0]
        np.testing.assert_array_equal(a.per_seed_errors, b.per_seed_errors)

    def test_large_step_count_converges(self):
        # at 50 steps both natural grids solve a smooth problem to < 1e-4
        smooth = AnalyticModel(
            pis=np.array([0.6, 0.4]),
            mus=np.array([[0.5], [-0.7]]),
            stds=np.array([0.8, 0.9]),
        )
        N = 50
        from stepopt.objective import ObjectiveSpec
        from stepopt.optimizer import OptimizerConfig, optimize_steps

        spec = ObjectiveSpec(VP, N, 1.0, 1e-3, OrderSchedule.warmup(N, 3), p=1)
        opt = optimize_steps(spec, OptimizerConfig(init="uniform-lambda", max_iters=50))
        grids = [uniform_lambda_grid(VP, N, 1.0, 1e-3), opt.grid]
        reports = evaluate_schedules(
            smooth, VP, grids, OrderSchedule.warmup(N, 3), "lagrange", 128, 9
        )
        for report in reports:
            assert report.mean_l2_error < 1e-4

    def test_endpoint_mismatch_rejected(self):
        model = standard_test_mixture()
        g1 = uniform_lambda_grid(VP, 5, 1.0, 1e-3)
        g2 = uniform_lambda_grid(VP, 5, 1.0, 2e-3)
        with pytest.raises(ValueError):
            evaluate_schedules(
                model, VP, [g1, g2], OrderSchedule.warmup(5, 3), "lagrange", 8, 0
            )

    def test_thread_count_does_not_change_results(self, monkeypatch):
        model = standard_test_mixture()
        grid = uniform_lambda_grid(VP, 5, 1.0, 1e-3)
        orders = OrderSchedule.warmup(5, 3)
        monkeypatch.delenv("STEPOPT_THREADS", raising=False)
        serial = evaluate_schedules(model, VP, [grid], orders, "lagrange", 64, 3)[0]
        monkeypatch.setenv("STEPOPT_THREADS", "4")
        threaded = evaluate_schedules(model, VP, [grid], orders, "lagrange", 64, 3)[0]
        np.testing.assert_array_equal(serial.per_seed_errors, threaded.per_seed_errors)
