"""Tests for bias profiles, bandwidth plans and the experiment drivers."""

import json
import math

import numpy as np
import pytest

from densderiv import asymptotics as asy
from densderiv import kde, moment_matching
from densderiv.densities import GaussianMixture, experiment_stream
from densderiv.hspace import Jet
from densderiv.kernels import GaussianKernel, RectangularKernel
from densderiv.results import to_log_scale

STD1 = GaussianMixture.gaussian([0.0], [[1.0]])
STD2 = GaussianMixture.gaussian([0.0, 0.0], np.eye(2))
MIX1D = GaussianMixture([0.65, 0.35], [[0.0], [1.8]], [[[1.0]], [[1.69]]])
MIXTURE = GaussianMixture(
    weights=[0.6, 0.4],
    means=[[0.0, 0.0], [2.4, 1.6]],
    covariances=[[[4.0, 1.2], [1.2, 3.2]],
                 [[2.8, -0.8], [-0.8, 4.4]]])

VALUE_PROBE2 = Jet(1.0, np.zeros(2), np.zeros((2, 2)))
GRAD_PROBE2 = Jet(0.0, np.array([1.0, 0.0]), np.zeros((2, 2)))


class TestBiasConstants:
    def test_orders_and_scales(self):
        k = GaussianKernel(1)
        x0 = [0.4]
        cases = {"M": (4, 3, "density"), "M3": (4, 4, "density"),
                 "K": (2, 3, "density"), "L": (4, 3, "log")}
        for paradigm, (v, g, scale) in cases.items():
            prof = asy.bias_constants(paradigm, MIX1D, x0, k)
            assert prof.value_order == v
            assert prof.gradient_order == g
            assert prof.scale == scale

    def test_kernel_derivative_constants_at_standard_normal_origin(self):
        prof = asy.bias_constants("K", STD2, np.zeros(2), GaussianKernel(2))
        assert prof.value_coef == pytest.approx(-1.0 / (2.0 * math.pi),
                                                rel=1e-10)
        np.testing.assert_allclose(prof.gradient_coef, 0.0, atol=1e-12)
        np.testing.assert_allclose(prof.hessian_coef,
                                   np.eye(2) / math.pi, rtol=1e-10)

    def test_symmetric_density_kills_matching_gradient_constant(self):
        prof = asy.bias_constants("M", STD2, np.zeros(2), GaussianKernel(2))
        np.testing.assert_allclose(prof.gradient_coef, 0.0, atol=1e-10)

    def test_refined_gradient_constant_is_identically_zero(self):
        prof = asy.bias_constants("M3", MIX1D, [0.4], GaussianKernel(1))
        np.testing.assert_array_equal(prof.gradient_coef, 0.0)
        assert prof.gradient_order == 4

    def test_refined_requires_spherical_kernel(self):
        with pytest.raises(ValueError):
            asy.bias_constants("M3", STD2, np.zeros(2), RectangularKernel(2))

    def test_score_matching_paradigm_rejected(self):
        with pytest.raises(ValueError, match="'L'"):
            asy.bias_constants("H", STD1, [0.0], GaussianKernel(1))

    def test_unknown_paradigm_rejected(self):
        with pytest.raises(ValueError):
            asy.bias_constants("Z", STD1, [0.0], GaussianKernel(1))


class TestBiasCurves:
    HS = [0.25, 0.2, 0.15, 0.12, 0.1]

    def slope(self, paradigm, target):
        curve = asy.bias_curve(paradigm, target, MIX1D, [0.4],
                               GaussianKernel(1), self.HS)
        return asy.log_slope(self.HS, curve)

    def test_matching_value_decays_at_fourth_order(self):
        assert 3.7 < self.slope("M", "value") < 4.15

    def test_matching_gradient_decays_at_second_order(self):
        assert 1.8 < self.slope("M", "gradient") < 2.1

    def test_refined_gradient_decays_at_fourth_order(self):
        # the refined weights cancel both the second- and third-order
        # terms, so the next surviving term puts the measured slope
        # near 4, well above 3
        slope = self.slope("M3", "gradient")
        assert 3.6 < slope < 4.15

    def test_kernel_derivative_targets_decay_at_second_order(self):
        for target in ("value", "gradient", "hessian"):
            assert 1.8 < self.slope("K", target) < 2.1

    def test_likelihood_value_fourth_gradient_second(self):
        assert 3.7 < self.slope("L", "value") < 4.15
        assert 1.8 < self.slope("L", "gradient") < 2.1

    def test_bias_magnitudes_match_constants(self):
        h = 0.08
        k = GaussianKernel(1)
        x0 = [0.4]
        checks = [
            ("M", "value", lambda p: abs(p.value_coef) * h ** 4),
            ("K", "value", lambda p: abs(p.value_coef) * h ** 2),
            ("K", "hessian",
             lambda p: np.linalg.norm(p.hessian_coef) * h ** 2),
            ("L", "value", lambda p: abs(p.value_coef) * h ** 4),
            ("L", "gradient",
             lambda p: np.linalg.norm(p.gradient_coef) * h ** 2),
        ]
        for paradigm, target, predict in checks:
            prof = asy.bias_constants(paradigm, MIX1D, x0, k)
            curve = asy.bias_curve(paradigm, target, MIX1D, x0, k, [h])
            assert curve[0] == pytest.approx(predict(prof), rel=0.05)

    def test_likelihood_exact_for_gaussian_truth(self):
        # the local model contains a gaussian log-density exactly, so
        # the population fit has no bias at any bandwidth
        for target in ("value", "gradient"):
            curve = asy.bias_curve("L", target, STD1, [0.3],
                                   GaussianKernel(1), [0.5, 0.25])
            assert np.all(curve < 1e-7)


class TestExpectedEstimate:
    def test_score_matching_matches_likelihood_in_population(self):
        k = GaussianKernel(1)
        lik = asy.expected_estimate("L", MIX1D, [0.4], k, 0.3)
        score = asy.expected_estimate("H", MIX1D, [0.4], k, 0.3)
        assert math.isnan(score.value)
        np.testing.assert_allclose(score.gradient, lik.gradient, rtol=1e-6)
        np.testing.assert_allclose(score.hessian, lik.hessian, rtol=1e-6)

    def test_scales_per_paradigm(self):
        k = GaussianKernel(1)
        assert asy.expected_estimate("M", MIX1D, [0.4], k, 0.3).scale == \
            "density"
        assert asy.expected_estimate("K", MIX1D, [0.4], k, 0.3).scale == \
            "density"
        assert asy.expected_estimate("L", MIX1D, [0.4], k, 0.3).scale == "log"

    def test_unknown_paradigm_and_target_rejected(self):
        k = GaussianKernel(1)
        with pytest.raises(ValueError):
            asy.expected_estimate("Z", MIX1D, [0.4], k, 0.3)
        with pytest.raises(ValueError):
            asy.bias_curve("M", "laplacian", MIX1D, [0.4], k, [0.3])


class TestTransferToLog:
    X0 = np.array([0.7, -0.5])

    def test_log_profile_rejected(self):
        prof = asy.bias_constants("L", MIX1D, [0.4], GaussianKernel(1))
        with pytest.raises(ValueError):
            asy.transfer_to_log(prof, MIX1D, [0.4])

    def test_transferred_constants_predict_log_scale_bias(self):
        # push the population kernel-derivative estimate to the log
        # scale and compare its bias against the transferred constants
        k = GaussianKernel(2)
        prof = asy.transfer_to_log(
            asy.bias_constants("K", MIXTURE, self.X0, k), MIXTURE, self.X0)
        assert prof.value_order == 2
        assert prof.gradient_order == 3
        h = 0.04
        log_est = to_log_scale(
            asy.expected_estimate("K", MIXTURE, self.X0, k, h))
        value_bias = log_est.value - MIXTURE.log_pdf(self.X0)
        grad_bias = log_est.gradient - MIXTURE.log_gradient(self.X0)
        hess_bias = log_est.hessian - MIXTURE.log_hessian(self.X0)
        assert value_bias == pytest.approx(prof.value_coef * h ** 2,
                                           rel=0.01)
        np.testing.assert_allclose(grad_bias, prof.gradient_coef * h ** 2,
                                   rtol=0.01)
        np.testing.assert_allclose(hess_bias, prof.hessian_coef * h ** 2,
                                   rtol=0.01)

    def test_value_leak_embeds_without_extra_density_division(self):
        # the gradient constant mixes in the value constant times the
        # log-gradient; dividing that term by the density a second time
        # is wrong by orders of magnitude at a point with small density
        k = GaussianKernel(2)
        density_prof = asy.bias_constants("K", MIXTURE, self.X0, k)
        f0 = MIXTURE.pdf(self.X0)
        dlog = MIXTURE.log_gradient(self.X0)
        h = 0.04
        log_est = to_log_scale(
            asy.expected_estimate("K", MIXTURE, self.X0, k, h))
        grad_bias = log_est.gradient - MIXTURE.log_gradient(self.X0)
        wrong = (density_prof.gradient_coef
                 - density_prof.value_coef * dlog / f0) / f0
        gap = np.linalg.norm(grad_bias - wrong * h ** 2)
        assert gap > 0.5 * np.linalg.norm(grad_bias)

    def test_matching_profile_transfers_consistently(self):
        k = GaussianKernel(2)
        prof = asy.transfer_to_log(
            asy.bias_constants("M", MIXTURE, self.X0, k), MIXTURE, self.X0)
        assert prof.gradient_order == 3
        h = 0.05
        log_est = to_log_scale(
            asy.expected_estimate("M", MIXTURE, self.X0, k, h))
        grad_bias = log_est.gradient - MIXTURE.log_gradient(self.X0)
        hess_bias = log_est.hessian - MIXTURE.log_hessian(self.X0)
        np.testing.assert_allclose(grad_bias, prof.gradient_coef * h ** 2,
                                   rtol=0.05)
        np.testing.assert_allclose(hess_bias, prof.hessian_coef * h ** 2,
                                   rtol=0.05)

    def test_mode_point_drops_gradient_coupling(self):
        # at a critical point of the log-density the transfer reduces
        # to straight division by the density level
        k = GaussianKernel(2)
        x0 = np.zeros(2)
        f0 = STD2.pdf(x0)
        prof = asy.bias_constants("K", STD2, x0, k)
        log_prof = asy.transfer_to_log(prof, STD2, x0)
        np.testing.assert_allclose(log_prof.gradient_coef,
                                   prof.gradient_coef / f0, atol=1e-13)
        expected_hess = (prof.hessian_coef
                         - prof.value_coef * STD2.log_hessian(x0)) / f0
        np.testing.assert_allclose(log_prof.hessian_coef, expected_hess,
                                   rtol=1e-10)

    def test_refined_profile_scales_all_blocks(self):
        k = GaussianKernel(2)
        prof = asy.bias_constants("M3", MIXTURE, self.X0, k)
        log_prof = asy.transfer_to_log(prof, MIXTURE, self.X0)
        f0 = MIXTURE.pdf(self.X0)
        assert log_prof.value_order == 4
        assert log_prof.gradient_order == 4
        assert log_prof.value_coef == pytest.approx(prof.value_coef / f0,
                                                    rel=1e-12)
        np.testing.assert_array_equal(log_prof.gradient_coef, 0.0)
        np.testing.assert_allclose(log_prof.hessian_coef,
                                   prof.hessian_coef / f0, rtol=1e-12)
        z = np.array([[0.3, -0.6], [1.0, 0.2]])
        np.testing.assert_allclose(log_prof.influence(z),
                                   prof.influence(z) / f0, rtol=1e-12)


class TestVarianceFunctional:
    def test_kernel_derivative_value_closed_form(self):
        for d in (1, 2, 3):
            k = GaussianKernel(d)
            density = GaussianMixture.gaussian(np.zeros(d), np.eye(d))
            prof = asy.bias_constants("K", density, np.zeros(d), k)
            probe = Jet(1.0, np.zeros(d), np.zeros((d, d)))
            assert prof.variance_of(probe) == pytest.approx(
                (4.0 * math.pi) ** (-d / 2.0), rel=1e-10)

    def test_matching_value_closed_form(self):
        # gaussian squared weight reduces to polynomial moments of a
        # half-variance normal, giving 2.5 / (4 pi) in two dimensions
        prof = asy.bias_constants("M", STD2, np.zeros(2), GaussianKernel(2))
        assert prof.variance_of(VALUE_PROBE2) == pytest.approx(
            2.5 / (4.0 * math.pi), rel=1e-10)

    def test_likelihood_influence_is_matching_over_density(self):
        k = GaussianKernel(1)
        x0 = [0.4]
        f0 = MIX1D.pdf(np.array(x0))
        probe = Jet(1.0, np.zeros(1), np.zeros((1, 1)))
        var_m = asy.bias_constants("M", MIX1D, x0, k).variance_of(probe)
        var_l = asy.bias_constants("L", MIX1D, x0, k).variance_of(probe)
        assert var_l == pytest.approx(var_m / f0 ** 2, rel=1e-8)

    def test_zero_probe_and_quadratic_scaling(self):
        prof = asy.bias_constants("M", STD2, np.zeros(2), GaussianKernel(2))
        zero = Jet(0.0, np.zeros(2), np.zeros((2, 2)))
        assert prof.variance_of(zero) == 0.0
        assert prof.variance_of(3.0 * VALUE_PROBE2) == pytest.approx(
            9.0 * prof.variance_of(VALUE_PROBE2), rel=1e-12)

    def test_functional_multiplies_density_level(self):
        prof = asy.bias_constants("M", STD2, np.zeros(2), GaussianKernel(2))
        sigma = prof.variance_of(VALUE_PROBE2)
        assert asy.variance_functional(prof, VALUE_PROBE2, 0.2) == \
            pytest.approx(0.2 * sigma, rel=1e-12)

    def test_predicts_monte_carlo_fluctuations(self):
        # empirical variances of the value and first-gradient components
        # across replications should track the influence functional
        k = GaussianKernel(2)
        x0 = np.array([0.3, -0.2])
        f0 = STD2.pdf(x0)
        h, n, reps = 0.15, 30000, 1000
        prof_m = asy.bias_constants("M", STD2, x0, k)
        prof_k = asy.bias_constants("K", STD2, x0, k)
        vals_m, grads_m, vals_k = [], [], []
        for rep in range(reps):
            rng = experiment_stream(77, rep)
            sample = STD2.sample(n, rng)
            est = moment_matching.estimate(sample, x0, k, h)
            vals_m.append(est.value)
            grads_m.append(est.gradient[0])
            vals_k.append(kde.estimate(sample, x0, k, h).value)
        pairs = [
            (np.var(vals_m, ddof=1),
             asy.variance_functional(prof_m, VALUE_PROBE2, f0) / (n * h ** 2)),
            (np.var(grads_m, ddof=1),
             asy.variance_functional(prof_m, GRAD_PROBE2, f0) / (n * h ** 4)),
            (np.var(vals_k, ddof=1),
             asy.variance_functional(prof_k, VALUE_PROBE2, f0) / (n * h ** 2)),
        ]
        for observed, predicted in pairs:
            assert 0.85 < observed / predicted < 1.10


class TestBandwidthPlan:
    def test_single_plan(self):
        plan = asy.BandwidthPlan.single(0.3)
        assert plan.bandwidth(100, 2) == 0.3
        assert plan.bandwidth(10 ** 6, 5) == 0.3
        assert plan.bandwidths(500, 2) == (0.3, 0.3, 0.3)

    def test_rate_plan_power_law(self):
        plan = asy.BandwidthPlan.rate(1.2, 1.0 / 6.0)
        assert plan.bandwidth(1000, 2) == pytest.approx(
            1.2 * 1000 ** (-1.0 / 6.0), rel=1e-14)

    def test_rate_plan_rejects_unsupported_exponent(self):
        plan = asy.BandwidthPlan.rate(1.0, 1.0 / 3.0)
        with pytest.raises(ValueError):
            plan.bandwidth(1000, 2)
        # the same exponent can be valid in another dimension
        ok = asy.BandwidthPlan.rate(1.0, 1.0 / 5.0)
        assert ok.bandwidth(1000, 1) == pytest.approx(1000 ** -0.2)

    def test_triple_plan_staggers_exponents(self):
        plan = asy.BandwidthPlan.triple([0.5, 1.0, 2.0])
        n, d = 10000, 3
        got = plan.bandwidths(n, d)
        want = tuple(c * n ** (-1.0 / (d + 4 + 2 * j))
                     for j, c in enumerate([0.5, 1.0, 2.0]))
        assert got == pytest.approx(want, rel=1e-14)

    def test_mode_mismatches_rejected(self):
        with pytest.raises(ValueError):
            asy.BandwidthPlan.triple([0.5, 1.0, 2.0]).bandwidth(100, 2)
        with pytest.raises(ValueError):
            asy.BandwidthPlan.rate(1.0, 1.0 / 6.0).bandwidths(100, 2)

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            asy.BandwidthPlan.single(0.0)
        with pytest.raises(ValueError):
            asy.BandwidthPlan.rate(-1.0, 1.0 / 6.0)
        with pytest.raises(ValueError):
            asy.BandwidthPlan.rate(1.0, -0.1)
        with pytest.raises(ValueError):
            asy.BandwidthPlan.triple([1.0, 2.0])
        with pytest.raises(ValueError):
            asy.BandwidthPlan.triple([1.0, -2.0, 3.0])


class TestLogSlope:
    def test_recovers_power_law_exactly(self):
        x = np.array([0.5, 0.25, 0.1, 0.05])
        y = 3.7 * x ** 2.5
        assert asy.log_slope(x, y) == pytest.approx(2.5, abs=1e-12)

    def test_uses_magnitudes(self):
        x = np.array([0.5, 0.25, 0.1, 0.05])
        y = -2.0 * x ** 3
        assert asy.log_slope(x, y) == pytest.approx(3.0, abs=1e-12)


class TestRateReport:
    ROWS = [asy.RateRow(n=1000, h=0.25, bias=0.01, stderr=0.002,
                        rmse=0.0102, failures=0),
            asy.RateRow(n=10000, h=0.15, bias=0.005, stderr=0.001,
                        rmse=0.0051, failures=1)]

    def test_csv_layout(self, tmp_path):
        report = asy.RateReport("M", "value", self.ROWS,
                                slope=-0.4, slope_ci=(-0.45, -0.35))
        path = tmp_path / "rates.csv"
        report.to_csv(path)
        text = path.read_text()
        lines = text.strip().splitlines()
        assert lines[0] == "paradigm,target,n,h,bias,stderr,rmse"
        assert lines[1] == "M,value,1000,0.25,0.01,0.002,0.0102"
        assert lines[2] == "M,value,10000,0.15,0.005,0.001,0.0051"

    def test_json_payload(self, tmp_path):
        report = asy.RateReport("K", "hessian", self.ROWS,
                                slope=-0.25, slope_ci=(-0.3, -0.2))
        path = tmp_path / "rates.json"
        report.to_json(path, metadata={"seed": 7})
        text = path.read_text()
        assert text.endswith("\n")
        payload = json.loads(text)
        assert payload["paradigm"] == "K"
        assert payload["target"] == "hessian"
        assert payload["slope"] == -0.25
        assert payload["slope_ci"] == [-0.3, -0.2]
        assert payload["metadata"] == {"seed": 7}
        assert payload["rows"][1] == {
            "n": 10000, "h": 0.15, "bias": 0.005, "stderr": 0.001,
            "rmse": 0.0051, "failures": 1}

    def test_json_writes_are_deterministic(self, tmp_path):
        report = asy.RateReport("L", "value", self.ROWS)
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        report.to_json(a)
        report.to_json(b)
        assert a.read_bytes() == b.read_bytes()
        assert json.loads(a.read_text())["slope"] is None


class TestRateExperiment:
    def test_replication_floor(self):
        with pytest.raises(ValueError):
            asy.rate_experiment("M", "value", STD1, [0.0], GaussianKernel(1),
                                asy.BandwidthPlan.single(0.3), [500], 50, 1)

    def test_score_matching_has_no_value_component(self):
        with pytest.raises(ValueError):
            asy.rate_experiment("H", "value", STD1, [0.0], GaussianKernel(1),
                                asy.BandwidthPlan.single(0.3), [500], 100, 1)

    def test_value_error_decays_at_expected_rate(self):
        plan = asy.BandwidthPlan.rate(1.0, 1.0 / 5.0)
        report = asy.rate_experiment("K", "value", STD1, [0.3],
                                     GaussianKernel(1), plan,
                                     [400, 800, 1600, 3200], 100, 31)
        assert len(report.rows) == 4
        assert all(row.failures == 0 for row in report.rows)
        hs = [row.h for row in report.rows]
        assert hs == sorted(hs, reverse=True)
        assert -0.5 < report.slope < -0.25
        lo, hi = report.slope_ci
        assert lo < report.slope < hi

    def test_runs_are_reproducible(self):
        plan = asy.BandwidthPlan.single(0.4)
        args = ("M", "value", STD1, [0.2], GaussianKernel(1), plan,
                [300, 600], 100, 13)
        first = asy.rate_experiment(*args)
        second = asy.rate_experiment(*args)
        assert first.rows == second.rows
        assert first.slope is None and first.slope_ci is None

    def test_failure_budget_enforced(self):
        # querying far outside the sample leaves every neighborhood
        # empty, so every replication fails and the budget trips
        with pytest.raises(RuntimeError, match="budget"):
            asy.rate_experiment("M", "value", STD1, [50.0], GaussianKernel(1),
                                asy.BandwidthPlan.single(0.3), [200], 100, 31)

    def test_score_matching_gradient_target_runs(self):
        report = asy.rate_experiment("H", "gradient", MIX1D, [0.4],
                                     GaussianKernel(1),
                                     asy.BandwidthPlan.single(0.5),
                                     [400], 100, 17)
        row = report.rows[0]
        assert np.isfinite(row.bias) and np.isfinite(row.rmse)


class TestTripleBandwidthExperiment:
    def test_reproducible_and_well_formed(self):
        plan = asy.BandwidthPlan.triple([0.9, 0.9, 0.9])
        first = asy.triple_bandwidth_experiment(STD1, [0.25],
                                                GaussianKernel(1), plan,
                                                2000, 150, 55)
        second = asy.triple_bandwidth_experiment(STD1, [0.25],
                                                 GaussianKernel(1), plan,
                                                 2000, 150, 55)
        np.testing.assert_array_equal(first, second)
        assert first.shape == (3, 3)
        np.testing.assert_allclose(np.diag(first), 1.0)
        np.testing.assert_allclose(first, first.T)
        assert np.all(np.abs(first) <= 1.0 + 1e-12)

    def test_staggered_bandwidths_decorrelate_components(self):
        # with one bandwidth per derivative order the three statistics
        # draw on nested neighborhoods of very different widths and the
        # correlations collapse; a common bandwidth keeps the value and
        # curvature estimates strongly dependent
        density = GaussianMixture.gaussian(np.zeros(3), np.eye(3))
        kernel = GaussianKernel(3)
        x0 = np.array([0.25, -0.1, 0.4])
        staggered = asy.triple_bandwidth_experiment(
            density, x0, kernel, asy.BandwidthPlan.triple([0.187, 0.9, 3.47]),
            10000, 300, 55)
        off = np.abs(staggered[np.triu_indices(3, k=1)])
        assert np.all(off < 0.2)
        control = asy.triple_bandwidth_experiment(
            density, x0, kernel, asy.BandwidthPlan.single(0.35),
            10000, 300, 55)
        assert abs(control[0, 2]) > 0.4
