import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

import synth
from quartet_attrib.glm import (
    FeatureMisalignment,
    FittedModel,
    PriorConfig,
    bic,
    fit,
    hosmer_lemeshow,
    predict_prob,
    wald_pvalues,
)


def exact_log_posterior(b0, beta, X, y, prior):
    """Direct evaluation of the penalized objective, independent arithmetic."""
    eta = b0 + X @ np.atleast_1d(beta)
    ll = float(np.sum(y * eta) - np.sum(np.log1p(np.exp(-np.abs(eta))) + np.maximum(eta, 0)))
    pen = math.log1p((b0 / prior.intercept_scale) ** 2)
    sds = X.std(axis=0, ddof=1)
    for bj, sd in zip(np.atleast_1d(beta), sds):
        s = prior.scale_factor / (2 * sd)
        pen += math.log1p((bj / s) ** 2)
    return ll - pen


class TestFit:
    def test_intercept_only_balanced_is_zero(self):
        y = np.array([0.0, 1.0] * 25)
        model = fit(np.empty((50, 0)), y)
        assert model.intercept == 0.0
        assert model.converged

    def test_intercept_only_shrinks_toward_zero(self):
        y = np.array([1.0] * 30 + [0.0] * 70)
        model = fit(np.empty((100, 0)), y)
        raw = math.log(30 / 70)
        assert raw < model.intercept < 0
        assert abs(model.intercept - raw) < 0.05  # scale-10 prior barely shrinks

    def test_map_matches_grid_search(self):
        rng = np.random.default_rng(42)
        for trial in range(3):
            x = rng.normal(size=20)
            eta = -0.4 + 1.5 * x
            y = (rng.random(20) < expit(eta)).astype(float)
            X = x.reshape(-1, 1)
            prior = PriorConfig(scale_factor=0.6)
            model = fit(X, y, prior)
            b0, b1, width = 0.0, 0.0, 6.0
            for _ in range(14):
                g0 = np.linspace(b0 - width, b0 + width, 61)
                g1 = np.linspace(b1 - width, b1 + width, 61)
                vals = np.array(
                    [[exact_log_posterior(a, b, X, y, prior) for b in g1] for a in g0]
                )
                i, j = np.unravel_index(vals.argmax(), vals.shape)
                b0, b1, width = g0[i], g1[j], width / 3
            assert abs(model.intercept - b0) < 1e-4
            assert abs(model.coef[0] - b1) < 1e-4

    def test_objective_monotone(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            X, y = synth.logistic_toy(rng, n=40, p=3)
            model = fit(X, y, PriorConfig(scale_factor=0.6))
            diffs = np.diff(model.objective_path)
            assert (diffs >= -1e-10).all()

    def test_separation_stays_finite(self):
        x = np.array([-2.0, -1.5, -1.0, 1.0, 1.5, 2.0])
        y = np.array([0.0, 0, 0, 1, 1, 1])
        model = fit(x.reshape(-1, 1), y, PriorConfig(scale_factor=2.5))
        assert np.isfinite(model.coef).all() and np.isfinite(model.intercept)
        assert model.converged

    def test_large_scale_recovers_mle(self):
        rng = np.random.default_rng(2)
        X, y = synth.logistic_toy(rng, n=200, p=2, signal=(1.0, -0.7))

        def nll(b):
            eta = b[0] + X @ b[1:]
            return -(y @ eta - np.logaddexp(0, eta).sum())

        mle = minimize(nll, np.zeros(3), method="BFGS").x
        model = fit(X, y, PriorConfig(scale_factor=1e6, intercept_scale=1e6))
        assert abs(model.intercept - mle[0]) < 1e-3
        assert np.abs(model.coef - mle[1:]).max() < 1e-3

    def test_column_scaling_equivariance(self):
        rng = np.random.default_rng(3)
        X, y = synth.logistic_toy(rng, n=80, p=3)
        prior = PriorConfig(scale_factor=0.6)
        base = fit(X, y, prior)
        scaled = X.copy()
        c = 37.5
        scaled[:, 1] *= c
        other = fit(scaled, y, prior)
        assert abs(other.coef[1] - base.coef[1] / c) < 1e-6
        p1 = predict_prob(base, X)
        p2 = predict_prob(other, scaled)
        assert np.abs(p1 - p2).max() < 1e-8

    def test_warm_start_reaches_same_mode(self):
        rng = np.random.default_rng(4)
        X, y = synth.logistic_toy(rng, n=60, p=4)
        prior = PriorConfig(scale_factor=0.6)
        cold = fit(X, y, prior)
        start = np.concatenate(([cold.intercept], cold.coef)) + 0.05
        warm = fit(X, y, prior, start=start)
        assert abs(warm.intercept - cold.intercept) < 1e-6
        assert np.abs(warm.coef - cold.coef).max() < 1e-6

    def test_constant_column_flagged_degenerate(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([rng.normal(size=30), np.ones(30)])
        y = (rng.random(30) < 0.5).astype(float)
        model = fit(X, y, PriorConfig())
        assert model.degenerate
        assert np.isfinite(model.coef).all()

    def test_input_validation(self):
        with pytest.raises(ValueError):
            fit(np.zeros((3, 1)), np.array([0.0, 2.0, 1.0]))
        with pytest.raises(ValueError):
            fit(np.zeros((3, 1)), np.array([0.0, 1.0]))

    def test_json_round_trip(self):
        rng = np.random.default_rng(6)
        X, y = synth.logistic_toy(rng, n=40, p=2)
        model = fit(X, y, feature_names=("a", "b"))
        back = FittedModel.from_json(model.to_json())
        assert back.feature_names == model.feature_names
        assert back.intercept == model.intercept
        assert np.array_equal(back.coef, model.coef)
        assert back.log_likelihood == model.log_likelihood


class TestPredict:
    def test_linear_predictor_zero(self):
        model = _toy_model(intercept=0.0, coef=[])
        assert predict_prob(model, np.empty(0)) == 0.5

    def test_table_intercept_value(self):
        model = _toy_model(intercept=-1.12, coef=[2.0, -1.0, 0.5])
        p = predict_prob(model, np.zeros(3))
        assert p == pytest.approx(1 / (1 + math.exp(1.12)))
        assert p == pytest.approx(0.246, abs=5e-4)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        model = _toy_model(intercept=0.3, coef=[0.5, -1.5])
        for _ in range(20):
            x = rng.normal(size=2)
            want = 1 / (1 + math.exp(-(0.3 + 0.5 * x[0] - 1.5 * x[1])))
            assert predict_prob(model, x) == pytest.approx(want, abs=1e-12)

    def test_strictly_inside_unit_interval(self):
        model = _toy_model(intercept=900.0, coef=[])
        p = predict_prob(model, np.empty(0))
        assert 0 < p < 1

    def test_monotone_in_coefficient_sign(self):
        model = _toy_model(intercept=0.0, coef=[2.0, -3.0])
        lo = predict_prob(model, np.array([0.0, 0.0]))
        assert predict_prob(model, np.array([1.0, 0.0])) > lo
        assert predict_prob(model, np.array([0.0, 1.0])) < lo

    def test_misalignment_rejected(self):
        model = _toy_model(intercept=0.0, coef=[1.0], names=("a",))
        with pytest.raises(FeatureMisalignment):
            predict_prob(model, np.zeros(1), feature_names=("b",))
        with pytest.raises(FeatureMisalignment):
            predict_prob(model, np.zeros(3))


def _toy_model(intercept, coef, names=None):
    coef = np.asarray(coef, dtype=float)
    return FittedModel(
        feature_names=names or tuple(f"f{i}" for i in range(len(coef))),
        intercept=intercept,
        coef=coef,
        standard_errors=np.ones(len(coef) + 1),
        log_likelihood=-1.0,
        n=10,
        d=len(coef),
        converged=True,
        iterations=1,
        prior=PriorConfig(),
        prior_scales=np.ones(len(coef) + 1),
    )


class TestBic:
    def test_direct_substitution(self):
        model = _toy_model(0.0, [1.0])
        model.log_likelihood = -10.0
        model.n = 100
        model.d = 1
        assert bic(model) == pytest.approx(20 + 4 * math.log(100), abs=1e-12)

    def test_intercept_only_balanced(self):
        y = np.array([0.0, 1.0] * 50)
        model = fit(np.empty((100, 0)), y)
        want = -2 * (100 * math.log(0.5)) + 2 * math.log(100)
        assert bic(model) == pytest.approx(want, abs=1e-9)

    def test_recomputable_from_model(self):
        rng = np.random.default_rng(8)
        X, y = synth.logistic_toy(rng, n=50, p=3)
        model = fit(X, y)
        eta = model.intercept + X @ model.coef
        ll = float(y @ eta - np.logaddexp(0, eta).sum())
        assert bic(model) == pytest.approx(-2 * ll + 2 * 4 * math.log(50), abs=1e-12)

    def test_textbook_form(self):
        model = _toy_model(0.0, [1.0])
        model.log_likelihood = -10.0
        model.n = 100
        assert bic(model, form="textbook") == pytest.approx(20 + 2 * math.log(100))
        with pytest.raises(ValueError):
            bic(model, form="other")

    def test_penalty_arithmetic_identity(self):
        base = _toy_model(0.0, [1.0])
        base.log_likelihood = -20.0
        base.n = 64
        bigger = _toy_model(0.0, [1.0, 0.5])
        bigger.n = 64
        # adding a feature lowers BIC only if 2*(likelihood gain) > 2*log(n)
        gain_needed = math.log(64)
        bigger.log_likelihood = base.log_likelihood + gain_needed + 0.01
        assert bic(bigger) < bic(base)
        bigger.log_likelihood = base.log_likelihood + gain_needed - 0.01
        assert bic(bigger) > bic(base)


class TestWald:
    def test_zero_coefficient_p_one(self):
        model = _toy_model(0.0, [0.0])
        assert wald_pvalues(model)[1] == 1.0

    def test_reported_row(self):
        model = _toy_model(0.0, [-15.47])
        model.standard_errors = np.array([1.0, 4.23])
        p = wald_pvalues(model)[1]
        assert p == pytest.approx(0.000255, abs=5e-6)

    def test_z_1_96(self):
        model = _toy_model(0.0, [1.96])
        p = wald_pvalues(model)[1]
        assert p == pytest.approx(0.05, abs=2e-4)

    def test_intercept_row(self):
        model = _toy_model(-1.12, [])
        model.standard_errors = np.array([2.32])
        assert wald_pvalues(model)[0] == pytest.approx(0.63, abs=5e-3)


class TestHosmerLemeshow:
    def test_exact_frequencies_statistic_zero(self):
        probs = np.repeat([0.2, 0.5, 0.8], 10)
        y = np.concatenate([[1, 1] + [0] * 8, [1] * 5 + [0] * 5, [1] * 8 + [0, 0]])
        res = hosmer_lemeshow(probs, y, 3)
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert res.p_value == pytest.approx(1.0)

    def test_calibrated_simulation_mean_p_half(self):
        # the g - 2 degrees of freedom presume probabilities fitted on the
        # same data, so the oracle simulates, fits, then tests
        rng = np.random.default_rng(9)
        prior = PriorConfig(scale_factor=1e5, intercept_scale=1e5)
        ps = []
        for _ in range(150):
            X, y = synth.logistic_toy(rng, n=400, p=2, signal=(0.8, -0.6), intercept=0.2)
            model = fit(X, y, prior)
            probs = predict_prob(model, X)
            ps.append(hosmer_lemeshow(probs, y, 10).p_value)
        assert abs(float(np.mean(ps)) - 0.5) < 0.08

    def test_miscalibrated_detected(self):
        rng = np.random.default_rng(10)
        probs = rng.uniform(0.1, 0.9, size=2000)
        y = (rng.random(2000) < np.clip(probs + 0.15, 0, 1)).astype(float)
        res = hosmer_lemeshow(probs, y, 10)
        assert res.p_value < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            hosmer_lemeshow([0.5] * 10, [1] * 10, 2)
        with pytest.raises(ValueError):
            hosmer_lemeshow([0.5] * 3, [1, 0, 1], 5)
