import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothsq import approx, hard, learner, sq
from smoothsq.gaussian import gauss_hermite_grid, hermite_matrix, line_rule
from smoothsq.hard import build_labeled, make_rng
from smoothsq.learner import (
    Dataset,
    FeatureMap,
    LearnerConfig,
    best_threshold,
    default_degree,
    l1_poly_regression,
    learn_smoothed,
    multi_indices,
)


def halfspace(d, seed):
    base = hard.LabeledHardDistribution(hard.FunctionLabel(np.sign, (0.0,)), 0.5)
    return sq.plant(base, d, seed=seed), base


class TestDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([1.0, -1.0]))
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 2)), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            Dataset(np.array([[0.0], [np.inf]]), np.array([1.0, -1.0]))
        data = Dataset(np.arange(3.0), np.ones(3), {"seed": 1})
        assert data.d == 1 and len(data) == 3 and data.provenance["seed"] == 1


class TestConfig:
    def test_default_degree(self):
        assert default_degree(0.5, 0.1) == math.ceil(4 * math.log(20) / 0.25) == 48
        assert LearnerConfig(1.0, 0.5).m == math.ceil(4 * math.log(4))

    def test_validation(self):
        with pytest.raises(ValueError):
            LearnerConfig(features="bogus")
        with pytest.raises(ValueError):
            LearnerConfig(features="direction")
        with pytest.raises(ValueError):
            LearnerConfig(degree=-1)
        with pytest.raises(ValueError):
            LearnerConfig(epsilon=1.5)

    def test_feature_cap(self):
        cfg = LearnerConfig(0.5, 0.1, degree=37)
        with pytest.raises(ValueError, match="exceed the cap"):
            learner.feature_map(4, 37, cfg)
        assert learner.feature_map(4, 9, cfg).size == math.comb(13, 9)


class TestFeatures:
    @given(st.integers(1, 4), st.integers(0, 6))
    def test_multi_indices(self, d, m):
        idx = multi_indices(d, m)
        assert len(idx) == math.comb(d + m, m) == len(set(idx))
        assert all(len(a) == d and sum(a) <= m for a in idx)
        assert [sum(a) for a in idx] == sorted(sum(a) for a in idx)

    def test_full_features_orthonormal(self):
        g = gauss_hermite_grid(12)
        X = np.array(np.meshgrid(g.nodes, g.nodes)).reshape(2, -1).T
        W = np.outer(g.weights, g.weights).ravel()
        Phi = FeatureMap(2, 5)(X)
        np.testing.assert_allclose((Phi * W[:, None]).T @ Phi, np.eye(Phi.shape[1]), atol=1e-10)

    def test_direction_features(self):
        v = np.array([3.0, 4.0]) / 5
        x = np.random.default_rng(0).standard_normal((10, 2))
        np.testing.assert_allclose(FeatureMap(2, 4, v)(x), hermite_matrix(4, x @ v))


class TestRegression:
    def test_realizable(self):
        rng = np.random.default_rng(1)
        x = rng.choice([-1.0, 1.0], size=(400, 3))
        data = Dataset(x, x[:, 1])
        poly = l1_poly_regression(data, LearnerConfig(degree=1))
        assert poly.objective <= 1e-8
        np.testing.assert_allclose(poly(x), x[:, 1], atol=1e-8)

    def test_rank_deficiency_lowers_degree(self):
        rng = np.random.default_rng(2)
        x = rng.choice([-1.0, 1.0], size=(300, 2))
        with pytest.warns(UserWarning, match="rank-deficient"):
            poly = l1_poly_regression(Dataset(x, x[:, 0]), LearnerConfig(degree=2))
        assert poly.degree == 1

    def test_independent_coins(self):
        rng = make_rng(3)
        x = rng.standard_normal((4000, 2))
        y = np.where(rng.random(4000) < 0.5, 1.0, -1.0)
        poly = l1_poly_regression(Dataset(x, y), LearnerConfig(degree=3))
        assert poly.objective == pytest.approx(1.0, abs=0.05)
        # every constant in [-1, 1] is optimal; the fit must carry no signal to fresh data
        x2 = rng.standard_normal((20_000, 2))
        y2 = np.where(rng.random(20_000) < 0.5, 1.0, -1.0)
        assert np.mean(np.abs(y2 - poly(x2))) >= 0.98
        agree = np.mean(np.sign(poly(x2) - np.median(poly(x))) == y2)
        assert abs(agree - 0.5) < 4 * math.sqrt(0.25 / 20_000)

    def test_matches_scipy_highs(self):
        from scipy.optimize import linprog

        rng = make_rng(4)
        x = rng.standard_normal(300)
        y = np.where(rng.random(300) < 0.5 * (1 + np.tanh(2 * x)), 1.0, -1.0)
        poly = l1_poly_regression(Dataset(x, y), LearnerConfig(degree=3))
        H = hermite_matrix(3, x)
        n, k = H.shape
        # variables (c, s): min mean(s), s >= +-(y - H c)
        A = np.block([[H, -np.eye(n)], [-H, -np.eye(n)]])
        b = np.concatenate([y, -y])
        ref = linprog(np.concatenate([np.zeros(k), np.full(n, 1 / n)]), A_ub=A, b_ub=b,
                      bounds=[(None, None)] * k + [(0, None)] * n, method="highs")
        assert poly.objective == pytest.approx(ref.fun, abs=1e-9)

    def test_witness_labels_below_witness_degree(self, witness8):
        # E[Y p(X)] = 0 for deg p <= 8, so the population objective is exactly 1
        dist = build_labeled(witness8, 0.5)
        X, Y = dist.sample(20_000, make_rng(5))
        poly = l1_poly_regression(Dataset(X, Y), LearnerConfig(0.5, 0.1, degree=4))
        assert 1 - 3 / math.sqrt(len(Y)) * math.sqrt(5) <= poly.objective <= 1.0 + 1e-12

    def test_witness_labels_above_witness_degree(self, witness8):
        # population objective by an L1 fit on a breakpoint-aware rule
        dist = build_labeled(witness8, 0.5)
        grid = line_rule(dist.breakpoints, span=8.0, panel_width=0.5, order=16)
        pop_fit = approx.l1_best_approx(dist.label, 16, grid, tie_break=False)
        X, Y = dist.sample(20_000, make_rng(6))
        poly = l1_poly_regression(Dataset(X, Y), LearnerConfig(0.5, 0.1, degree=16))
        assert poly.objective <= np.mean(np.abs(Y - pop_fit(X))) + 1e-9
        assert pop_fit.l1_error < 0.5
        assert poly.objective < 0.5


class TestThreshold:
    def test_separated(self):
        x = np.linspace(-1, 1, 50)
        y = np.where(x > 0.1, 1.0, -1.0)
        poly = learner.FittedPolynomial(FeatureMap(1, 1), np.array([0.0, 1.0]), 0.0, 0)
        hyp = best_threshold(poly, Dataset(x, y))
        assert hyp.error(Dataset(x, y)) == 0.0

    def test_all_positive(self):
        x = np.linspace(-1, 1, 20)
        poly = learner.FittedPolynomial(FeatureMap(1, 1), np.array([0.0, 1.0]), 0.0, 0)
        hyp = best_threshold(poly, Dataset(x, np.ones(20)))
        assert hyp.threshold < -1.0
        assert np.all(hyp.predict(x) == 1.0)

    def test_ties_go_to_smallest_threshold(self):
        # cuts at -2 and 3 both make one mistake
        vals = np.array([-3.0, -1.0, 2.0, 4.0])
        y = np.array([-1.0, 1.0, -1.0, 1.0])
        t, errs = learner._threshold_scan(vals, y)
        assert errs == 1 and t == -2.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=1, max_size=40))
    def test_scan_is_optimal(self, pts):
        vals = np.array([float(v) for v, _ in pts])
        y = np.array([1.0 if b else -1.0 for _, b in pts])
        t, errs = learner._threshold_scan(vals, y)
        assert errs == np.sum(np.where(vals > t, 1.0, -1.0) != y)
        brute = min(np.sum(np.where(vals > c, 1.0, -1.0) != y) for c in np.arange(-6, 6, 0.5))
        assert errs == brute

    def test_predict_deterministic(self):
        poly = learner.FittedPolynomial(FeatureMap(1, 2), np.array([0.1, 1.0, 0.5]), 0.0, 0)
        hyp = learner.Hypothesis(poly, 0.2)
        x = np.linspace(-2, 2, 11)
        np.testing.assert_array_equal(hyp.predict(x), np.where(poly(x) > 0.2, 1.0, -1.0))


class TestLearnSmoothed:
    def test_halfspace(self):
        dist, base = halfspace(4, 7)
        opt = hard.opt_sigma(base, 0.5)
        assert opt == pytest.approx(math.atan(0.5) / math.pi, abs=1e-9)
        rng = make_rng(8)
        train, test = Dataset(*dist.sample(20_000, rng)), Dataset(*dist.sample(20_000, rng))
        cfg = LearnerConfig(0.5, 0.1, features="direction", direction=tuple(dist.v))
        assert cfg.m == 48
        # high Hermite degrees are numerically rank deficient on 2e4 points
        with pytest.warns(UserWarning, match="rank"):
            res = learn_smoothed(train, test, cfg, opt, seed=8)
        assert res.test_error <= opt + 0.1
        assert 1 <= res.row["m"] <= 48 and set(res.row) == set(learner.RUN_COLUMNS)

    def test_coins(self):
        rng = make_rng(9)
        x = rng.standard_normal((8000, 2))
        y = np.where(rng.random(8000) < 0.5, 1.0, -1.0)
        opt = hard.opt_sigma(build_labeled(None), 0.5)
        res = learn_smoothed(Dataset(x[:4000], y[:4000]), Dataset(x[4000:], y[4000:]),
                             LearnerConfig(0.5, 0.1, degree=2), opt)
        assert opt == 0.5
        assert abs(res.gap) <= 4 * math.sqrt(0.25 / 4000)

    def test_test_set_must_differ(self):
        data = Dataset(np.zeros(4), np.array([1.0, -1.0, 1.0, -1.0]))
        with pytest.raises(ValueError):
            learn_smoothed(data, data, LearnerConfig(degree=1), 0.5)

    def test_more_data_does_not_hurt(self):
        dist, base = halfspace(2, 10)
        cfg = LearnerConfig(0.5, 0.1, degree=5, features="direction", direction=tuple(dist.v))
        errs = {1000: [], 2000: []}
        for seed in range(10):
            rng = make_rng([11, seed])
            test = Dataset(*dist.sample(20_000, rng))
            for n in errs:
                train = Dataset(*dist.sample(n, rng))
                errs[n].append(learn_smoothed(train, test, cfg, 0.0).test_error)
        mc = math.sqrt(0.05 / 20_000 / 10)
        assert np.mean(errs[2000]) <= np.mean(errs[1000]) + 2 * mc

    def test_hypothesis_as_statistical_query(self, witness8):
        # error < 1/2 - 2 tau  <=>  the single query y h(x) separates planted from null
        tau = 0.02
        dist = sq.plant(build_labeled(witness8, 0.5), 4, seed=12)
        rng = make_rng(13)
        train, test = Dataset(*dist.sample(20_000, rng)), Dataset(*dist.sample(20_000, rng))
        cfg = LearnerConfig(0.5, 0.1, degree=16, features="direction", direction=tuple(dist.v))
        res = learn_smoothed(train, test, cfg, hard.opt_sigma(dist.base, 0.5))
        q = sq.CallableQuery(lambda x, y: y * res.hypothesis.predict(x), "hypothesis")
        rep = sq.distinguish(dist, dist.null(), [q], tau, seed=14)
        assert rep.gaps[0] == pytest.approx(1 - 2 * res.test_error, abs=tau / 4 + 4 * math.sqrt(1 / 20_000))
        assert res.test_error < 0.5 - 2 * tau
        assert rep.gaps[0] > 2 * tau
