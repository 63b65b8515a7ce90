import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.optimize import minimize_scalar

from smoothsq import approx, hard
from smoothsq.gaussian import SmoothedThreshold, hermite_matrix, line_rule, normal_pdf
from smoothsq.hard import (
    HardSamplerConfig,
    StepWitness,
    build_labeled,
    density_ratio_bound,
    fractional_mass,
    moment_check,
    opt_sigma,
    sample_hard,
    split_gaussian,
)

N_DRAWS = 1_000_000


@pytest.fixture(scope="module")
def half_cfg():
    return HardSamplerConfig(4, 20, ((0.5, 1.0),), seed=1)


@pytest.fixture(scope="module")
def half_draws(half_cfg):
    return sample_hard(half_cfg, size=N_DRAWS)


class TestGaussianSplit:
    def test_alpha(self):
        assert split_gaussian().alpha == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-15)
        assert split_gaussian().alpha == pytest.approx(0.2419707, abs=1e-7)

    def test_decomposition_valid(self):
        x = np.linspace(0, 1, 1001)
        assert np.all(split_gaussian().alpha <= normal_pdf(x) + 1e-15)
        assert np.all(split_gaussian().residual_density(np.linspace(-6, 6, 2001)) >= -1e-15)

    def test_residual_density_normalized(self):
        rd = split_gaussian().residual_density
        total = sum(integrate.quad(rd, a, b)[0] for a, b in [(-np.inf, 0), (0, 1), (1, np.inf)])
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_residual_density_at_minus_two(self):
        split = split_gaussian()
        assert split.residual_density(-2.0) == pytest.approx(0.0712, abs=1e-4)
        draws = split.sample_residual(hard.make_rng(3), N_DRAWS)
        h = 0.1
        frac = np.mean(np.abs(draws + 2.0) < h / 2) / h
        se = math.sqrt(frac * h / N_DRAWS) / h
        assert abs(frac - split.residual_density(-2.0)) <= 4 * se + 5e-4  # bin-curvature allowance

    def test_mixture_is_gaussian(self):
        draws = split_gaussian().sample_mixture(hard.make_rng(4), N_DRAWS)
        assert stats.kstest(draws, "norm").statistic < 0.0015


class TestConfig:
    def test_shortfall_matches_direct_binomial(self):
        cfg = HardSamplerConfig(4)
        a, n = split_gaussian().alpha, 80
        direct = sum(math.comb(n, i) * a**i * (1 - a) ** (n - i) for i in range(5))
        assert cfg.shortfall_probability == pytest.approx(direct, rel=1e-10)
        assert cfg.shortfall_probability <= 2**-4

    @pytest.mark.parametrize("k", [1, 2, 4, 9, 16])
    def test_default_C_is_large_enough(self, k):
        assert HardSamplerConfig(k).summands == 20 * k

    def test_small_C_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            HardSamplerConfig(4, C=2)

    def test_intervals_validated_and_merged(self):
        cfg = HardSamplerConfig(3, S=((0.6, 0.9), (0.1, 0.2), (0.15, 0.3)))
        assert cfg.S == ((0.1, 0.3), (0.6, 0.9))
        assert cfg.measure == pytest.approx(0.5)
        with pytest.raises(ValueError):
            HardSamplerConfig(3, S=((0.5, 0.5),))
        with pytest.raises(ValueError):
            HardSamplerConfig(3, S=((0.5, 1.5),))

    def test_sample_S_stays_in_S(self):
        cfg = HardSamplerConfig(3, S=((0.1, 0.2), (0.7, 1.0)))
        u = cfg.sample_S(hard.make_rng(0), 10000)
        assert np.all(cfg.contains(u))
        assert np.mean(u > 0.5) == pytest.approx(0.75, abs=0.02)


class TestSampler:
    def test_full_S_is_gaussian(self):
        x = sample_hard(HardSamplerConfig(4, S=((0.0, 1.0),), seed=2), size=N_DRAWS)
        for row in moment_check(x, range(1, 7)):
            assert abs(row.z) <= 4, row
        assert stats.kstest(x, "norm").pvalue > 1e-4

    def test_moments_match(self, half_draws):
        for row in moment_check(half_draws, range(1, 5)):
            assert abs(row.z) <= 4, row

    def test_fractional_mass(self, half_cfg, half_draws):
        fm = fractional_mass(half_cfg, half_draws)
        assert fm.bound == 1 - 2**-4
        assert fm.passes

    def test_density_ratio_half(self, half_cfg, half_draws):
        with pytest.warns(UserWarning, match="under-filled"):
            rep = density_ratio_bound(half_cfg, half_draws)
        assert rep.excluded > 0
        assert rep.limit == 2.0
        # about 100 bins sit near the bound; 4 SE keeps the family-wise level near 1%
        assert rep.worst_excess(4.0) <= 0

    @pytest.mark.filterwarnings("ignore:.*under-filled")
    def test_density_ratio_quarter(self):
        cfg = HardSamplerConfig(4, S=((0.75, 1.0),), seed=5)
        rep = density_ratio_bound(cfg, sample_hard(cfg, size=N_DRAWS))
        assert rep.limit == 4.0
        assert rep.worst_excess(4.0) <= 0

    @pytest.mark.filterwarnings("ignore:.*under-filled")
    def test_density_ratio_full_is_flat(self):
        cfg = HardSamplerConfig(4, S=((0.0, 1.0),), seed=6)
        rep = density_ratio_bound(cfg, sample_hard(cfg, size=N_DRAWS), bins=40, span=3)
        assert np.max(np.abs(rep.ratios - 1.0) / rep.errors) <= 4.5

    def test_density_ratio_needs_samples(self, half_cfg):
        with pytest.raises(ValueError):
            density_ratio_bound(half_cfg, np.zeros(10))

    def test_mass_actually_concentrates(self, half_cfg, half_draws):
        # the conditioning is doing something: a Gaussian would put about half in S
        g = np.random.default_rng(0).standard_normal(100_000)
        assert fractional_mass(half_cfg, g).fraction == pytest.approx(0.5, abs=0.01)
        assert fractional_mass(half_cfg, half_draws).fraction > 0.99

    def test_seeded_and_reproducible(self, half_cfg):
        a = sample_hard(half_cfg, size=1000)
        b = sample_hard(half_cfg, size=1000)
        c = sample_hard(HardSamplerConfig(4, seed=99), size=1000)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_fast_path_matches_literal_summands(self):
        cfg = HardSamplerConfig(3, 20, ((0.5, 1.0),), seed=7)
        X, _, _ = hard.sample_hard_summands(cfg, hard.make_rng(8), 200_000)
        literal = X.sum(axis=1) / math.sqrt(cfg.summands)
        fast = sample_hard(cfg, hard.make_rng(9), 200_000)
        assert stats.ks_2samp(literal, fast).pvalue > 1e-3
        frac = np.mod(literal * math.sqrt(cfg.summands), 1.0)
        assert np.mean(cfg.contains(frac)) >= 1 - 2**-3

    def test_kwise_uniform_summands(self):
        cfg = HardSamplerConfig(3, 20, ((0.5, 1.0),), seed=10)
        X, y, trig = hard.sample_hard_summands(cfg, hard.make_rng(11), 100_000)
        assert trig.mean() > 0.99
        _, p = hard.kwise_uniformity(X, y, trig, 3)
        assert p > 1e-3

    def test_kwise_test_detects_dependence(self):
        cfg = HardSamplerConfig(3, 20, ((0.5, 1.0),), seed=10)
        X, y, trig = hard.sample_hard_summands(cfg, hard.make_rng(11), 20_000)
        rows = np.flatnonzero(trig)
        first = np.argmax(y[rows], axis=1)
        X[rows, first] = 0.99  # a degenerate coordinate is caught
        assert hard.kwise_uniformity(X, y, trig, 3)[1] < 1e-6

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
    def test_segment_sums(self, vals):
        pool = np.array(vals)
        lengths = np.array([len(vals) // 2, 0, len(vals) - len(vals) // 2])
        sums = hard._segment_sums(pool, lengths)
        ref = [pool[: lengths[0]].sum(), 0.0, pool[lengths[0]:].sum()]
        np.testing.assert_allclose(sums, ref, atol=1e-9)


class TestWitnessLabels:
    def test_step_moments_against_quadrature(self):
        w = StepWitness(np.array([-0.7, 0.2, 1.5]), np.array([1.0, -1.0, 1.0, -1.0]))
        lr = line_rule(list(w.breaks))
        ref = (lr.weights * w(lr.nodes)) @ hermite_matrix(6, lr.nodes)
        np.testing.assert_allclose(w.hermite_moments(6), ref, atol=1e-13)

    def test_refined_witness_orthogonal(self, witness8):
        dist = build_labeled(witness8, 0.5)
        assert dist.diagnostics["orthogonality_defect"] <= 1e-12
        assert np.all(np.abs(dist.label(np.linspace(-5, 5, 101))) == 1.0)
        assert dist.diagnostics["correlation"] == pytest.approx(witness8.l1_error, abs=2e-3)

    def test_interpolated_witness_reports_defect(self, witness8):
        dist = build_labeled(witness8, 0.5, mode="interpolate")
        assert 0 < dist.diagnostics["orthogonality_defect"] < 2e-2
        assert dist.clamped == 0
        with pytest.raises(ValueError):
            build_labeled(witness8, 0.5, mode="bogus")

    def test_independent_labels(self):
        dist = build_labeled(None)
        X, Y = dist.sample(200_000, hard.make_rng(12))
        assert abs(Y.mean()) <= 4 * math.sqrt(1 / Y.size)
        assert abs(np.mean(X * Y)) <= 4 * math.sqrt(1 / Y.size)

    def test_labels_orthogonal_by_monte_carlo(self, witness8):
        dist = build_labeled(witness8, 0.5)
        X, Y = dist.sample(N_DRAWS, hard.make_rng(13))
        H = hermite_matrix(8, X)
        est = (Y[:, None] * H).mean(axis=0)
        se = (Y[:, None] * H).std(axis=0) / math.sqrt(N_DRAWS)
        assert np.all(np.abs(est) <= 4 * se)
        assert np.all(np.abs(np.quantile(X, [0.1, 0.5, 0.9]) - [-1.2816, 0.0, 1.2816]) < 0.01)

    def test_smoothed_error_matches_correlation(self, witness8):
        sigma = 0.5
        dist = build_labeled(witness8, sigma)
        rng = hard.make_rng(14)
        X, Y = dist.sample(N_DRAWS, rng)
        Z = rng.standard_normal(N_DRAWS)
        err = np.mean(np.sign(X + sigma * Z) != Y)
        se = math.sqrt(err * (1 - err) / N_DRAWS)
        assert err == pytest.approx((1 - witness8.l1_error) / 2, abs=4 * se + 1e-3)
        assert err == pytest.approx((1 - dist.diagnostics["correlation"]) / 2, abs=4 * se)


class TestOptSigma:
    def test_independent(self):
        assert opt_sigma(build_labeled(None), 0.5) == 0.5

    @pytest.mark.parametrize("sigma", [0.2, 0.5, 1.0])
    def test_halfspace_closed_form(self, sigma):
        # labels sign(x): error of T_sigma sign(x - t) minimized at t = 0, equal to arctan(sigma)/pi
        dist = hard.LabeledHardDistribution(hard.FunctionLabel(np.sign, (0.0,)), sigma)
        fit = hard.opt_sigma_detail(dist, sigma)
        assert fit.value == pytest.approx(math.atan(sigma) / math.pi, abs=1e-9)
        assert fit.threshold == 0.0 and fit.orientation == 1

    def test_smoothed_sign_labels(self):
        F = SmoothedThreshold(0.0, 0.5)
        dist = hard.LabeledHardDistribution(hard.FunctionLabel(F), 0.5)
        fit = hard.opt_sigma_detail(dist, 0.5)
        assert fit.value < 0.5
        assert fit.threshold == 0.0

    def test_flipped_labels_use_other_orientation(self):
        dist = hard.LabeledHardDistribution(hard.FunctionLabel(lambda x: -np.sign(x - 0.3), (0.3,)), 0.5)
        fit = hard.opt_sigma_detail(dist, 0.5)
        assert fit.orientation == -1

        def err(t):
            def corr(x):
                return -np.sign(x - 0.3) * math.erf((x - t) / (0.5 * math.sqrt(2))) * normal_pdf(x)

            c = sum(integrate.quad(corr, a, b, epsabs=1e-13)[0] for a, b in [(-12, 0.3), (0.3, 12)])
            return 0.5 * (1 - abs(c))

        best = minimize_scalar(err, bounds=(-1, 1.5), method="bounded", options={"xatol": 1e-8})
        assert fit.value == pytest.approx(best.fun, abs=1e-5)
        assert fit.threshold == pytest.approx(best.x, abs=0.011)

    def test_witness_labels(self, witness8):
        dist = build_labeled(witness8, 0.5)
        assert opt_sigma(dist, 0.5) <= 0.5 - witness8.l1_error / 2 + 1e-3


class TestThresholdGap:
    def test_equal_thresholds(self):
        rep = hard.threshold_gap_experiment(4, 0.1, samples=20_000, t_prime=0.0)
        assert rep.gaussian_gap_exact == 0.0
        assert rep.hard_gap == 0.0

    def test_smoothed_mean_closed_form(self):
        rng = np.random.default_rng(15)
        g, z = rng.standard_normal(10**6), rng.standard_normal(10**6)
        mc = np.mean(np.sign(g + 0.7 * z - 0.4))
        assert hard.smoothed_threshold_mean(0.4, 0.7) == pytest.approx(mc, abs=4e-3)

    def test_large_sigma_washes_out(self):
        rep = hard.threshold_gap_experiment(4, 1.0, samples=400_000, seed=3)
        assert rep.hard_gap == pytest.approx(rep.gaussian_gap_exact, abs=4 * rep.hard_gap_se)
        assert rep.gaussian_gap_mc == pytest.approx(rep.gaussian_gap_exact, abs=4 * rep.gaussian_gap_se)

    def test_small_sigma_gap(self):
        rep = hard.threshold_gap_experiment(9, 0.01, samples=200_000, seed=4)
        assert rep.ratio >= 2
        assert set(rep.as_dict()) >= {"ratio", "difference", "hard_gap", "gaussian_gap_exact"}
