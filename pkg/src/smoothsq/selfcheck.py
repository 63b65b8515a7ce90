"""Fast invariant suite behind ``smoothsq selftest``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import approx, gaussian, hard, learner, sq
from . import lp as lpcore


@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    passed: bool


def _upper(name, value, limit):
    return CheckResult(name, float(value), float(limit), bool(value <= limit))


def _lower(name, value, limit):
    return CheckResult(name, float(value), float(limit), bool(value >= limit))


def random_hermite_poly(rng: np.random.Generator, degree: int) -> np.ndarray:
    """Gaussian coefficients on ``h_0..h_degree`` with a nonzero top term."""
    c = rng.standard_normal(degree + 1)
    if degree:
        c[-1] += math.copysign(0.5, c[-1])
    return c


def analytic_checks(seed, n_polys: int = 100, max_degree: int = 6, grid_n: int = 200) -> list[CheckResult]:
    rng = hard.make_rng([seed, 11])
    out = []
    gh = gaussian.gauss_hermite_grid(grid_n)
    H = gaussian.hermite_matrix(40, gh.nodes)
    gram = (H * gh.weights[:, None]).T @ H
    out.append(_upper("hermite_orthonormality", np.max(np.abs(gram - np.eye(41))), 1e-8))

    lr = gaussian.line_rule([0.0])
    c_num = gaussian.hermite_coeffs(np.sign, 15, lr).coeffs
    out.append(_upper("sign_coefficients", np.max(np.abs(c_num - gaussian.sign_hermite_coeffs(15))), 1e-10))

    worst = -np.inf
    for sigma in (0.5, 1.0):
        a = gaussian.smoothing_correspondence(sigma)
        for m in range(1, 31):
            _, tail = approx.smoothed_sign_truncation(sigma, m)
            worst = max(worst, tail**2 - a ** (2 * m))
    out.append(_upper("truncation_bound_excess", worst, 1e-9))

    # OU self-adjointness with U_rho applied by Gauss-Hermite convolution
    z = gaussian.gauss_hermite_grid(80)
    grid = gaussian.gauss_hermite_grid(120)
    rho = 0.6
    s = math.sqrt(1 - rho**2)
    worst = 0.0
    for _ in range(10):
        f, g = (gaussian.HermiteExpansion(random_hermite_poly(rng, 6)) for _ in range(2))

        def U(e):
            return lambda x: (e(rho * x[:, None] + s * z.nodes[None, :]) * z.weights).sum(axis=1)

        lhs = grid.expect(lambda x: f(x) * U(g)(x))
        rhs = grid.expect(lambda x: U(f)(x) * g(x))
        worst = max(worst, abs(lhs - rhs))
    out.append(_upper("ou_self_adjoint", worst, 1e-8))

    hc, f23 = -np.inf, -np.inf
    fine = gaussian.line_rule([], panel_width=0.1)
    Hf = gaussian.hermite_matrix(max_degree, fine.nodes)
    for d in range(1, max_degree + 1):
        for _ in range(n_polys):
            p = Hf[:, : d + 1] @ random_hermite_poly(rng, d)
            n1 = fine.weights @ np.abs(p)
            n2 = math.sqrt(fine.weights @ p**2)
            n4 = (fine.weights @ p**4) ** 0.25
            hc = max(hc, n4 - 3 ** (d / 2) * n2)
            f23 = max(f23, n2 - 2 ** (d / 2) * n1)
    out.append(_upper("hypercontractivity_q4_excess", hc, 1e-8))
    out.append(_upper("l2_l1_fact_excess", f23, 1e-8))
    return out


def lp_checks(seed) -> list[CheckResult]:
    rng = hard.make_rng([seed, 12])
    worst = 0.0
    for _ in range(5):
        m, n = 8, 16
        A = rng.standard_normal((m, n))
        x = np.zeros(n)
        basis = rng.choice(n, m, replace=False)
        x[basis] = rng.random(m) + 0.1
        y = rng.standard_normal(m)
        c = A.T @ y
        c[np.setdiff1d(np.arange(n), basis)] += rng.random(n - m) + 0.1
        sol = lpcore.solve(lpcore.LinearProgram(c, A, A @ x, ("=",) * m, None))
        worst = max(worst, abs(sol.objective - c @ x) if sol.optimal else np.inf)
    return [_upper("lp_planted_optimum", worst, 1e-8)]


def approx_checks(grid_n: int) -> list[CheckResult]:
    grid = approx.approximation_grid(grid_n)
    curve = approx.degree_sweep("sign", 1.0, 8, grid)
    gaps = [p.result.witness_residuals() for p in curve.points]
    return [
        _upper("duality_gap", max(r["duality_gap"] for r in gaps), 1e-7),
        _upper("witness_bound_excess", max(r["bound"] for r in gaps), 1e-8),
        _upper("witness_orthogonality", max(r["orthogonality"] for r in gaps), 1e-7),
        _upper("l1_curve_increase", float(np.max(np.diff(curve.errors))), 1e-12),
    ]


def hard_checks(seed, samples: int, grid_n: int) -> list[CheckResult]:
    cfg = hard.HardSamplerConfig(4, 20, ((0.5, 1.0),), seed)
    x = hard.sample_hard(cfg, None, samples)
    z = max(abs(r.z) for r in hard.moment_check(x, range(1, 5)))
    fm = hard.fractional_mass(cfg, x)
    res = approx.l1_best_approx(approx.smoothed("sign", 0.5), 8, approx.approximation_grid(grid_n))
    dist = hard.build_labeled(res, 0.5)
    return [
        _upper("hard_moment_max_z", z, 4.0),
        _lower("hard_fraction_margin", fm.fraction - fm.bound + 3 * fm.standard_error, 0.0),
        _upper("refined_witness_orthogonality", dist.diagnostics["orthogonality_defect"], 1e-10),
    ]


def sq_checks(seed, grid_n: int) -> list[CheckResult]:
    res = approx.l1_best_approx(approx.smoothed("sign", 0.5), 8, approx.approximation_grid(grid_n))
    base = hard.build_labeled(res, 0.5)
    planted = sq.plant(base, 8, seed=[seed, 13])
    tau = 1e-3
    battery = sq.low_degree_battery(8, 4, 4, seed=[seed, 14], avoid=planted.v)
    battery.append(sq.threshold_query(planted.v, 0.0, 0.5, "hypothesis"))
    rep = sq.distinguish(planted, planted.null(), battery, tau)
    need = 2 * (res.l1_error / 2 - tau) - 5e-3
    return [
        _upper("battery_max_gap", max(rep.gaps[:-1]), 5e-3),
        _lower("hypothesis_gap_margin", rep.gaps[-1] - need, 0.0),
    ]


def learner_checks(seed) -> list[CheckResult]:
    base = hard.LabeledHardDistribution(hard.FunctionLabel(np.sign, (0.0,)), 0.5)
    opt = hard.opt_sigma(base, 0.5)
    dist = sq.plant(base, 2, seed=[seed, 15])
    rng = hard.make_rng([seed, 16])
    train = learner.Dataset(*dist.sample(5000, rng))
    test = learner.Dataset(*dist.sample(5000, rng))
    cfg = learner.LearnerConfig(0.5, 0.1, 5, "direction", tuple(dist.v), 5000, 5000)
    res = learner.learn_smoothed(train, test, cfg, opt, seed)
    return [
        _upper("halfspace_opt_closed_form", abs(opt - math.atan(0.5) / math.pi), 1e-8),
        _upper("learner_gap", res.gap, 0.1),
    ]


def run_checks(seed: int = 0, samples: int = 200_000, grid_n: int = 200) -> list[CheckResult]:
    return (
        analytic_checks(seed, grid_n=grid_n)
        + lp_checks(seed)
        + approx_checks(grid_n)
        + hard_checks(seed, samples, grid_n)
        + sq_checks(seed, grid_n)
        + learner_checks(seed)
    )
