"""Moment-matching hard distributions.

Two constructions live here:

* the lattice-concentrated sampler ``X = (X_1 + ... + X_N) / sqrt(N)``,
  ``N = C k``, whose first ``k`` moments are Gaussian while almost all of its
  mass sits where ``frac(x sqrt(N))`` lies in a target set ``S``;
* the labeled distribution ``(X, Y)`` with ``X ~ N(0, 1)`` and
  ``E[Y | X = x] = g(x)`` for a moment-matching witness ``g`` coming out of
  :func:`smoothsq.approx.l1_best_approx`.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .approx import ApproxResult
from .gaussian import (
    SmoothedThreshold,
    hermite_matrix,
    hermite_segment_integrals,
    line_rule,
    normal_cdf,
    normal_pdf,
)

log = logging.getLogger(__name__)


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; one stream per sampler instance."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# G = alpha U[0,1] + (1 - alpha) E


@dataclass(frozen=True)
class GaussianMixtureSplit:
    alpha: float

    def residual_density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= 1)
        return (normal_pdf(x) - self.alpha * inside) / (1.0 - self.alpha)

    def sample_residual(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Rejection sampler: keep ``G`` with probability ``1 - alpha 1[0,1](G)/phi(G)``."""
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            g = rng.standard_normal(int(need / (1.0 - self.alpha) * 1.02) + 64)
            inside = (g >= 0) & (g <= 1)
            keep = ~inside
            if inside.any():
                gi = g[inside]
                keep[inside] = rng.random(gi.size) >= self.alpha / normal_pdf(gi)
            acc = g[keep][:need]
            out[filled:filled + acc.size] = acc
            filled += acc.size
        return out

    def sample_mixture(self, rng: np.random.Generator, size: int) -> np.ndarray:
        y = rng.random(size) < self.alpha
        out = np.empty(size)
        out[y] = rng.random(int(y.sum()))
        out[~y] = self.sample_residual(rng, int((~y).sum()))
        return out


def split_gaussian() -> GaussianMixtureSplit:
    """``alpha = min_{[0,1]} phi = phi(1)``."""
    return GaussianMixtureSplit(float(normal_pdf(1.0)))


# ---------------------------------------------------------------------------
# sampler configuration


def _normalize_intervals(S) -> tuple[tuple[float, float], ...]:
    if isinstance(S, tuple) and len(S) == 2 and all(isinstance(v, (int, float)) for v in S):
        S = [S]
    ivs = sorted((float(a), float(b)) for a, b in S)
    merged: list[list[float]] = []
    for a, b in ivs:
        if not (0.0 <= a <= b <= 1.0):
            raise ValueError(f"interval [{a}, {b}] is not inside [0, 1]")
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return tuple((a, b) for a, b in merged if b > a)


@dataclass(frozen=True)
class HardSamplerConfig:
    k: int
    C: int = 20
    S: tuple[tuple[float, float], ...] = ((0.5, 1.0),)
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.C < 1:
            raise ValueError("k and C must be positive")
        S = _normalize_intervals(self.S)
        object.__setattr__(self, "S", S)
        if self.measure <= 0:
            raise ValueError("S must have positive measure")
        tail = self.shortfall_probability
        if tail > 2.0 ** -self.k:
            raise ValueError(
                f"C={self.C} too small: P[Bin({self.summands}, alpha) <= {self.k}] = {tail:.3g} > 2^-{self.k}"
            )

    @property
    def summands(self) -> int:
        return self.C * self.k

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.S))

    @property
    def shortfall_probability(self) -> float:
        """``P[sum y_i <= k]``: probability the conditioning step is skipped."""
        return float(stats.binom.cdf(self.k, self.summands, split_gaussian().alpha))

    def contains(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        hit = np.zeros(u.shape, dtype=bool)
        for a, b in self.S:
            hit |= (u >= a) & (u <= b)
        return hit

    def sample_S(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lengths = np.array([b - a for a, b in self.S])
        starts = np.array([a for a, _ in self.S])
        pick = rng.choice(lengths.size, size=size, p=lengths / lengths.sum()) if lengths.size > 1 else np.zeros(size, dtype=int)
        return starts[pick] + lengths[pick] * rng.random(size)


# ---------------------------------------------------------------------------
# sampling


def sample_hard_summands(cfg: HardSamplerConfig, rng, size: int):
    """Literal per-coordinate sampler.

    Returns ``(X_i matrix (size, N), y matrix, triggered flags)``; the draw is
    ``X_i.sum(axis=1) / sqrt(N)``.  Meant for testing the joint law of the
    summands; :func:`sample_hard` is the production path.
    """
    rng = make_rng(rng)
    split = split_gaussian()
    N = cfg.summands
    y = rng.random((size, N)) < split.alpha
    X = np.empty((size, N))
    X[y] = rng.random(int(y.sum()))
    X[~y] = split.sample_residual(rng, int((~y).sum()))
    triggered = y.sum(axis=1) >= cfg.k + 1
    rows = np.flatnonzero(triggered)
    if rows.size:
        u = cfg.sample_S(rng, rows.size)
        # one uniformly chosen coordinate with y = 1 absorbs the conditioning
        counts = y[rows].sum(axis=1)
        pick = (rng.random(rows.size) * counts).astype(int)
        order = np.cumsum(y[rows], axis=1) - 1
        j = np.argmax((order == pick[:, None]) & y[rows], axis=1)
        rest = X[rows].sum(axis=1) - X[rows, j]
        X[rows, j] = np.mod(u - rest, 1.0)
    return X, y, triggered


def kwise_uniformity(X: np.ndarray, y: np.ndarray, triggered: np.ndarray, k: int, bins: int = 4):
    """Chi-square test that the first ``k`` uniform-part summands are jointly uniform.

    Uses the triggered runs of :func:`sample_hard_summands`; positions are
    picked from ``y`` alone, never from the values.  Returns scipy's
    ``(statistic, pvalue)`` over ``bins**k`` cells.
    """
    rows = np.flatnonzero(triggered)
    sel = np.argsort(~y[rows], axis=1, kind="stable")[:, :k]
    U = np.take_along_axis(X[rows], sel, axis=1)
    cells = np.minimum((U * bins).astype(int), bins - 1) @ (bins ** np.arange(k - 1, -1, -1))
    counts = np.bincount(cells, minlength=bins ** k)
    return stats.chisquare(counts)


def sample_hard(cfg: HardSamplerConfig, rng=None, size: int = 1, chunk: int = 100_000) -> np.ndarray:
    """Draws of the moment-matching variable ``X``.

    Only the sum of the summands matters, so each draw needs the sum of its
    residual-part coordinates, the sum of all but one uniform coordinate
    (``rest``) and a target ``u`` from ``S``; the adjusted coordinate
    ``(u - rest) mod 1`` brings the total to ``u - floor(u - rest)``.
    """
    rng = make_rng(cfg.seed if rng is None else rng)
    split = split_gaussian()
    N = cfg.summands
    out = np.empty(size)
    for lo in range(0, size, chunk):
        B = min(chunk, size - lo)
        K = rng.binomial(N, split.alpha, size=B)
        triggered = K >= cfg.k + 1
        n_res = N - K
        n_uni = K - triggered.astype(int)
        res_pool = split.sample_residual(rng, int(n_res.sum()))
        uni_pool = rng.random(int(n_uni.sum()))
        total = _segment_sums(res_pool, n_res) + _segment_sums(uni_pool, n_uni)
        if triggered.any():
            u = cfg.sample_S(rng, int(triggered.sum()))
            rest = total[triggered]
            total[triggered] = u - np.floor(u - rest)
        out[lo:lo + B] = total / math.sqrt(N)
    return out


def _segment_sums(pool: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    ends = np.cumsum(lengths)
    cs = np.concatenate([[0.0], np.cumsum(pool)])
    return cs[ends] - cs[ends - lengths]


# ---------------------------------------------------------------------------
# diagnostics


def gaussian_moment(j: int) -> float:
    """``E[G^j]`` for a standard Gaussian."""
    return 0.0 if j % 2 else float(math.prod(range(j - 1, 0, -2))) if j else 1.0


@dataclass
class MomentRow:
    order: int
    empirical: float
    target: float
    z: float


def moment_check(samples: np.ndarray, orders: Sequence[int]) -> list[MomentRow]:
    """Empirical raw moments versus Gaussian ones, with z-scores.

    The standard error uses the Gaussian variance of ``G^j``; it is the
    null-hypothesis scale.
    """
    n = samples.size
    rows = []
    for j in orders:
        emp = float(np.mean(samples ** j))
        target = gaussian_moment(j)
        se = math.sqrt((gaussian_moment(2 * j) - target ** 2) / n)
        rows.append(MomentRow(j, emp, target, (emp - target) / se))
    return rows


@dataclass
class FractionalMass:
    fraction: float
    bound: float
    standard_error: float

    @property
    def passes(self) -> bool:
        return self.fraction >= self.bound - 3.0 * self.standard_error


def fractional_mass(cfg: HardSamplerConfig, samples: np.ndarray) -> FractionalMass:
    """Fraction of draws with ``frac(x sqrt(Ck))`` in ``S`` against ``1 - 2^-k``."""
    frac = np.mod(samples * math.sqrt(cfg.summands), 1.0)
    p = float(np.mean(cfg.contains(frac)))
    se = math.sqrt(max(p * (1.0 - p), 1e-300) / samples.size)
    return FractionalMass(p, 1.0 - 2.0 ** -cfg.k, se)


@dataclass
class DensityRatioReport:
    edges: np.ndarray
    ratios: np.ndarray
    errors: np.ndarray
    excluded: int
    limit: float

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    def worst_excess(self, n_se: float = 3.0) -> float:
        """Largest ``ratio - limit - n_se * error`` over bins (<= 0 means pass)."""
        return float(np.max(self.ratios - self.limit - n_se * self.errors))


def density_ratio_bound(
    cfg: HardSamplerConfig,
    samples: np.ndarray,
    bins: int = 200,
    span: float = 5.0,
    min_expected: float = 1000.0,
) -> DensityRatioReport:
    """Histogram estimate of ``density(X) / phi`` per bin.

    Bins whose Gaussian expected count falls below ``min_expected`` are
    dropped with a warning.  Bin widths are far above the lattice spacing
    ``1/sqrt(Ck)`` only when ``bins`` is small; the default resolves it
    for ``Ck <= 1600``.
    """
    if samples.size < 100_000:
        raise ValueError("density ratio needs at least 1e5 samples")
    edges = np.linspace(-span, span, bins + 1)
    counts, _ = np.histogram(samples, edges)
    probs = np.diff(normal_cdf(edges))
    expected = probs * samples.size
    keep = expected >= min_expected
    excluded = int((~keep).sum())
    if excluded:
        warnings.warn(f"{excluded} under-filled bins excluded from density ratio", stacklevel=2)
    ratio = counts[keep] / expected[keep]
    err = np.sqrt(np.maximum(counts[keep], 1.0)) / expected[keep]
    return DensityRatioReport(edges, ratio, err, excluded, 1.0 / cfg.measure)


# ---------------------------------------------------------------------------
# witnesses and the labeled distribution


@dataclass(frozen=True, eq=False)
class StepWitness:
    """``g = signs[i]`` on the ``i``-th interval cut out by ``breaks``."""

    breaks: np.ndarray
    signs: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.signs[np.searchsorted(self.breaks, x, side="right")]

    @property
    def breakpoints(self) -> np.ndarray:
        return self.breaks

    def hermite_moments(self, m: int) -> np.ndarray:
        """Exact ``E[g(G) h_j(G)]`` for ``j = 0..m``."""
        edges = np.concatenate([[-np.inf], self.breaks, [np.inf]])
        seg = hermite_segment_integrals(edges[:-1], edges[1:], m)
        seg = np.atleast_2d(seg)
        return self.signs @ seg


@dataclass(frozen=True, eq=False)
class InterpolatedWitness:
    """Piecewise-linear interpolation of grid values, constant beyond the ends."""

    nodes: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.clip(np.interp(x, self.nodes, self.values), -1.0, 1.0)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.nodes[np.abs(self.nodes) < 20]

    def hermite_moments(self, m: int) -> np.ndarray:
        grid = line_rule(self.breakpoints, panel_width=0.1)
        return (grid.weights * self(grid.nodes)) @ hermite_matrix(m, grid.nodes)


@dataclass(frozen=True, eq=False)
class FunctionLabel:
    func: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple = ()

    def __call__(self, x):
        return np.clip(np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float), -1.0, 1.0)

    def hermite_moments(self, m: int) -> np.ndarray:
        grid = line_rule(self.breakpoints, panel_width=0.1)
        return (grid.weights * self(grid.nodes)) @ hermite_matrix(m, grid.nodes)


def _initial_switches(result: ApproxResult):
    x, g = result.grid.nodes, result.witness
    sgn = np.where(g >= 0, 1.0, -1.0)
    breaks = []
    for i in range(x.size - 1):
        if sgn[i] != sgn[i + 1]:
            # zero of the linear interpolant, kept strictly inside the cell
            t = g[i] / (g[i] - g[i + 1]) if g[i] != g[i + 1] else 0.5
            t = min(max(t, 1e-3), 1 - 1e-3)
            breaks.append(x[i] + t * (x[i + 1] - x[i]))
    return np.array(breaks), sgn[0]


def refine_witness(result: ApproxResult, tol: float = 1e-13, max_iter: int = 100) -> StepWitness:
    """Continuum witness: a +-1 step function orthogonal to degree <= m.

    Starts from the sign-change locations of the grid witness and solves the
    moment equations ``E[g h_j] = 0`` for the switch points by Gauss-Newton
    with exact segment integrals.  Raises ``RuntimeError`` on failure.
    """
    m = result.degree
    breaks, first = _initial_switches(result)
    if breaks.size == 0:
        raise RuntimeError("grid witness has no sign change")
    signs = first * (-1.0) ** np.arange(breaks.size + 1)
    jumps = signs[:-1] - signs[1:]

    def residual(b):
        return StepWitness(b, signs).hermite_moments(m)

    b = breaks.copy()
    res = residual(b)
    for _ in range(max_iter):
        if np.max(np.abs(res)) < tol:
            break
        J = (hermite_matrix(m, b) * (normal_pdf(b) * jumps)[:, None]).T
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            nb = b + lam * step
            if np.all(np.diff(nb) > 0):
                nres = residual(nb)
                if np.linalg.norm(nres) < np.linalg.norm(res):
                    b, res = nb, nres
                    break
            lam *= 0.5
        else:
            break
    if np.max(np.abs(res)) >= 1e-10:
        raise RuntimeError(f"witness refinement did not converge (residual {np.max(np.abs(res)):.2e})")
    return StepWitness(b, signs)


@dataclass(eq=False)
class LabeledHardDistribution:
    """``X ~ N(0,1)``, ``P[Y = 1 | X] = (1 + g(X)) / 2``."""

    label: object
    sigma: float = 0.0
    l1_error: float = math.nan
    degree: int | None = None
    clamped: int = 0
    diagnostics: dict = field(default_factory=dict)

    def conditional_mean(self, x):
        return self.label(x)

    @property
    def breakpoints(self):
        return tuple(np.asarray(getattr(self.label, "breakpoints", ()), dtype=float))

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        rng = make_rng(rng)
        X = rng.standard_normal(n)
        p = 0.5 * (1.0 + self.label(X))
        Y = np.where(rng.random(n) < p, 1.0, -1.0)
        return X, Y

    def quadrature(self, extra: Sequence[float] = ()):
        return line_rule(list(self.breakpoints) + list(extra), panel_width=0.1)

    def correlation(self, F, extra_breaks: Sequence[float] = ()) -> float:
        """``E[g(X) F(X)]`` by breakpoint-aware quadrature."""
        grid = self.quadrature(extra_breaks)
        return float(np.dot(grid.weights, self.label(grid.nodes) * F(grid.nodes)))

    def moment_defects(self, m: int) -> np.ndarray:
        return self.label.hermite_moments(m)

    @classmethod
    def independent(cls) -> LabeledHardDistribution:
        return cls(StepWitness(np.zeros(0), np.zeros(1)), l1_error=0.0)


def build_labeled(witness: ApproxResult | None, sigma: float = 0.0, mode: str = "refined") -> LabeledHardDistribution:
    """Labeled distribution whose conditional mean is the witness.

    ``mode="refined"`` uses :func:`refine_witness` (exact orthogonality in
    the continuum); ``mode="interpolate"`` interpolates the grid values
    piecewise-linearly, and the continuum orthogonality defect is recorded
    in ``diagnostics``.  A refinement failure falls back to interpolation.
    ``witness=None`` gives independent fair-coin labels.
    """
    if witness is None:
        return LabeledHardDistribution.independent()
    label = None
    diag: dict = {}
    if mode == "refined":
        try:
            label = refine_witness(witness)
        except RuntimeError as exc:
            log.warning("%s; falling back to interpolation", exc)
            diag["refine_error"] = str(exc)
    elif mode != "interpolate":
        raise ValueError(f"unknown witness mode {mode!r}")
    clamped = 0
    if label is None:
        clamped = int(np.sum(np.abs(witness.witness) > 1.0))
        label = InterpolatedWitness(witness.grid.nodes.copy(), np.clip(witness.witness, -1.0, 1.0))
    defects = label.hermite_moments(witness.degree)
    diag["orthogonality_defect"] = float(np.max(np.abs(defects)))
    dist = LabeledHardDistribution(label, sigma, witness.l1_error, witness.degree, clamped, diag)
    F = SmoothedThreshold(0.0, sigma)
    diag["correlation"] = dist.correlation(F, _steep_breaks(0.0, sigma))
    return dist


def _steep_breaks(t: float, sigma: float) -> list[float]:
    if sigma <= 0:
        return [t]
    return [t] + [t + s * sigma * f for s in (-1, 1) for f in (0.5, 1, 2, 4, 8)]


# ---------------------------------------------------------------------------
# OPT_sigma for one-dimensional thresholds


@dataclass
class ThresholdFit:
    value: float
    threshold: float
    orientation: int


def opt_sigma_detail(dist: LabeledHardDistribution, sigma: float, thresholds=None) -> ThresholdFit:
    """Minimize the smoothed error ``(1 - E[Y T_sigma sign_+-(X - t)]) / 2``.

    Both orientations and every ``t`` in ``thresholds`` (default: 801
    points on [-4, 4] plus the label's breakpoints) are tried.
    """
    if thresholds is None:
        thresholds = np.concatenate([np.linspace(-4, 4, 801), [b for b in dist.breakpoints if abs(b) <= 6]])
    best = ThresholdFit(0.5, 0.0, 1)
    base = dist.quadrature()
    gvals = dist.label(base.nodes)
    for t in np.unique(thresholds):
        F = SmoothedThreshold(float(t), sigma)
        if sigma > 0 and sigma < 0.05:
            corr = dist.correlation(F, _steep_breaks(float(t), sigma))
        else:
            corr = float(np.dot(base.weights, gvals * F(base.nodes)))
        err = 0.5 * (1.0 - abs(corr))
        if err < best.value - 1e-15:
            best = ThresholdFit(err, float(t), 1 if corr >= 0 else -1)
    return best


def opt_sigma(dist: LabeledHardDistribution, sigma: float, thresholds=None) -> float:
    return opt_sigma_detail(dist, sigma, thresholds).value


# ---------------------------------------------------------------------------
# threshold pair experiment


@dataclass
class ThresholdGapReport:
    k: int
    C: int
    sigma: float
    t: float
    t_prime: float
    samples: int
    seed: int
    gaussian_gap_exact: float
    gaussian_gap_mc: float
    gaussian_gap_se: float
    hard_gap: float
    hard_gap_se: float

    @property
    def ratio(self) -> float:
        return self.gaussian_gap_exact / self.hard_gap if self.hard_gap > 0 else math.inf

    @property
    def difference(self) -> float:
        return self.gaussian_gap_exact - self.hard_gap

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(ratio=self.ratio, difference=self.difference)
        return d


def smoothed_threshold_mean(t: float, sigma: float) -> float:
    """``E_{G ~ N}[T_sigma sign(G - t)] = 2 Phi(-t / sqrt(1 + sigma^2)) - 1``."""
    return float(2.0 * normal_cdf(-t / math.sqrt(1.0 + sigma * sigma)) - 1.0)


def threshold_gap_experiment(
    k: int,
    sigma: float,
    C: int = 20,
    samples: int = 10_000_000,
    seed: int = 0,
    S=((0.5, 1.0),),
    t: float = 0.0,
    t_prime: float | None = None,
    chunk: int = 100_000,
) -> ThresholdGapReport:
    """Compare ``E[g - g']`` under the hard ``X`` and under ``G ~ N``.

    ``g = T_sigma sign(. - t)``, ``g' = T_sigma sign(. - t')`` with
    ``t' = 1 / (2 sqrt(Ck))`` by default.
    """
    cfg = HardSamplerConfig(k, C, S, seed)
    if t_prime is None:
        t_prime = 1.0 / (2.0 * math.sqrt(cfg.summands))
    g, gp = SmoothedThreshold(t, sigma), SmoothedThreshold(t_prime, sigma)
    rng = make_rng(seed)
    hard_sum = hard_sq = gauss_sum = gauss_sq = 0.0
    for lo in range(0, samples, chunk):
        B = min(chunk, samples - lo)
        xs = sample_hard(cfg, rng, B, chunk=B)
        d = g(xs) - gp(xs)
        hard_sum += d.sum()
        hard_sq += np.dot(d, d)
        gs = rng.standard_normal(B)
        e = g(gs) - gp(gs)
        gauss_sum += e.sum()
        gauss_sq += np.dot(e, e)

    def mean_se(s, sq):
        mean = s / samples
        var = max(sq / samples - mean * mean, 0.0)
        return mean, math.sqrt(var / samples)

    hard_mean, hard_se = mean_se(hard_sum, hard_sq)
    g_mean, g_se = mean_se(gauss_sum, gauss_sq)
    exact = smoothed_threshold_mean(t, sigma) - smoothed_threshold_mean(t_prime, sigma)
    return ThresholdGapReport(k, C, sigma, t, t_prime, samples, seed, exact, g_mean, g_se, hard_mean, hard_se)
