"""L1 polynomial regression learner with OPT_sigma-relative evaluation.

Features are products of normalized Hermite polynomials over the
coordinates (the monomial span, better conditioned), or powers of a single
known projection ``v . x``.  Training is one weighted-L1 LP; the fitted
polynomial is turned into a classifier by an empirical threshold.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpcore
from .approx import weighted_l1_fit
from .gaussian import hermite_matrix

log = logging.getLogger(__name__)

RUN_COLUMNS = ("d", "m", "sigma", "epsilon", "n_train", "n_test", "test_error", "opt_sigma", "gap", "seed")


@dataclass(eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y lengths differ")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite coordinates")

    def __len__(self):
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]


def default_degree(sigma: float, epsilon: float) -> int:
    """``ceil(4 log(2/eps) / sigma^2)``."""
    return int(math.ceil(4.0 * math.log(2.0 / epsilon) / sigma ** 2))


@dataclass(frozen=True)
class LearnerConfig:
    sigma: float = 0.5
    epsilon: float = 0.1
    degree: int | None = None
    features: str = "full"
    direction: tuple | None = None
    n_train: int = 100_000
    n_test: int = 100_000
    max_features: int = 10_000

    def __post_init__(self):
        if self.features not in ("full", "direction"):
            raise ValueError(f"unknown feature policy {self.features!r}")
        if self.features == "direction" and self.direction is None:
            raise ValueError("direction policy needs a direction")
        if self.degree is not None and self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if not (self.sigma > 0 and 0 < self.epsilon < 1):
            raise ValueError("need sigma > 0 and 0 < epsilon < 1")

    @property
    def m(self) -> int:
        return self.degree if self.degree is not None else default_degree(self.sigma, self.epsilon)


# ---------------------------------------------------------------------------
# features


def multi_indices(d: int, m: int) -> list[tuple[int, ...]]:
    """All ``alpha`` in ``N^d`` with ``|alpha| <= m``, graded order."""
    out = []
    for total in range(m + 1):
        for cut in itertools.combinations(range(total + d - 1), d - 1):
            parts, prev = [], -1
            for c in cut + (total + d - 1,):
                parts.append(c - prev - 1)
                prev = c
            out.append(tuple(parts))
    return out


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Hermite-product features of degree ``<= m`` in ``x`` or in ``x . direction``."""

    d: int
    m: int
    direction: np.ndarray | None = None

    @property
    def indices(self) -> list[tuple[int, ...]]:
        if self.direction is not None:
            return [(j,) for j in range(self.m + 1)]
        return multi_indices(self.d, self.m)

    @property
    def size(self) -> int:
        if self.direction is not None:
            return self.m + 1
        return math.comb(self.d + self.m, self.m)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.direction is not None:
            return hermite_matrix(self.m, x @ self.direction)
        per_coord = [hermite_matrix(self.m, x[:, i]) for i in range(self.d)]
        cols = []
        for alpha in self.indices:
            col = np.ones(x.shape[0])
            for i, a in enumerate(alpha):
                if a:
                    col = col * per_coord[i][:, a]
            cols.append(col)
        return np.column_stack(cols)


def feature_map(d: int, m: int, cfg: LearnerConfig) -> FeatureMap:
    if cfg.features == "direction":
        v = np.asarray(cfg.direction, dtype=float)
        if v.shape != (d,):
            raise ValueError("direction has the wrong dimension")
        return FeatureMap(d, m, v / np.linalg.norm(v))
    fm = FeatureMap(d, m)
    if fm.size > cfg.max_features:
        raise ValueError(f"{fm.size} features at d={d}, m={m} exceed the cap of {cfg.max_features}")
    return fm


@dataclass(eq=False)
class FittedPolynomial:
    features: FeatureMap
    coeffs: np.ndarray
    objective: float
    iterations: int

    @property
    def degree(self) -> int:
        return self.features.m

    def __call__(self, x) -> np.ndarray:
        return self.features(x) @ self.coeffs


@dataclass(eq=False)
class Hypothesis:
    poly: FittedPolynomial
    threshold: float

    def predict(self, x) -> np.ndarray:
        return np.where(self.poly(x) > self.threshold, 1.0, -1.0)

    def error(self, data: Dataset) -> float:
        return float(np.mean(self.predict(data.x) != data.y))


# ---------------------------------------------------------------------------
# training


def _irls_start(Phi: np.ndarray, y: np.ndarray, iters: int = 40) -> np.ndarray:
    """Approximate L1 fit by reweighted least squares, used to warm-start the LP."""
    c = np.linalg.lstsq(Phi, y, rcond=None)[0]
    for _ in range(iters):
        r = np.abs(y - Phi @ c)
        sw = 1.0 / np.sqrt(np.maximum(r, 1e-6))
        c = np.linalg.lstsq(Phi * sw[:, None], y * sw, rcond=None)[0]
    return c


def _orthonormal_basis(Phi: np.ndarray):
    """``Q, T`` with ``Phi @ T = Q`` and ``Q.T @ Q = n I``; ``None`` if rank-deficient."""
    n, k = Phi.shape
    norms = np.linalg.norm(Phi, axis=0)
    if np.any(norms == 0):
        return None
    Q, R = np.linalg.qr(Phi / norms)
    diag = np.abs(np.diag(R))
    if diag.min() <= diag.max() * max(n, k) * np.finfo(float).eps:
        return None
    T = np.linalg.solve(R, np.eye(k)) / norms[:, None] * math.sqrt(n)
    return Q * math.sqrt(n), T


def l1_poly_regression(data: Dataset, cfg: LearnerConfig) -> FittedPolynomial:
    """Minimize ``(1/n) sum_i |p(x_i) - y_i|`` over the configured features.

    The LP runs on an empirically orthonormalized copy of the features (same
    span).  The exact minimizer comes from the lp-core witness program; an
    iteratively reweighted least-squares estimate only seeds the simplex
    with bound sides.  Numerically rank-deficient feature matrices lower the
    degree with a warning.
    """
    m = cfg.m
    while True:
        fm = feature_map(data.d, m, cfg)
        basis = _orthonormal_basis(fm(data.x))
        if basis is not None:
            break
        if m == 0:
            raise ValueError("empty feature matrix")
        warnings.warn(f"feature matrix rank-deficient at degree {m}; lowering degree", stacklevel=2)
        m -= 1
    Q, T = basis
    n = len(data)
    start = np.sign(data.y - Q @ _irls_start(Q, data.y))
    w = np.full(n, 1.0 / n)
    fit = weighted_l1_fit(Q, data.y, w, tie_break=False, tol=lpcore.Tolerances(), start=start)
    if fit.status is not lpcore.LpStatus.OPTIMAL:
        raise lpcore.LpError(fit.status, f"L1 regression LP at degree {m}")
    return FittedPolynomial(fm, T @ fit.coeffs, fit.objective, fit.iterations)


def best_threshold(p: FittedPolynomial, data: Dataset) -> Hypothesis:
    """Threshold minimizing empirical error of ``sign(p(x) - t)``.

    Candidates are midpoints between consecutive distinct values of ``p``
    plus one point below and one above the range; ties go to the smallest
    ``|t|``.
    """
    vals = p(data.x)
    t, _ = _threshold_scan(vals, data.y)
    return Hypothesis(p, t)


def _threshold_scan(vals: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    order = np.argsort(vals, kind="stable")
    v, yy = vals[order], y[order]
    distinct, first = np.unique(v, return_index=True)
    # errors when predicting +1 strictly above the cut placed before group i
    pos_before = np.concatenate([[0], np.cumsum(yy > 0)])[first]
    neg_after = np.concatenate([np.cumsum((yy < 0)[::-1])[::-1], [0]])[first]
    errs = np.concatenate([pos_before + neg_after, [int(np.sum(yy > 0))]])
    span = max(1.0, float(distinct[-1] - distinct[0]))
    cuts = np.concatenate([[distinct[0] - span], 0.5 * (distinct[:-1] + distinct[1:]), [distinct[-1] + span]])
    best = errs.min()
    cand = np.flatnonzero(errs == best)
    i = cand[np.argmin(np.abs(cuts[cand]))]
    return float(cuts[i]), int(best)


@dataclass
class LearnResult:
    hypothesis: Hypothesis
    test_error: float
    opt_sigma: float
    train_objective: float
    row: dict

    @property
    def gap(self) -> float:
        return self.test_error - self.opt_sigma


def learn_smoothed(train: Dataset, test: Dataset, cfg: LearnerConfig, opt_sigma: float, seed: int = 0) -> LearnResult:
    """Regression, threshold, evaluation; ``opt_sigma`` comes from the known generator."""
    if train.x is test.x:
        raise ValueError("test set must be disjoint from the training set")
    poly = l1_poly_regression(train, cfg)
    hyp = best_threshold(poly, train)
    err = hyp.error(test)
    row = {
        "d": train.d,
        "m": poly.degree,
        "sigma": cfg.sigma,
        "epsilon": cfg.epsilon,
        "n_train": len(train),
        "n_test": len(test),
        "test_error": err,
        "opt_sigma": opt_sigma,
        "gap": err - opt_sigma,
        "seed": seed,
    }
    return LearnResult(hyp, err, opt_sigma, poly.objective, row)
