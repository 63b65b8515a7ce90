"""STAT-oracle simulation for the planted hidden-direction construction.

The planted law puts a labeled one-dimensional distribution ``(X, Y)`` along
a hidden unit vector ``v`` in ``R^d`` and fills the orthogonal complement
with standard Gaussian noise; the null law is ``N_d`` with an independent
fair-coin label.  Both have exactly Gaussian ``x``-marginals.

Queries that depend on ``x`` only through one projection ``w . x`` have
exact expectations: with ``c = w . v`` and ``s = sqrt(1 - c^2)`` the
planted value is ``E[g(X) (E_Z f(cX + sZ))]``, a one-dimensional integral
against the label function ``g``.
"""
from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre

from .approx import hermite_to_monomial
from .gaussian import HermiteExpansion, normal_cdf, normal_pdf
from .hard import LabeledHardDistribution, make_rng

log = logging.getLogger(__name__)

DEFAULT_TAU = 1e-3
DEFAULT_BUDGET = 10_000


@dataclass(eq=False)
class PlantedDistribution:
    d: int
    v: np.ndarray
    base: LabeledHardDistribution
    planted: bool = True

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        rng = make_rng(rng)
        z = rng.standard_normal((n, self.d))
        if not self.planted:
            return z, np.where(rng.random(n) < 0.5, 1.0, -1.0)
        X, Y = self.base.sample(n, rng)
        x = z - np.outer(z @ self.v, self.v) + np.outer(X, self.v)
        return x, Y

    def null(self) -> PlantedDistribution:
        return PlantedDistribution(self.d, self.v, self.base, planted=False)


def plant(base: LabeledHardDistribution, d: int, seed=0) -> PlantedDistribution:
    """Hide ``base`` along a direction drawn uniformly from the sphere."""
    if d < 1:
        raise ValueError("dimension must be positive")
    rng = make_rng(seed)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    return PlantedDistribution(d, v, base, planted=True)


# ---------------------------------------------------------------------------
# one-dimensional profiles f with computable E_Z f(mu + s Z)


class NotExact(Exception):
    pass


@dataclass(frozen=True, eq=False)
class StepProfile:
    """``f(u) = signs[i]`` on the ``i``-th interval cut out by ``breaks``."""

    breaks: np.ndarray
    signs: np.ndarray

    def __call__(self, u):
        return self.signs[np.searchsorted(self.breaks, u, side="right")]

    def smoothed_mean(self, mu: np.ndarray, s: float) -> np.ndarray:
        if s == 0:
            return self(mu)
        edges = np.concatenate([[-np.inf], self.breaks, [np.inf]])
        cdf = normal_cdf((edges[None, :] - mu[:, None]) / s)
        return np.diff(cdf, axis=1) @ self.signs

    def gaussian_mean(self) -> float:
        return float(self.smoothed_mean(np.zeros(1), 1.0)[0])

    @property
    def kinks(self) -> np.ndarray:
        return self.breaks


@dataclass(frozen=True, eq=False)
class SmoothThresholdProfile:
    """``f(u) = T_sigma sign(u - t)``."""

    t: float
    sigma: float

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.sigma == 0:
            return np.where(u >= self.t, 1.0, -1.0)
        return 2.0 * normal_cdf((u - self.t) / self.sigma) - 1.0

    def smoothed_mean(self, mu: np.ndarray, s: float) -> np.ndarray:
        width = math.hypot(self.sigma, s)
        if width == 0:
            return self(mu)
        return 2.0 * normal_cdf((mu - self.t) / width) - 1.0

    def gaussian_mean(self) -> float:
        return float(self.smoothed_mean(np.zeros(1), 1.0)[0])

    @property
    def kinks(self) -> np.ndarray:
        return np.array([self.t])


def _lebesgue_rule(lo: float, hi: float, kinks, width: float, order: int = 16):
    """Composite Gauss-Legendre rule for ``dx`` on ``[lo, hi]`` respecting kinks."""
    pts = np.unique(np.concatenate([[lo, hi], [k for k in kinks if lo < k < hi]]))
    xg, wg = legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        panels = max(1, int(math.ceil((b - a) / width)))
        e = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(e)
        mid = 0.5 * (e[:-1] + e[1:])
        nodes.append((mid[:, None] + half[:, None] * xg).ravel())
        weights.append((half[:, None] * wg).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True, eq=False)
class PolyProfile:
    """``f(u) = clamp(P(u), -1, 1)`` with ``P`` in normalized Hermite coefficients."""

    coeffs: np.ndarray
    min_width: float = 0.05

    def raw(self, u):
        return HermiteExpansion(np.asarray(self.coeffs, dtype=float))(np.asarray(u, dtype=float))

    def __call__(self, u):
        return np.clip(self.raw(u), -1.0, 1.0)

    @property
    def kinks(self) -> np.ndarray:
        mono = hermite_to_monomial(self.coeffs)
        out = []
        for level in (-1.0, 1.0):
            c = mono.copy()
            c[0] -= level
            c = np.trim_zeros(c, "b")
            if c.size > 1:
                r = np.roots(c[::-1])
                out.extend(r.real[np.abs(r.imag) < 1e-9 * (1 + np.abs(r.real))])
        return np.unique(np.array(out, dtype=float))

    def smoothed_mean(self, mu: np.ndarray, s: float, chunk: int = 2048) -> np.ndarray:
        if s == 0:
            return self(mu)
        if s < self.min_width:
            raise NotExact("inner Gaussian too narrow for the product rule")
        lo, hi = float(mu.min() - 12 * s), float(mu.max() + 12 * s)
        u, wu = _lebesgue_rule(lo, hi, self.kinks, min(0.25, s / 2))
        fu = self(u) * wu
        out = np.empty(mu.size)
        for i in range(0, mu.size, chunk):
            m = mu[i:i + chunk]
            out[i:i + chunk] = normal_pdf((u[None, :] - m[:, None]) / s) @ fu / s
        return out

    def gaussian_mean(self) -> float:
        return float(self.smoothed_mean(np.zeros(1), 1.0)[0])


# ---------------------------------------------------------------------------
# queries


@dataclass(frozen=True, eq=False)
class ProjectionQuery:
    """``q(x, y) = y f(w . x)`` (or ``f(w . x)`` when ``labeled`` is false)."""

    w: np.ndarray
    profile: object
    labeled: bool = True
    name: str = ""

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        vals = np.clip(self.profile(x @ self.w), -1.0, 1.0)
        return y * vals if self.labeled else vals


@dataclass(frozen=True, eq=False)
class CallableQuery:
    """Arbitrary bounded query; answered by sampling only."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, x, y):
        return np.clip(np.asarray(self.func(x, y), dtype=float), -1.0, 1.0)


def constant_query(d: int, value: float = 1.0) -> ProjectionQuery:
    return ProjectionQuery(np.zeros(d), StepProfile(np.zeros(0), np.array([float(value)])), False, f"const:{value}")


def exact_expectation(dist: PlantedDistribution, q) -> float:
    """Exact ``E[q]`` for projection queries; raises :class:`NotExact` otherwise."""
    if not isinstance(q, ProjectionQuery):
        raise NotExact("query outside the projection grammar")
    norm = float(np.linalg.norm(q.w))
    if norm == 0:
        f0 = float(q.profile(np.zeros(1))[0])
        if not q.labeled:
            return f0
        return f0 * dist.base.correlation(np.ones_like) if dist.planted else 0.0
    if not math.isclose(norm, 1.0, rel_tol=1e-9):
        raise NotExact("query direction is not a unit vector")
    if not q.labeled:
        return q.profile.gaussian_mean()
    if not dist.planted:
        return 0.0
    c = float(np.clip(q.w @ dist.v, -1.0, 1.0))
    s = math.sqrt(max(0.0, 1.0 - c * c))
    extra = [k / c for k in q.profile.kinks if abs(c) > 1e-12 and abs(k / c) < 20] if s < 0.05 else []
    grid = dist.base.quadrature(extra).trimmed(1e-30)
    inner = q.profile.smoothed_mean(c * grid.nodes, s)
    return float(np.dot(grid.weights, dist.base.label(grid.nodes) * inner))


# ---------------------------------------------------------------------------
# the oracle


class QueryRefused(RuntimeError):
    """Raised when the oracle's query budget is spent."""


def hoeffding_samples(tau: float, failure: float = 1e-6) -> int:
    """Samples so that a [-1, 1] average is tau-accurate with prob. ``1 - failure``."""
    return int(math.ceil(2.0 * math.log(2.0 / failure) / tau ** 2))


class StatOracle:
    """STAT(tau) oracle over a planted or null distribution.

    ``mode="sampled"`` averages ``hoeffding_samples(tau)`` fresh draws.
    ``mode="exact"`` computes the expectation and moves it by at most tau
    toward ``reference``'s value (the null law by default); queries without
    an exact formula fall back to sampling.
    """

    def __init__(
        self,
        dist: PlantedDistribution,
        tau: float = DEFAULT_TAU,
        mode: str = "sampled",
        budget: int = DEFAULT_BUDGET,
        seed=0,
        failure: float = 1e-6,
        reference: PlantedDistribution | None = None,
        samples: int | None = None,
        chunk: int = 200_000,
    ):
        if mode not in ("sampled", "exact"):
            raise ValueError(f"unknown oracle mode {mode!r}")
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        self.dist = dist
        self.tau = tau
        self.mode = mode
        self.budget = budget
        self.samples = samples if samples is not None else hoeffding_samples(tau, failure)
        self.reference = reference if reference is not None else (dist.null() if dist.planted else None)
        self.chunk = chunk
        self.used = 0
        self.fallbacks = 0
        self._rng = make_rng(seed)
        self._lock = threading.Lock()

    def _charge(self):
        with self._lock:
            if self.used >= self.budget:
                raise QueryRefused(f"query budget of {self.budget} exhausted")
            self.used += 1

    def sample_mean(self, q, n: int | None = None) -> float:
        n = self.samples if n is None else n
        total = 0.0
        with self._lock:
            for lo in range(0, n, self.chunk):
                b = min(self.chunk, n - lo)
                x, y = self.dist.sample(b, self._rng)
                total += float(np.sum(np.clip(q(x, y), -1.0, 1.0)))
        return total / n

    def answer(self, q) -> float:
        self._charge()
        if self.mode == "exact":
            try:
                value = exact_expectation(self.dist, q)
            except NotExact as exc:
                log.debug("sampling fallback: %s", exc)
                self.fallbacks += 1
                return self.sample_mean(q)
            target = exact_expectation(self.reference, q) if self.reference is not None else value
            return float(np.clip(value + np.clip(target - value, -self.tau, self.tau), -1.0, 1.0))
        return self.sample_mean(q)


def stat_query(oracle: StatOracle, q) -> float:
    return oracle.answer(q)


# ---------------------------------------------------------------------------
# batteries and the distinguishing experiment


def random_directions(d: int, count: int, seed=0, avoid: np.ndarray | None = None, max_overlap: float = 0.9):
    """Unit vectors from a seeded stream; those with ``|w . avoid| > max_overlap`` are redrawn."""
    rng = make_rng(seed)
    out = []
    while len(out) < count:
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        if avoid is not None and abs(w @ avoid) > max_overlap:
            continue
        out.append(w)
    return out


def low_degree_battery(d: int, m: int, directions: int = 16, seed=0, avoid=None, max_overlap: float = 0.9):
    """Queries ``y clamp(h_j(w . x))`` for ``j = 1..m`` over random directions."""
    battery = []
    for i, w in enumerate(random_directions(d, directions, seed, avoid, max_overlap)):
        for j in range(1, m + 1):
            e = np.zeros(j + 1)
            e[j] = 1.0
            battery.append(ProjectionQuery(w, PolyProfile(e), True, f"dir{i}:h{j}"))
    return battery


def threshold_query(w: np.ndarray, t: float = 0.0, sigma: float = 0.0, name: str = "threshold") -> ProjectionQuery:
    """``y T_sigma sign(w . x - t)``; ``sigma = 0`` gives the hard threshold."""
    return ProjectionQuery(np.asarray(w, dtype=float), SmoothThresholdProfile(t, sigma), True, name)


@dataclass
class DistinguishReport:
    d: int
    m: int | None
    sigma: float
    tau: float
    gaps: list[float]
    names: list[str]
    planted_values: list[float]
    null_values: list[float]
    samples: int
    exact: list[bool] = field(default_factory=list)

    @property
    def battery_size(self) -> int:
        return len(self.gaps)

    @property
    def argmax_query_id(self) -> int:
        return int(np.argmax(self.gaps)) if self.gaps else -1

    @property
    def max_gap(self) -> float:
        return float(max(self.gaps)) if self.gaps else 0.0

    def distinguishes(self) -> bool:
        """Whether some tau-tolerant answers are forced apart."""
        return self.max_gap > 2 * self.tau

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "sigma": self.sigma,
            "tau": self.tau,
            "battery_size": self.battery_size,
            "max_gap": self.max_gap,
            "argmax_query_id": self.argmax_query_id,
            "samples": self.samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def rows(self) -> list[dict]:
        return [
            {"query_id": i, "name": n, "planted": p, "null": q, "gap": g, "exact": e}
            for i, (n, p, q, g, e) in enumerate(
                zip(self.names, self.planted_values, self.null_values, self.gaps, self.exact)
            )
        ]


def distinguish(
    planted: PlantedDistribution,
    null: PlantedDistribution,
    battery: Sequence,
    tau: float = DEFAULT_TAU,
    seed=0,
    samples: int | None = None,
    failure: float = 1e-6,
) -> DistinguishReport:
    """Per-query gaps ``|E_planted q - E_null q|``.

    Projection queries are evaluated exactly.  Others are sampled with
    enough draws for precision ``tau / 4`` (Hoeffding, ``failure`` per
    query) unless ``samples`` overrides it; ``samples`` in the report is the
    per-law sample count used (0 when everything was exact).
    """
    n = samples if samples is not None else hoeffding_samples(tau / 4, failure)
    rng = make_rng(seed)
    gaps, names, pv, nv, exact = [], [], [], [], []
    used = 0
    for i, q in enumerate(battery):
        try:
            a, b = exact_expectation(planted, q), exact_expectation(null, q)
            ok = True
        except NotExact:
            a = StatOracle(planted, tau, "sampled", budget=1, seed=rng, samples=n).answer(q)
            b = StatOracle(null, tau, "sampled", budget=1, seed=rng, samples=n).answer(q)
            ok, used = False, n
        gaps.append(abs(a - b))
        names.append(getattr(q, "name", "") or f"q{i}")
        pv.append(a)
        nv.append(b)
        exact.append(ok)
    return DistinguishReport(planted.d, planted.base.degree, planted.base.sigma, tau, gaps, names, pv, nv, used, exact)
