"""Best L1/L2 polynomial approximation under the Gaussian, with dual witnesses.

The L1 problem on a quadrature grid,

    min_p  sum_i w_i |F(x_i) - p(x_i)|      (deg p <= m),

is solved through its LP dual, the *witness* program

    max_g  sum_i w_i g_i F(x_i)   s.t.  |g_i| <= 1,  sum_i w_i g_i h_j(x_i) = 0 (j <= m).

The optimal ``g`` is the moment-matching witness (bounded, orthogonal to
low-degree polynomials, correlated with ``F``); the optimal ``p`` is read
from the row multipliers.  Strong duality makes the two objectives agree.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e
from scipy.optimize import nnls

from . import lp as lpcore
from .gaussian import (
    HermiteExpansion,
    QuadratureGrid,
    SmoothedThreshold,
    gauss_hermite_grid,
    hermite_matrix,
    line_rule,
    sign_hermite_coeffs,
    smoothed_sign_expansion,
    smoothing_correspondence,
)

log = logging.getLogger(__name__)

MIN_NODE_WEIGHT = 1e-300
# tight pricing: a misplaced saturated node costs 2 w_i |F - p| in the gap
LP_TOLERANCES = lpcore.Tolerances(optimality=1e-13)


def approximation_grid(n: int = 200) -> QuadratureGrid:
    """Gauss-Hermite grid with numerically invisible tail nodes removed."""
    return gauss_hermite_grid(n).trimmed(MIN_NODE_WEIGHT)


def hermite_to_monomial(coeffs) -> np.ndarray:
    """Convert normalized-Hermite coefficients to monomial ones (low order first)."""
    coeffs = np.asarray(coeffs, dtype=float)
    scale = np.array([1.0 / math.sqrt(math.factorial(k)) for k in range(coeffs.size)])
    return hermite_e.herme2poly(coeffs * scale)


@dataclass(eq=False)
class ApproxResult:
    degree: int
    hermite: np.ndarray
    l1_error: float
    dual_objective: float
    witness: np.ndarray
    grid: QuadratureGrid
    target: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def monomial(self) -> np.ndarray:
        return hermite_to_monomial(self.hermite)

    @property
    def polynomial(self) -> HermiteExpansion:
        return HermiteExpansion(self.hermite)

    def __call__(self, x):
        return self.polynomial(x)

    def witness_residuals(self) -> dict:
        """Grid-level violations of the three witness conditions."""
        w, g = self.grid.weights, self.witness
        H = hermite_matrix(self.degree, self.grid.nodes)
        return {
            "bound": float(np.max(np.abs(g)) - 1.0),
            "orthogonality": float(np.max(np.abs((w * g) @ H))),
            "duality_gap": float(abs(np.dot(w * g, self.target) - self.l1_error)),
        }


def _min_norm_optimal(H, F, g, slack=1e-7):
    """Minimum-L2 coefficient vector among the optimal polynomials.

    Complementary slackness pins every optimal ``p`` to ``p = F`` where the
    witness is strictly inside (-1, 1) and to the side ``sign(F - p) = g``
    where it is saturated.  This is a least-distance problem, solved with
    the Lawson-Hanson NNLS reduction.  Returns ``None`` when it fails.
    """
    inner = np.abs(g) < 1.0 - slack
    up = (g >= 1.0 - slack) & ~inner
    down = (g <= -1.0 + slack) & ~inner
    # rows of  G c >= h
    G = np.vstack([-H[up], H[down], H[inner], -H[inner]])
    h = np.concatenate([-F[up], F[down], F[inner], -F[inner]])
    norms = np.linalg.norm(G, axis=1)
    norms[norms == 0] = 1.0
    G, h = G / norms[:, None], h / norms
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    try:
        u, _ = nnls(E, f, maxiter=50 * E.shape[1])
    except RuntimeError:
        return None
    r = E @ u - f
    if abs(r[-1]) < 1e-12:
        return None
    return -r[:-1] / r[-1]


@dataclass(eq=False)
class L1Fit:
    status: lpcore.LpStatus
    coeffs: np.ndarray
    objective: float
    dual_objective: float
    witness: np.ndarray
    iterations: int


def weighted_l1_fit(
    H: np.ndarray,
    F: np.ndarray,
    w: np.ndarray,
    tie_break: bool = True,
    tol: lpcore.Tolerances = LP_TOLERANCES,
    start: np.ndarray | None = None,
) -> L1Fit:
    """Minimize ``sum_i w_i |F_i - (H c)_i|`` over ``c`` via the witness LP.

    ``start`` optionally seeds each witness entry's bound side, e.g. the
    residual signs of an approximate fit.
    """
    n, k = H.shape
    prog = lpcore.LinearProgram(
        objective=-w * F,
        matrix=(H * w[:, None]).T,
        rhs=np.zeros(k),
        senses=("=",) * k,
        bounds=np.tile([-1.0, 1.0], (n, 1)),
    )
    sol = lpcore.solve(prog, tol, start=start)
    if not sol.optimal:
        return L1Fit(sol.status, np.zeros(k), math.nan, math.nan, np.zeros(n), sol.iterations)
    g = sol.x
    coeffs = -sol.duals

    def l1(c):
        return float(np.dot(w, np.abs(F - H @ c)))

    err = l1(coeffs)
    if tie_break:
        alt = _min_norm_optimal(H, F, g)
        if alt is not None:
            alt_err = l1(alt)
            if alt_err <= err + 1e-12 * (1.0 + err) and np.linalg.norm(alt) <= np.linalg.norm(coeffs):
                coeffs, err = alt, alt_err
    return L1Fit(sol.status, coeffs, err, float(np.dot(w * g, F)), g, sol.iterations)


def l1_best_approx(
    F: Callable[[np.ndarray], np.ndarray],
    m: int,
    grid: QuadratureGrid | None = None,
    tie_break: bool = True,
) -> ApproxResult:
    """Best degree-``m`` L1 approximation of ``F`` on ``grid`` plus its witness."""
    if m < 0:
        raise ValueError("degree must be nonnegative")
    grid = grid if grid is not None else approximation_grid()
    if 2 * len(grid) - 1 < 2 * m + 2:
        raise ValueError(f"grid with {len(grid)} nodes is too coarse for degree {m}")
    x, w = grid.nodes, grid.weights
    Fv = np.asarray(F(x), dtype=float)
    H = hermite_matrix(m, x)
    fit = weighted_l1_fit(H, Fv, w, tie_break=tie_break)
    if fit.status is not lpcore.LpStatus.OPTIMAL:
        raise lpcore.LpError(fit.status, f"L1 approximation LP at degree {m}")
    return ApproxResult(m, fit.coeffs, fit.objective, fit.dual_objective, fit.witness, grid, Fv, fit.iterations)


def l2_truncate(e: HermiteExpansion, m: int) -> tuple[HermiteExpansion, float]:
    """Degree-``m`` part of ``e`` and the L2 norm of the discarded tail."""
    head = e.truncate(m)
    tail = e.coeffs[m + 1:]
    return head, float(np.sqrt(np.dot(tail, tail)))


def default_expansion_degree(m: int, sigma: float, cap: int = 20000) -> int:
    if sigma <= 0:
        return cap
    return int(min(cap, m + math.ceil(200.0 / sigma**2)))


def smoothed_sign_truncation(sigma: float, m: int, M: int | None = None) -> tuple[HermiteExpansion, float]:
    """``l2_truncate`` applied to the exact expansion of ``T_sigma sign``."""
    M = default_expansion_degree(m, sigma) if M is None else M
    return l2_truncate(smoothed_sign_expansion(sigma, M), m)


def hermite_certificate(F, p, k: int, grid: QuadratureGrid | None = None) -> float:
    """Quadrature estimate of ``E[h_k(G) (F - p)(G)]``.

    For ``F = U_a sign`` and odd ``k > deg p`` this equals ``a^k c_k`` with
    ``c_k`` the ``k``-th Hermite coefficient of ``sign``, whatever ``p`` is.
    """
    grid = grid if grid is not None else line_rule([0.0])
    x = grid.nodes
    pv = p(x) if callable(p) else HermiteExpansion(p)(x)
    hk = hermite_matrix(k, x)[:, k]
    return float(np.dot(grid.weights, hk * (np.asarray(F(x), dtype=float) - pv)))


def sign_certificate_value(sigma: float, k: int) -> float:
    """Closed form ``a^k c_k`` for ``F = T_sigma sign``."""
    return float(smoothing_correspondence(sigma) ** k * sign_hermite_coeffs(k)[k])


# ---------------------------------------------------------------------------
# degree sweeps


@dataclass
class CurvePoint:
    m: int
    l1_error: float
    l2_error: float
    certificate_k: int
    certificate_value: float
    result: ApproxResult | None = field(default=None, repr=False)


@dataclass
class DegreeCurve:
    sigma: float
    function: str
    points: list[CurvePoint]

    @property
    def degrees(self) -> np.ndarray:
        return np.array([p.m for p in self.points])

    @property
    def errors(self) -> np.ndarray:
        return np.array([p.l1_error for p in self.points])

    def is_nonincreasing(self, slack: float = 1e-12) -> bool:
        e = self.errors[np.isfinite(self.errors)]
        return bool(np.all(np.diff(e) <= slack))

    def rows(self) -> list[dict]:
        return [
            {
                "sigma": self.sigma,
                "m": p.m,
                "l1_error": p.l1_error,
                "l2_error": p.l2_error,
                "certificate_k": p.certificate_k,
                "certificate_value": p.certificate_value,
            }
            for p in self.points
        ]


def smoothed(f, sigma: float):
    """``T_sigma f`` as a callable.

    Threshold functions (``"sign"`` or a :class:`SmoothedThreshold` with
    ``sigma=0``) use the closed form; other callables are convolved with a
    400-node Gauss-Hermite rule.
    """
    if isinstance(f, str):
        if f != "sign":
            raise ValueError(f"unknown base function {f!r}")
        return SmoothedThreshold(0.0, sigma)
    if isinstance(f, SmoothedThreshold):
        return SmoothedThreshold(f.t, math.hypot(f.sigma, sigma))
    if sigma == 0:
        return f
    z = gauss_hermite_grid(400).trimmed(MIN_NODE_WEIGHT)

    def conv(x):
        x = np.asarray(x, dtype=float)
        return (f(x[..., None] + sigma * z.nodes) * z.weights).sum(axis=-1)

    return conv


def next_odd_above(m: int) -> int:
    return m + 1 if m % 2 == 0 else m + 2


def degree_sweep(
    f="sign",
    sigma: float = 1.0,
    m_max: int = 20,
    grid: QuadratureGrid | None = None,
    threads: int = 1,
    keep_results: bool = True,
) -> DegreeCurve:
    """Run :func:`l1_best_approx` for ``m = 0..m_max`` on ``T_sigma f``."""
    grid = grid if grid is not None else approximation_grid()
    if 2 * len(grid) - 1 < 2 * m_max + 2:
        raise ValueError("m_max exceeds grid capacity")
    F = smoothed(f, sigma)
    name = f if isinstance(f, str) else getattr(f, "__name__", type(f).__name__)
    is_sign = isinstance(f, str)
    cert_grid = line_rule([0.0])

    def one(m):
        try:
            res = l1_best_approx(F, m, grid)
        except lpcore.LpError as exc:
            log.warning("degree %d: %s", m, exc)
            return CurvePoint(m, math.nan, math.nan, next_odd_above(m), math.nan)
        k = next_odd_above(m)
        if is_sign:
            l2 = smoothed_sign_truncation(sigma, m)[1] if sigma > 0 else _sign_tail(m)
        else:
            l2 = math.nan
        cert = hermite_certificate(F, res.polynomial, k, cert_grid)
        return CurvePoint(m, res.l1_error, l2, k, cert, res if keep_results else None)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            points = list(pool.map(one, range(m_max + 1)))
    else:
        points = [one(m) for m in range(m_max + 1)]
    return DegreeCurve(float(sigma), name, points)


def _sign_tail(m: int) -> float:
    c = sign_hermite_coeffs(m)
    return float(np.sqrt(max(1.0 - np.dot(c, c), 0.0)))


@dataclass(frozen=True)
class SandwichRow:
    """Lower bounds on ``||F - p||_1`` from one odd Hermite certificate.

    ``holder``: ``|cert|^3 / ||u||_4^2`` with ``u = F - p`` (Cauchy-Schwarz,
    then Holder between L1 and L4).  ``hypercontractive``: the same with
    ``||u||_4`` replaced by ``1 + 3^{m/2} 2^{3m/2} ||p||_1``.
    """

    m: int
    k: int
    certificate: float
    u_l1: float
    u_l2: float
    u_l4: float
    p_l1: float

    @property
    def holder(self) -> float:
        return abs(self.certificate) ** 3 / self.u_l4**2

    @property
    def hypercontractive(self) -> float:
        factor = 1.0 + 3 ** (self.m / 2) * 2 ** (1.5 * self.m) * self.p_l1
        return abs(self.certificate) ** 3 / factor**2


def certificate_sandwich(F, result: ApproxResult, k: int | None = None, grid: QuadratureGrid | None = None) -> SandwichRow:
    """Evaluate the certificate chain for a fitted polynomial on a fine line rule."""
    k = next_odd_above(result.degree) if k is None else k
    grid = grid if grid is not None else line_rule([0.0], panel_width=0.02)
    x, w = grid.nodes, grid.weights
    p = result.polynomial(x)
    u = np.asarray(F(x), dtype=float) - p
    cert = float(np.dot(w, hermite_matrix(k, x)[:, k] * u))
    return SandwichRow(
        result.degree, k, cert,
        float(w @ np.abs(u)), float(np.sqrt(w @ u**2)), float((w @ u**4) ** 0.25), float(w @ np.abs(p)),
    )
