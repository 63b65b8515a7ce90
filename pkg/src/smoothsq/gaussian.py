"""Hermite analysis under the standard Gaussian measure.

Everything here works with the *normalized probabilist's* Hermite polynomials
``h_k = He_k / sqrt(k!)``, which are orthonormal under N(0, 1).  Expectations
against the Gaussian are taken with a :class:`QuadratureGrid`, either a
Gauss-Hermite rule (exact for polynomials) or a piecewise Gauss-Legendre
"line rule" that splits at caller-supplied breakpoints (accurate for
piecewise-smooth integrands such as ``sign``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

ArrayFunc = Callable[[np.ndarray], np.ndarray]


class QuadratureError(RuntimeError):
    """Numerical breakdown while building a quadrature rule."""


def normal_pdf(x):
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def normal_cdf(x):
    # erfc keeps full relative accuracy in the lower tail
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / SQRT2)


# ---------------------------------------------------------------------------
# Hermite polynomials


def hermite_eval(k: int, x):
    """Evaluate ``h_k`` at ``x`` with the normalized three-term recurrence.

    ``sqrt(j+1) h_{j+1}(x) = x h_j(x) - sqrt(j) h_{j-1}(x)``; no factorials are
    formed, so large degrees do not overflow for moderate ``x``.
    """
    if k < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    for j in range(k):
        prev, cur = cur, (x * cur - np.sqrt(j) * prev) / np.sqrt(j + 1)
    return cur if cur.ndim else float(cur)


def hermite_matrix(m: int, x) -> np.ndarray:
    """Return the ``(len(x), m + 1)`` matrix with columns ``h_0(x) .. h_m(x)``."""
    x = np.asarray(x, dtype=float).ravel()
    out = np.empty((x.size, m + 1))
    out[:, 0] = 1.0
    if m >= 1:
        out[:, 1] = x
    for j in range(1, m):
        out[:, j + 1] = (x * out[:, j] - np.sqrt(j) * out[:, j - 1]) / np.sqrt(j + 1)
    return out


def hermite_segment_integrals(a, b, m: int) -> np.ndarray:
    """Closed-form ``int_a^b h_j(x) phi(x) dx`` for ``j = 0..m``.

    Uses ``(h_{j-1} phi)' = -sqrt(j) h_j phi``.  ``a``/``b`` may be infinite.
    Returns an array of shape ``(m + 1,)`` (or ``(len(a), m + 1)`` if vector).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = np.empty((a.size, m + 1))
    out[:, 0] = normal_cdf(b) - normal_cdf(a)
    if m >= 1:
        def edge(t):
            fin = np.isfinite(t)
            h = np.zeros((t.size, m))
            if fin.any():
                h[fin] = hermite_matrix(m - 1, t[fin]) * normal_pdf(t[fin])[:, None]
            return h

        ha, hb = edge(a), edge(b)
        out[:, 1:] = -(hb - ha) / np.sqrt(np.arange(1, m + 1))
    return out[0] if out.shape[0] == 1 else out


def sign_hermite_coeffs(m: int) -> np.ndarray:
    """Exact Hermite coefficients of ``sign`` up to degree ``m``.

    Odd ``k``: ``2 h_{k-1}(0) phi(0) / sqrt(k)``; even ``k``: 0.
    """
    coeffs = np.zeros(m + 1)
    if m >= 1:
        at0 = hermite_matrix(m - 1, [0.0])[0]
        k = np.arange(1, m + 1, 2)
        coeffs[k] = 2.0 * at0[k - 1] * INV_SQRT_2PI / np.sqrt(k)
    return coeffs


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Nodes and probability weights realizing ``E_{x~N(0,1)}[.]``."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size

    def expect(self, f) -> float:
        """Expectation of ``f`` (callable or values on the nodes)."""
        vals = f(self.nodes) if callable(f) else np.asarray(f, dtype=float)
        return float(np.dot(self.weights, vals))

    def trimmed(self, min_weight: float = 1e-300) -> QuadratureGrid:
        keep = self.weights >= min_weight
        return QuadratureGrid(self.nodes[keep], self.weights[keep])


def _scaled_hermite_pair(n: int, x: np.ndarray):
    """``h_{n-1}(x)`` and ``h_n(x)`` sharing a per-node scale, plus log of that scale."""
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    log_scale = np.zeros_like(x)
    for j in range(n):
        prev, cur = cur, (x * cur - np.sqrt(j) * prev) / np.sqrt(j + 1)
        big = np.maximum(np.abs(cur), np.abs(prev))
        rescale = big > 1e100
        if rescale.any():
            prev[rescale] /= big[rescale]
            cur[rescale] /= big[rescale]
            log_scale[rescale] += np.log(big[rescale])
    return prev, cur, log_scale


@lru_cache(maxsize=32)
def gauss_hermite_grid(n: int = 200) -> QuadratureGrid:
    """Golub-Welsch Gauss-Hermite rule for the standard Gaussian.

    Exact for polynomials of degree ``<= 2n - 1``.  Nodes come from the
    symmetric tridiagonal Jacobi matrix (off-diagonal ``sqrt(k)``), are
    polished by Newton steps on ``h_n``, and the weights use the
    Christoffel form ``1 / (n h_{n-1}(x)^2)`` evaluated in log space so
    tail weights keep their relative accuracy.
    """
    if n < 1:
        raise ValueError("need at least one node")
    if n == 1:
        return QuadratureGrid(np.zeros(1), np.ones(1))
    off = np.sqrt(np.arange(1, n, dtype=float))
    try:
        x = linalg.eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise QuadratureError(f"Jacobi eigen-solve failed for n={n}") from exc
    for _ in range(2):
        hm1, hn, _ = _scaled_hermite_pair(n, x)
        x = x - hn / (np.sqrt(n) * hm1)
    x = 0.5 * (x - x[::-1])  # exact symmetry
    hm1, _, log_scale = _scaled_hermite_pair(n, x)
    log_w = -np.log(n) - 2.0 * (np.log(np.abs(hm1)) + log_scale)
    log_w = 0.5 * (log_w + log_w[::-1])
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(x)):
        raise QuadratureError(f"non-finite Gauss-Hermite rule for n={n}")
    return QuadratureGrid(x, w)


@lru_cache(maxsize=8)
def _legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def line_rule(
    breakpoints: Sequence[float] = (),
    *,
    span: float = 20.0,
    panel_width: float = 0.25,
    order: int = 24,
) -> QuadratureGrid:
    """Piecewise Gauss-Legendre rule for the Gaussian on ``[-span, span]``.

    Panels never straddle a breakpoint, so integrands that are smooth between
    breakpoints (indicators, ``sign``, clamped polynomials with known kinks)
    are integrated to near machine precision.  The neglected tail mass is
    ``2 Phi(-span)`` (about 6e-89 at the default span), small enough for
    integrands growing like degree-60 polynomials.
    """
    cuts = [float(b) for b in breakpoints if -span < b < span]
    edges = np.unique(np.concatenate([[-span, span], cuts]))
    t, wt = _legendre(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(1, int(np.ceil((hi - lo) / panel_width)))
        sub = np.linspace(lo, hi, k + 1)
        half = 0.5 * np.diff(sub)[:, None]
        mid = 0.5 * (sub[:-1] + sub[1:])[:, None]
        xs = (mid + half * t).ravel()
        nodes.append(xs)
        weights.append((half * wt).ravel() * normal_pdf(xs))
    return QuadratureGrid(np.concatenate(nodes), np.concatenate(weights))


# ---------------------------------------------------------------------------
# expansions and operators


@dataclass(frozen=True, eq=False)
class HermiteExpansion:
    """Coefficients of ``sum_k coeffs[k] h_k``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def max_degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = hermite_matrix(self.max_degree, x) @ self.coeffs
        return vals.reshape(x.shape) if x.ndim else float(vals[0])

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def truncate(self, m: int) -> HermiteExpansion:
        return HermiteExpansion(self.coeffs[: m + 1])


def hermite_coeffs(f: ArrayFunc, m: int, grid: QuadratureGrid) -> HermiteExpansion:
    """Quadrature estimate of ``E[f(G) h_k(G)]`` for ``k = 0..m``."""
    vals = np.asarray(f(grid.nodes), dtype=float)
    basis = hermite_matrix(m, grid.nodes)
    return HermiteExpansion((grid.weights * vals) @ basis)


def ou_apply(e: HermiteExpansion, rho: float) -> HermiteExpansion:
    """Ornstein-Uhlenbeck operator ``U_rho``: scales ``h_k`` by ``rho**k``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    return HermiteExpansion(e.coeffs * rho ** np.arange(e.coeffs.size))


def smoothing_correspondence(sigma: float) -> float:
    """The OU parameter ``a = 1/sqrt(1 + sigma^2)`` with ``T_sigma f = U_a g``."""
    return 1.0 / np.sqrt(1.0 + sigma * sigma)


def smooth_apply(f: ArrayFunc, sigma: float, m: int, grid: QuadratureGrid | None = None) -> HermiteExpansion:
    """Hermite expansion (to degree ``m``) of ``T_sigma f``.

    ``T_sigma f = U_a g`` where ``g(x) = f(sqrt(1 + sigma^2) x)``.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    grid = grid if grid is not None else gauss_hermite_grid()
    if sigma == 0:
        return hermite_coeffs(f, m, grid)
    stretch = np.sqrt(1.0 + sigma * sigma)
    g = hermite_coeffs(lambda x: f(stretch * x), m, grid)
    return ou_apply(g, 1.0 / stretch)


def smoothed_sign_expansion(sigma: float, m: int) -> HermiteExpansion:
    """Exact expansion of ``T_sigma sign``: coefficients ``a^k c_k``."""
    return ou_apply(HermiteExpansion(sign_hermite_coeffs(m)), smoothing_correspondence(sigma))


@dataclass(frozen=True)
class SmoothedThreshold:
    """``x -> E_z[sign(x + sigma z - t)] = erf((x - t) / (sigma sqrt 2))``."""

    t: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.sigma == 0:
            out = np.sign(x - self.t)
        else:
            out = special.erf((x - self.t) / (self.sigma * SQRT2))
        return out if out.ndim else float(out)


def smoothed_threshold_eval(st: SmoothedThreshold, x):
    return st(x)


def lp_norm(f, r: float, grid: QuadratureGrid) -> float:
    """``(E|f(G)|^r)^(1/r)`` on the grid; ``f`` is callable or node values."""
    if r < 1:
        raise ValueError("norm order must be >= 1")
    vals = f(grid.nodes) if callable(f) else np.asarray(f, dtype=float)
    return float(np.dot(grid.weights, np.abs(vals) ** r) ** (1.0 / r))
