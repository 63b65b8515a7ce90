"""Dense bounded-variable revised simplex returning primal and dual solutions.

Problem form::

    minimize    c @ x
    subject to  A[i] @ x  (<= | = | >=)  b[i]
                lo <= x <= hi          (entries may be +-inf)

Every inequality row gets a slack, every row an artificial for phase 1, and
the basis inverse is kept explicitly with periodic refactorization.  Pricing
is Dantzig's rule; after a run of degenerate pivots the solver switches to
Bland's rule until the objective moves again.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

SENSES = ("<=", "=", ">=")


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class LpError(RuntimeError):
    """Raised by callers that require an optimal solve."""

    def __init__(self, status: LpStatus, message: str = ""):
        super().__init__(f"{status.value}: {message}" if message else status.value)
        self.status = status


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray
    senses: tuple[str, ...]
    bounds: np.ndarray  # shape (n, 2)

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        A = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        b = np.asarray(self.rhs, dtype=float).ravel()
        if A.size == 0:
            A = A.reshape(0, c.size)
        senses = tuple(self.senses)
        bounds = self.bounds
        if bounds is None:
            bounds = np.tile([0.0, np.inf], (c.size, 1))
        bounds = np.array(bounds, dtype=float).reshape(-1, 2)
        if c.size == 0:
            raise ValueError("need at least one variable")
        if A.shape != (b.size, c.size) or len(senses) != b.size or bounds.shape[0] != c.size:
            raise ValueError(
                f"inconsistent dimensions: A{A.shape}, b{b.shape}, c{c.shape}, "
                f"{len(senses)} senses, {bounds.shape[0]} bounds"
            )
        if any(s not in SENSES for s in senses):
            raise ValueError(f"row senses must be one of {SENSES}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("objective, matrix and rhs must be finite")
        if np.any(bounds[:, 0] > bounds[:, 1]) or np.any(bounds[:, 0] == np.inf) or np.any(bounds[:, 1] == -np.inf):
            raise ValueError("invalid variable bounds")
        for name, arr in (("objective", c), ("matrix", A), ("rhs", b), ("bounds", bounds)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "senses", senses)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray
    duals: np.ndarray
    objective: float
    reduced_costs: np.ndarray
    iterations: int = 0
    certificate: np.ndarray | None = None
    basis: np.ndarray | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-9
    optimality: float = 1e-9
    pivot: float = 1e-10
    max_iterations: int = 200_000
    refactor_every: int = 50
    degenerate_before_bland: int = 30


# ---------------------------------------------------------------------------


def _equilibrate(A: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Max-abs row then column scale factors.

    A column scale never shrinks a finite bound range below 1, otherwise the
    scaled bounds would sit inside the feasibility tolerance.
    """
    row = np.max(np.abs(A), axis=1) if A.shape[1] else np.ones(A.shape[0])
    row = np.where(row > 0, 1.0 / np.where(row > 0, row, 1.0), 1.0)
    As = A * row[:, None]
    col = np.max(np.abs(As), axis=0) if A.shape[0] else np.ones(A.shape[1])
    col = np.where(col > 0, 1.0 / np.where(col > 0, col, 1.0), 1.0)
    width = hi - lo
    col = np.where(np.isfinite(width) & (width > 0), np.minimum(col, width), col)
    return row, col


class _Simplex:
    """Working state of one solve over ``A x = b, lo <= x <= hi``."""

    def __init__(self, A, b, lo, hi, tol: Tolerances):
        self.A, self.b, self.lo, self.hi, self.tol = A, b, lo, hi, tol
        self.m, self.n = A.shape
        self.iterations = 0

    # -- basis bookkeeping -------------------------------------------------
    def refactor(self):
        B = self.A[:, self.basic]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise LpError(LpStatus.NUMERICAL_FAILURE, "singular basis")
        self.since_refactor = 0

    def recompute_basics(self):
        nonbasic_part = self.A @ np.where(self.is_basic, 0.0, self.x)
        rhs = self.b - nonbasic_part
        xb = np.linalg.solve(self.A[:, self.basic], rhs)
        self.x[self.basic] = xb

    def duals(self, c):
        return np.linalg.solve(self.A[:, self.basic].T, c[self.basic])

    # -- main loop ---------------------------------------------------------
    def run(self, c) -> str:
        tol = self.tol
        self.refactor()
        bland = False
        degenerate = 0
        last_obj = float(c @ self.x)
        while True:
            if self.iterations >= tol.max_iterations:
                return "limit"
            if self.since_refactor >= tol.refactor_every:
                self.refactor()
                self.recompute_basics()
            y = self.Binv.T @ c[self.basic]
            d = c - self.A.T @ y
            d[self.is_basic] = 0.0
            x = self.x
            movable = (~self.is_basic) & (self.hi > self.lo)
            at_hi = movable & self.upper
            at_lo = movable & ~self.upper & np.isfinite(self.lo)
            free = movable & ~self.upper & ~np.isfinite(self.lo)
            score = np.zeros(self.n)
            score[at_lo] = np.maximum(-d[at_lo], 0.0)
            score[at_hi] = np.maximum(np.maximum(d[at_hi], 0.0), score[at_hi])
            score[free] = np.abs(d[free])
            cand = np.flatnonzero(score > tol.optimality)
            if cand.size == 0:
                return "optimal"
            j = int(cand[0]) if bland else int(cand[np.argmax(score[cand])])
            direction = -1.0 if d[j] > 0 else 1.0
            alpha = self.Binv @ self.A[:, j]
            step, leave, leave_to_hi = self._ratio(alpha, direction, j, bland)
            if step is None:
                self.ray = (j, direction, alpha)
                return "unbounded"
            self.iterations += 1
            x[j] += direction * step
            xb = x[self.basic] - direction * step * alpha
            x[self.basic] = xb
            if leave is None:
                # bound flip
                self.upper[j] = direction > 0
                x[j] = self.hi[j] if self.upper[j] else self.lo[j]
            else:
                r = leave
                out = self.basic[r]
                x[out] = self.hi[out] if leave_to_hi else self.lo[out]
                self.upper[out] = leave_to_hi
                self.upper[j] = False
                self._pivot(r, j, alpha)
            obj = float(c @ x)
            if obj < last_obj - 1e-13 * (1.0 + abs(last_obj)):
                degenerate = 0
                bland = False
            else:
                degenerate += 1
                if degenerate >= tol.degenerate_before_bland:
                    bland = True
            last_obj = obj

    def _ratio(self, alpha, direction, j, bland):
        """Bounded ratio test (Harris two-pass unless in Bland mode)."""
        tol = self.tol
        basic = self.basic
        xb = self.x[basic]
        lo, hi = self.lo[basic], self.hi[basic]
        delta = direction * alpha  # basic i moves by -step * delta
        dec = delta > tol.pivot
        inc = delta < -tol.pivot
        own = self.hi[j] - self.lo[j]
        limits_relaxed = np.full(self.m, np.inf)
        limits = np.full(self.m, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            fl = dec & np.isfinite(lo)
            limits[fl] = np.maximum(xb[fl] - lo[fl], 0.0) / delta[fl]
            limits_relaxed[fl] = (xb[fl] - lo[fl] + tol.feasibility) / delta[fl]
            fh = inc & np.isfinite(hi)
            limits[fh] = np.maximum(hi[fh] - xb[fh], 0.0) / -delta[fh]
            limits_relaxed[fh] = (hi[fh] - xb[fh] + tol.feasibility) / -delta[fh]
        if not np.isfinite(limits).any():
            if np.isfinite(own):
                return own, None, False
            return None, None, False
        if bland:
            best = np.min(limits)
            ties = np.flatnonzero(limits <= best + 1e-15)
            r = int(ties[np.argmin(basic[ties])])
        else:
            bound = max(np.min(limits_relaxed), np.min(limits))
            ok = np.flatnonzero(limits <= bound)
            r = int(ok[np.argmax(np.abs(delta[ok]))])
        step = limits[r]
        if np.isfinite(own) and own <= step:
            return own, None, False
        return step, r, bool(delta[r] < 0)

    def _pivot(self, r, j, alpha):
        out = self.basic[r]
        self.is_basic[out] = False
        self.is_basic[j] = True
        self.basic[r] = j
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.since_refactor += 1


def solve(lp: LinearProgram, tol: Tolerances | None = None, start=None) -> LpSolution:
    """Solve ``lp``; the returned duals are row multipliers ``y`` with
    ``c - A.T @ y`` the reduced costs.

    ``start`` optionally gives each variable's initial bound side (+1 upper,
    -1 lower, 0 default) for boxed variables; a good guess cuts the pivot
    count without affecting the optimum.
    """
    tol = tol or Tolerances()
    m, n = lp.shape
    row_s, col_s = _equilibrate(lp.matrix, lp.bounds[:, 0], lp.bounds[:, 1]) if m else (np.ones(0), np.ones(n))
    cscale = np.max(np.abs(lp.objective))
    cscale = 1.0 / cscale if cscale > 0 else 1.0
    A = lp.matrix * row_s[:, None] * col_s[None, :]
    b = lp.rhs * row_s
    c = lp.objective * col_s * cscale
    lo = lp.bounds[:, 0] / col_s
    hi = lp.bounds[:, 1] / col_s

    # slacks: A x + s = b with s >= 0 (<=), s <= 0 (>=), s == 0 (=)
    s_lo = np.array([0.0 if s == "<=" else (-np.inf if s == ">=" else 0.0) for s in lp.senses])
    s_hi = np.array([np.inf if s == "<=" else 0.0 for s in lp.senses])
    x0 = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    # start at the cost-favoured bound when both are finite
    both = np.isfinite(lo) & np.isfinite(hi)
    x0 = np.where(both & (c < 0), hi, x0)
    if start is not None:
        start = np.asarray(start)
        if start.shape != (n,):
            raise ValueError("start must have one entry per variable")
        x0 = np.where(both & (start > 0), hi, np.where(both & (start < 0), lo, x0))
    resid = b - A @ x0
    use_slack = ((resid >= s_lo) & (resid <= s_hi)) & np.array([s != "=" for s in lp.senses], dtype=bool)
    sign = np.where(resid >= 0, 1.0, -1.0)
    full_A = np.hstack([A, np.eye(m), np.diag(sign)]) if m else A
    full_lo = np.concatenate([lo, s_lo, np.zeros(m)])
    full_hi = np.concatenate([hi, s_hi, np.where(use_slack, 0.0, np.inf)])
    N = n + 2 * m
    x = np.concatenate([x0, np.where(use_slack, resid, 0.0), np.where(use_slack, 0.0, np.abs(resid))])
    basic = np.array([n + i if use_slack[i] else n + m + i for i in range(m)], dtype=int)

    if m == 0:
        return _solve_unconstrained(lp)

    sx = _Simplex(full_A, b, full_lo, full_hi, tol)
    sx.x = x
    sx.basic = basic
    sx.is_basic = np.zeros(N, dtype=bool)
    sx.is_basic[basic] = True
    # nonbasic variables resting on a finite upper bound (including >= slacks at 0)
    sx.upper = ~sx.is_basic & np.isfinite(full_hi) & (x == full_hi) & (full_hi > full_lo)

    # phase 1
    c1 = np.zeros(N)
    c1[n + m:] = np.where(use_slack, 0.0, 1.0)
    try:
        state = sx.run(c1)
        if state == "limit":
            return _failure(lp, sx.iterations, "iteration limit in phase 1")
        sx.refactor()
        sx.recompute_basics()
        infeas = float(np.sum(sx.x[n + m:]))
        if infeas > tol.feasibility * 10 * (1.0 + np.max(np.abs(b), initial=0.0)):
            y1 = sx.duals(c1)
            return LpSolution(
                LpStatus.INFEASIBLE, np.full(n, np.nan), np.full(m, np.nan), np.nan,
                np.full(n, np.nan), sx.iterations, certificate=y1 * row_s,
            )
        # artificials are pinned to zero for phase 2
        sx.hi[n + m:] = 0.0
        sx.x[n + m:] = np.where(sx.is_basic[n + m:], sx.x[n + m:], 0.0)
        c2 = np.concatenate([c, np.zeros(2 * m)])
        state = sx.run(c2)
        if state == "limit":
            return _failure(lp, sx.iterations, "iteration limit in phase 2")
        if state == "unbounded":
            j, direction, alpha = sx.ray
            ray = np.zeros(N)
            ray[j] = direction
            ray[sx.basic] = -direction * alpha
            return LpSolution(
                LpStatus.UNBOUNDED, np.full(n, np.nan), np.full(m, np.nan), -np.inf,
                np.full(n, np.nan), sx.iterations, certificate=ray[:n] * col_s,
            )
        sx.refactor()
        sx.recompute_basics()
        y = sx.duals(c2)
    except LpError as exc:
        return _failure(lp, sx.iterations, str(exc))
    except np.linalg.LinAlgError as exc:
        return _failure(lp, sx.iterations, f"linear algebra failure: {exc}")

    xs = np.clip(sx.x[:n], lo, hi) * col_s
    duals = y * row_s / cscale
    reduced = lp.objective - lp.matrix.T @ duals
    return LpSolution(
        LpStatus.OPTIMAL, xs, duals, float(lp.objective @ xs), reduced,
        sx.iterations, basis=sx.basic.copy(),
    )


def _solve_unconstrained(lp):
    c = lp.objective
    lo, hi = lp.bounds[:, 0], lp.bounds[:, 1]
    x = np.where(c > 0, lo, np.where(c < 0, hi, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
    if not np.all(np.isfinite(x)):
        ray = np.where(np.isfinite(x), 0.0, -np.sign(c))
        return LpSolution(LpStatus.UNBOUNDED, np.full(c.size, np.nan), np.zeros(0), -np.inf,
                          np.full(c.size, np.nan), 0, certificate=ray)
    return LpSolution(LpStatus.OPTIMAL, x, np.zeros(0), float(c @ x), c.copy(), 0)


def _failure(lp, iterations, message):
    log.warning("simplex failure: %s", message)
    m, n = lp.shape
    return LpSolution(LpStatus.NUMERICAL_FAILURE, np.full(n, np.nan), np.full(m, np.nan),
                      np.nan, np.full(n, np.nan), iterations)


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    complementarity: float
    gap: float  # relative objective gap
    dual_objective: float


def certify(lp: LinearProgram, sol: LpSolution) -> Residuals:
    """Primal/dual feasibility, complementary slackness and duality gap."""
    A, b, c = lp.matrix, lp.rhs, lp.objective
    lo, hi = lp.bounds[:, 0], lp.bounds[:, 1]
    x, y = sol.x, sol.duals
    ax = A @ x
    senses = np.array(lp.senses)
    viol = np.zeros(b.size)
    viol[senses == "<="] = np.maximum(ax - b, 0.0)[senses == "<="]
    viol[senses == ">="] = np.maximum(b - ax, 0.0)[senses == ">="]
    viol[senses == "="] = np.abs(ax - b)[senses == "="]
    primal = max(float(np.max(viol, initial=0.0)),
                 float(np.max(np.maximum(lo - x, 0.0))), float(np.max(np.maximum(x - hi, 0.0))))
    d = c - A.T @ y
    dual_viol = np.concatenate([
        np.maximum(y[senses == "<="], 0.0), np.maximum(-y[senses == ">="], 0.0),
        np.where(np.isfinite(lo), 0.0, np.maximum(d, 0.0)),
        np.where(np.isfinite(hi), 0.0, np.maximum(-d, 0.0)),
    ])
    dual = float(np.max(dual_viol, initial=0.0))
    dpos, dneg = np.maximum(d, 0.0), np.minimum(d, 0.0)
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    dual_obj = float(b @ y + dpos @ lo_f + dneg @ hi_f)
    comp = max(
        float(np.max(np.abs(y * (ax - b)), initial=0.0)),
        float(np.max(np.abs(dpos * np.where(np.isfinite(lo), x - lo, 0.0)), initial=0.0)),
        float(np.max(np.abs(dneg * np.where(np.isfinite(hi), hi - x, 0.0)), initial=0.0)),
    )
    gap = abs(sol.objective - dual_obj) / (1.0 + abs(sol.objective))
    return Residuals(primal, dual, comp, gap, dual_obj)


# ---------------------------------------------------------------------------
# plain-text dump format, one instance per file


def dump_lp(lp: LinearProgram, path) -> None:
    m, n = lp.shape
    lines = ["smoothsq-lp 1", f"rows {m} cols {n}", "objective", " ".join(repr(float(v)) for v in lp.objective), "bounds"]
    lines += [f"{lo!r} {hi!r}" for lo, hi in lp.bounds.tolist()]
    lines.append("rows")
    for sense, rhs, row in zip(lp.senses, lp.rhs.tolist(), lp.matrix.tolist()):
        lines.append(" ".join([sense, repr(rhs)] + [repr(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_lp(path) -> LinearProgram:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines[0].strip() != "smoothsq-lp 1":
        raise ValueError("not an LP dump")
    _, m, _, n = lines[1].split()
    m, n = int(m), int(n)
    c = np.array([float(v) for v in lines[3].split()])
    bounds = np.array([[float(v) for v in ln.split()] for ln in lines[5:5 + n]]).reshape(n, 2)
    senses, rhs, rows = [], [], []
    for ln in lines[6 + n:6 + n + m]:
        parts = ln.split()
        senses.append(parts[0])
        rhs.append(float(parts[1]))
        rows.append([float(v) for v in parts[2:]])
    return LinearProgram(c, np.array(rows).reshape(m, n), np.array(rhs), tuple(senses), bounds)


def make_lp(c, A=None, b=None, senses: Sequence[str] | None = None, bounds=None) -> LinearProgram:
    """Convenience constructor; ``bounds`` defaults to ``x >= 0``."""
    c = np.asarray(c, dtype=float).ravel()
    A = np.zeros((0, c.size)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    senses = tuple(senses) if senses is not None else ("<=",) * b.size
    return LinearProgram(c, A, b, senses, bounds)
