"""Limited-memory BFGS with a strong Wolfe line search.

Written against callables returning ``(value, gradient)`` for a flat
parameter vector, which is what :func:`partlearn.objective.make_objective`
produces.  The solver is deterministic, records a per-iteration trace, and
never accepts a step that fails the strong Wolfe conditions, so traced
objective values are strictly decreasing.

Smoothed group penalties have curvature of order ``1/sqrt(eps)`` near
group boundaries; the line search therefore treats non-finite trial values
as "too far" and shrinks rather than aborting, and a failed search returns
the best iterate found with a :class:`LineSearchWarning` instead of
raising.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "OptimizerConfig",
    "IterationRecord",
    "OptimizationTrace",
    "LineSearchWarning",
    "minimize",
    "check_gradient",
]

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class LineSearchWarning(RuntimeWarning):
    """No step satisfying the strong Wolfe conditions could be found."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Solver knobs.

    ``grad_tol`` is tested against the infinity norm of the gradient;
    ``f_tol`` against the relative drop of the objective between accepted
    iterations.  ``c1`` and ``c2`` are the usual sufficient-decrease and
    curvature constants, ``0 < c1 < c2 < 1``.
    """

    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-5
    f_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9

    def __post_init__(self):
        if int(self.memory) < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.grad_tol > 0 and self.f_tol > 0):
            raise ValueError("grad_tol and f_tol must be positive")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    f: float
    grad_norm: float
    step: float
    n_evals: int


@dataclass
class OptimizationTrace:
    """Accepted iterates of one solve, plus why it stopped.

    ``records[0]`` describes the starting point (step 0).  ``termination``
    is one of ``"grad_tol"``, ``"f_tol"``, ``"max_iters"``,
    ``"line_search_failure"``.
    """

    records: list[IterationRecord] = field(default_factory=list)
    termination: str = ""

    @property
    def f_values(self) -> np.ndarray:
        return np.array([r.f for r in self.records])

    @property
    def n_iterations(self) -> int:
        return len(self.records) - 1

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def to_text(self) -> str:
        lines = [
            f"iter {r.iteration:4d}  f={r.f:.12e}  |g|inf={r.grad_norm:.3e}  "
            f"step={r.step:.3e}  evals={r.n_evals}"
            for r in self.records
        ]
        lines.append(f"termination: {self.termination}")
        return "\n".join(lines)


# ----------------------------------------------------------------------
# line search (bracket + zoom, strong Wolfe)


def _interpolate(lo, f_lo, d_lo, hi, f_hi):
    """Minimizer of the quadratic through (lo, f_lo, d_lo) and (hi, f_hi)."""
    denom = 2.0 * (f_hi - f_lo - d_lo * (hi - lo))
    if denom == 0 or not np.isfinite(denom):
        return None
    t = lo - d_lo * (hi - lo) ** 2 / denom
    return t if np.isfinite(t) else None


def _wolfe_search(phi, f0, dphi0, c1, c2, max_evals=30):
    """Find alpha satisfying strong Wolfe conditions for phi(alpha).

    `phi` returns ``(f, slope, payload)`` at a trial step; non-finite trial
    values must arrive as ``f = inf``.  Returns ``(alpha, f, payload)`` or
    None when no acceptable step exists within the budget.
    """
    evals = 0

    def zoom(lo, f_lo, d_lo, hi, f_hi):
        nonlocal evals
        while evals < max_evals:
            lo_, hi_ = min(lo, hi), max(lo, hi)
            if hi_ - lo_ <= 1e-16 * max(1.0, hi_):
                return None
            a = _interpolate(lo, f_lo, d_lo, hi, f_hi)
            margin = 0.1 * (hi_ - lo_)
            if a is None or not (lo_ + margin <= a <= hi_ - margin):
                a = 0.5 * (lo_ + hi_)
            f_a, d_a, payload = phi(a)
            evals += 1
            if f_a > f0 + c1 * a * dphi0 or f_a >= f_lo:
                hi, f_hi = a, f_a
            else:
                if abs(d_a) <= -c2 * dphi0:
                    return a, f_a, payload
                if d_a * (hi - lo) >= 0:
                    hi, f_hi = lo, f_lo
                lo, f_lo, d_lo = a, f_a, d_a
        return None

    alpha_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = 1.0
    for i in range(max_evals):
        f_a, d_a, payload = phi(alpha)
        evals += 1
        if f_a > f0 + c1 * alpha * dphi0 or (i > 0 and f_a >= f_prev):
            return zoom(alpha_prev, f_prev, d_prev, alpha, f_a)
        if abs(d_a) <= -c2 * dphi0:
            return alpha, f_a, payload
        if d_a >= 0:
            return zoom(alpha, f_a, d_a, alpha_prev, f_prev)
        alpha_prev, f_prev, d_prev = alpha, f_a, d_a
        alpha *= 2.0
        if alpha > 1e10:
            break
    return None


# ----------------------------------------------------------------------
# solver


def minimize(
    fun: Objective,
    w0,
    config: OptimizerConfig = OptimizerConfig(),
) -> tuple[np.ndarray, OptimizationTrace]:
    """Minimize `fun` from `w0`; returns the best iterate and its trace.

    Raises
    ------
    FloatingPointError
        If the objective or gradient is non-finite at the starting point.
    """
    x = np.array(w0, dtype=float).ravel()
    n_evals = 0

    def evaluate(w):
        nonlocal n_evals
        n_evals += 1
        f, g = fun(w)
        return float(f), np.asarray(g, dtype=float).ravel()

    f, g = evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the initial point")

    trace = OptimizationTrace()
    trace.records.append(
        IterationRecord(0, f, float(np.max(np.abs(g))), 0.0, n_evals)
    )

    s_hist: deque = deque(maxlen=int(config.memory))
    y_hist: deque = deque(maxlen=int(config.memory))
    rho_hist: deque = deque(maxlen=int(config.memory))

    def two_loop(grad):
        q = grad.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            y_last = y_hist[-1]
            q *= np.dot(s_hist[-1], y_last) / np.dot(y_last, y_last)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        return q

    termination = "max_iters"
    for k in range(1, int(config.max_iters) + 1):
        if float(np.max(np.abs(g))) <= config.grad_tol:
            termination = "grad_tol"
            break

        p = -two_loop(g)
        if np.dot(g, p) >= 0:
            # stale curvature made the direction unusable; restart from
            # steepest descent
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            p = -g

        def phi(alpha):
            fa, ga = evaluate(x + alpha * p)
            if not np.isfinite(fa) or not np.all(np.isfinite(ga)):
                return np.inf, np.nan, None
            return fa, float(np.dot(ga, p)), ga

        result = _wolfe_search(phi, f, float(np.dot(g, p)), config.c1, config.c2)
        if result is None:
            warnings.warn(
                "line search found no acceptable step; returning best iterate",
                LineSearchWarning,
            )
            termination = "line_search_failure"
            break

        alpha, f_new, g_new = result
        s = alpha * p
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)

        x = x + s
        f_old, f, g = f, f_new, g_new
        trace.records.append(
            IterationRecord(k, f, float(np.max(np.abs(g))), float(alpha), n_evals)
        )

        if float(np.max(np.abs(g))) <= config.grad_tol:
            termination = "grad_tol"
            break
        if abs(f_old - f) <= config.f_tol * max(1.0, abs(f_old)):
            termination = "f_tol"
            break

    trace.termination = termination
    return x, trace


# ----------------------------------------------------------------------
# derivative checking


def check_gradient(fun: Objective, w, step: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and central-difference
    gradients of `fun` at `w`.

    The per-coordinate error is ``|analytic - numeric| / max(1, |analytic|)``;
    the maximum over coordinates is returned.
    """
    w = np.array(w, dtype=float).ravel()
    _, g = fun(w)
    g = np.asarray(g, dtype=float).ravel()
    worst = 0.0
    for k in range(w.size):
        wp = w.copy(); wp[k] += step
        wm = w.copy(); wm[k] -= step
        num = (fun(wp)[0] - fun(wm)[0]) / (2.0 * step)
        err = abs(g[k] - num) / max(1.0, abs(g[k]))
        worst = max(worst, err)
    return worst
