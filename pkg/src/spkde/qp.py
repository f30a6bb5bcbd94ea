"""Scaled and projected KDE as a quadratic program over the simplex.

The weights of the estimate nearest in L2 to ``beta`` times the classic KDE
solve ``min_{a in simplex} a'Ga - 2b'a`` with ``b = G 1 beta / n``, where ``G``
is the kernel Gram matrix.  Projected gradient descent with a fixed step
``1 / (2 lambda_max(G))`` and optional Nesterov momentum with
restarts is used.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import KernelSpec, WeightedDensityEstimate, gram_matrix
from .simplex import project_simplex

__all__ = [
    "NumericError",
    "QpProblem",
    "SolveReport",
    "build_qp",
    "solve_pgd",
    "fit_spkde",
    "fit_kde",
    "objective",
    "kkt_residual",
    "power_iteration",
    "objective_scale",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50_000
DEFAULT_STALL_TOL = 1e-13
# consecutive small relative decreases required to stop
_PATIENCE = 5
# allowed objective increase per step, relative to max(1, |objective|)
_MONOTONE_SLACK = 1e-12


class NumericError(ArithmeticError):
    """A numerical procedure failed (non-PSD curvature, no convergence, ...)."""


@dataclass(frozen=True)
class QpProblem:
    gram: np.ndarray
    linear: np.ndarray
    beta: float

    @property
    def n(self) -> int:
        return self.gram.shape[0]


@dataclass
class SolveReport:
    weights: np.ndarray
    objective_trace: list = field(repr=False)
    iterations: int
    converged: bool
    kkt_residual: float
    step_size: float = float("nan")
    stop_reason: str = ""

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self, include_trace: bool = False) -> dict:
        out = {
            "iterations": self.iterations,
            "converged": self.converged,
            "kkt_residual": self.kkt_residual,
            "objective": self.objective,
            "step_size": self.step_size,
            "stop_reason": self.stop_reason,
        }
        if include_trace:
            out["objective_trace"] = list(self.objective_trace)
        return out


def build_qp(points, spec: KernelSpec, beta: float) -> QpProblem:
    if not beta >= 1.0:
        raise ValueError(f"beta must be >= 1, got {beta!r}")
    g = gram_matrix(points, spec)
    n = g.shape[0]
    b = g.sum(axis=1) * (beta / n)
    return QpProblem(g, b, float(beta))


def objective(problem: QpProblem, a: np.ndarray) -> float:
    return float(a @ (problem.gram @ a) - 2.0 * (problem.linear @ a))


def objective_scale(problem: QpProblem) -> float:
    """``max(1, ||beta * fbar||^2)``, the natural magnitude of the objective."""
    return max(1.0, problem.beta * float(problem.linear.mean()))


def kkt_residual(problem: QpProblem, a: np.ndarray, ga: Optional[np.ndarray] = None) -> float:
    """Largest ``<e_i - f_a, beta*fbar - f_a>`` over simplex vertices, scaled.

    Inner products are taken in L2 through ``G``: the i-th entry of ``b - G a``
    is ``<k(., X_i), beta*fbar - f_a>``.  The maximum over vertices is half the
    Frank-Wolfe gap, so ``objective(a) - min <= 2 * kkt_residual * scale``
    with ``scale = objective_scale(problem)``.  It vanishes exactly at the
    optimum.
    """
    if ga is None:
        ga = problem.gram @ a
    r = problem.linear - ga
    return max(0.0, float(r.max() - a @ r)) / objective_scale(problem)


def power_iteration(gram: np.ndarray, steps: int = 100) -> float:
    """Estimate the largest eigenvalue of a PSD matrix."""
    v = np.full(gram.shape[0], 1.0 / np.sqrt(gram.shape[0]))
    lam = 0.0
    for _ in range(steps):
        w = gram @ v
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return lam


def solve_pgd(
    problem: QpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    initial: Optional[Sequence[float]] = None,
    accelerate: bool = True,
    stall_tol: float = DEFAULT_STALL_TOL,
) -> SolveReport:
    """Minimise ``a'Ga - 2b'a`` over the simplex by projected gradient steps.

    Every iterate is ``P(y - eta (2 G y - 2 b))`` with ``eta = 1 / (2 lambda_max)``
    and ``P`` the simplex projection.  With ``accelerate=False``, ``y`` is the
    current iterate (plain projected gradient descent).  Otherwise ``y`` is a
    Nesterov extrapolation, and whenever the extrapolated step would raise the
    objective the momentum is reset and the plain step is taken instead, so
    the objective trace is nonincreasing in both modes.

    The run stops once ``kkt_residual <= tol``, or earlier when progress stalls
    (relative decrease below ``stall_tol`` for five consecutive steps, or a
    sup-norm step below ``stall_tol * eta``).  ``converged`` is true iff the
    final residual is at most ``10 * tol``.

    Raises
    ------
    NumericError
        If a step reveals negative curvature (``G`` not PSD) or a plain step
        increases the objective beyond rounding slack.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    g, b = problem.gram, problem.linear
    n = problem.n
    if initial is None:
        a = np.full(n, 1.0 / n)
    else:
        a = project_simplex(np.asarray(initial, dtype=float))
        if a.shape != (n,):
            raise ValueError(f"initial point has shape {a.shape}, expected ({n},)")

    lam = power_iteration(g)
    if lam <= 0.0:
        # G == 0 cannot come from a kernel Gram matrix
        raise NumericError("Gram matrix has no positive eigenvalue")
    eta = 1.0 / (2.0 * lam)
    curv_tol = 1e-9 * lam
    scale = objective_scale(problem)

    def step_from(y, gy):
        a_next = project_simplex(y - eta * (2.0 * gy - 2.0 * b))
        ga_next = g @ a_next
        return a_next, ga_next, float(a_next @ ga_next - 2.0 * (b @ a_next))

    ga = g @ a
    f = float(a @ ga - 2.0 * (b @ a))
    trace = [f]
    kkt = kkt_residual(problem, a, ga)
    y, gy, t = a, ga, 1.0
    extrapolated = False
    small = 0
    reason = "kkt" if kkt <= tol else "max_iter"
    it = 0
    while reason == "max_iter" and it < max_iter:
        it += 1
        a_new, ga_new, f_new = step_from(y, gy)
        if extrapolated and f_new > f:
            # momentum restart
            a_new, ga_new, f_new = step_from(a, ga)
            t = 1.0
        if f_new > f + _MONOTONE_SLACK * max(1.0, abs(f)):
            raise NumericError(f"objective increased from {f!r} to {f_new!r} at iteration {it}")
        step = a_new - a
        step_sq = float(step @ step)
        if float(step @ (ga_new - ga)) < -curv_tol * step_sq:
            raise NumericError("negative curvature along a step: Gram matrix is not PSD")
        trace.append(f_new)
        rel = (f - f_new) / max(abs(f), 1e-300 * scale)
        if accelerate:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_next
            t = t_next
        else:
            mom = 0.0
        extrapolated = mom > 0.0
        if extrapolated:
            y = a_new + mom * step
            gy = ga_new + mom * (ga_new - ga)
        else:
            y, gy = a_new, ga_new
        a, ga, f = a_new, ga_new, f_new
        kkt = kkt_residual(problem, a, ga)
        if kkt <= tol:
            reason = "kkt"
        elif step_sq == 0.0 or float(np.max(np.abs(step))) < stall_tol * eta:
            reason = "step"
        else:
            small = small + 1 if rel < stall_tol else 0
            if small >= _PATIENCE:
                reason = "objective"

    report = SolveReport(
        weights=a,
        objective_trace=trace,
        iterations=it,
        converged=kkt <= 10.0 * tol,
        kkt_residual=kkt,
        step_size=eta,
        stop_reason=reason,
    )
    if not report.converged:
        log.warning(
            "projected gradient descent stopped (%s) after %d iterations with KKT residual %.3g",
            reason, it, kkt,
        )
    return report


def fit_spkde(
    points,
    spec: KernelSpec,
    beta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    initial: Optional[Sequence[float]] = None,
) -> WeightedDensityEstimate:
    """Fit the scaled and projected KDE; solver diagnostics land in ``.report``."""
    problem = build_qp(points, spec, beta)
    report = solve_pgd(problem, tol=tol, max_iter=max_iter, initial=initial)
    return WeightedDensityEstimate(points, report.weights, spec, report=report)


def fit_kde(points, spec: KernelSpec) -> WeightedDensityEstimate:
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    return WeightedDensityEstimate(pts, np.full(n, 1.0 / n), spec)
