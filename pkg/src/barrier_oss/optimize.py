"""Small box-constrained optimizers used by the calibration harness."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import OptimizationError

__all__ = ["TraceEntry", "CalibrationResult", "nelder_mead", "gauss_newton", "project"]


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    x: tuple
    residual_norm: float


@dataclass
class CalibrationResult:
    fitted: tuple
    data_fit: float
    iterations: int
    runtime: float
    trace: list = field(default_factory=list)
    converged: bool = False
    message: str = ""
    method: str = ""
    evaluations: int = 0


def project(x, bounds):
    x = np.asarray(x, dtype=float)
    if bounds is None:
        return x
    lo, hi = np.asarray(bounds, dtype=float).T
    return np.clip(x, lo, hi)


def nelder_mead(objective: Callable[[np.ndarray], float], x0: Sequence[float], *, max_iter: int = 400,
                tol: float = 1e-7, bounds=None, initial_step: float = 0.05) -> CalibrationResult:
    """Downhill simplex with reflection, expansion, contraction and shrink.

    The initial simplex perturbs each coordinate of ``x0`` by ``initial_step``
    relative to its magnitude. Vertices are projected onto ``bounds``. Stops
    when every vertex lies within ``tol`` of the best one.
    """
    started = time.perf_counter()
    x0 = project(x0, bounds)
    dim = x0.size
    trace: list[TraceEntry] = []

    def f(x):
        value = float(objective(x))
        if not math.isfinite(value):
            raise OptimizationError(f"objective is not finite at {tuple(x)}", trace)
        return value

    simplex = [x0]
    for j in range(dim):
        v = x0.copy()
        v[j] = v[j] * (1.0 + initial_step) if v[j] != 0 else 0.00025
        simplex.append(project(v, bounds))
    simplex = np.array(simplex)
    values = np.array([f(v) for v in simplex])

    it = 0
    converged = False
    while True:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        trace.append(TraceEntry(it, tuple(float(c) for c in simplex[0]), math.sqrt(max(values[0], 0.0))))
        diameter = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if diameter < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = project(centroid + (centroid - worst), bounds)
        fr = f(xr)
        if fr < values[0]:
            xe = project(centroid + 2.0 * (centroid - worst), bounds)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = project(centroid + 0.5 * (xr - centroid), bounds)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = project(centroid + 0.5 * (worst - centroid), bounds)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        for i in range(1, dim + 1):
            simplex[i] = project(simplex[0] + 0.5 * (simplex[i] - simplex[0]), bounds)
            values[i] = f(simplex[i])

    return CalibrationResult(
        fitted=tuple(float(c) for c in simplex[0]),
        data_fit=float(values[0]),
        iterations=it,
        runtime=time.perf_counter() - started,
        trace=trace,
        converged=converged,
        message="simplex diameter below tolerance" if converged else "iteration limit reached",
        method="nelder_mead",
    )


def gauss_newton(residuals_fn: Callable[[np.ndarray], np.ndarray], jacobian_fn: Callable[[np.ndarray], np.ndarray],
                 x0: Sequence[float], *, max_iter: int = 100, tol: float = 1e-10, damping: float = 1e-3,
                 bounds=None, damping_cap: float = 1e12) -> CalibrationResult:
    """Levenberg-Marquardt with Marquardt scaling and projection onto ``bounds``.

    ``jacobian_fn`` is only called at accepted points, after ``residuals_fn``
    has been called there. A failed trial multiplies the damping by ten, an
    accepted one divides it by ten. ``iterations`` counts accepted steps.
    """
    started = time.perf_counter()
    x = project(x0, bounds)
    r = np.asarray(residuals_fn(x), dtype=float)
    jac = np.asarray(jacobian_fn(x), dtype=float)
    cost = float(r @ r)
    trace = [TraceEntry(0, tuple(float(c) for c in x), math.sqrt(cost))]
    lam = float(damping)
    accepted = 0
    trials = 0
    converged = False
    message = "iteration limit reached"

    while trials < max_iter:
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jac))):
            raise OptimizationError("residuals or Jacobian not finite", trace)
        a = jac.T @ jac
        g = jac.T @ r
        if not np.any(g):
            converged, message = True, "zero gradient"
            break
        scale = np.maximum(np.diag(a), 1e-12 * max(float(np.max(np.diag(a))), 1e-300))
        try:
            step = np.linalg.solve(a + lam * np.diag(scale), -g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            lam = max(10.0 * lam, 1e-8)
            if lam > damping_cap:
                message = "damping exceeded its cap (singular normal equations)"
                break
            continue
        x_new = project(x + step, bounds)
        moved = float(np.linalg.norm(x_new - x))
        if moved <= tol * (tol + float(np.linalg.norm(x))):
            converged, message = True, "step below tolerance"
            break
        trials += 1
        r_new = np.asarray(residuals_fn(x_new), dtype=float)
        cost_new = float(r_new @ r_new)
        if math.isfinite(cost_new) and cost_new < cost:
            x, r, cost = x_new, r_new, cost_new
            jac = np.asarray(jacobian_fn(x), dtype=float)
            accepted += 1
            lam /= 10.0
            trace.append(TraceEntry(accepted, tuple(float(c) for c in x), math.sqrt(cost)))
            if cost == 0.0:
                converged, message = True, "exact fit"
                break
        else:
            lam = max(10.0 * lam, 1e-8)
            if lam > damping_cap:
                converged, message = True, "no further decrease (damping cap reached)"
                break

    return CalibrationResult(
        fitted=tuple(float(c) for c in x),
        data_fit=cost,
        iterations=accepted,
        runtime=time.perf_counter() - started,
        trace=trace,
        converged=converged,
        message=message,
        method="gauss_newton",
    )
