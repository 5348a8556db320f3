"""Contingent convertible bond built from barrier components, and its calibration.

Price decomposition (equity-derivative approach)::

    CoCo = corporate bond + knock-in forward - sum of binary down-in options

* the bond pays ``face * coupon_rate / frequency`` at each coupon date and the
  face at maturity, discounted at the risk-free rate;
* on trigger the holder receives ``face / conversion_price`` shares, so the
  knock-in forward pays ``face / C_p * (S_T - C_p)`` at maturity if the
  underlying was at or below the barrier on some coupon date;
* coupon ``i`` is cancelled by a binary down-in paying the coupon at its own
  date t_i, monitored on the coupon dates up to t_i.

The barrier is checked on the coupon dates only. With the OSS estimator all
binaries of one bond come from a single conditioned path: the knock-in weight
after i dates is a prefix of the same telescoping sum.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .engine import PathState, plain_samples, run_chunks, simulate_oss
from .errors import ConfigurationError, DomainError
from .model import DEAD_WEIGHT, Direction, ModelParams, PayoffKind
from .optimize import CalibrationResult, gauss_newton, nelder_mead, project

__all__ = [
    "CoCoSpec",
    "CoCoValue",
    "Method",
    "CalibrationProblem",
    "coco_price",
    "corporate_bond_value",
    "residuals",
    "jacobian_pathwise",
    "jacobian_fd",
    "benchmark_targets",
    "calibrate",
    "TRUTH",
    "BENCHMARK_SEED",
]

TRUTH = (0.4, 0.4)
BENCHMARK_SEED = 20_170_512


@dataclass(frozen=True)
class CoCoSpec:
    face: float = 1000.0
    coupon_rate: float = 0.75
    frequency: int = 2
    conversion_price: float = 0.59
    maturity: float = 8.5
    rate: float = 0.0342
    s0: float = 0.6075
    conversion: bool = True

    def __post_init__(self):
        if not self.face > 0:
            raise ConfigurationError("face must be positive")
        if not self.frequency > 0:
            raise ConfigurationError("frequency must be positive")
        if not self.conversion_price > 0:
            raise ConfigurationError("conversion price must be positive")
        if not self.maturity > 0:
            raise ConfigurationError("maturity must be positive")
        if not self.s0 > 0:
            raise ConfigurationError("s0 must be positive")
        if abs(self.n_coupons - self.maturity * self.frequency) > 1e-9:
            raise ConfigurationError("maturity must be a whole number of coupon periods")

    @property
    def n_coupons(self) -> int:
        return int(round(self.maturity * self.frequency))

    @property
    def coupon(self) -> float:
        return self.face * self.coupon_rate / self.frequency

    @property
    def conversion_ratio(self) -> float:
        return self.face / self.conversion_price if self.conversion else 0.0

    @property
    def coupon_dates(self) -> np.ndarray:
        return np.arange(1, self.n_coupons + 1) / self.frequency

    def model_params(self, barrier: float, sigma: float) -> ModelParams:
        # no dividend yield: carry drift equals the risk-free rate
        return ModelParams(s0=self.s0, barrier=barrier, mu=self.rate, sigma=sigma, dt=1.0 / self.frequency,
                           rate=self.rate, strike=0.0, n_obs=self.n_coupons)

    @classmethod
    def table2(cls) -> list["CoCoSpec"]:
        """The two bonds (S, T) = (0.6075, 8.5) and (0.62, 8)."""
        return [cls(s0=0.6075, maturity=8.5), cls(s0=0.62, maturity=8.0)]


@dataclass(frozen=True)
class CoCoValue:
    price: float
    d_barrier: float
    d_sigma: float
    price_stderr: float
    d_barrier_stderr: float = math.nan
    d_sigma_stderr: float = math.nan


def corporate_bond_value(spec: CoCoSpec) -> float:
    disc = np.exp(-spec.rate * spec.coupon_dates)
    return float(spec.coupon * disc.sum() + spec.face * disc[-1])


def _oss_samples(u: np.ndarray, spec: CoCoSpec, params: ModelParams, with_grad: bool) -> np.ndarray:
    state: PathState = simulate_oss(params, Direction.DOWN, u, with_grad)
    w, wc, dw = state.weights(Direction.DOWN)
    n = u.shape[0]
    coupon_disc = spec.coupon * np.exp(-spec.rate * spec.coupon_dates)
    prod, hit, leg = np.ones(n), np.zeros(n), np.zeros(n)
    dead = np.zeros(n, dtype=bool)
    if with_grad:
        dprod, dhit, dleg = np.zeros((4, n)), np.zeros((4, n)), np.zeros((4, n))
    for t in range(params.n_obs):
        if with_grad:
            dhit += dprod * wc[t] - prod * dw[t]
            dprod = dprod * w[t] + prod * dw[t]
            dleg += coupon_disc[t] * dhit
        hit += prod * wc[t]
        prod = prod * w[t]
        leg += coupon_disc[t] * hit
        dead |= w[t] < DEAD_WEIGHT

    disc_t = params.discount
    ratio = spec.conversion_ratio
    gap = state.s - spec.conversion_price
    ko_fwd = np.where(dead, 0.0, disc_t * prod * gap)
    plain = disc_t * plain_samples(u, params, PayoffKind.FORWARD, spec.conversion_price)
    price = corporate_bond_value(spec) + ratio * (plain[0] - ko_fwd) - leg
    if not with_grad:
        return price[None, :]
    d_ko = disc_t * (state.ds_dtheta * prod + gap * dprod)
    d_ko[:, dead] = 0.0
    grad = ratio * (plain[1:] - d_ko) - dleg
    return np.vstack([price[None, :], grad[1], grad[3]])


def _standard_samples(u: np.ndarray, spec: CoCoSpec, params: ModelParams) -> np.ndarray:
    z = special.ndtri(u)
    log_s = math.log(params.s0) + np.cumsum(params.drift + params.vol * z, axis=1)
    hit = np.logical_or.accumulate(log_s <= math.log(params.barrier), axis=1)
    coupon_disc = spec.coupon * np.exp(-spec.rate * spec.coupon_dates)
    leg = hit @ coupon_disc
    fwd = params.discount * (np.exp(log_s[:, -1]) - spec.conversion_price) * hit[:, -1]
    return (corporate_bond_value(spec) + spec.conversion_ratio * fwd - leg)[None, :]


def coco_price(spec: CoCoSpec, barrier: float, sigma: float, n: int, seed: int, *, estimator: str = "oss",
               with_greeks: bool = True, threads: int | None = None) -> CoCoValue:
    """Monte Carlo CoCo price and its (barrier, sigma) sensitivities.

    The standard estimator returns NaN sensitivities.
    """
    if not barrier < spec.s0:
        raise ConfigurationError(f"barrier {barrier} must lie below the spot {spec.s0}: the bond would be born triggered")
    params = spec.model_params(barrier, sigma)
    if estimator == "standard":
        stats = run_chunks(n, seed, params.n_obs, lambda u: _standard_samples(u, spec, params), threads)
        return CoCoValue(float(stats.mean[0]), math.nan, math.nan, float(stats.stderr[0]))
    if estimator != "oss":
        raise ConfigurationError(f"unknown CoCo estimator {estimator!r}")
    stats = run_chunks(n, seed, params.n_obs, lambda u: _oss_samples(u, spec, params, with_greeks), threads)
    err = stats.stderr
    if not with_greeks:
        return CoCoValue(float(stats.mean[0]), math.nan, math.nan, float(err[0]))
    return CoCoValue(*(float(v) for v in stats.mean), float(err[0]), float(err[1]), float(err[2]))


def benchmark_targets(specs, truth=TRUTH, n: int = 10_000_000, seed: int = BENCHMARK_SEED,
                      threads: int | None = None) -> list[float]:
    """High-path-count OSS prices at the true (barrier, sigma)."""
    return [coco_price(s, truth[0], truth[1], n, seed, with_greeks=False, threads=threads).price for s in specs]


# ---------------------------------------------------------------------------
# calibration

class Method(str, enum.Enum):
    NELDER_MEAD = "nelder_mead"
    GAUSS_NEWTON_FD = "gauss_newton_fd"
    GAUSS_NEWTON_PATHWISE = "gauss_newton_pathwise"


@dataclass
class CalibrationProblem:
    """Fit (barrier, sigma) so that model prices match the targets.

    Every evaluation uses ``seed``, so the residual map is a deterministic
    function of x. ``batches`` counts full evaluations (all instruments at one
    point), which is the unit of Monte Carlo cost.
    """

    instruments: list
    initial: tuple = (0.5, 0.5)
    bounds: tuple = ((0.01, 0.6), (0.01, 2.0))
    n_paths: int = 100_000
    seed: int = 1
    method: Method = Method.GAUSS_NEWTON_PATHWISE
    estimator: str = "oss"
    fd_step: float = 1e-4
    threads: int | None = None
    batches: int = field(default=0, init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.method = Method(self.method)
        if not self.instruments:
            raise ConfigurationError("calibration needs at least one instrument")
        if self.estimator not in ("oss", "standard"):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if self.method is Method.GAUSS_NEWTON_PATHWISE and self.estimator != "oss":
            raise ConfigurationError("pathwise Jacobians need the oss estimator")
        lo, hi = np.asarray(self.bounds, dtype=float).T
        if lo[1] <= 0:
            raise ConfigurationError("sigma lower bound must be positive")
        x0 = np.asarray(self.initial, dtype=float)
        if x0.shape != (2,) or np.any(x0 < lo) or np.any(x0 > hi):
            raise ConfigurationError(f"initial point {tuple(self.initial)} lies outside the bounds {self.bounds}")
        min_spot = min(spec.s0 for spec, _ in self.instruments)
        if hi[0] >= min_spot:
            raise ConfigurationError("barrier upper bound must stay below every spot")

    def evaluate(self, x, with_greeks: bool) -> tuple[np.ndarray, np.ndarray | None]:
        key = (float(x[0]), float(x[1]))
        hit = self._cache.get(key)
        if hit is not None and (hit[1] is not None or not with_greeks):
            return hit
        self.batches += 1
        values = [coco_price(spec, key[0], key[1], self.n_paths, self.seed, estimator=self.estimator,
                             with_greeks=with_greeks, threads=self.threads) for spec, _ in self.instruments]
        res = np.array([v.price - target for v, (_, target) in zip(values, self.instruments)])
        jac = np.array([[v.d_barrier, v.d_sigma] for v in values]) if with_greeks else None
        self._cache = {key: (res, jac)}
        return res, jac


def residuals(problem: CalibrationProblem, x) -> np.ndarray:
    """Model price minus target, one entry per instrument."""
    with_greeks = problem.method is Method.GAUSS_NEWTON_PATHWISE
    return problem.evaluate(x, with_greeks)[0]


def jacobian_pathwise(problem: CalibrationProblem, x) -> np.ndarray:
    """Rows d residual_i / d(barrier, sigma) from the pathwise estimators."""
    return problem.evaluate(x, True)[1]


def jacobian_fd(problem: CalibrationProblem, x) -> np.ndarray:
    """Central differences of the seed-frozen residuals (2 * dim evaluations)."""
    x = np.asarray(x, dtype=float)
    lo, hi = np.asarray(problem.bounds, dtype=float).T
    cols = []
    for j in range(x.size):
        up, down = x.copy(), x.copy()
        up[j] = min(x[j] + problem.fd_step, hi[j])
        down[j] = max(x[j] - problem.fd_step, lo[j])
        r_up = problem.evaluate(up, False)[0]
        r_down = problem.evaluate(down, False)[0]
        cols.append((r_up - r_down) / (up[j] - down[j]))
    return np.column_stack(cols)


def calibrate(problem: CalibrationProblem, *, max_iter: int | None = None, tol: float | None = None) -> CalibrationResult:
    """Run the problem's optimizer from its initial point."""
    started = time.perf_counter()
    problem.batches = 0
    x0 = np.asarray(problem.initial, dtype=float)
    if problem.method is Method.NELDER_MEAD:
        result = nelder_mead(lambda x: float(np.sum(residuals(problem, x) ** 2)), x0,
                             max_iter=max_iter or 400, tol=tol or 1e-7, bounds=problem.bounds)
    else:
        jac = jacobian_pathwise if problem.method is Method.GAUSS_NEWTON_PATHWISE else jacobian_fd
        result = gauss_newton(lambda x: residuals(problem, x), lambda x: jac(problem, x), x0,
                              max_iter=max_iter or 100, tol=tol or 1e-10, bounds=problem.bounds)
    result.method = problem.method.value
    result.evaluations = problem.batches
    result.runtime = time.perf_counter() - started
    result.fitted = tuple(float(c) for c in project(result.fitted, problem.bounds))
    return result
