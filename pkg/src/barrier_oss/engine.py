"""Monte Carlo estimators for discretely monitored barrier options.

Three estimators share one random layout: path ``i`` of a run with seed ``s``
consumes draws ``0 .. n_obs-1`` of stream ``(s, i)``. The standard estimator
turns draw ``t`` into a normal increment, the one-step-survival (OSS)
estimators use it as the conditional uniform of step ``t``. Paths are
processed in fixed-size chunks and chunk statistics are merged in path order,
so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import model as m
from .errors import ConfigurationError, DomainError, UnsupportedError
from .model import Direction, GradTheta, InstrumentSpec, Knock, ModelParams, PayoffKind
from .specialfn import uniform_block

__all__ = [
    "CHUNK",
    "THREADS_ENV",
    "PathState",
    "EstimatorOutput",
    "SampleStats",
    "run_chunks",
    "simulate_oss",
    "oss_payoff",
    "price_standard_mc",
    "price_oss",
    "price_oss_pathwise",
    "price_knock_in_parity",
    "plain_pathwise",
    "ESTIMATORS",
]

CHUNK = 1 << 14
THREADS_ENV = "BARRIER_OSS_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class PathState:
    """Vectorised state of a batch of OSS paths.

    ``survival[t]`` holds p_t = Phi(score(S_t)) for every path and
    ``complement[t]`` holds 1 - p_t computed without cancellation.
    """

    s: np.ndarray
    ds_dtheta: np.ndarray | None
    survival: list = field(default_factory=list)
    complement: list = field(default_factory=list)
    dp_dtheta: list = field(default_factory=list)

    @classmethod
    def start(cls, params: ModelParams, n: int, with_grad: bool = True) -> "PathState":
        s = np.full(n, float(params.s0))
        ds = None
        if with_grad:
            ds = np.zeros((4, n))
            ds[0] = 1.0
        return cls(s=s, ds_dtheta=ds)

    @property
    def steps(self) -> int:
        return len(self.survival)

    def weights(self, direction: Direction):
        """Per-step surviving-side probabilities, their complements and gradients."""
        if direction is Direction.UP:
            return self.survival, self.complement, self.dp_dtheta
        dw = None if self.ds_dtheta is None else [-g for g in self.dp_dtheta]
        return self.complement, self.survival, dw

    def take(self, index) -> "PathState":
        pick = lambda a: a[..., index]  # noqa: E731
        return PathState(
            s=self.s[index],
            ds_dtheta=None if self.ds_dtheta is None else pick(self.ds_dtheta),
            survival=[pick(a) for a in self.survival],
            complement=[pick(a) for a in self.complement],
            dp_dtheta=[pick(a) for a in self.dp_dtheta],
        )


def advance_state(state: PathState, params: ModelParams, direction: Direction, u) -> PathState:
    """One observation step: record p_t and its gradient, then draw S_{t+1}."""
    s = state.s
    sc = m.score(s, params)
    p, q = m.survival_pair(sc)
    weight = p if direction is Direction.UP else q
    s_next, z, clamped = m.advance(s, weight, u, direction, params)
    state.survival.append(p)
    state.complement.append(q)
    if state.ds_dtheta is not None:
        ds = state.ds_dtheta
        f_b, f_mu, f_sig, f_s = m.f_partials(sc, s, params)
        dp = f_s * ds
        dp[1] += f_b
        dp[2] += f_mu
        dp[3] += f_sig
        g_mu, g_sig, g_w = m.g_partials(s_next, z, u, clamped, direction, params)
        dw = dp if direction is Direction.UP else -dp
        ds_next = (s_next / s) * ds + g_w * dw
        ds_next[2] += g_mu
        ds_next[3] += g_sig
        state.dp_dtheta.append(dp)
        state.ds_dtheta = ds_next
    state.s = s_next
    return state


def simulate_oss(params: ModelParams, direction, u: np.ndarray, with_grad: bool = True) -> PathState:
    """Run conditioned paths for a ``(n_paths, n_steps)`` array of uniforms."""
    direction = Direction(direction)
    state = PathState.start(params, u.shape[0], with_grad)
    for t in range(u.shape[1]):
        advance_state(state, params, direction, u[:, t])
    return state


def terminal_payoff(s, spec: InstrumentSpec, params: ModelParams):
    """q(S_T) and dq/dS_T; the call's indicator is strict (S_T > K)."""
    kind = spec.payoff_kind
    if kind is PayoffKind.VANILLA_CALL:
        return np.maximum(s - params.strike, 0.0), (s > params.strike).astype(float)
    if kind is PayoffKind.DIGITAL:
        return np.full_like(s, float(spec.coupon)), np.zeros_like(s)
    return s - float(spec.delivery), np.ones_like(s)


def oss_payoff(state: PathState, params: ModelParams, spec: InstrumentSpec):
    """Undiscounted OSS payoff q* per path and, if tracked, its gradient.

    Knock-out: product of surviving-side weights times q(S_T).
    Digital knock-in: c * sum_t (w_0 ... w_{t-1}) (1 - w_t).
    """
    w, wc, dw = state.weights(spec.direction)
    n = state.s.shape[0]
    grad = state.ds_dtheta is not None
    prod = np.ones(n)
    dprod = np.zeros((4, n)) if grad else None
    hit = np.zeros(n)
    dhit = np.zeros((4, n)) if grad else None
    dead = np.zeros(n, dtype=bool)
    for t in range(state.steps):
        if grad:
            dhit += dprod * wc[t] - prod * dw[t]
            dprod = dprod * w[t] + prod * dw[t]
        hit += prod * wc[t]
        prod = prod * w[t]
        dead |= w[t] < m.DEAD_WEIGHT

    if spec.knock is Knock.IN:
        c = float(spec.coupon)
        return c * hit, (c * dhit if grad else None)

    q, dq = terminal_payoff(state.s, spec, params)
    value = np.where(dead, 0.0, prod * q)
    if not grad:
        return value, None
    dvalue = dq * state.ds_dtheta * prod + q * dprod
    dvalue[:, dead] = 0.0
    return value, dvalue


def digital_weights(state: PathState, direction) -> tuple[np.ndarray, np.ndarray]:
    """Per-path digital knock-in and knock-out weights (they sum to one)."""
    w, wc, _ = state.weights(Direction(direction))
    prod = np.ones_like(state.s)
    hit = np.zeros_like(state.s)
    for t in range(state.steps):
        hit += prod * wc[t]
        prod = prod * w[t]
    return hit, prod


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class SampleStats:
    """Mean and sum of squared deviations of k per-path quantities."""

    count: int
    mean: np.ndarray
    m2: np.ndarray
    samples: np.ndarray | None = None

    @classmethod
    def of(cls, block: np.ndarray, keep: bool = False) -> "SampleStats":
        mean = block.mean(axis=1)
        dev = block - mean[:, None]
        return cls(block.shape[1], mean, np.einsum("ij,ij->i", dev, dev), block if keep else None)

    def merge(self, other: "SampleStats") -> "SampleStats":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        samples = None
        if self.samples is not None and other.samples is not None:
            samples = np.concatenate([self.samples, other.samples], axis=1)
        return SampleStats(n, mean, m2, samples)

    @property
    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, math.inf)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, math.inf)
        return self.m2 / (self.count - 1)


def run_chunks(
    n: int,
    seed: int,
    n_draws: int,
    sampler: Callable[[np.ndarray], np.ndarray],
    threads: int | None = None,
    keep_samples: bool = False,
) -> SampleStats:
    """Evaluate ``sampler`` on uniforms of paths ``0..n-1`` and merge in path order.

    ``sampler`` maps a ``(chunk, n_draws)`` uniform array to a ``(k, chunk)``
    array of per-path quantities.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"number of paths must be a positive integer, got {n!r}", n)
    n = int(n)
    threads = default_threads() if threads is None else max(1, int(threads))

    def work(start: int) -> SampleStats:
        size = min(CHUNK, n - start)
        u = uniform_block(seed, start, size, n_draws)
        return SampleStats.of(np.atleast_2d(sampler(u)), keep_samples)

    starts = range(0, n, CHUNK)
    if threads == 1 or len(starts) == 1:
        parts = map(work, starts)
        total = next(parts)
        for part in parts:
            total = total.merge(part)
        return total
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(work, starts)
        total = next(parts)
        for part in parts:
            total = total.merge(part)
    return total


# ---------------------------------------------------------------------------
# estimators

@dataclass
class EstimatorOutput:
    pv: float
    pv_stderr: float
    n_paths: int
    greeks: GradTheta | None = None
    greek_stderr: GradTheta | None = None
    elapsed: float = 0.0
    seed: int | None = None
    estimator: str = ""
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def pv_variance(self) -> float:
        """Sample variance of the discounted per-path payoff."""
        return self.pv_stderr**2 * self.n_paths


def _finish(stats: SampleStats, params, n, seed, started, name, with_grad) -> EstimatorOutput:
    disc = params.discount
    mean = stats.mean * disc
    err = stats.stderr * disc
    out = EstimatorOutput(
        pv=float(mean[0]),
        pv_stderr=float(err[0]),
        n_paths=int(n),
        seed=seed,
        estimator=name,
        elapsed=time.perf_counter() - started,
    )
    if with_grad:
        out.greeks = GradTheta.from_array(mean[1:5])
        out.greek_stderr = GradTheta.from_array(err[1:5])
    if stats.samples is not None:
        out.samples = stats.samples * disc
    return out


def _check_out_or_digital_in(spec: InstrumentSpec):
    if spec.knock is Knock.IN and spec.payoff_kind is not PayoffKind.DIGITAL:
        raise ConfigurationError(
            f"{spec.payoff_kind.value} knock-in has no direct estimator; use price_knock_in_parity"
        )


def standard_payoff(u: np.ndarray, params: ModelParams, spec: InstrumentSpec) -> np.ndarray:
    """Plain GBM paths with the barrier checked at every observation."""
    z = special.ndtri(u)
    log_s = math.log(params.s0) + np.cumsum(params.drift + params.vol * z, axis=1)
    log_b = math.log(params.barrier)
    if spec.direction is Direction.UP:
        crossed = np.any(log_s > log_b, axis=1)
    else:
        crossed = np.any(log_s < log_b, axis=1)
    if spec.knock is Knock.IN:
        return np.where(crossed, float(spec.coupon), 0.0)
    q, _ = terminal_payoff(np.exp(log_s[:, -1]), spec, params)
    return np.where(crossed, 0.0, q)


def price_standard_mc(params: ModelParams, spec: InstrumentSpec, n: int, seed: int,
                      *, threads: int | None = None, keep_samples: bool = False) -> EstimatorOutput:
    """Average discounted payoff over unconditioned GBM paths."""
    _check_out_or_digital_in(spec)
    started = time.perf_counter()
    stats = run_chunks(n, seed, params.n_obs, lambda u: standard_payoff(u, params, spec)[None, :],
                       threads, keep_samples)
    return _finish(stats, params, n, seed, started, "standard", False)


def price_oss(params: ModelParams, spec: InstrumentSpec, n: int, seed: int,
              *, threads: int | None = None, keep_samples: bool = False) -> EstimatorOutput:
    """Average discounted one-step-survival payoff."""
    _check_out_or_digital_in(spec)
    started = time.perf_counter()

    def sampler(u):
        state = simulate_oss(params, spec.direction, u, with_grad=False)
        return oss_payoff(state, params, spec)[0][None, :]

    stats = run_chunks(n, seed, params.n_obs, sampler, threads, keep_samples)
    return _finish(stats, params, n, seed, started, "oss", False)


def price_oss_pathwise(params: ModelParams, spec: InstrumentSpec, n: int, seed: int,
                       *, threads: int | None = None, keep_samples: bool = False) -> EstimatorOutput:
    """OSS price plus pathwise Greeks with respect to (s0, barrier, mu, sigma).

    Uses the same paths as :func:`price_oss`, so ``pv`` is bit-identical.
    """
    _check_out_or_digital_in(spec)
    started = time.perf_counter()

    def sampler(u):
        state = simulate_oss(params, spec.direction, u, with_grad=True)
        value, grad = oss_payoff(state, params, spec)
        return np.vstack([value[None, :], grad])

    stats = run_chunks(n, seed, params.n_obs, sampler, threads, keep_samples)
    return _finish(stats, params, n, seed, started, "oss_pathwise", True)


def plain_samples(u: np.ndarray, params: ModelParams, payoff_kind, delivery=None) -> np.ndarray:
    """Per-path payoff and pathwise gradient of a barrier-free instrument."""
    kind = PayoffKind(payoff_kind)
    z_sum = special.ndtri(u).sum(axis=1)
    horizon = params.n_obs * params.dt
    s_t = params.s0 * np.exp(params.n_obs * params.drift + params.vol * z_sum)
    if kind is PayoffKind.VANILLA_CALL:
        value = np.maximum(s_t - params.strike, 0.0)
        slope = (s_t > params.strike).astype(float)
    else:
        value = s_t - float(delivery)
        slope = np.ones_like(s_t)
    grad = np.empty((4, s_t.shape[0]))
    grad[0] = slope * s_t / params.s0
    grad[1] = 0.0
    grad[2] = slope * s_t * horizon
    grad[3] = slope * s_t * (math.sqrt(params.dt) * z_sum - params.sigma * horizon)
    return np.vstack([value[None, :], grad])


def plain_pathwise(params: ModelParams, payoff_kind, n: int, seed: int, *, delivery: float | None = None,
                   threads: int | None = None, keep_samples: bool = False) -> EstimatorOutput:
    """Standard pathwise Greeks of the barrier-free call or forward.

    The barrier sensitivity is identically zero.
    """
    try:
        kind = PayoffKind(payoff_kind)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    if kind is PayoffKind.DIGITAL:
        raise UnsupportedError("digital payoff is discontinuous; no plain pathwise estimator")
    if kind is PayoffKind.FORWARD and delivery is None:
        raise ConfigurationError("forward payoff requires a delivery price")
    started = time.perf_counter()
    stats = run_chunks(n, seed, params.n_obs, lambda u: plain_samples(u, params, kind, delivery),
                       threads, keep_samples)
    return _finish(stats, params, n, seed, started, "plain_pathwise", True)


def price_knock_in_parity(params: ModelParams, spec: InstrumentSpec, n: int, seed: int,
                          *, threads: int | None = None, keep_samples: bool = False) -> EstimatorOutput:
    """Knock-in call/forward as plain instrument minus the OSS knock-out.

    Both legs consume the same uniforms path by path, so the reported standard
    errors are those of the per-path difference.
    """
    if spec.knock is not Knock.IN:
        raise ConfigurationError("in-out parity needs a knock-in instrument")
    if spec.payoff_kind is PayoffKind.DIGITAL:
        raise ConfigurationError("digital knock-in is priced directly by price_oss / price_oss_pathwise")
    out_spec = InstrumentSpec(spec.direction, Knock.OUT, spec.payoff_kind, spec.coupon, spec.delivery)
    started = time.perf_counter()

    def sampler(u):
        plain = plain_samples(u, params, spec.payoff_kind, spec.delivery)
        state = simulate_oss(params, spec.direction, u, with_grad=True)
        value, grad = oss_payoff(state, params, out_spec)
        return plain - np.vstack([value[None, :], grad])

    stats = run_chunks(n, seed, params.n_obs, sampler, threads, keep_samples)
    return _finish(stats, params, n, seed, started, "knock_in_parity", True)


ESTIMATORS = {
    "standard": price_standard_mc,
    "oss": price_oss,
    "oss_pathwise": price_oss_pathwise,
    "parity": price_knock_in_parity,
}
