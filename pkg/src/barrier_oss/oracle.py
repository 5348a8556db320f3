"""Deterministic reference values.

``quadrature_pv`` integrates the OSS integrand over the unit cube with nested
Gauss-Legendre rules. Each coordinate u_t is parametrised by the normal score
z of the conditioned step (u = Phi(z) / p on an up barrier), which turns the
endpoint singularity of Phi^-1 into a Gaussian tail that is truncated at
``|z| = z_max``. On the last coordinate of a call the interval starts at the
strike, so the payoff kink falls on an interval end and the rule converges
spectrally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import model as m
from .engine import PathState, advance_state, oss_payoff
from .errors import ConfigurationError, DomainError, UnsupportedError
from .model import Direction, GradTheta, InstrumentSpec, Knock, ModelParams, PayoffKind

__all__ = ["QuadratureGrid", "quadrature_pv", "quadrature_greek", "quadrature_value", "bs_call", "MAX_DIMS"]

MAX_DIMS = 3


@dataclass(frozen=True)
class QuadratureGrid:
    nodes_per_dim: int = 64
    dims: int = 1
    z_max: float = 10.0

    def __post_init__(self):
        if self.nodes_per_dim < 8:
            raise ConfigurationError("nodes_per_dim must be at least 8")
        if self.dims < 1:
            raise ConfigurationError("dims must be at least 1")
        if self.dims > MAX_DIMS:
            raise UnsupportedError(f"tensor quadrature is capped at {MAX_DIMS} dimensions, got {self.dims}")


def _grid_for(params: ModelParams, grid: QuadratureGrid | None) -> QuadratureGrid:
    if params.n_obs > MAX_DIMS:
        raise UnsupportedError(f"quadrature oracle supports at most {MAX_DIMS} observations, got {params.n_obs}")
    if grid is None:
        return QuadratureGrid(dims=params.n_obs)
    if grid.dims != params.n_obs:
        raise ConfigurationError(f"grid has {grid.dims} dimensions but the contract has {params.n_obs} dates")
    return grid


def _check_spec(spec: InstrumentSpec):
    if spec.knock is Knock.IN and spec.payoff_kind is not PayoffKind.DIGITAL:
        raise ConfigurationError("quadrature covers knock-out payoffs and the digital knock-in only")


def quadrature_value(params: ModelParams, spec: InstrumentSpec, grid: QuadratureGrid | None = None,
                     with_grad: bool = True) -> tuple[float, GradTheta | None]:
    """Discounted OSS price and (optionally) its gradient by nested quadrature."""
    grid = _grid_for(params, grid)
    _check_spec(spec)
    nodes, weights = np.polynomial.legendre.leggauss(grid.nodes_per_dim)
    k = nodes.size
    direction = spec.direction
    cut_at_strike = spec.knock is Knock.OUT and spec.payoff_kind is PayoffKind.VANILLA_CALL

    state = PathState.start(params, 1, with_grad)
    mass = np.ones(1)
    for t in range(params.n_obs):
        s = state.s
        sc = m.score(s, params)
        p, q = m.survival_pair(sc)
        if direction is Direction.UP:
            lo, hi = np.full_like(s, -grid.z_max), np.minimum(sc, grid.z_max)
        else:
            lo, hi = np.maximum(sc, -grid.z_max), np.full_like(s, grid.z_max)
        if cut_at_strike and t == params.n_obs - 1 and params.strike > 0:
            z_strike = (np.log(params.strike / s) - params.drift) / params.vol
            lo = np.maximum(lo, z_strike)
        hi = np.maximum(hi, lo)
        half = 0.5 * (hi - lo)
        z = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes[None, :]
        dens = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        if direction is Direction.UP:
            u = special.ndtr(z) / p[:, None]
            du = dens / p[:, None]
        else:
            u = 1.0 - special.ndtr(-z) / q[:, None]
            du = dens / q[:, None]
        du = du * (half[:, None] * weights[None, :])
        # paths whose surviving side has no mass contribute nothing
        du = np.where((half > 0)[:, None], du, 0.0)
        state = state.take(np.repeat(np.arange(s.size), k))
        mass = (mass[:, None] * du).ravel()
        advance_state(state, params, direction, np.clip(u.ravel(), 0.0, 1.0))

    value, grad = oss_payoff(state, params, spec)
    disc = params.discount
    pv = disc * float(np.dot(mass, value))
    if not with_grad:
        return pv, None
    return pv, GradTheta.from_array(disc * (grad @ mass))


def quadrature_pv(params: ModelParams, spec: InstrumentSpec, grid: QuadratureGrid | None = None) -> float:
    """Deterministic OSS present value for contracts with at most three dates."""
    return quadrature_value(params, spec, grid, with_grad=False)[0]


def quadrature_greek(params: ModelParams, spec: InstrumentSpec, grid: QuadratureGrid | None = None,
                     which: str = "s0") -> float:
    """Quadrature of the pathwise derivative of the OSS payoff for one parameter."""
    if which not in GradTheta.NAMES:
        raise ConfigurationError(f"unknown parameter {which!r}; expected one of {GradTheta.NAMES}")
    return quadrature_value(params, spec, grid, with_grad=True)[1][which]


def bs_call(s0: float, strike: float, rate: float, mu: float, sigma: float, tau: float):
    """Black-Scholes call with carry drift ``mu`` and discount rate ``rate``.

    Returns ``(price, delta, vega)``.
    """
    for name, value in (("s0", s0), ("strike", strike), ("sigma", sigma), ("tau", tau)):
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value!r}", value)
    sq = sigma * math.sqrt(tau)
    d1 = (math.log(s0 / strike) + (mu + 0.5 * sigma * sigma) * tau) / sq
    d2 = d1 - sq
    carry = math.exp((mu - rate) * tau)
    price = s0 * carry * special.ndtr(d1) - strike * math.exp(-rate * tau) * special.ndtr(d2)
    delta = carry * special.ndtr(d1)
    vega = s0 * carry * math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi) * math.sqrt(tau)
    return float(price), float(delta), float(vega)
