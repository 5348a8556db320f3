"""Parameters, one-step-survival step maps and their analytic partials.

Notation used in code:

* ``drift = (mu - sigma**2 / 2) * dt`` and ``vol = sigma * sqrt(dt)``;
* ``score = (log(B / s) - drift) / vol`` so the probability that the next
  observation ends below the barrier is ``Phi(score)``;
* ``weight`` is the probability of landing on the surviving side: ``p`` for an
  up barrier, ``1 - p`` for a down barrier.

All functions broadcast over numpy arrays. Greek vectors are ordered
``(s0, barrier, mu, sigma)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError

__all__ = [
    "Direction",
    "Knock",
    "PayoffKind",
    "ModelParams",
    "InstrumentSpec",
    "GradTheta",
    "survival_prob",
    "step_up_out",
    "step_down_out",
    "partials_f",
    "partials_g",
    "CLAMP_LO",
    "CLAMP_HI",
    "DEAD_WEIGHT",
]

CLAMP_LO = 1e-16
CLAMP_HI = 1.0 - 1e-16
DEAD_WEIGHT = 1e-300
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"


class Knock(str, enum.Enum):
    OUT = "out"
    IN = "in"


class PayoffKind(str, enum.Enum):
    VANILLA_CALL = "vanilla_call"
    DIGITAL = "digital"
    FORWARD = "forward"


@dataclass(frozen=True)
class ModelParams:
    """GBM and contract parameters.

    ``mu`` is the carry drift r - b; ``n_obs`` observation dates are spaced
    ``dt`` apart, so maturity is ``n_obs * dt``.
    """

    s0: float
    barrier: float
    mu: float
    sigma: float
    dt: float
    rate: float
    strike: float = 0.0
    n_obs: int = 1

    def __post_init__(self):
        for name in ("s0", "barrier", "sigma", "dt"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value!r}", value)
        if not (self.strike >= 0):
            raise DomainError(f"strike must be non-negative, got {self.strike!r}", self.strike)
        if int(self.n_obs) != self.n_obs or self.n_obs < 1:
            raise DomainError(f"n_obs must be an integer >= 1, got {self.n_obs!r}", self.n_obs)
        for name in ("mu", "rate"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite", getattr(self, name))

    @property
    def maturity(self) -> float:
        return self.n_obs * self.dt

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.n_obs * self.dt)

    @property
    def drift(self) -> float:
        return (self.mu - 0.5 * self.sigma**2) * self.dt

    @property
    def vol(self) -> float:
        return self.sigma * math.sqrt(self.dt)

    @classmethod
    def table1(cls, **overrides) -> "ModelParams":
        """Up-and-out call setup: S0=K=50, B=60, r=10%, b=0, sigma=20%, 50 dates over one year."""
        base = dict(s0=50.0, barrier=60.0, mu=0.1, sigma=0.2, dt=0.02, rate=0.1, strike=50.0, n_obs=50)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class InstrumentSpec:
    """Barrier direction, knock style and payoff.

    ``coupon`` is the digital's constant payout, ``delivery`` the forward's
    delivery price; the vanilla call takes its strike from ``ModelParams``.
    """

    direction: Direction = Direction.UP
    knock: Knock = Knock.OUT
    payoff_kind: PayoffKind = PayoffKind.VANILLA_CALL
    coupon: float | None = None
    delivery: float | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "direction", Direction(self.direction))
            object.__setattr__(self, "knock", Knock(self.knock))
            object.__setattr__(self, "payoff_kind", PayoffKind(self.payoff_kind))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.payoff_kind is PayoffKind.DIGITAL and self.coupon is None:
            raise ConfigurationError("digital payoff requires a coupon")
        if self.payoff_kind is PayoffKind.FORWARD and self.delivery is None:
            raise ConfigurationError("forward payoff requires a delivery price")

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.value,
            "knock": self.knock.value,
            "payoff_kind": self.payoff_kind.value,
            "coupon": self.coupon,
            "delivery": self.delivery,
        }


@dataclass(frozen=True)
class GradTheta:
    """Sensitivities with respect to (s0, barrier, mu, sigma)."""

    d_s0: float
    d_barrier: float
    d_mu: float
    d_sigma: float

    NAMES = ("s0", "barrier", "mu", "sigma")

    def as_array(self) -> np.ndarray:
        return np.array([self.d_s0, self.d_barrier, self.d_mu, self.d_sigma], dtype=float)

    @classmethod
    def from_array(cls, values) -> "GradTheta":
        v = [float(x) for x in values]
        return cls(*v)

    def __getitem__(self, name: str) -> float:
        return getattr(self, "d_" + name)


def _check_positive(s):
    arr = np.asarray(s, dtype=float)
    if np.any(~(arr > 0)):
        bad = arr[~(arr > 0)].flat[0] if arr.ndim else float(arr)
        raise DomainError(f"asset price must be positive, got {bad!r}", bad)
    return arr


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


# ---------------------------------------------------------------------------
# vectorised kernels (no validation; the engine calls these in its hot loop)

def score(s, params: ModelParams):
    return (np.log(params.barrier / s) - params.drift) / params.vol


def survival_pair(sc):
    """Return (Phi(score), Phi(-score)) without cancellation in either."""
    return special.ndtr(sc), special.ndtr(-sc)


def f_partials(sc, s, params: ModelParams):
    """d Phi(score) / d(barrier, mu, sigma, s); d/d s0 is identically zero."""
    dens = _INV_SQRT_2PI * np.exp(-0.5 * sc * sc)
    vol = params.vol
    d_barrier = dens / (params.barrier * vol)
    d_mu = -dens * params.dt / vol
    d_sigma = dens * (math.sqrt(params.dt) - sc / params.sigma)
    d_s = -dens / (s * vol)
    return d_barrier, d_mu, d_sigma, d_s


def advance(s, weight, u, direction: Direction, params: ModelParams):
    """Conditioned GBM step.

    Up: z = Phi^-1(weight * u). Down: z = -Phi^-1(weight * (1 - u)), which is
    Phi^-1((1 - p) u + p) written without forming 1 - (1 - p)(1 - u).

    Returns the new level, the normal score z and a mask of clamped entries.
    """
    if direction is Direction.UP:
        arg = weight * u
    else:
        arg = weight * (1.0 - u)
    clamped = (arg < CLAMP_LO) | (arg > CLAMP_HI)
    arg = np.clip(arg, CLAMP_LO, CLAMP_HI)
    z = special.ndtri(arg)
    if direction is Direction.DOWN:
        z = -z
    return s * np.exp(params.drift + params.vol * z), z, clamped


def g_partials(s_next, z, u, clamped, direction: Direction, params: ModelParams):
    """Partials of the step map: d/d(mu, sigma), d/d s and d/d weight.

    The partial with respect to ``weight`` follows from
    d Phi^-1(y)/dy = 1 / phi(Phi^-1(y)); clamped entries get zero.
    """
    d_mu = s_next * params.dt
    sqrt_dt = math.sqrt(params.dt)
    d_sigma = s_next * (sqrt_dt * z - params.sigma * params.dt)
    dens = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    lever = u if direction is Direction.UP else -(1.0 - u)
    d_weight = np.where(clamped, 0.0, s_next * params.vol * lever / dens)
    return d_mu, d_sigma, d_weight


# ---------------------------------------------------------------------------
# public single-step operations

def survival_prob(s, params: ModelParams):
    """Probability that the next observation lies below the barrier."""
    arr = _check_positive(s)
    return _out(special.ndtr(score(arr, params)), s)


def _check_step_inputs(p, u):
    p_arr = np.asarray(p, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0) & (u_arr < 1))):
        raise DomainError("uniform variate must lie in (0, 1)", u)
    if np.any(~((p_arr >= 0) & (p_arr <= 1))):
        raise DomainError("probability must lie in [0, 1]", p)
    return p_arr, u_arr


def step_up_out(p, s, params: ModelParams, u):
    """Next level conditioned to end below the barrier: s*exp(drift + vol*Phi^-1(p*u))."""
    s_arr = _check_positive(s)
    p_arr, u_arr = _check_step_inputs(p, u)
    nxt, _, clamped = advance(s_arr, p_arr, u_arr, Direction.UP, params)
    if np.any(clamped & (p_arr < DEAD_WEIGHT)):
        raise DomainError("p*u is zero after clamping", p)
    return _out(nxt, s)


def step_down_out(p, s, params: ModelParams, u):
    """Next level conditioned to end above the barrier: s*exp(drift + vol*Phi^-1((1-p)u + p))."""
    s_arr = _check_positive(s)
    p_arr, u_arr = _check_step_inputs(p, u)
    nxt, _, clamped = advance(s_arr, 1.0 - p_arr, u_arr, Direction.DOWN, params)
    if np.any(clamped & (1.0 - p_arr < DEAD_WEIGHT)):
        raise DomainError("(1-p)u + p is one after clamping", p)
    return _out(nxt, s)


def partials_f(s, params: ModelParams):
    """Gradient of the survival probability.

    Returns
    -------
    (GradTheta, d_s)
        d/d(s0, barrier, mu, sigma) with the s0 entry identically zero, and
        the partial with respect to the current level ``s``.
    """
    arr = _check_positive(s)
    sc = score(arr, params)
    d_barrier, d_mu, d_sigma, d_s = f_partials(sc, arr, params)
    zero = np.zeros_like(sc)
    grad = GradTheta(_out(zero, s), _out(d_barrier, s), _out(d_mu, s), _out(d_sigma, s))
    return grad, _out(d_s, s)


def partials_g(p, s, params: ModelParams, u, mode="up"):
    """Gradient of the conditioned step map.

    ``p`` is the survival probability Phi(score) in both modes (the down step
    uses 1 - p internally). Returns ``(GradTheta, d_s, d_pi)`` where ``d_pi``
    is the partial with respect to ``p``; s0 and barrier entries are zero.
    """
    mode = Direction(mode)
    s_arr = _check_positive(s)
    p_arr, u_arr = _check_step_inputs(p, u)
    weight = p_arr if mode is Direction.UP else 1.0 - p_arr
    nxt, z, clamped = advance(s_arr, weight, u_arr, mode, params)
    if np.any(clamped):
        raise DomainError("argument of the inverse normal CDF was clamped", p)
    d_mu, d_sigma, d_weight = g_partials(nxt, z, u_arr, clamped, mode, params)
    d_pi = d_weight if mode is Direction.UP else -d_weight
    zero = np.zeros_like(nxt)
    grad = GradTheta(_out(zero, s), _out(zero, s), _out(d_mu, s), _out(d_sigma, s))
    return grad, _out(nxt / s_arr, s), _out(d_pi, s)
