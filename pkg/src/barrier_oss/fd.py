"""Finite-difference Greeks with common random numbers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError
from .model import GradTheta, ModelParams

__all__ = ["FdKind", "FdScheme", "FdGreek", "DEFAULT_DELTA", "bump_params", "greek_fd"]

DEFAULT_DELTA = {"s0": 1e-2, "barrier": 1e-2, "mu": 1e-4, "sigma": 1e-4}


class FdKind(str, enum.Enum):
    FORWARD = "forward"
    CENTRAL = "central"


@dataclass(frozen=True)
class FdScheme:
    kind: FdKind = FdKind.CENTRAL
    delta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FdKind(self.kind))
        if self.delta is not None and not self.delta > 0:
            raise DomainError(f"finite-difference step must be positive, got {self.delta!r}", self.delta)

    def step_for(self, which: str) -> float:
        return DEFAULT_DELTA[which] if self.delta is None else float(self.delta)


@dataclass(frozen=True)
class FdGreek:
    value: float
    evaluations: int
    stderr: float = math.nan


def bump_params(params: ModelParams, which: str, h: float) -> ModelParams:
    try:
        return replace(params, **{which: getattr(params, which) + h})
    except DomainError as exc:
        raise DomainError(f"bumping {which} by {h:+g} leaves its domain: {exc}", getattr(params, which)) from None


def greek_fd(pricer, params: ModelParams, which: str, scheme: FdScheme, n: int, seed: int, spec=None,
             **pricer_kwargs) -> FdGreek:
    """Difference quotient of ``pricer`` in parameter ``which``.

    Both evaluations share ``seed``, so the paths are common random numbers.
    ``pricer`` is called as ``pricer(params, spec, n, seed, keep_samples=True)``;
    the standard error comes from the per-path differences.
    """
    if which not in GradTheta.NAMES:
        raise ConfigurationError(f"unknown parameter {which!r}; expected one of {GradTheta.NAMES}")
    h = scheme.step_for(which)
    if scheme.kind is FdKind.FORWARD:
        lo_params, hi_params, width = params, bump_params(params, which, h), h
    else:
        lo_params, hi_params, width = bump_params(params, which, -h), bump_params(params, which, h), 2.0 * h
    hi = pricer(hi_params, spec, n, seed, keep_samples=True, **pricer_kwargs)
    lo = pricer(lo_params, spec, n, seed, keep_samples=True, **pricer_kwargs)
    value = (hi.pv - lo.pv) / width
    stderr = math.nan
    if hi.samples is not None and lo.samples is not None and n > 1:
        diff = (hi.samples[0] - lo.samples[0]) / width
        stderr = float(np.std(diff, ddof=1) / math.sqrt(n))
    return FdGreek(value=value, evaluations=2, stderr=stderr)
