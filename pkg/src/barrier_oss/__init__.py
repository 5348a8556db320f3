"""Monte Carlo pricing of discretely monitored barrier options with
one-step-survival paths and pathwise sensitivities, plus a CoCo-bond
calibration harness."""

from .coco import CalibrationProblem, CoCoSpec, CoCoValue, Method, calibrate, coco_price
from .engine import (
    EstimatorOutput,
    plain_pathwise,
    price_knock_in_parity,
    price_oss,
    price_oss_pathwise,
    price_standard_mc,
)
from .errors import BarrierOssError, ConfigurationError, DomainError, OptimizationError, UnsupportedError
from .fd import FdScheme, greek_fd
from .model import Direction, GradTheta, InstrumentSpec, Knock, ModelParams, PayoffKind
from .oracle import bs_call, quadrature_value

__version__ = "0.1.0"
