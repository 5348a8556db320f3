import math

import numpy as np
import pytest

from barrier_oss.coco import (
    CalibrationProblem,
    CoCoSpec,
    Method,
    calibrate,
    coco_price,
    corporate_bond_value,
    jacobian_fd,
    jacobian_pathwise,
    residuals,
)
from barrier_oss.errors import ConfigurationError

N = 100_000


def test_table2_instruments():
    a, b = CoCoSpec.table2()
    assert (a.s0, a.maturity, a.n_coupons) == (0.6075, 8.5, 17)
    assert (b.s0, b.maturity, b.n_coupons) == (0.62, 8.0, 16)
    assert a.coupon == pytest.approx(375.0)
    assert a.conversion_ratio == pytest.approx(1000 / 0.59)


def test_bond_value_closed_form():
    spec = CoCoSpec(coupon_rate=0.1, maturity=1.0)
    expected = 50 * math.exp(-0.0342 * 0.5) + 1050 * math.exp(-0.0342)
    assert corporate_bond_value(spec) == pytest.approx(expected, rel=1e-14)


def test_unreachable_trigger_gives_bond_value():
    spec = CoCoSpec.table2()[0]
    value = coco_price(spec, 1e-8, 0.4, 20_000, 3)
    assert abs(value.price - corporate_bond_value(spec)) <= 3 * value.price_stderr + 1e-9


def test_barrier_above_spot_rejected():
    with pytest.raises(ConfigurationError):
        coco_price(CoCoSpec.table2()[0], 0.7, 0.4, 100, 1)
    with pytest.raises(ConfigurationError):
        coco_price(CoCoSpec.table2()[0], 0.4, 0.4, 100, 1, estimator="quasi")


@pytest.mark.parametrize("spec", CoCoSpec.table2())
def test_oss_and_standard_agree(spec):
    oss = coco_price(spec, 0.4, 0.4, N, 5)
    std = coco_price(spec, 0.4, 0.4, N, 6, estimator="standard")
    assert abs(oss.price - std.price) <= 3 * math.hypot(oss.price_stderr, std.price_stderr)
    assert oss.price_stderr < std.price_stderr
    assert math.isnan(std.d_barrier)


def test_pathwise_sensitivities_match_crn_differences():
    spec = CoCoSpec.table2()[1]
    base = coco_price(spec, 0.4, 0.4, 20_000, 8)
    h = 1e-5
    d_b = (coco_price(spec, 0.4 + h, 0.4, 20_000, 8).price - coco_price(spec, 0.4 - h, 0.4, 20_000, 8).price) / (2 * h)
    d_s = (coco_price(spec, 0.4, 0.4 + h, 20_000, 8).price - coco_price(spec, 0.4, 0.4 - h, 20_000, 8).price) / (2 * h)
    assert base.d_barrier == pytest.approx(d_b, rel=1e-5)
    assert base.d_sigma == pytest.approx(d_s, rel=1e-5)


def test_degenerate_bond_has_zero_jacobian():
    spec = CoCoSpec(coupon_rate=0.0, conversion=False)
    value = coco_price(spec, 0.4, 0.4, 5000, 2)
    assert value.d_barrier == 0.0 and value.d_sigma == 0.0
    assert value.price == pytest.approx(corporate_bond_value(spec), rel=1e-14)


def self_targets(n, seed):
    specs = CoCoSpec.table2()
    return [(s, coco_price(s, 0.4, 0.4, n, seed, with_greeks=False).price) for s in specs]


def test_residuals_vanish_at_truth_with_shared_seed():
    problem = CalibrationProblem(self_targets(5000, 4), n_paths=5000, seed=4)
    r = residuals(problem, np.array([0.4, 0.4]))
    assert r.shape == (2,)
    assert np.all(r == 0.0)


def test_residual_noise_against_large_benchmark():
    targets = self_targets(2_000_000, 99)
    problem = CalibrationProblem(targets, n_paths=N, seed=4)
    r = residuals(problem, np.array([0.4, 0.4]))
    for (spec, _), res in zip(targets, r):
        se = coco_price(spec, 0.4, 0.4, N, 4, with_greeks=False).price_stderr
        assert abs(res) <= 3 * se


def test_jacobians_agree_and_have_full_rank():
    problem = CalibrationProblem(self_targets(20_000, 4), n_paths=20_000, seed=4)
    x = np.array([0.4, 0.4])
    jp = jacobian_pathwise(problem, x)
    problem.method = Method.GAUSS_NEWTON_FD
    jf = jacobian_fd(problem, x)
    assert np.allclose(jp, jf, rtol=1e-4)
    assert np.linalg.svd(jp, compute_uv=False).min() > 0


def test_problem_validation():
    inst = [(CoCoSpec(), 1000.0)]
    with pytest.raises(ConfigurationError):
        CalibrationProblem(inst, initial=(0.5, -0.1))
    with pytest.raises(ConfigurationError):
        CalibrationProblem(inst, method="gauss_newton_pathwise", estimator="standard")
    with pytest.raises(ConfigurationError):
        CalibrationProblem([])
    with pytest.raises(ConfigurationError):
        CalibrationProblem(inst, bounds=((0.01, 0.7), (0.01, 2.0)))


def test_batch_accounting():
    targets = self_targets(5000, 1)
    x = np.array([0.45, 0.35])
    pw = CalibrationProblem(targets, n_paths=5000, seed=1, method="gauss_newton_pathwise")
    residuals(pw, x)
    jacobian_pathwise(pw, x)
    assert pw.batches == 1
    fd = CalibrationProblem(targets, n_paths=5000, seed=1, method="gauss_newton_fd")
    residuals(fd, x)
    jacobian_fd(fd, x)
    assert fd.batches == 1 + 2 * 2


def test_calibrate_recovers_self_consistent_truth():
    res = calibrate(CalibrationProblem(self_targets(5000, 1), n_paths=5000, seed=1))
    assert res.converged
    assert np.allclose(res.fitted, (0.4, 0.4), atol=1e-6)
    assert res.trace[0].x == (0.5, 0.5)
