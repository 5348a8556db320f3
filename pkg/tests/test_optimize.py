import math

import numpy as np
import pytest

from barrier_oss.errors import OptimizationError
from barrier_oss.optimize import gauss_newton, nelder_mead, project


def test_project_clips_to_box():
    assert np.array_equal(project([-1.0, 5.0], ((0, 1), (0, 2))), [0.0, 2.0])
    assert np.array_equal(project([3.0], None), [3.0])


def test_nelder_mead_quadratic_bowl():
    a = np.array([0.3, -1.2])
    res = nelder_mead(lambda x: float(np.sum((x - a) ** 2)), [1.0, 1.0], max_iter=200, tol=1e-8)
    assert res.converged and res.iterations <= 200
    assert np.allclose(res.fitted, a, atol=1e-6)
    assert res.trace[0].iteration == 0 and len(res.trace) == res.iterations + 1


def test_nelder_mead_respects_bounds():
    res = nelder_mead(lambda x: float(np.sum((x - 5.0) ** 2)), [0.5, 0.5], bounds=((0, 1), (0, 2)))
    assert np.allclose(res.fitted, [1.0, 2.0], atol=1e-6)


def test_nelder_mead_non_finite_objective_carries_trace():
    calls = []

    def objective(x):
        calls.append(1)
        return math.nan if len(calls) > 8 else float(np.sum(x**2))

    with pytest.raises(OptimizationError) as info:
        nelder_mead(objective, [1.0, 1.0])
    assert info.value.trace


def test_gauss_newton_linear_residuals_one_step():
    a = np.array([[2.0, 1.0], [1.0, 3.0], [0.0, 1.0]])
    b = np.array([1.0, -2.0, 0.5])
    res = gauss_newton(lambda x: a @ x - b, lambda x: a, [0.0, 0.0], damping=0.0)
    expected = np.linalg.lstsq(a, b, rcond=None)[0]
    assert np.allclose(res.fitted, expected, atol=1e-12)
    assert res.trace[1].iteration == 1
    assert np.allclose(res.trace[1].x, expected, atol=1e-12)


def test_gauss_newton_nonlinear_fit():
    t = np.linspace(0, 1, 20)
    y = 2.0 * np.exp(-1.5 * t)
    res = gauss_newton(lambda x: x[0] * np.exp(-x[1] * t) - y,
                       lambda x: np.column_stack([np.exp(-x[1] * t), -x[0] * t * np.exp(-x[1] * t)]),
                       [1.0, 0.5])
    assert res.converged
    assert np.allclose(res.fitted, [2.0, 1.5], atol=1e-8)


def test_gauss_newton_singular_jacobian_reports_cap():
    # residual depends on x0 + x1 only: the normal equations are singular
    res = gauss_newton(lambda x: np.array([x[0] + x[1] - 1.0, x[0] + x[1] - 3.0]),
                       lambda x: np.array([[1.0, 1.0], [1.0, 1.0]]), [0.0, 0.0])
    assert res.data_fit == pytest.approx(2.0, rel=1e-6)
    assert res.message


def test_gauss_newton_non_finite_residuals():
    with pytest.raises(OptimizationError):
        gauss_newton(lambda x: np.array([math.inf]), lambda x: np.array([[1.0]]), [0.0])
