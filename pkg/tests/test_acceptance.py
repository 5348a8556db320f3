"""Acceptance criteria 1-9. Each test carries a ``criterion_N`` marker; the
terminal summary prints one PASS/FAIL line per criterion."""

import filecmp
import math
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from barrier_oss.coco import TRUTH, CalibrationProblem, CoCoSpec, calibrate, jacobian_fd, jacobian_pathwise, residuals
from barrier_oss.engine import (
    CHUNK,
    digital_weights,
    price_oss,
    price_oss_pathwise,
    price_standard_mc,
    simulate_oss,
)
from barrier_oss.fd import FdScheme, greek_fd
from barrier_oss.model import GradTheta, InstrumentSpec, ModelParams
from barrier_oss.oracle import bs_call, quadrature_value
from barrier_oss.specialfn import uniform_block

UP_OUT = InstrumentSpec("up", "out", "vanilla_call")
DOWN_OUT = InstrumentSpec("down", "out", "vanilla_call")
DIGITAL_UP_IN = InstrumentSpec("up", "in", "digital", coupon=1.0)
SEED = 2024


# --- 1. gradient correctness -------------------------------------------------

@pytest.mark.criterion_1
def test_pathwise_greeks_match_crn_central_differences(measured):
    started = time.perf_counter()
    for s0 in (40.0, 45.0, 50.0, 55.0, 59.0):
        p = ModelParams.table1(s0=s0)
        pw = price_oss_pathwise(p, UP_OUT, 100_000, SEED)
        for name in GradTheta.NAMES:
            fd = greek_fd(price_oss, p, name, FdScheme("central"), 100_000, SEED, UP_OUT)
            value = pw.greeks[name]
            bound = max(1e-4 * abs(value), 3 * math.hypot(pw.greek_stderr[name], fd.stderr))
            assert abs(value - fd.value) <= bound, (s0, name, value, fd.value, bound)
    elapsed = time.perf_counter() - started
    measured("runtime [s]", elapsed, 60)
    assert elapsed < 60


# --- 2. oracle equivalence -----------------------------------------------------

def scaled_cases():
    for n_obs in (1, 2, 3):
        base = ModelParams.table1(n_obs=n_obs, dt=1.0 / n_obs)
        yield n_obs, "up-out", base, UP_OUT
        yield n_obs, "down-out", replace(base, barrier=40.0), DOWN_OUT
        yield n_obs, "digital up-in", base, DIGITAL_UP_IN


@pytest.mark.criterion_2
def test_oss_matches_quadrature_oracle(measured):
    started = time.perf_counter()
    failures = []
    for n_obs, label, p, spec in scaled_cases():
        mc = price_oss_pathwise(p, spec, 100_000, SEED)
        pv, grad = quadrature_value(p, spec)
        checks = [("pv", mc.pv, mc.pv_stderr, pv)]
        checks += [(n, mc.greeks[n], mc.greek_stderr[n], grad[n]) for n in GradTheta.NAMES]
        for name, est, se, ref in checks:
            # zero-spread estimates (one-date digital) are held to rounding level
            bound = max(3 * se, 1e-10 * max(1.0, abs(ref)))
            if abs(est - ref) > bound:
                failures.append((n_obs, label, name, est, ref, se))
    elapsed = time.perf_counter() - started
    measured("runtime [s]", elapsed, 120)
    assert not failures
    assert elapsed < 120


# --- 3. degenerate limit -------------------------------------------------------

@pytest.mark.criterion_3
def test_far_barrier_is_black_scholes(measured):
    p = ModelParams.table1(barrier=1e6)
    n = 1_000_000
    out = price_oss(p, UP_OUT, n, SEED)
    bs = bs_call(p.s0, p.strike, p.rate, p.mu, p.sigma, p.maturity)[0]
    assert bs == pytest.approx(6.6348, abs=5e-5)
    measured("|pv - BS| / se", abs(out.pv - bs) / out.pv_stderr, 3)
    assert abs(out.pv - bs) <= 3 * out.pv_stderr
    lowest = 1.0
    for start in range(0, n, CHUNK):
        u = uniform_block(SEED, start, min(CHUNK, n - start), p.n_obs)
        state = simulate_oss(p, "up", u, with_grad=False)
        lowest = min(lowest, min(float(s.min()) for s in state.survival))
    assert lowest >= 1 - 1e-12


# --- 4. digital telescoping --------------------------------------------------

@pytest.mark.criterion_4
def test_digital_in_plus_out_is_one_per_path():
    p = ModelParams.table1()
    for direction in ("up", "down"):
        q = p if direction == "up" else replace(p, barrier=45.0)
        u = uniform_block(SEED, 0, 10_000, q.n_obs)
        hit, survive = digital_weights(simulate_oss(q, direction, u, with_grad=False), direction)
        assert np.max(np.abs(hit + survive - 1.0)) <= 1e-12


@pytest.mark.criterion_4
@pytest.mark.parametrize("coupon", [1.0, 2.5])
def test_digital_in_plus_out_prices(coupon):
    p = ModelParams.table1()
    ins = price_oss(p, InstrumentSpec("up", "in", "digital", coupon=coupon), 50_000, SEED)
    outs = price_oss(p, InstrumentSpec("up", "out", "digital", coupon=coupon), 50_000, SEED)
    assert abs(ins.pv + outs.pv - coupon * p.discount) <= 1e-12 * coupon


# --- 5. variance reduction ---------------------------------------------------

@pytest.mark.criterion_5
@pytest.mark.parametrize("s0", [40.0, 50.0, 59.0])
def test_oss_variance_not_above_standard(s0, measured):
    p = ModelParams.table1(s0=s0)
    oss = price_oss(p, UP_OUT, 100_000, SEED)
    std = price_standard_mc(p, UP_OUT, 100_000, SEED)
    measured(f"variance ratio std/oss at S0={s0}", std.pv_variance / oss.pv_variance, 1)
    assert oss.pv_variance <= std.pv_variance


# --- 6. stability of FD Delta curves ------------------------------------------

@pytest.mark.criterion_6
def test_standard_fd_delta_curve_is_rougher(measured):
    base = ModelParams.table1()
    grid = np.arange(40.0, 60.0001, 0.5)
    tv = {}
    for label, pricer in (("standard", price_standard_mc), ("oss", price_oss)):
        curve = [greek_fd(pricer, replace(base, s0=s), "s0", FdScheme("forward", 1e-2), 1000, SEED, UP_OUT).value
                 for s in grid]
        tv[label] = float(np.sum(np.abs(np.diff(curve))))
    measured("total-variation ratio", tv["standard"] / tv["oss"], 5)
    assert tv["standard"] >= 5 * tv["oss"]


# --- 7. FD plateau versus pathwise --------------------------------------------

@pytest.mark.criterion_7
def test_fd_bias_plateau_against_pathwise(measured):
    p = ModelParams.table1(n_obs=2, dt=0.5)
    ref = quadrature_value(p, UP_OUT)[1].d_s0
    errors, stderrs = [], []
    for n in (10**3, 10**4, 10**5, 10**6, 10**7):
        pw = price_oss_pathwise(p, UP_OUT, n, SEED)
        errors.append(abs(pw.greeks.d_s0 - ref))
        stderrs.append(pw.greek_stderr.d_s0)
        assert errors[-1] <= 3 * stderrs[-1]
    # the error bound shrinks like 1/sqrt(n): a factor ~sqrt(10) per decade
    ratios = np.array(stderrs[:-1]) / np.array(stderrs[1:])
    assert np.all(np.abs(ratios - math.sqrt(10)) < 0.3)
    fd = greek_fd(price_oss, p, "s0", FdScheme("forward", 1e-1), 10**7, SEED, UP_OUT)
    fd_error = abs(fd.value - ref)
    measured("|FD - oracle| / |pathwise - oracle| at 1e7", fd_error / errors[-1], 1)
    assert fd_error > 3 * fd.stderr
    assert fd_error > errors[-1]


# --- 8. calibration recovery ---------------------------------------------------

CAL_SEED = 11


def problem(targets, **kw):
    return CalibrationProblem(list(zip(CoCoSpec.table2(), targets)), initial=(0.5, 0.5), seed=CAL_SEED, **kw)


@pytest.fixture(scope="module")
def nelder_mead_oss(benchmark_targets):
    return calibrate(problem(benchmark_targets, n_paths=100_000, method="nelder_mead", estimator="oss"))


@pytest.mark.criterion_8
def test_nelder_mead_oss_recovers_truth(nelder_mead_oss, measured):
    res = nelder_mead_oss
    measured("fitted barrier - truth", res.fitted[0] - TRUTH[0], 5e-3)
    measured("fitted sigma - truth", res.fitted[1] - TRUTH[1], 5e-3)
    assert abs(res.fitted[0] - TRUTH[0]) <= 5e-3 and abs(res.fitted[1] - TRUTH[1]) <= 5e-3


@pytest.mark.criterion_8
def test_gauss_newton_pathwise_recovers_truth(benchmark_targets, measured):
    res = calibrate(problem(benchmark_targets, n_paths=100_000, method="gauss_newton_pathwise"))
    measured("data fit", res.data_fit, 1e-6)
    assert abs(res.fitted[0] - TRUTH[0]) <= 5e-3 and abs(res.fitted[1] - TRUTH[1]) <= 5e-3
    assert res.data_fit < 1e-6


@pytest.mark.criterion_8
def test_standard_objective_fits_worse(benchmark_targets, nelder_mead_oss, measured):
    res = calibrate(problem(benchmark_targets, n_paths=10_000, method="nelder_mead", estimator="standard"))
    measured("data-fit ratio standard/oss", res.data_fit / nelder_mead_oss.data_fit, 10)
    assert res.data_fit >= 10 * nelder_mead_oss.data_fit


@pytest.mark.criterion_8
def test_jacobian_batch_cost(benchmark_targets):
    x = np.array([0.5, 0.5])
    pw = problem(benchmark_targets, n_paths=1000, method="gauss_newton_pathwise")
    residuals(pw, x)
    jacobian_pathwise(pw, x)
    fd = problem(benchmark_targets, n_paths=1000, method="gauss_newton_fd")
    residuals(fd, x)
    jacobian_fd(fd, x)
    dim = 2
    assert pw.batches == 1
    assert fd.batches == 1 + 2 * dim


# --- 9. determinism --------------------------------------------------------------

COMMANDS = [
    ["price", "--estimator", "oss_pathwise", "--n-paths", "40000"],
    ["price", "--estimator", "standard", "--n-paths", "40000", "--format", "json"],
    ["greeks", "--n-paths", "20000"],
    ["sweep", "--start", "50", "--stop", "51", "--step", "0.5", "--n-paths-list", "20000"],
    ["sweep", "--convergence", "--n-obs", "2", "--dt", "0.5", "--n-paths-list", "20000,40000"],
    ["oracle-check", "--n-obs", "2", "--dt", "0.5", "--n-paths", "40000"],
    ["calibrate", "--targets", "3291.98,3295.76", "--n-paths", "20000"],
]


def run_cli(args, out, threads):
    env = dict(os.environ, BARRIER_OSS_THREADS=str(threads))
    proc = subprocess.run([sys.executable, "-m", "barrier_oss.cli", *args, "--seed", "7", "--output", str(out)],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


@pytest.mark.criterion_9
@pytest.mark.parametrize("args", COMMANDS, ids=lambda a: "-".join(a[:2]))
def test_repeat_runs_are_byte_identical(args, tmp_path):
    outputs = {}
    for threads in (1, 8):
        first, second = tmp_path / f"a{threads}.out", tmp_path / f"b{threads}.out"
        run_cli(args, first, threads)
        run_cli(args, second, threads)
        assert filecmp.cmp(first, second, shallow=False)
        outputs[threads] = first
    assert filecmp.cmp(outputs[1], outputs[8], shallow=False)
    if args[0] == "calibrate":
        for threads in (1, 8):
            assert filecmp.cmp(tmp_path / f"a{threads}.trace.out", tmp_path / f"b{threads}.trace.out", shallow=False)
