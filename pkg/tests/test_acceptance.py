"""End-to-end acceptance checks. Each test prints one ``[PASS]/[FAIL] criterion N`` line.

All experiments use seed 0. Run with ``pytest tests/test_acceptance.py -s`` to
see the lines as they happen; they are also repeated in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from onepass_ntk import data as ds
from onepass_ntk.experiment import (AuditConfig, ExperimentConfig, aggregate_runs, run_experiment, run_training,
                                    with_overrides)
from onepass_ntk.kernels import kernel_sup_deviation
from onepass_ntk.network import Constant, InverseTime, forward, init_symmetric
from onepass_ntk.rng import stream
from onepass_ntk.spectrum import (BoundParams, HProfile, beta_coefficient, c1, ntk_spectrum, parseval_norm,
                                  projection_remainder, theorem_bound)
from onepass_ntk.spectrum.coefficients import _beta_cached

pytestmark = pytest.mark.slow

SEED = 0
SANDWICH_TOL = 1e-9
FIG1 = ExperimentConfig(d=5, m=1000, target="linear", tau=0.1, schedule=Constant(0.2), T=2000, n_eval=400,
                        n_runs=20, seed=SEED)


def cold():
    """Time the spectral code without help from coefficients cached by earlier tests."""
    _beta_cached.cache_clear()
    return time.perf_counter()


_RUNS = {}


def experiment(cfg):
    """Audited runs of ``cfg``, shared between criteria that use the same configuration."""
    key = cfg.config_hash()
    if key not in _RUNS:
        traces = run_experiment(cfg)
        worst = max(tr.audit["max_slack"]["sandwich"] for tr in traces)
        assert worst <= SANDWICH_TOL, f"sandwich slack {worst:.2e}"
        _RUNS[key] = aggregate_runs(traces)
    return _RUNS[key]


def at(agg, series, t):
    return float(agg.mean[series][int(np.flatnonzero(agg.t == t)[0])])


def test_lambda_one_closed_form(criterion):
    t0 = cold()
    errs = {d: abs(ntk_spectrum(d, 1).eigenvalue(1) - 1 / (4 * d)) for d in (3, 5, 10, 100, 500)}
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-12 and elapsed < 1.0
    criterion(1, ok, f"max |lambda_1 - 1/(4d)| = {max(errs.values()):.2e} over d in {sorted(errs)}, "
                     f"{elapsed:.2f} s")
    assert ok


def test_odd_coefficients_vanish_and_spectrum_decreases(criterion):
    t0 = cold()
    odd = max(abs(beta_coefficient(5, 2 * k + 1)) for k in range(1, 21))
    seq = [beta_coefficient(5, 1), beta_coefficient(5, 0)] + [beta_coefficient(5, 2 * k) for k in range(1, 21)]
    elapsed = time.perf_counter() - t0
    monotone = all(a >= b for a, b in zip(seq, seq[1:]))
    ok = odd < 1e-12 and monotone and seq[-1] > 0 and elapsed < 5.0
    criterion(2, ok, f"max |beta_odd| = {odd:.1e}, beta_1 >= beta_0 >= ... >= beta_40 = {seq[-1]:.3e} > 0: "
                     f"{monotone}, {elapsed:.2f} s")
    assert ok


def test_parseval_against_closed_form_and_monte_carlo(criterion):
    t0 = cold()
    lin = max(abs(parseval_norm(d, HProfile.linear()).value - 1 / d) for d in (3, 5, 10))
    res = parseval_norm(5, HProfile.ntk())
    # h(<w, x>)^2 with w = e_1, so only the first coordinate of x matters
    u = ds.sample_sphere(5, stream(SEED, "probe"), 10 ** 6)[:, 0]
    vals = HProfile.ntk()(u) ** 2
    mc, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))
    elapsed = time.perf_counter() - t0
    z = abs(res.value - mc) / se
    ok = lin < 1e-10 and res.converged and z < 3 and elapsed < 30
    criterion(3, ok, f"max |linear Parseval - 1/d| = {lin:.1e}; NTK Parseval {res.value:.10f} vs Monte Carlo "
                     f"{mc:.10f} +- {se:.1e} ({z:.2f} SE), {elapsed:.1f} s")
    assert ok


def test_projection_remainders_exact(criterion):
    lin = max(projection_remainder(d, HProfile.linear(), r) for d in (3, 5, 10) for r in range(1, 11))
    c_1 = projection_remainder(5, HProfile.constant(), 1)
    c_2 = projection_remainder(5, HProfile.constant(), 2)
    ok = lin < 1e-12 and abs(c_1 - 1) < 1e-12 and abs(c_2) < 1e-12
    criterion(4, ok, f"linear max R(f, r) = {lin:.1e} for r = 1..10; constant R(f, 1) = {c_1:.15g}, "
                     f"R(f, 2) = {c_2:.1e}")
    assert ok


@pytest.fixture(scope="module")
def micro_run():
    cfg = ExperimentConfig(d=5, m=256, target="teacher", tau=0.1, schedule=Constant(0.2), T=1000, eval_every=10,
                           n_eval=100, n_runs=1, audit=AuditConfig(1, 5, 200), seed=SEED)
    t0 = time.perf_counter()
    trace = run_training(cfg)
    return trace, time.perf_counter() - t0


def test_step_identities(micro_run, criterion):
    trace, elapsed = micro_run
    a = trace.audit
    worst = a["max_slack"]
    ok = (a["audited_steps"] == 1000 and worst["frob_rel"] <= 1e-9 and worst["sandwich"] <= SANDWICH_TOL
          and worst["epsilon"] <= SANDWICH_TOL and elapsed < 60)
    criterion(5, ok, f"{a['audited_steps']} audited steps x 5 probes: worst Frobenius relative error "
                     f"{worst['frob_rel']:.1e}, worst sandwich slack {worst['sandwich']:.1e}, {elapsed:.1f} s")
    assert ok


def test_kernel_domination(micro_run, criterion):
    worst = micro_run[0].audit["max_slack"]
    # the margins are |K| - flips / m; positive values beyond float rounding would be violations
    keys = ("H_drift", "L", "M", "Ht_vs_H0_sampled")
    ok = all(worst[k] <= 1e-12 for k in keys)
    criterion(6, ok, "worst margins " + ", ".join(f"{k} {worst[k]:.1e}" for k in keys) + " (<= 0 means dominated)")
    assert ok


def test_kernel_concentration(criterion):
    t0 = time.perf_counter()
    medians = {}
    for m in (100, 1000, 10000):
        devs = [kernel_sup_deviation(init_symmetric(m, 5, s), 1000, stream(s, "probe"), "H0_vs_Phi").max_abs
                for s in range(10)]
        medians[m] = float(np.median(devs))
    elapsed = time.perf_counter() - t0
    ok = medians[100] > medians[1000] > medians[10000] and medians[10000] < 0.05 and elapsed < 120
    criterion(7, ok, "median sampled sup |H0 - Phi|: " + ", ".join(f"m={m} {v:.4f}" for m, v in medians.items())
              + f", {elapsed:.1f} s")
    assert ok


def test_linear_target_reaches_noise_floor(criterion):
    t0 = time.perf_counter()
    agg = experiment(ExperimentConfig(d=5, m=1000, target="linear", tau=0.1, schedule=Constant(0.2), T=5000,
                                      n_eval=400, n_runs=20, seed=SEED))
    elapsed = time.perf_counter() - t0
    opt = agg.meta["optimal_norm"]
    final = float(agg.mean["mc_error_norm"][-1])
    ratio = float(agg.mean["mc_error"][-1] / agg.mean["mc_error"][0])
    ok = opt <= final <= opt + 0.1 and ratio < 0.5 and elapsed < 600
    criterion(8, ok, f"mean normalized error at T {final:.4f} in [{opt:.4f}, {opt + 0.1:.4f}]; "
                     f"final/initial error {ratio:.3f}; {elapsed:.0f} s")
    assert ok


def test_target_ordering(criterion):
    gaps = {}
    for target in ("linear", "teacher", "random_label"):
        agg = experiment(with_overrides(FIG1, target=target))
        gaps[target] = at(agg, "mc_error_norm", 2000) - agg.meta["optimal_norm"]
    ok = gaps["linear"] <= gaps["teacher"] <= gaps["random_label"]
    criterion(9, ok, "gap to optimum at t=2000: " + ", ".join(f"{k} {v:.4f}" for k, v in gaps.items()))
    assert ok


def test_width_reduces_flips_and_drift(criterion):
    flips, drift = {}, {}
    for m in (100, 1000, 2000):
        agg = experiment(with_overrides(FIG1, target="teacher", m=m))
        flips[m], drift[m] = at(agg, "sign_flip_frac", 2000), at(agg, "drift_rel", 2000)
    ok = flips[100] >= flips[1000] >= flips[2000] and drift[100] >= drift[1000] >= drift[2000]
    criterion(10, ok, "at t=2000 sign-flip fraction " + ", ".join(f"m={m} {v:.4f}" for m, v in flips.items())
              + "; relative drift " + ", ".join(f"m={m} {v:.4f}" for m, v in drift.items()))
    assert ok


def test_symmetric_initialization_is_null(criterion):
    worst = {}
    for m in (2, 100, 1000):
        xs = ds.sample_sphere(5, stream(SEED, "probe", m), 1000)
        worst[m] = float(np.max(np.abs(forward(init_symmetric(m, 5, SEED), xs))))
    ok = max(worst.values()) < 1e-12
    criterion(11, ok, "max |f(x; W0)| over 1000 inputs: " + ", ".join(f"m={m} {v:.1e}" for m, v in worst.items()))
    assert ok


def test_bound_evaluator(criterion):
    base = c1(BoundParams(0.1, 1.0))
    near = c1(BoundParams(0.249, 1.0))
    table = ntk_spectrum(5, 3)
    ts = np.arange(0, 10001, 10)
    monotone = all(np.all(np.diff(theorem_bound(BoundParams(0.1, 1.0, ell=ell), InverseTime(0.1), table, 0.0,
                                                ts)) <= 0) for ell in (1, 2, 3))
    ok = abs(base - 0.19946) <= 1e-4 and monotone and near > 10 * base
    criterion(12, ok, f"c_1(0.1) = {base:.6f}; bound non-increasing for blocks 1-3: {monotone}; "
                      f"c_1(0.249) / c_1(0.1) = {near / base:.1f}")
    assert ok


def test_mnist_held_out_error(mnist_paths, criterion):
    cfg = ExperimentConfig(d=784, m=2000, target="mnist", tau=0.0, schedule=Constant(0.02), T=10 ** 4,
                           eval_every=1000, n_eval=200, n_runs=5, seed=SEED, data_path=str(mnist_paths[0].parent),
                           holdout=0.2)
    t0 = time.perf_counter()
    traces = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    mse = [float(tr.mc_error[-1] ** 2) for tr in traces]
    sandwich = max(tr.audit["max_slack"]["sandwich"] for tr in traces)
    ok = float(np.mean(mse)) < 0.1 and sandwich <= SANDWICH_TOL and elapsed < 600
    criterion(13, ok, f"held-out MSE after 10^4 steps {np.mean(mse):.4f} (runs: "
                      + ", ".join(f"{v:.3f}" for v in mse) + f"), worst sandwich slack {sandwich:.1e}, "
                      f"{elapsed:.0f} s")
    assert ok
