"""Fast invariant suite behind ``onepass-ntk check``."""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import data as ds
from .errors import InvariantViolation
from .experiment import AuditConfig, ExperimentConfig, run_training
from .network import Constant, forward, init_symmetric, load_checkpoint, save_checkpoint, sgd_step
from .rng import stream
from .spectrum import (BoundParams, HProfile, beta_coefficient, c1, gegenbauer, gegenbauer_explicit, harmonic_dim,
                       ntk_spectrum, parseval_norm, projection_remainder)


def _lambda_one():
    errs = [abs(ntk_spectrum(d, 1).eigenvalue(1) - 1 / (4 * d)) for d in (3, 5, 10, 100, 500)]
    return max(errs) < 1e-12, f"max |lambda_1 - 1/(4d)| = {max(errs):.2e}"


def _odd_and_monotone():
    odd = max(abs(beta_coefficient(5, 2 * k + 1)) for k in range(1, 21))
    seq = [beta_coefficient(5, 1), beta_coefficient(5, 0)] + [beta_coefficient(5, 2 * k) for k in range(1, 11)]
    mono = all(a >= b for a, b in zip(seq, seq[1:])) and seq[-1] > 0
    return odd < 1e-12 and mono, f"max odd |beta| = {odd:.2e}, monotone to beta_20: {mono}"


def _parseval_linear():
    err = max(abs(parseval_norm(d, HProfile.linear()).value - 1 / d) for d in (3, 5, 10))
    return err < 1e-10, f"max |Parseval - 1/d| = {err:.2e}"


def _remainders():
    vals = [projection_remainder(5, HProfile.linear(), r) for r in (1, 2, 3)]
    c_1, c_2 = projection_remainder(5, HProfile.constant(), 1), projection_remainder(5, HProfile.constant(), 2)
    ok = max(vals) < 1e-12 and abs(c_1 - 1) < 1e-12 and c_2 < 1e-12
    return ok, f"linear R = {max(vals):.1e}, constant R(1) = {c_1:.12g}, R(2) = {c_2:.1e}"


def _gegenbauer():
    xs = np.array([-1, -0.3, 0, 0.7, 1.0])
    # relative to C_n(1) = max |C_n| on [-1, 1]; pointwise relative error is meaningless near roots
    err = max(float(np.max(np.abs(gegenbauer(lam, n, xs) - gegenbauer_explicit(lam, n, xs)))
                    / abs(gegenbauer(lam, n, 1.0)))
              for lam in (0.5, 1.5, 249) for n in range(13))
    dims_ok = harmonic_dim(3, 2) == 5 and harmonic_dim(7, 1) == 7 and harmonic_dim(4, 0) == 1
    return err < 1e-10 and dims_ok, f"recurrence vs explicit {err:.1e}, dims ok: {dims_ok}"


def _sgd_audit():
    cfg = ExperimentConfig(d=5, m=64, target="teacher", tau=0.1, schedule=Constant(0.2), T=300, eval_every=50,
                           n_eval=50, n_runs=1, audit=AuditConfig(1, 5, 100), seed=11)
    try:
        tr = run_training(cfg)
    except InvariantViolation as exc:
        return False, f"{exc} {exc.record}"
    worst = tr.audit["max_slack"]
    return True, f"sandwich {worst['sandwich']:.1e}, flips L {worst['L']:.1e}, frob {worst['frob_rel']:.1e}"


def _symmetric_null():
    worst = 0.0
    for m in (2, 100, 1000):
        st = init_symmetric(m, 5, 3)
        xs = ds.sample_sphere(5, stream(3, "probe"), 1000)
        worst = max(worst, float(np.max(np.abs(forward(st, xs)))))
    return worst < 1e-12, f"max |f(x; W0)| = {worst:.1e}"


def _c1():
    v = c1(BoundParams(0.1, 1.0))
    return abs(v - 0.19946) < 1e-4, f"c_1(0.1) = {v:.12g}"


def _checkpoint():
    st = init_symmetric(8, 3, 5)
    rng = stream(5, "train")
    for _ in range(3):
        x = ds.sample_sphere(3, rng)
        sgd_step(st, x, 1.0, 0.1)
    with tempfile.TemporaryDirectory() as tmp:
        p = save_checkpoint(Path(tmp) / "c.npz", st, {"train": rng})
        back, gens = load_checkpoint(p)
    ok = (np.array_equal(back.W, st.W) and np.array_equal(back.W0, st.W0) and np.array_equal(back.a, st.a)
          and back.t == st.t and gens["train"].standard_normal() == rng.standard_normal())
    return ok, "bit-exact round trip" if ok else "round trip mismatch"


CHECKS = [
    ("lambda_1 = 1/(4d)", _lambda_one),
    ("odd betas vanish, spectrum monotone", _odd_and_monotone),
    ("Parseval of the linear profile", _parseval_linear),
    ("projection remainders", _remainders),
    ("Gegenbauer recurrence and dimensions", _gegenbauer),
    ("SGD step identities and kernel audits", _sgd_audit),
    ("symmetric initialization is null", _symmetric_null),
    ("bound constant c_1", _c1),
    ("checkpoint round trip", _checkpoint),
]


def run_checks(echo=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported rather than raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
