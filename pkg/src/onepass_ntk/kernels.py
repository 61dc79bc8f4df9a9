"""Closed-form NTK, empirical indicator kernels, sign-flip counts and the
one-step residual sandwich.

All functions are read-only on network states. ``x`` arguments accept either a
single unit vector or an ``n x d`` batch (results are then arrays).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .data import sample_sphere
from .errors import DomainError, UsageError
from .network import NetworkState, check_unit, forward

MODES = ("H0_vs_Phi", "Ht_vs_H0", "band_indicator")


def ntk_profile(u):
    """``h(u) = u (pi - arccos u) / (2 pi)`` with ``u`` clamped to [-1, 1]."""
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    return u * (np.pi - np.arccos(u)) / (2 * np.pi)


def ntk_phi(x, x_tilde):
    x, x_tilde = check_unit(x), check_unit(x_tilde)
    out = ntk_profile(np.sum(x * x_tilde, axis=-1))
    return float(out) if out.ndim == 0 else out


def _active(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    # rows of the result index inputs, columns index neurons; closed at zero
    return np.atleast_2d(x) @ weights.T >= 0


def _squeeze(v, x):
    v = np.asarray(v)
    return float(v[0]) if np.ndim(x) == 1 else v


def empirical_kernel(state: NetworkState, x, x_tilde, at_init: bool = False):
    """``<x, x~> (1/m) sum_i 1{<W_i, x> >= 0} 1{<W_i, x~> >= 0}`` with ``W(t)`` or ``W(0)``."""
    x, x_tilde = check_unit(x), check_unit(x_tilde)
    W = state.W0 if at_init else state.W
    both = _active(W, x) & _active(W, x_tilde)
    inner = np.sum(np.atleast_2d(x) * np.atleast_2d(x_tilde), axis=-1)
    return _squeeze(inner * both.mean(axis=1), x)


@dataclass(frozen=True)
class SignFlipStat:
    x: np.ndarray
    count: int
    fraction: float


def sign_flip_counts(state: NetworkState, xs) -> np.ndarray:
    """``S_t(x)`` for each row of ``xs``: neurons whose indicator at ``x`` differs from ``W(0)``."""
    xs = check_unit(xs)
    return np.sum(_active(state.W, xs) != _active(state.W0, xs), axis=1)


def sign_flip_count(state: NetworkState, x) -> SignFlipStat:
    x = check_unit(x)
    count = int(sign_flip_counts(state, x)[0])
    return SignFlipStat(x, count, count / state.m)


@dataclass(frozen=True)
class ResidualReport:
    f_change: float | np.ndarray
    H: float | np.ndarray
    L: float | np.ndarray
    M: float | np.ndarray
    epsilon: float | np.ndarray
    lower: float | np.ndarray
    upper: float | np.ndarray
    # flip-count bounds at the probe, used by the domination audits
    H0: float | np.ndarray = 0.0
    flips_prev: int | np.ndarray = 0
    flips_next: int | np.ndarray = 0
    flips_sample: int = 0

    def sandwich_slack(self):
        """Largest violation of ``lower <= f_change <= upper`` (<= 0 when it holds)."""
        return np.maximum(np.asarray(self.lower) - self.f_change, np.asarray(self.f_change) - self.upper)

    def epsilon_slack(self, eta: float, g: float):
        """Largest violation of ``-eta L g <= epsilon <= -eta M g``."""
        lo, hi = -eta * np.asarray(self.L) * g, -eta * np.asarray(self.M) * g
        return np.maximum(lo - self.epsilon, np.asarray(self.epsilon) - hi)

    def domination_slacks(self, m: int) -> dict:
        """Pointwise flip-domination margins (all <= 0 when the bounds hold)."""
        flips_x = np.asarray(self.flips_prev) + np.asarray(self.flips_next)
        return {
            "H_drift": np.abs(np.asarray(self.H) - self.H0) - (np.asarray(self.flips_prev) + self.flips_sample) / m,
            "L": np.abs(self.L) - flips_x / m,
            "M": np.abs(self.M) - flips_x / m,
        }


def residual_bounds(prev: NetworkState, nxt: NetworkState, sample, eta: float, x) -> ResidualReport:
    """Decompose the one-step change of ``f`` at probe(s) ``x`` into kernel terms.

    ``nxt`` must be ``prev`` advanced by one SGD step on ``sample = (X_t, y_t)``
    with step ``eta``. ``L``/``M`` collect the indicator changes at ``x`` over
    the positive / negative outer-weight neurons.
    """
    if nxt.t != prev.t + 1:
        raise UsageError(f"snapshots are not consecutive: t_prev={prev.t}, t_next={nxt.t}")
    X_t, y_t = sample
    X_t = check_unit(X_t)
    x = check_unit(x)
    m = prev.m
    g = float(y_t) - float(forward(prev, X_t))

    act_sample = _active(prev.W, X_t)[0]
    act_prev = _active(prev.W, x)
    act_next = _active(nxt.W, x)
    inner = np.atleast_2d(x) @ X_t

    H = inner * np.mean(act_prev & act_sample, axis=1)
    change = (act_next.astype(np.int8) - act_prev.astype(np.int8)) * act_sample
    pos = prev.a > 0
    L = inner * change[:, pos].sum(axis=1) / m
    M = inner * change[:, ~pos].sum(axis=1) / m

    f_change = np.atleast_1d(forward(nxt, x) - forward(prev, x))
    epsilon = -f_change + eta * H * g

    act0 = _active(prev.W0, x)
    H0 = inner * np.mean(act0 & _active(prev.W0, X_t)[0], axis=1)
    flips_prev = np.sum(act_prev != act0, axis=1)
    flips_next = np.sum(act_next != act0, axis=1)
    flips_sample = int(np.sum(act_sample != _active(prev.W0, X_t)[0]))

    return ResidualReport(
        f_change=_squeeze(f_change, x),
        H=_squeeze(H, x),
        L=_squeeze(L, x),
        M=_squeeze(M, x),
        epsilon=_squeeze(epsilon, x),
        lower=_squeeze(eta * (H + M) * g, x),
        upper=_squeeze(eta * (H + L) * g, x),
        H0=_squeeze(H0, x),
        flips_prev=_squeeze(flips_prev, x),
        flips_next=_squeeze(flips_next, x),
        flips_sample=flips_sample,
    )


@dataclass(frozen=True)
class DeviationReport:
    mode: str
    m: int
    d: int
    n_probes: int
    max_abs: float
    probe: dict
    # largest (|H_t - H_0| - (S_t(x) + S_t(x~)) / m) seen; only in Ht_vs_H0 mode
    domination_slack: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def kernel_sup_deviation(state: NetworkState, n_probes: int, rng: np.random.Generator,
                         mode: str = "H0_vs_Phi") -> DeviationReport:
    """Sampled supremum of a kernel deviation over random probes.

    The maximum over finitely many probes is only a lower bound on the true
    supremum over the sphere. The argmax probe is returned for local refinement.
    """
    if n_probes < 1:
        raise DomainError("n_probes must be >= 1")
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    d, m = state.d, state.m
    xs = sample_sphere(d, rng, n_probes)
    slack = None
    if mode == "band_indicator":
        R = np.exp(rng.uniform(math.log(1e-3), math.log(3.0), size=n_probes))
        frac = np.mean(np.abs(xs @ state.W0.T) <= R[:, None], axis=1)
        dev = np.abs(frac - erf(R / math.sqrt(2)))
        k = int(np.argmax(dev))
        probe = {"x": xs[k].tolist(), "R": float(R[k])}
    else:
        xt = sample_sphere(d, rng, n_probes)
        inner = np.sum(xs * xt, axis=1)
        A0x, A0y = _active(state.W0, xs), _active(state.W0, xt)
        H0 = inner * np.mean(A0x & A0y, axis=1)
        if mode == "H0_vs_Phi":
            dev = np.abs(H0 - ntk_profile(inner))
        else:
            Atx, Aty = _active(state.W, xs), _active(state.W, xt)
            dev = np.abs(inner * np.mean(Atx & Aty, axis=1) - H0)
            flips = np.sum(Atx != A0x, axis=1) + np.sum(Aty != A0y, axis=1)
            slack = float(np.max(dev - flips / m))
        k = int(np.argmax(dev))
        probe = {"x": xs[k].tolist(), "x_tilde": xt[k].tolist()}
    return DeviationReport(mode, m, d, n_probes, float(dev[k]), probe, slack)


def fit_sqrt_scaling(widths, deviations) -> tuple[float, float]:
    """Least-squares fit ``dev ~ C m^p`` on log scale; returns ``(p, C)``.

    A slope near -1/2 is the ``sqrt(d/m)`` behaviour of the concentration events.
    """
    lw, ld = np.log(np.asarray(widths, float)), np.log(np.asarray(deviations, float))
    p, logc = np.polyfit(lw, ld, 1)
    return float(p), float(np.exp(logc))
