"""Two-layer ReLU network ``f(x; W) = m^{-1/2} sum_i a_i relu(<W_i, x>)`` and its
one-pass SGD update.

Only the inner weights ``W`` are trained; the outer signs ``a`` and the initial
weights ``W0`` are frozen at construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg.blas import dger

from .errors import DegenerateStateError, DimensionError, DomainError, FormatError
from .rng import stream

UNIT_TOL = 1e-9
CHECKPOINT_VERSION = 1


@dataclass
class NetworkState:
    W: np.ndarray
    W0: np.ndarray
    a: np.ndarray
    t: int = 0
    streams: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.W.shape != self.W0.shape or self.W.ndim != 2:
            raise DimensionError(f"W {self.W.shape} and W0 {self.W0.shape} must be equal m x d matrices")
        if self.a.shape != (self.W.shape[0],):
            raise DimensionError(f"a has shape {self.a.shape}, expected ({self.W.shape[0]},)")
        # frozen parts are read-only so accidental mutation fails loudly
        self.W0.setflags(write=False)
        self.a.setflags(write=False)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "NetworkState":
        """Snapshot: W is copied, the frozen arrays are shared."""
        return NetworkState(self.W.copy(), self.W0, self.a, self.t, dict(self.streams))


@dataclass(frozen=True)
class InverseTime:
    """``eta_t = theta / (t + 1)``, the regime covered by the convergence bound."""

    theta: float

    def __post_init__(self):
        if not 0.0 < self.theta < 0.25:
            raise DomainError(f"theta must lie in (0, 1/4), got {self.theta}")

    def eta(self, t: int) -> float:
        return self.theta / (t + 1)


@dataclass(frozen=True)
class Constant:
    eta_value: float

    def __post_init__(self):
        if not 0.0 < self.eta_value < 2.0:
            raise DomainError(f"constant step must lie in (0, 2), got {self.eta_value}")

    def eta(self, t: int) -> float:
        return self.eta_value


StepSchedule = InverseTime | Constant


@dataclass(frozen=True)
class StepReport:
    eta: float
    prediction: float
    residual: float
    active_count: int
    frob_delta: float


def _check_dims(m, d):
    if int(m) != m or int(d) != d or m < 1 or d < 1:
        raise DimensionError(f"need positive integer m, d; got m={m}, d={d}")


def init_iid(m: int, d: int, seed: int, run_index: int = 0) -> NetworkState:
    """Gaussian ``W0`` and Rademacher ``a``, both drawn from the ``init`` stream."""
    _check_dims(m, d)
    if m < 2:
        raise DimensionError(f"need m >= 2, got {m}")
    rng = stream(seed, "init", run_index)
    W0 = rng.standard_normal((m, d))
    a = rng.choice(np.array([1.0, -1.0]), size=m)
    return NetworkState(W0.copy(), W0, a, 0, {"init": {"seed": seed, "run_index": run_index}})


def init_symmetric(m: int, d: int, seed: int, run_index: int = 0) -> NetworkState:
    """Paired initialization ``W0 = [V; V]``, ``a = (b, -b)``, so ``f(.; W0) == 0``."""
    _check_dims(m, d)
    if m % 2:
        raise DimensionError(f"symmetric initialization needs even m, got {m}")
    rng = stream(seed, "init", run_index)
    half = rng.standard_normal((m // 2, d))
    b = rng.choice(np.array([1.0, -1.0]), size=m // 2)
    W0 = np.vstack([half, half])
    a = np.concatenate([b, -b])
    return NetworkState(W0.copy(), W0, a, 0, {"init": {"seed": seed, "run_index": run_index, "symmetric": True}})


def check_unit(x: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Validate (or, with ``normalize``, rescale) rows of ``x`` to unit norm."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if normalize:
        if np.any(norms == 0):
            raise DomainError("cannot normalize a zero input")
        return x / norms
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise DomainError(f"input must have unit norm (tolerance {UNIT_TOL}); got norm {norms.ravel()[:3]}")
    return x


def forward(state: NetworkState, x: np.ndarray, normalize: bool = False, weights: np.ndarray | None = None):
    """Network output at ``x`` (a single vector or an ``n x d`` batch)."""
    x = check_unit(x, normalize)
    W = state.W if weights is None else weights
    pre = x @ W.T
    return np.maximum(pre, 0.0) @ state.a / np.sqrt(state.m)


def sgd_step(state: NetworkState, x: np.ndarray, y: float, eta: float, measure: bool = True) -> StepReport:
    """One streaming SGD step on the squared loss; mutates ``state`` in place.

    Row ``j`` moves by ``(eta a_j / sqrt(m)) (y - f(x)) 1{<W_j, x> >= 0} x``.
    With ``measure`` the Frobenius norm of the increment actually stored in
    ``W`` is reported; otherwise ``frob_delta`` is nan. The arithmetic of the
    update is the same either way.
    """
    if not 0.0 < eta < 2.0:
        raise DomainError(f"step size must lie in (0, 2), got {eta}")
    x = check_unit(x)
    if x.shape != (state.d,):
        raise DimensionError(f"expected a single input of length {state.d}, got shape {x.shape}")
    sqrt_m = math.sqrt(state.m)
    pre = state.W @ x
    active = pre >= 0
    prediction = float(np.maximum(pre, 0.0) @ state.a / sqrt_m)
    residual = float(y) - prediction
    idx = np.flatnonzero(active)
    old_rows = state.W[idx] if measure else None
    coef = np.zeros(state.m)
    coef[idx] = eta * residual / sqrt_m * state.a[idx]
    _rank_one_update(state.W, coef, x)
    state.t += 1
    frob_delta = math.nan
    if measure:
        diff = state.W[idx] - old_rows  # the increment as actually stored
        frob_delta = math.sqrt(float(np.vdot(diff, diff)))
    return StepReport(float(eta), prediction, residual, len(idx), frob_delta)


def _rank_one_update(W: np.ndarray, c: np.ndarray, x: np.ndarray):
    """``W += c x^T`` in place; rows with ``c_j = 0`` are left bit-identical."""
    if W.dtype == np.float64 and W.flags.c_contiguous:
        # W.T is Fortran-ordered, so BLAS updates the buffer without a copy
        out = dger(1.0, x, c, a=W.T, overwrite_a=1)
        if np.shares_memory(out, W):
            return
        W[...] = out.T
    else:
        W += np.multiply.outer(c, x)


def step_identity_rhs(report: StepReport, m: int) -> float:
    """Right-hand side of the rank-one Frobenius identity for one step."""
    return report.eta / np.sqrt(m) * abs(report.residual) * np.sqrt(report.active_count)


def weight_drift(state: NetworkState) -> tuple[float, float]:
    """``(||W - W0||_F, ||W - W0||_F / ||W0||_F)``."""
    base = float(np.linalg.norm(state.W0))
    if base == 0.0:
        raise DegenerateStateError("||W0||_F = 0, relative drift undefined")
    absolute = float(np.linalg.norm(state.W - state.W0))
    return absolute, absolute / base


def save_checkpoint(path, state: NetworkState, generators: dict | None = None) -> Path:
    """Write an ``.npz`` holding the arrays plus a JSON metadata record.

    ``generators`` maps stream names to :class:`numpy.random.Generator`; their
    bit-generator states are stored so a resumed run continues the same streams.
    """
    path = Path(path)
    meta = {
        "format": "onepass_ntk.checkpoint",
        "version": CHECKPOINT_VERSION,
        "m": state.m,
        "d": state.d,
        "t": state.t,
        "streams": state.streams,
        "generator_states": {k: g.bit_generator.state for k, g in (generators or {}).items()},
    }
    with open(path, "wb") as fh:
        np.savez(fh, W=state.W, W0=state.W0, a=state.a, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))
    return path


def load_checkpoint(path) -> tuple[NetworkState, dict]:
    """Inverse of :func:`save_checkpoint`; returns the state and restored generators."""
    with np.load(path, allow_pickle=False) as z:
        try:
            meta = json.loads(z["meta"].tobytes().decode())
            W, W0, a = z["W"].copy(), z["W0"].copy(), z["a"].copy()
        except KeyError as exc:
            raise FormatError(f"checkpoint {path} is missing field {exc}") from None
    if meta.get("format") != "onepass_ntk.checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint header {meta.get('format')!r} v{meta.get('version')}")
    if W.shape != (meta["m"], meta["d"]):
        raise FormatError(f"W shape {W.shape} disagrees with header m={meta['m']}, d={meta['d']}")
    state = NetworkState(W, W0, a, int(meta["t"]), meta["streams"])
    generators = {}
    for name, st in meta["generator_states"].items():
        g = np.random.Generator(np.random.PCG64())
        g.bit_generator.state = st
        generators[name] = g
    return state, generators
