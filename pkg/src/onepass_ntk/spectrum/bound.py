"""Right-hand side of the streaming-SGD convergence bound and the width condition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, PreconditionError
from ..network import InverseTime
from .coefficients import SpectralTable


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the bound. ``ell`` is an eigen-block index (1-based).

    In general (non-symmetric) mode ``delta`` is required; ``delta0_norm`` may
    carry a measured ``||Delta_0||``, otherwise the Markov-type cap
    ``sqrt((||f*||^2 + 1) / delta^2)`` is used.
    """

    theta: float
    f_star_norm: float
    tau: float = 0.0
    symmetric: bool = True
    delta: float | None = None
    ell: int = 1
    T: int | None = None
    delta0_norm: float | None = None

    def __post_init__(self):
        if not 0.0 < self.theta < 0.25:
            raise DomainError(f"theta must lie in (0, 1/4), got {self.theta}")
        if self.tau < 0 or self.f_star_norm < 0:
            raise DomainError("tau and ||f*|| must be non-negative")
        if not self.symmetric and (self.delta is None or not 0.0 < self.delta < 1.0):
            raise DomainError(f"general mode needs delta in (0, 1), got {self.delta}")
        if self.ell < 1:
            raise DomainError(f"block index ell must be >= 1, got {self.ell}")

    def with_ell(self, ell: int) -> "BoundParams":
        return BoundParams(self.theta, self.f_star_norm, self.tau, self.symmetric, self.delta, ell,
                           self.T, self.delta0_norm)


def sigma0(params: BoundParams) -> float:
    """Noise scale entering ``c_1``: ``sqrt(||f*||^2 + tau^2)`` under symmetric init."""
    if params.symmetric:
        return math.sqrt(params.f_star_norm ** 2 + params.tau ** 2)
    return math.sqrt((params.f_star_norm ** 2 + 1) / params.delta ** 2 + params.tau ** 2)


def c1(params: BoundParams) -> float:
    """``theta e^{2 theta} sqrt((2 - 4 theta) / (1 - 4 theta)) sigma_0``; blows up as theta -> 1/4."""
    th = params.theta
    return th * math.exp(2 * th) * math.sqrt((2 - 4 * th) / (1 - 4 * th)) * sigma0(params)


def initial_error(params: BoundParams) -> float:
    if params.symmetric:
        return params.f_star_norm
    if params.delta0_norm is not None:
        return params.delta0_norm
    return math.sqrt((params.f_star_norm ** 2 + 1) / params.delta ** 2)


def contraction(schedule, lam: float, ts) -> np.ndarray:
    """``prod_{k < t} (1 - eta_k lam)`` for each ``t`` in ``ts``, via cumulative log1p."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
    if np.any(ts < 0):
        raise DomainError("t must be >= 0")
    t_max = int(ts.max()) if ts.size else 0
    if t_max == 0:
        return np.ones(ts.shape)
    k = np.arange(t_max)
    if isinstance(schedule, InverseTime):
        etas = schedule.theta / (k + 1.0)
    else:
        etas = np.array([schedule.eta(int(j)) for j in k])
    prods = etas * lam
    if np.any(prods >= 1):
        bad = int(np.argmax(prods >= 1))
        raise PreconditionError(f"eta_k lambda = {prods[bad]:.6g} >= 1 at k={bad}")
    logs = np.concatenate([[0.0], np.cumsum(np.log1p(-prods))])
    return np.exp(logs[ts])


def theorem_bound(params: BoundParams, schedule, table: SpectralTable, remainder: float, t):
    """``prod_{k<t}(1 - eta_k lambda_ell) ||Delta_0|| + R(Delta_0, ell) + 2 c_1``.

    ``remainder`` is ``R(Delta_0, ell)`` for the block index in ``params``
    (``R(f*, ell)`` under symmetric init). ``t`` may be an int or an array.
    """
    if params.ell > len(table.blocks):
        raise DomainError(f"block {params.ell} not in a table of {len(table.blocks)} blocks")
    lam = table.eigenvalue(params.ell)
    out = contraction(schedule, lam, t) * initial_error(params) + remainder + 2 * c1(params)
    return float(out[0]) if np.ndim(t) == 0 else out


def bound_over_blocks(params: BoundParams, schedule, table: SpectralTable, remainders: dict, ts):
    """Bound minimized over the blocks in ``remainders`` (block index -> R).

    Returns ``(best, argmin_block, per_block)`` with ``per_block`` a
    ``len(remainders) x len(ts)`` array in sorted block order.
    """
    ells = sorted(remainders)
    curves = np.vstack([theorem_bound(params.with_ell(e), schedule, table, remainders[e], np.atleast_1d(ts))
                        for e in ells])
    idx = np.argmin(curves, axis=0)
    return curves.min(axis=0), np.asarray(ells)[idx], curves


@dataclass(frozen=True)
class WidthRequirement:
    """``c (d^2 + ((T+1)^{2 theta} / theta)^9 + (log T / delta)^9)`` kept in log space."""

    log_value: float
    log_summands: dict
    log_clamped: bool
    summand_values: tuple = ()

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709 else math.inf

    @property
    def log10_value(self) -> float:
        return self.log_value / math.log(10)

    def summands(self) -> dict:
        return dict(self.summand_values)


def required_width(d: int, T: int, theta: float, delta: float, c: float = 1.0) -> WidthRequirement:
    """Width condition of the bound. ``c`` is not known explicitly and must be supplied.

    For ``log T < 1`` the last summand uses ``max(log T, 1)`` and the result is flagged.
    """
    if c <= 0:
        raise DomainError("constant c must be positive")
    if not 0.0 < theta < 0.25:
        raise DomainError(f"theta must lie in (0, 1/4), got {theta}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if d < 1 or T < 1:
        raise DomainError("need d >= 1 and T >= 1")
    log_T = math.log(T)
    clamped = log_T < 1
    terms = {
        "d_squared": 2 * math.log(d),
        "horizon": 9 * (2 * theta * math.log(T + 1) - math.log(theta)),
        "confidence": 9 * (math.log(max(log_T, 1.0)) - math.log(delta)),
    }
    top = max(terms.values())
    log_sum = top + math.log(sum(math.exp(v - top) for v in terms.values()))
    # direct values where representable, so e.g. the d^2 term scales exactly
    direct = {"d_squared": c * d * d}
    for k in ("horizon", "confidence"):
        direct[k] = c * math.exp(terms[k]) if terms[k] < 709 else math.inf
    return WidthRequirement(math.log(c) + log_sum, {k: math.log(c) + v for k, v in terms.items()}, clamped,
                            tuple(direct.items()))
