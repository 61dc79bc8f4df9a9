"""Gegenbauer coefficients ``beta_ell`` of a dot-product profile ``h`` on the
sphere, the NTK eigen-blocks, Parseval sums and projection remainders.

For ``K(x, y) = h(<x, y>)`` on ``S^{d-1}`` (``d >= 3``, ``lambda = (d-2)/2``)::

    beta_ell = lambda * sum_m h_{ell+2m} / (2^{ell+2m} m! (lambda)_{ell+m+1})

where ``h_k`` is the ``k``-th derivative of ``h`` at 0. ``beta_ell`` is the
eigenvalue of the integral operator on the degree-``ell`` harmonics, whose
dimension is ``N_ell``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import mpmath
from scipy.special import gammaln

from ..errors import DimensionError, DomainError, NumericalError, TruncationError, TruncationWarning
from .gegenbauer import harmonic_dim

DEFAULT_TOL = 1e-14
MIN_TERMS = 4096


@dataclass(frozen=True)
class HProfile:
    """Taylor data of ``h`` at 0: a named closed form or a finite derivative list."""

    kind: str
    derivs: tuple = ()

    @classmethod
    def ntk(cls):
        return cls("NTK")

    @classmethod
    def linear(cls, scale: float = 1.0):
        return cls("Linear", (0.0, float(scale)))

    @classmethod
    def constant(cls, value: float = 1.0):
        return cls("Constant", (float(value),))

    @classmethod
    def custom(cls, derivs):
        return cls("Custom", tuple(float(v) for v in derivs))

    @property
    def finite(self) -> bool:
        return self.kind != "NTK"

    def derivative(self, k: int) -> float:
        if self.kind == "NTK":
            return ntk_h_derivative(k)
        return self.derivs[k] if k < len(self.derivs) else 0.0

    def log_abs_sign(self, k: np.ndarray):
        """``(log|h_k|, sign h_k)`` elementwise; zero derivatives get sign 0."""
        k = np.asarray(k, dtype=np.int64)
        if self.kind == "NTK":
            return _ntk_log_abs_sign(k)
        vals = np.array([self.derivative(int(j)) for j in k.ravel()]).reshape(k.shape)
        with np.errstate(divide="ignore"):
            return np.log(np.abs(vals)), np.sign(vals)

    def __call__(self, u):
        """Evaluate ``h`` (closed form for NTK, Taylor polynomial otherwise)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "NTK":
            uc = np.clip(u, -1.0, 1.0)
            return uc * (np.pi - np.arccos(uc)) / (2 * np.pi)
        out = np.zeros_like(u)
        for k in reversed(range(len(self.derivs))):
            out = out * u + self.derivs[k] / math.factorial(k)
        return out


def _log_double_factorial_odd(i):
    """``log (2i - 3)!!`` for integer ``i >= 1``; ``(-1)!! = 1``."""
    return gammaln(2 * i - 1) - (i - 1) * np.log(2.0) - gammaln(i)


def _ntk_log_abs_sign(k):
    k = np.asarray(k, dtype=np.int64)
    logabs = np.full(k.shape, -np.inf)
    sign = np.zeros(k.shape)
    logabs[k == 1], sign[k == 1] = np.log(0.25), 1.0
    even = (k >= 2) & (k % 2 == 0)
    i = k[even] // 2
    logabs[even] = np.log(i) - np.log(np.pi) + 2 * _log_double_factorial_odd(i)
    sign[even] = 1.0
    return logabs, sign


def ntk_h_derivative(k: int) -> float:
    """``k``-th derivative at 0 of ``h(u) = u (pi - arccos u) / (2 pi)``.

    ``h_0 = 0``, ``h_1 = 1/4``, ``h_{2i} = (i/pi) ((2i-3)!!)^2``, odd ``k >= 3`` vanish.
    """
    if k < 0:
        raise DomainError(f"derivative order must be >= 0, got {k}")
    logabs, sign = _ntk_log_abs_sign(np.array([k]))
    if not sign[0]:
        return 0.0
    with np.errstate(over="ignore"):  # past k ~ 300 the value is beyond float range
        return float(sign[0] * np.exp(logabs[0]))


def _check_d(d):
    if int(d) != d or d < 3:
        raise DimensionError(f"spherical expansion needs integer d >= 3, got {d}")


class BetaResult(NamedTuple):
    value: float
    terms: int
    tail: float
    tail_error: float


def _log_fac(lam, ell, m):
    """log of ``lam / (2^{ell+2m} m! (lam)_{ell+m+1})``, continuous in ``m``."""
    return (np.log(lam) - (ell + 2 * m) * np.log(2.0) - gammaln(m + 1)
            - (gammaln(lam + ell + m + 1) - gammaln(lam)))


def _series_terms(lam, ell, profile, m0, m1):
    """Terms ``m0 <= m < m1`` of the beta series, assembled in log space."""
    m = np.arange(m0, m1)
    logh, sign = profile.log_abs_sign(ell + 2 * m)
    with np.errstate(invalid="ignore"):
        return np.where(sign != 0, sign * np.exp(logh + _log_fac(lam, ell, m.astype(float))), 0.0)


def _ntk_tail(lam, ell, M):
    """``sum_{m >= M} t_m`` for the even-degree NTK series by Euler-Maclaurin.

    With ``i = ell/2 + m`` the term continues analytically as
    ``Gamma(lam+1) i Gamma(i-1/2)^2 / (4 pi^2 Gamma(m+1) Gamma(lam+ell+m+1))``;
    the log-gamma differences cancel catastrophically in double precision at
    large ``m``, so the tail is evaluated with 30-digit arithmetic. Returns
    ``(tail, error_estimate)`` or ``None`` if the terms still grow at ``M``.
    """
    j = ell // 2
    with mpmath.workdps(30):
        lam_, M_ = mpmath.mpf(lam), mpmath.mpf(M)
        const = mpmath.loggamma(lam_ + 1) - mpmath.log(4 * mpmath.pi ** 2)

        def log_t(x):
            i = j + x
            return (const + mpmath.log(i) + 2 * mpmath.loggamma(i - mpmath.mpf(1) / 2)
                    - mpmath.loggamma(x + 1) - mpmath.loggamma(lam_ + ell + x + 1))

        def t(x):
            return mpmath.exp(log_t(x))

        dlog = (1 / (j + M_) + 2 * mpmath.digamma(j + M_ - mpmath.mpf(1) / 2)
                - mpmath.digamma(M_ + 1) - mpmath.digamma(lam_ + ell + M_ + 1))
        if dlog >= 0:
            return None
        t_M = t(M_)
        d1 = t_M * dlog
        d3 = mpmath.diff(t, M_, 3)
        integral = mpmath.quad(t, [M_, 4 * M_, 64 * M_, 4096 * M_, mpmath.inf])
        tail = integral + t_M / 2 - d1 / 12 + d3 / 720
        # first omitted Euler-Maclaurin term is of order t (p/M)^5 / 30240
        err = abs(t_M) * (abs(dlog) * 4) ** 5 / 30240
        return float(tail), float(err)


def _beta(d, ell, profile, tol=DEFAULT_TOL, min_terms=MIN_TERMS) -> BetaResult:
    _check_d(d)
    if ell < 0:
        raise DomainError(f"degree must be >= 0, got {ell}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    lam = (d - 2) / 2

    if profile.finite:
        n_terms = max(0, (len(profile.derivs) - ell + 1) // 2)
        if n_terms == 0:
            return BetaResult(0.0, 0, 0.0, 0.0)
        return BetaResult(math.fsum(_series_terms(lam, ell, profile, 0, n_terms)), n_terms, 0.0, 0.0)

    if ell % 2:
        # odd NTK derivatives vanish beyond h_1: at most the single m = 0 term
        return BetaResult(math.fsum(_series_terms(lam, ell, profile, 0, 1)), 1, 0.0, 0.0)

    # the terms grow until m ~ (ell/2)^2 / (lam + 3); sum well past the peak exactly
    M = max(min_terms, 8 * ell * ell)
    terms = _series_terms(lam, ell, profile, 0, M)
    head = math.fsum(terms)
    if head != 0 and abs(terms[-1]) * M <= tol * abs(head):
        return BetaResult(head, M, 0.0, abs(terms[-1]) * M)
    tail = _ntk_tail(lam, ell, M)
    if tail is None:
        raise TruncationError(f"beta_{ell} (d={d}): series terms still growing at m={M}",
                              partial_sum=head, last_term=float(terms[-1]))
    value = head + tail[0]
    if tail[1] > max(tol, 1e-12) * abs(value):
        raise TruncationError(f"beta_{ell} (d={d}): tail estimate uncertain ({tail[1]:.3g})",
                              partial_sum=head, last_term=float(terms[-1]))
    return BetaResult(value, M, tail[0], tail[1])


@lru_cache(maxsize=4096)
def _beta_cached(d, ell, profile, tol, min_terms):
    return _beta(d, ell, profile, tol, min_terms)


def beta_coefficient(d: int, ell: int, profile: HProfile | None = None, tol: float = DEFAULT_TOL,
                     min_terms: int = MIN_TERMS, details: bool = False):
    """Coefficient ``beta_ell(h)`` of the Gegenbauer expansion of ``h(<x, y>)``.

    Finite derivative lists are summed exactly. For the NTK profile the even
    series decays only like ``m^{-(lambda+2)}``, so a fixed cut-off is hopeless;
    the first ``max(min_terms, 8 ell^2)`` terms are summed exactly and the rest
    is added by Euler-Maclaurin on the term's continuation in ``m``. Raises
    :class:`TruncationError` if the tail cannot be certified to ``tol``
    (floored at 1e-12) relative.
    """
    profile = profile or HProfile.ntk()
    res = _beta_cached(int(d), int(ell), profile, float(tol), int(min_terms))
    return res if details else res.value


@dataclass(frozen=True)
class EigenBlock:
    index: int
    ell: int
    beta: float
    multiplicity: int
    eigen_index_range: tuple  # 1-based, inclusive


@dataclass(frozen=True)
class SpectralTable:
    d: int
    lambda_param: float
    blocks: tuple
    truncation: dict = field(default_factory=dict)

    @property
    def betas(self) -> dict:
        return {b.ell: b.beta for b in self.blocks}

    @property
    def dims(self) -> dict:
        return {b.ell: b.multiplicity for b in self.blocks}

    @property
    def eigenvalues(self) -> list:
        return [b.beta for b in self.blocks]

    def eigenvalue(self, k: int) -> float:
        """Eigenvalue of block ``k`` (1-based)."""
        return self.blocks[k - 1].beta

    def block_of_eigen_index(self, i: int) -> EigenBlock:
        """Block containing the ``i``-th eigenfunction (1-based, multiplicities counted)."""
        for b in self.blocks:
            lo, hi = b.eigen_index_range
            if lo <= i <= hi:
                return b
        raise DomainError(f"eigen-index {i} lies beyond the {len(self.blocks)} tabulated blocks")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "lambda": self.lambda_param,
            "blocks": [asdict(b) | {"eigen_index_range": list(b.eigen_index_range)} for b in self.blocks],
            "truncation": self.truncation,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def block_degree(k: int) -> int:
    """Harmonic degree of NTK eigen-block ``k``: 1, 0, 2, 4, 6, ..."""
    if k < 1:
        raise DomainError(f"block index must be >= 1, got {k}")
    return 1 if k == 1 else 2 * (k - 2)


def ntk_spectrum(d: int, K: int, tol: float = DEFAULT_TOL) -> SpectralTable:
    """First ``K`` distinct NTK eigenvalue blocks, ordered ``beta_1, beta_0, beta_2, beta_4, ...``."""
    _check_d(d)
    if K < 1:
        raise DomainError(f"need K >= 1, got {K}")
    blocks, start, terms = [], 1, {}
    for k in range(1, K + 1):
        ell = block_degree(k)
        res = beta_coefficient(d, ell, HProfile.ntk(), tol, details=True)
        n = harmonic_dim(d, ell)
        blocks.append(EigenBlock(k, ell, res.value, n, (start, start + n - 1)))
        terms[ell] = {"terms": res.terms, "tail": res.tail, "tail_error": res.tail_error}
        start += n
    vals = [b.beta for b in blocks]
    slack = 1e-10
    for k in range(1, len(vals)):
        if vals[k] > vals[k - 1] * (1 + slack):
            raise NumericalError(f"NTK spectrum not monotone at block {k + 1}: {vals[k]} > {vals[k - 1]}")
    if vals[-1] <= 0:
        raise NumericalError(f"non-positive NTK eigenvalue {vals[-1]}")
    return SpectralTable(int(d), (d - 2) / 2, tuple(blocks),
                         {"max_ell": max(b.ell for b in blocks), "tol": tol, "series": terms})


class ParsevalResult(NamedTuple):
    value: float
    converged: bool
    max_ell: int
    last_contribution: float


def block_contribution(d: int, ell: int, profile: HProfile, tol: float = DEFAULT_TOL) -> float:
    """``beta_ell(h)^2 N_ell``: squared norm of the degree-``ell`` component of ``h(<w, .>)``."""
    beta = beta_coefficient(d, ell, profile, tol)
    return 0.0 if beta == 0.0 else beta * beta * float(harmonic_dim(d, ell))


def _degree_limit(profile):
    return len(profile.derivs) - 1 if profile.finite else None


def parseval_norm(d: int, profile: HProfile, max_ell: int = 200, tol: float = 1e-13) -> ParsevalResult:
    """Partial Parseval sum ``sum_{ell <= max_ell} beta_ell^2 N_ell`` (the squared L2 norm).

    Stops early once three consecutive non-vanishing degrees contribute less
    than ``tol`` times the running total.
    """
    _check_d(d)
    limit = _degree_limit(profile)
    contribs, run, last = [], 0, 0.0
    for ell in range(max_ell + 1):
        if limit is not None and ell > limit:
            return ParsevalResult(math.fsum(contribs), True, ell - 1, 0.0)
        c = block_contribution(d, ell, profile)
        contribs.append(c)
        if c == 0.0:  # vanishing degrees say nothing about the tail
            continue
        last = c
        total = math.fsum(contribs)
        run = run + 1 if c <= tol * total else 0
        if run >= 3 and ell >= 2:
            return ParsevalResult(total, True, ell, last)
    return ParsevalResult(math.fsum(contribs), False, max_ell, last)


def top_block_degrees(r: int) -> set:
    return {block_degree(k) for k in range(1, r + 1)}


def projection_remainder(d: int, target_profile: HProfile, r: int, tol: float = 1e-13,
                         max_ell: int = 200) -> float:
    """``R(f, r)``: L2 norm of ``f = h(<w, .>)`` outside the top ``r`` NTK eigen-blocks.

    Odd degrees ``>= 3`` carry NTK eigenvalue 0, so they always belong to the
    remainder. Warns with bracketing values if the tail has not settled by
    ``max_ell``.
    """
    _check_d(d)
    if r < 1:
        raise DomainError(f"need r >= 1, got {r}")
    head = top_block_degrees(r)
    limit = _degree_limit(target_profile)
    tail, total, run, last = [], [], 0, 0.0
    top = max(head)
    for ell in range(max_ell + 1):
        if limit is not None and ell > limit:
            return math.sqrt(math.fsum(tail))
        c = block_contribution(d, ell, target_profile)
        total.append(c)
        if ell not in head:
            tail.append(c)
        if c == 0.0:
            continue
        last = c
        run = run + 1 if c <= tol * math.fsum(total) else 0
        if run >= 3 and ell > top:
            return math.sqrt(math.fsum(tail))
    lo = math.fsum(tail)
    # ell^-p tails: the next max_ell terms of size <= last bound the rest roughly
    warnings.warn(
        f"R(f, {r}) tail not converged at ell={max_ell}; squared remainder in "
        f"[{lo:.6g}, {lo + last * max_ell:.6g}]",
        TruncationWarning,
        stacklevel=2,
    )
    return math.sqrt(lo)


def funk_hecke_beta(d: int, ell: int, h, n_nodes: int = 400) -> float:
    """Independent route to ``beta_ell``: ``E_U[h(U) C_ell(U) / C_ell(1)]`` by quadrature.

    ``U = <w, X>`` has density proportional to ``(1 - u^2)^{(d-3)/2}``; with
    ``u = cos(phi)`` the integrand is smooth even for the NTK profile, so
    Gauss-Legendre in ``phi`` converges fast.
    """
    from .gegenbauer import gegenbauer, gegenbauer_at_one

    _check_d(d)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    phi = (nodes + 1) * np.pi / 2
    w = weights * np.pi / 2
    u = np.cos(phi)
    lam = (d - 2) / 2
    dens = np.exp(gammaln(d / 2) - 0.5 * np.log(np.pi) - gammaln((d - 1) / 2)) * np.sin(phi) ** (d - 2)
    P = gegenbauer(lam, ell, u) / (gegenbauer(lam, ell, 1.0) if ell <= 200 else gegenbauer_at_one(lam, ell))
    return float(np.sum(w * dens * h(u) * P))
