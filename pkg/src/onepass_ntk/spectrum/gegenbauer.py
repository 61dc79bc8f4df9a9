"""Gegenbauer polynomials and spherical-harmonic dimensions."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from ..errors import DimensionError, DomainError, NumericalError


def _check_lambda(lam):
    if not lam > 0:
        raise DomainError(f"Gegenbauer parameter must be positive (d >= 3), got {lam}")


def gegenbauer(lambda_param: float, n: int, x):
    """``C_n^lambda(x)`` by the three-term recurrence

    ``k C_k = 2 x (k + lambda - 1) C_{k-1} - (k + 2 lambda - 2) C_{k-2}``.
    """
    _check_lambda(lambda_param)
    if n < 0:
        raise DomainError(f"degree must be >= 0, got {n}")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), 2 * lambda_param * x
    if n == 0:
        out = prev
    else:
        for k in range(2, n + 1):
            prev, cur = cur, (2 * x * (k + lambda_param - 1) * cur - (k + 2 * lambda_param - 2) * prev) / k
        out = cur
    return float(out) if out.ndim == 0 else out


def _poch_exact(a: Fraction, k: int) -> Fraction:
    out = Fraction(1)
    for j in range(k):
        out *= a + j
    return out


def gegenbauer_explicit(lambda_param: float, n: int, x):
    """Finite-sum form in powers of ``(1 - x) / 2``, evaluated in exact rational arithmetic.

    The sum alternates and cancels badly in floating point, so this is kept as
    an exact oracle for the recurrence (inputs are converted to fractions exactly).
    """
    _check_lambda(lambda_param)
    lam = Fraction(lambda_param)
    lead = _poch_exact(2 * lam, n) / math.factorial(n)
    coef = [(-1) ** k * math.comb(n, k) * _poch_exact(n + 2 * lam, k) / _poch_exact(lam + Fraction(1, 2), k)
            for k in range(n + 1)]

    def one(xv):
        s = (1 - Fraction(float(xv))) / 2
        return float(lead * sum(c * s ** k for k, c in enumerate(coef)))

    x = np.asarray(x, dtype=float)
    out = np.vectorize(one, otypes=[float])(x)
    return float(out) if out.ndim == 0 else out


def gegenbauer_at_one(lambda_param: float, n: int) -> float:
    """``C_n^lambda(1) = (2 lambda)_n / n!`` through log-gamma (no overflow for large n)."""
    _check_lambda(lambda_param)
    return math.exp(gammaln(2 * lambda_param + n) - gammaln(2 * lambda_param) - gammaln(n + 1))


def harmonic_dim(d: int, ell: int) -> int:
    """Dimension ``N_ell = ((ell + lambda) / lambda) C_ell^lambda(1)`` of degree-``ell`` harmonics."""
    if d < 3 or int(d) != d:
        raise DimensionError(f"harmonic_dim needs integer d >= 3, got {d}")
    if ell < 0:
        raise DomainError(f"degree must be >= 0, got {ell}")
    lam = (d - 2) / 2
    c1 = gegenbauer(lam, ell, 1.0) if ell <= 200 else gegenbauer_at_one(lam, ell)
    value = (ell + lam) / lam * c1
    exact = math.comb(ell + d - 1, d - 1) - math.comb(ell + d - 3, d - 1)
    if abs(value - exact) > 1e-6 * max(1.0, float(exact)):
        raise NumericalError(f"N_{ell} for d={d}: Gegenbauer value {value} is not the integer {exact}")
    return exact


def harmonic_dim_float(d: int, ell: int) -> float:
    return float(harmonic_dim(d, ell))
