"""Streaming data ``(X, y)`` with ``y = f*(X) + e`` for the synthetic target
families and for an empirical (dataset) distribution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, DomainError, TargetLookupError
from .network import UNIT_TOL, check_unit

LABEL_GRID = 1e-9


class Estimate(NamedTuple):
    value: float
    stderr: float


def sample_sphere(d: int, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform draw(s) on the unit sphere in R^d via normalized Gaussians."""
    if d < 1:
        raise DimensionError(f"need d >= 1, got {d}")
    shape = (d,) if n is None else (n, d)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    while np.any(norms == 0):  # probability ~0, but keep the contract
        bad = (norms == 0).ravel()
        if n is None:
            g = rng.standard_normal(shape)
        else:
            g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / norms


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _out(values, single):
    return float(values[0]) if single else values


@dataclass(frozen=True)
class Linear:
    b: np.ndarray

    def __call__(self, x):
        xb, single = _as_batch(x)
        return _out(xb @ self.b, single)

    def l2_norm(self):
        return float(np.linalg.norm(self.b) / np.sqrt(len(self.b)))


@dataclass(frozen=True)
class Quadratic:
    A: np.ndarray
    b: np.ndarray

    def __call__(self, x):
        xb, single = _as_batch(x)
        return _out(np.einsum("ni,ij,nj->n", xb, self.A, xb) + xb @ self.b, single)

    def l2_norm(self):
        d = len(self.b)
        S = (self.A + self.A.T) / 2
        quad = (np.trace(S) ** 2 + 2 * np.trace(S @ S)) / (d * (d + 2))
        return float(np.sqrt(quad + self.b @ self.b / d))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class TeacherNet:
    """``sum_i b_i sigmoid(<v_i, x>)`` with Rademacher ``b`` and unnormalized ``v``."""

    b: np.ndarray
    v: np.ndarray

    def __call__(self, x):
        xb, single = _as_batch(x)
        return _out(sigmoid(xb @ self.v.T) @ self.b, single)

    def l2_norm(self):
        return None


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RandomLabel:
    """Fixed pseudo-random Bernoulli(1/2) labels keyed on ``x`` quantized to a 1e-9 grid."""

    label_seed: int

    def __call__(self, x):
        xb, single = _as_batch(x)
        q = np.rint(xb / LABEL_GRID).astype(np.int64).view(np.uint64)
        h = np.full(len(xb), np.uint64(self.label_seed % 2**64), dtype=np.uint64)
        with np.errstate(over="ignore"):  # arithmetic is mod 2^64 by design
            for j in range(xb.shape[1]):
                h = _mix64(h ^ (q[:, j] + _GOLD * np.uint64(j + 1)))
        return _out((h >> np.uint64(63)).astype(float), single)

    def l2_norm(self):
        return math.sqrt(0.5)


@dataclass(frozen=True)
class RidgeProfile:
    """``h(<w, x>)`` with ``h`` given by its Taylor derivatives at 0."""

    h_derivs: tuple
    w: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.norm(self.w) - 1.0) > UNIT_TOL:
            raise DomainError("ridge direction w must be a unit vector")

    def h(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for k in reversed(range(len(self.h_derivs))):  # Horner on h_k / k!
            out = out * u + self.h_derivs[k] / math.factorial(k)
        return out

    def __call__(self, x):
        xb, single = _as_batch(x)
        return _out(self.h(xb @ self.w), single)

    def l2_norm(self):
        return None


@dataclass
class EmpiricalDistribution:
    """A finite dataset treated as the input law; rows are unit vectors, labels are +-1."""

    xs: np.ndarray
    ys: np.ndarray
    meta: dict = field(default_factory=dict)
    _index: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.ndim != 2 or len(self.xs) != len(self.ys):
            raise DimensionError(f"xs {self.xs.shape} and ys {self.ys.shape} do not match")
        if np.any(np.abs(np.linalg.norm(self.xs, axis=1) - 1.0) > UNIT_TOL):
            raise DomainError("every dataset row must have unit norm")
        if not np.all(np.isin(self.ys, (-1.0, 1.0))):
            raise DomainError("labels must be +1 or -1")

    @property
    def n(self) -> int:
        return len(self.xs)

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def lookup(self, xb: np.ndarray) -> np.ndarray:
        if self._index is None:
            self._index = {row.tobytes(): i for i, row in enumerate(self.xs)}
        try:
            return np.array([self._index[np.ascontiguousarray(row).tobytes()] for row in xb], dtype=int)
        except KeyError:
            raise TargetLookupError("input is not a row of the empirical dataset") from None

    def split(self, fraction: float, rng: np.random.Generator):
        """Random ``(train, held_out)`` partition with ``fraction`` of rows held out."""
        perm = rng.permutation(self.n)
        k = int(round(self.n * fraction))
        held, train = perm[:k], perm[k:]
        return (EmpiricalDistribution(self.xs[train], self.ys[train], dict(self.meta)),
                EmpiricalDistribution(self.xs[held], self.ys[held], dict(self.meta)))


@dataclass(frozen=True)
class Empirical:
    dataset: EmpiricalDistribution

    def __call__(self, x):
        xb, single = _as_batch(x)
        return _out(self.dataset.ys[self.dataset.lookup(xb)], single)

    def l2_norm(self):
        return float(np.sqrt(np.mean(self.dataset.ys ** 2)))


TargetFunction = Linear | Quadratic | TeacherNet | RandomLabel | RidgeProfile | Empirical


def target_eval(target, x) -> float:
    """``f*(x)`` for a single unit vector."""
    return target(check_unit(x))


@dataclass(frozen=True)
class StreamConfig:
    d: int
    target: object
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.tau < 0:
            raise DomainError(f"noise level must be non-negative, got {self.tau}")


def _draw_x(cfg: StreamConfig, rng, n=None):
    if isinstance(cfg.target, Empirical):
        ds = cfg.target.dataset
        idx = rng.integers(ds.n, size=n)
        return ds.xs[idx], ds.ys[idx]
    x = sample_sphere(cfg.d, rng, n)
    return x, cfg.target(x)


def draw_sample(cfg: StreamConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One fresh ``(x, y)``; every call consumes new randomness."""
    x, fx = _draw_x(cfg, rng)
    e = rng.standard_normal()
    return x, float(fx + cfg.tau * e)


def draw_batch(cfg: StreamConfig, rng: np.random.Generator, n: int):
    """``n`` fresh draws ``(xs, f*(xs), ys)``."""
    xs, fx = _draw_x(cfg, rng, n)
    e = rng.standard_normal(n)
    return xs, fx, fx + cfg.tau * e


def target_l2_norm(target, n_mc: int, rng: np.random.Generator, d: int | None = None) -> Estimate:
    """Monte Carlo ``||f*||_{L2(mu)}`` with a delta-method standard error."""
    if n_mc < 1:
        raise DomainError("n_mc must be >= 1")
    if isinstance(target, Empirical):
        xs = target.dataset.xs[rng.integers(target.dataset.n, size=n_mc)]
    else:
        d = d if d is not None else _target_dim(target)
        xs = sample_sphere(d, rng, n_mc)
    sq = np.asarray(target(xs), dtype=float) ** 2
    mean = float(sq.mean())
    value = math.sqrt(mean)
    se_mean = float(sq.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return Estimate(value, se_mean / (2 * value) if value > 0 else se_mean)


def _target_dim(target) -> int:
    for attr in ("b", "w"):
        if hasattr(target, attr) and getattr(target, attr).ndim == 1:
            return len(getattr(target, attr))
    if isinstance(target, TeacherNet):
        return target.v.shape[1]
    raise DimensionError(f"cannot infer d for {type(target).__name__}; pass d explicitly")


def reference_norm(target, rng: np.random.Generator, d: int | None = None, n_mc: int = 100_000) -> float:
    """Closed-form norm where one exists, otherwise a Monte Carlo estimate."""
    exact = target.l2_norm()
    if exact is not None:
        return float(exact)
    return target_l2_norm(target, n_mc, rng, d).value


def make_target(kind: str, d: int, rng: np.random.Generator, dataset: EmpiricalDistribution | None = None):
    """Draw the parameters of one of the standard target families."""
    if kind == "linear":
        return Linear(rng.standard_normal(d))
    if kind == "quadratic":
        return Quadratic(rng.standard_normal((d, d)), rng.standard_normal(d))
    if kind == "teacher":
        return TeacherNet(rng.choice(np.array([1.0, -1.0]), size=3), rng.standard_normal((3, d)))
    if kind == "random_label":
        return RandomLabel(int(rng.integers(2**63)))
    if kind == "mnist":
        if dataset is None:
            raise DomainError("mnist target needs a loaded dataset")
        return Empirical(dataset)
    raise DomainError(f"unknown target kind {kind!r}")


def optimal_error(target, tau: float) -> float:
    """Smallest achievable root-mean-square prediction error against noisy labels."""
    if isinstance(target, RandomLabel):
        return math.sqrt(0.25 + tau ** 2)
    return tau
