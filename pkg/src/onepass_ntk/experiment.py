"""Seeded one-pass SGD runs with Monte Carlo error tracking, in-run audits of
the step identities, aggregation over runs and comparison with the bound."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as ds
from .errors import AggregationError, ConfigError, DomainError, InvariantViolation, UsageError
from .kernels import kernel_sup_deviation, residual_bounds, sign_flip_counts
from .network import (Constant, InverseTime, NetworkState, forward, init_iid, init_symmetric, sgd_step,
                      step_identity_rhs, weight_drift)
from .rng import stream
from .spectrum import HProfile, SpectralTable, block_degree, bound_over_blocks, projection_remainder

SANDWICH_TOL = 1e-9
FROB_TOL = 1e-9
DOMINATION_TOL = 1e-12
TRACE_FIELDS = ("t", "mc_error", "mc_error_norm", "sign_flip_frac", "drift_rel", "eta")
FULL_AUDIT_SIZE = 10 ** 6
EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class AuditConfig:
    """``sandwich_every = 0`` disables the kernel audits; ``None`` picks the default cadence."""

    sandwich_every: int | None = None
    probes_per_audit: int = 5
    deviation_probes: int = 0

    def cadence(self, m: int, d: int) -> int:
        if self.sandwich_every is not None:
            return self.sandwich_every
        return 1 if m * d <= FULL_AUDIT_SIZE else 10


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a target, a network size, a schedule and a run budget.

    ``target`` is a family name (``linear``, ``quadratic``, ``teacher``,
    ``random_label``, ``mnist``) whose parameters are drawn once from the
    ``target`` stream, or a ready target object. ``holdout`` > 0 reserves that
    fraction of an empirical dataset for evaluation only.
    """

    d: int
    m: int
    target: object = "linear"
    tau: float = 0.0
    schedule: object = field(default_factory=lambda: Constant(0.2))
    T: int = 1000
    init: str = "symmetric"
    eval_every: int | None = None
    n_eval: int = 400
    n_runs: int = 20
    audit: AuditConfig = field(default_factory=AuditConfig)
    seed: int = 0
    data_path: str | None = None
    holdout: float = 0.0

    def __post_init__(self):
        if self.n_eval < 1:
            raise ConfigError("n_eval must be >= 1")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if self.init not in ("symmetric", "iid"):
            raise ConfigError(f"init must be 'symmetric' or 'iid', got {self.init!r}")
        if self.T > 0 and self.T % self.every:
            raise ConfigError(f"eval_every={self.every} does not divide T={self.T}")
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigError("holdout must lie in [0, 1)")

    @property
    def every(self) -> int:
        if self.eval_every is not None:
            if self.eval_every < 1:
                raise ConfigError("eval_every must be >= 1")
            return self.eval_every
        return max(1, self.T // 100)

    def to_dict(self) -> dict:
        sched = self.schedule
        sched_d = ({"kind": "inverse_time", "theta": sched.theta} if isinstance(sched, InverseTime)
                   else {"kind": "constant", "eta": sched.eta_value})
        target = self.target if isinstance(self.target, str) else _describe_target(self.target)
        return {
            "d": self.d, "m": self.m, "target": target, "tau": self.tau, "schedule": sched_d, "T": self.T,
            "init": self.init, "eval_every": self.every, "n_eval": self.n_eval, "n_runs": self.n_runs,
            "audit": asdict(self.audit), "seed": self.seed, "data_path": self.data_path, "holdout": self.holdout,
        }

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _describe_target(target) -> dict:
    out = {"kind": type(target).__name__}
    for name in ("b", "A", "v", "w", "h_derivs", "label_seed"):
        if hasattr(target, name):
            val = getattr(target, name)
            out[name] = np.asarray(val).tolist() if not isinstance(val, int) else val
    if isinstance(target, ds.Empirical):
        out["n"] = target.dataset.n
    return out


def schedule_eta(schedule, t: int) -> float:
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    return schedule.eta(t)


def mc_prediction_error(state: NetworkState, target, n_eval: int, rng: np.random.Generator) -> ds.Estimate:
    """Monte Carlo ``||f* - f(.; W)||`` over ``n_eval`` fresh inputs, with a delta-method standard error.

    Inputs come from the sphere, or from the dataset for an empirical target.
    """
    if n_eval < 1:
        raise DomainError("n_eval must be >= 1")
    xs, fx, _ = ds.draw_batch(ds.StreamConfig(state.d, target, 0.0), rng, n_eval)
    sq = (np.asarray(fx) - forward(state, xs)) ** 2
    mse = float(sq.mean())
    value = math.sqrt(mse)
    se_mse = float(sq.std(ddof=1) / math.sqrt(n_eval)) if n_eval > 1 else math.inf
    return ds.Estimate(value, se_mse / (2 * value) if value > 0 else se_mse)


@dataclass(frozen=True)
class ResolvedTarget:
    train: object
    evaluation: object
    norm: float
    optimal: float


def _load_dataset(path):
    from .mnist import load_mnist, read_cache

    if path is None:
        raise ConfigError("the mnist target needs data_path (a dataset cache or an IDX directory)")
    p = Path(path)
    if p.is_dir():
        imgs = sorted(p.glob("*images*"))
        labs = sorted(p.glob("*labels*"))
        if not imgs or not labs:
            raise FileNotFoundError(f"no IDX images/labels files under {p}")
        return load_mnist(imgs[0], labs[0])
    return read_cache(p)


def resolve_target(cfg: ExperimentConfig) -> ResolvedTarget:
    """Draw (or load) ``f*`` and its reference norm; identical for every run of ``cfg``."""
    rng = stream(cfg.seed, "target")
    if isinstance(cfg.target, str):
        dataset = _load_dataset(cfg.data_path) if cfg.target == "mnist" else None
        target = ds.make_target(cfg.target, cfg.d, rng, dataset)
    else:
        target = cfg.target
    evaluation = target
    if isinstance(target, ds.Empirical):
        if target.dataset.d != cfg.d:
            raise ConfigError(f"dataset has d={target.dataset.d} but config says d={cfg.d}")
        if cfg.holdout > 0:
            train_ds, held = target.dataset.split(cfg.holdout, stream(cfg.seed, "label"))
            target, evaluation = ds.Empirical(train_ds), ds.Empirical(held)
    norm = ds.reference_norm(target, stream(cfg.seed, "norm"), cfg.d)
    return ResolvedTarget(target, evaluation, norm, ds.optimal_error(target, cfg.tau))


@dataclass
class Trace:
    """Checkpoint series of one run plus metadata and the worst audit margins."""

    t: np.ndarray
    mc_error: np.ndarray
    mc_error_se: np.ndarray
    mc_error_norm: np.ndarray
    sign_flip_frac: np.ndarray
    drift_rel: np.ndarray
    eta: np.ndarray
    meta: dict
    audit: dict

    def series(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def rows(self):
        for i in range(len(self.t)):
            yield [self.series(f)[i] for f in TRACE_FIELDS]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def write_trace(trace: Trace, path) -> Path:
    """CSV ``t, mc_error, mc_error_norm, sign_flip_frac, drift_rel, eta`` plus a ``.json`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in trace.rows():
            w.writerow([_fmt(v) for v in row])
    sidecar = {"meta": trace.meta, "audit": trace.audit, "mc_error_se": [_fmt(v) for v in trace.mc_error_se]}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


class _Auditor:
    """Accumulates the worst margin of every per-step identity; raises on the first violation."""

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator):
        self.rng = rng
        self.d = cfg.d
        self.every = cfg.audit.cadence(cfg.m, cfg.d)
        self.n_probes = cfg.audit.probes_per_audit
        self.deviation_probes = cfg.audit.deviation_probes
        self.worst = {"sandwich": -math.inf, "epsilon": -math.inf, "H_drift": -math.inf, "L": -math.inf,
                      "M": -math.inf, "frob_rel": 0.0, "telescoping": -math.inf, "Ht_vs_H0_sampled": -math.inf}
        self.audited_steps = 0
        self.step_sum = 0.0

    def wants_kernels(self, t: int) -> bool:
        return self.every > 0 and self.n_probes > 0 and t % self.every == 0

    def _fail(self, kind, t, value, extra):
        record = {"kind": kind, "step": t, "value": float(value)} | extra
        raise InvariantViolation(f"{kind} violated at step {t}: margin {value:.3e}", record)

    def measures(self, t: int) -> bool:
        return self.every > 0 and t % self.every == 0

    def check_step(self, t, report, state):
        self.step_sum += report.eta * abs(report.residual)
        if math.isnan(report.frob_delta):
            return
        rhs = step_identity_rhs(report, state.m)
        err = abs(report.frob_delta - rhs)
        rel = err / rhs if rhs > 0 else err
        self.worst["frob_rel"] = max(self.worst["frob_rel"], float(rel))
        if err > FROB_TOL * rhs:
            # storing W + delta rounds each entry by up to eps |W|; tiny steps on
            # large weights can exceed a purely relative tolerance
            floor = EPS * float(np.linalg.norm(state.W))
            if err > FROB_TOL * rhs + floor:
                self._fail("frobenius_identity", t, rel, {"frob_delta": report.frob_delta, "rhs": rhs,
                                                          "rounding_floor": floor})

    def check_telescoping(self, t, state):
        drift = float(np.linalg.norm(state.W - state.W0))
        margin = drift - self.step_sum * (1 + 1e-12)
        self.worst["telescoping"] = max(self.worst["telescoping"], margin)
        if margin > 0:
            self._fail("drift_telescoping", t, margin, {"drift": drift, "step_sum": self.step_sum})

    def check_kernels(self, t, prev, nxt, sample, eta):
        probes = ds.sample_sphere(self.d, self.rng, self.n_probes)
        rep = residual_bounds(prev, nxt, sample, eta, probes)
        g = float(sample[1]) - float(forward(prev, sample[0]))
        self.audited_steps += 1
        checks = {"sandwich": (rep.sandwich_slack(), SANDWICH_TOL), "epsilon": (rep.epsilon_slack(eta, g), SANDWICH_TOL)}
        for k, v in rep.domination_slacks(prev.m).items():
            checks[k] = (v, DOMINATION_TOL)
        for kind, (slack, tol) in checks.items():
            slack = np.atleast_1d(slack)
            j = int(np.argmax(slack))
            self.worst[kind] = max(self.worst[kind], float(slack[j]))
            if slack[j] > tol:
                self._fail(kind, t, slack[j], {
                    "probe": probes[j].tolist(), "f_change": float(np.atleast_1d(rep.f_change)[j]),
                    "H": float(np.atleast_1d(rep.H)[j]), "L": float(np.atleast_1d(rep.L)[j]),
                    "M": float(np.atleast_1d(rep.M)[j]), "g": g, "eta": eta})

    def check_deviation(self, t, state):
        if self.deviation_probes <= 0:
            return
        rep = kernel_sup_deviation(state, self.deviation_probes, self.rng, "Ht_vs_H0")
        self.worst["Ht_vs_H0_sampled"] = max(self.worst["Ht_vs_H0_sampled"], rep.domination_slack)
        if rep.domination_slack > DOMINATION_TOL:
            self._fail("Ht_vs_H0_sampled", t, rep.domination_slack, {"probe": rep.probe})

    def summary(self) -> dict:
        return {"cadence": self.every, "audited_steps": self.audited_steps,
                "max_slack": {k: (None if v == -math.inf else v) for k, v in self.worst.items()}}


def _init_state(cfg: ExperimentConfig, run_index: int) -> NetworkState:
    init = init_symmetric if cfg.init == "symmetric" else init_iid
    return init(cfg.m, cfg.d, cfg.seed, run_index)


def run_training(cfg: ExperimentConfig, run_index: int = 0, resolved: ResolvedTarget | None = None,
                 audit: bool = True) -> Trace:
    """Execute ``cfg.T`` one-pass SGD steps and record checkpoints every ``cfg.every`` steps.

    At checkpoint ``t`` the training sample ``X_t`` is drawn first (also at
    ``t = T``), ``S_t(X_t) / m`` is recorded, then the step is taken. Training,
    evaluation and audit draws use disjoint streams, so disabling audits leaves
    the trajectory unchanged. An audit failure raises :class:`InvariantViolation`
    carrying a forensic record.
    """
    resolved = resolved or resolve_target(cfg)
    state = _init_state(cfg, run_index)
    train_rng = stream(cfg.seed, "train", run_index)
    eval_rng = stream(cfg.seed, "eval", run_index)
    auditor = _Auditor(cfg, stream(cfg.seed, "audit", run_index)) if audit else None
    stream_cfg = ds.StreamConfig(cfg.d, resolved.train, cfg.tau, cfg.seed)
    scale = math.sqrt(resolved.norm ** 2 + cfg.tau ** 2)
    every = cfg.every

    cols = {k: [] for k in ("t", "mc_error", "mc_error_se", "mc_error_norm", "sign_flip_frac", "drift_rel", "eta")}
    for t in range(cfg.T + 1):
        x, y = ds.draw_sample(stream_cfg, train_rng)
        eta = schedule_eta(cfg.schedule, t)
        if t % every == 0 or t == cfg.T:
            est = mc_prediction_error(state, resolved.evaluation, cfg.n_eval, eval_rng)
            cols["t"].append(t)
            cols["mc_error"].append(est.value)
            cols["mc_error_se"].append(est.stderr)
            # noisy-label error sqrt(||Delta||^2 + tau^2), relative to its value at symmetric init
            cols["mc_error_norm"].append(math.sqrt(est.value ** 2 + cfg.tau ** 2) / scale if scale > 0 else math.nan)
            cols["sign_flip_frac"].append(float(sign_flip_counts(state, x)[0]) / state.m)
            cols["drift_rel"].append(weight_drift(state)[1])
            cols["eta"].append(eta)
            if auditor is not None:
                auditor.check_telescoping(t, state)
                auditor.check_deviation(t, state)
        if t == cfg.T:
            break
        kernels = auditor is not None and auditor.wants_kernels(t)
        prev = state.copy() if kernels else None
        report = sgd_step(state, x, y, eta, measure=auditor is not None and auditor.measures(t))
        if auditor is not None:
            auditor.check_step(t, report, state)
            if kernels:
                auditor.check_kernels(t, prev, state, (x, y), eta)

    meta = {"seed": cfg.seed, "run_index": run_index, "config_hash": cfg.config_hash(), "f_star_norm": resolved.norm,
            "tau": cfg.tau, "optimal_error": resolved.optimal,
            "optimal_norm": resolved.optimal / scale if scale > 0 else math.nan,
            "m": cfg.m, "d": cfg.d, "T": cfg.T}
    return Trace(*(np.asarray(cols[k], dtype=int if k == "t" else float) for k in cols),
                 meta=meta, audit=auditor.summary() if auditor else {"disabled": True})


def optimal_normalized(resolved: ResolvedTarget, tau: float) -> float:
    """Best achievable ``mc_error_norm``: ``tau`` (or ``sqrt(1/4 + tau^2)``) over ``sqrt(||f*||^2 + tau^2)``."""
    return resolved.optimal / math.sqrt(resolved.norm ** 2 + tau ** 2)


def _run_one(args):
    cfg, run_index, resolved, audit = args
    return run_training(cfg, run_index, resolved, audit)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, audit: bool = True) -> list[Trace]:
    """All ``cfg.n_runs`` runs; with ``jobs > 1`` runs are spread over worker processes."""
    resolved = resolve_target(cfg)
    tasks = [(cfg, i, resolved, audit) for i in range(cfg.n_runs)]
    if jobs <= 1 or cfg.n_runs == 1:
        return [_run_one(a) for a in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, cfg.n_runs)) as pool:
        return list(pool.map(_run_one, tasks))


SERIES = ("mc_error", "mc_error_norm", "sign_flip_frac", "drift_rel", "eta")


@dataclass
class AggregateTrace:
    t: np.ndarray
    mean: dict
    std: dict
    n_runs: int
    config_hash: str
    meta: dict = field(default_factory=dict)

    def write_csv(self, path) -> Path:
        path = Path(path)
        header = ["t"] + [f"{s}_{k}" for s in SERIES for k in ("mean", "std")]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.t):
                row = [str(int(t))]
                for s in SERIES:
                    row += [_fmt(self.mean[s][i]), _fmt(self.std[s][i])]
                w.writerow(row)
        side = {"n_runs": self.n_runs, "config_hash": self.config_hash, "meta": self.meta}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=_json_default) + "\n")
        return path


def aggregate_runs(traces: list[Trace]) -> AggregateTrace:
    """Pointwise mean and (population) standard deviation across runs."""
    if not traces:
        raise AggregationError("no traces to aggregate")
    h0, t0 = traces[0].meta.get("config_hash"), traces[0].t
    for tr in traces[1:]:
        if tr.meta.get("config_hash") != h0:
            raise AggregationError("traces come from different configurations")
        if tr.t.shape != t0.shape or np.any(tr.t != t0):
            raise AggregationError("traces have different checkpoint grids")
    mean, std = {}, {}
    for s in SERIES:
        stack = np.vstack([tr.series(s) for tr in traces])
        mean[s], std[s] = stack.mean(axis=0), stack.std(axis=0)
    meta = {k: traces[0].meta[k] for k in ("f_star_norm", "tau", "optimal_error", "optimal_norm", "m", "d", "T")
            if k in traces[0].meta}
    return AggregateTrace(t0.copy(), mean, std, len(traces), h0, meta)


def target_remainders(target, table: SpectralTable, f_star_norm: float) -> tuple[dict, bool]:
    """``R(f*, ell)`` for every block in ``table``.

    Exact for linear, quadratic and finite ridge targets; otherwise the trivial
    bound ``R <= ||f*||`` is used and the second return value is ``False``.
    """
    K = len(table.blocks)
    d = table.d
    if isinstance(target, ds.Linear):
        return {k: 0.0 for k in range(1, K + 1)}, True
    if isinstance(target, ds.Quadratic):
        S = (target.A + target.A.T) / 2
        deg0 = (np.trace(S) / d) ** 2
        deg2 = (np.trace(S) ** 2 + 2 * np.trace(S @ S)) / (d * (d + 2)) - deg0
        parts = {0: deg0, 1: float(target.b @ target.b) / d, 2: max(deg2, 0.0)}
        out = {}
        for k in range(1, K + 1):
            top = {block_degree(j) for j in range(1, k + 1)}
            out[k] = math.sqrt(sum(v for ell, v in parts.items() if ell not in top))
        return out, True
    if isinstance(target, ds.RidgeProfile):
        prof = HProfile.custom(target.h_derivs)
        return {k: projection_remainder(d, prof, k) for k in range(1, K + 1)}, True
    return {k: float(f_star_norm) for k in range(1, K + 1)}, False


def compare_to_bound(agg: AggregateTrace, table: SpectralTable, params, schedule, remainders: dict,
                     exact_remainders: bool = True) -> list[dict]:
    """Per checkpoint: empirical mean ``||Delta_t||``, the bound minimized over blocks, and its argmin.

    ``below_empirical`` is informational: the width condition cannot be
    certified at desk scale, so a bound under the data is not a failure.
    """
    if not isinstance(schedule, InverseTime):
        raise UsageError("the bound covers inverse-time schedules only")
    best, argmin, _ = bound_over_blocks(params, schedule, table, remainders, agg.t)
    out = []
    for i, t in enumerate(agg.t):
        emp = float(agg.mean["mc_error"][i])
        out.append({"t": int(t), "empirical_mean": emp, "bound": float(best[i]), "argmin_block": int(argmin[i]),
                    "below_empirical": bool(best[i] < emp), "exact_remainder": exact_remainders})
    return out


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
