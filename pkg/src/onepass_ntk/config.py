"""Versioned YAML experiment files. Keys mirror :class:`ExperimentConfig` one to
one (schedule and audit settings are flattened); unknown keys are rejected with
their line number."""
from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ConfigError, DomainError
from .experiment import AuditConfig, ExperimentConfig
from .network import Constant, InverseTime

CONFIG_VERSION = 1

FIELDS = {
    "version": int, "d": int, "m": int, "target": str, "tau": float, "schedule": str, "eta": float,
    "theta": float, "T": int, "init": str, "eval_every": int, "n_eval": int, "n_runs": int,
    "sandwich_every": int, "probes_per_audit": int, "deviation_probes": int, "seed": int,
    "data_path": str, "holdout": float, "delta": float, "bound_blocks": int,
}
REQUIRED = ("version", "d", "m")


def _key_lines(text: str) -> dict:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from None
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("config must be a mapping of keys to values (line 1)")
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Validate a config document and return a plain ``dict`` of typed values."""
    lines = _key_lines(text)
    raw = yaml.safe_load(text) or {}
    for key in raw:
        if key not in FIELDS:
            raise ConfigError(f"{source}:{lines.get(key, '?')}: unknown key {key!r}")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"{source}: missing required key {key!r}")
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(f"{source}:{lines['version']}: unsupported config version {raw['version']!r}")
    out = {}
    for key, val in raw.items():
        kind = FIELDS[key]
        if val is None:
            out[key] = None
            continue
        ok = isinstance(val, (int, float)) and not isinstance(val, bool) if kind is float else isinstance(val, kind)
        if kind is int and isinstance(val, bool):
            ok = False
        if not ok:
            raise ConfigError(f"{source}:{lines[key]}: key {key!r} expects {kind.__name__}, got {val!r}")
        out[key] = kind(val)
    return out


def config_from_dict(values: dict, source: str = "<config>", seed: int | None = None) -> ExperimentConfig:
    sched = values.get("schedule", "constant")
    try:
        if sched == "constant":
            schedule = Constant(values.get("eta", 0.2))
        elif sched == "inverse_time":
            schedule = InverseTime(values.get("theta", 0.1))
        else:
            raise ConfigError(f"{source}: schedule must be 'constant' or 'inverse_time', got {sched!r}")
        audit = AuditConfig(values.get("sandwich_every"), values.get("probes_per_audit", 5),
                            values.get("deviation_probes", 0))
        return ExperimentConfig(
            d=values["d"], m=values["m"], target=values.get("target", "linear"), tau=values.get("tau", 0.0),
            schedule=schedule, T=values.get("T", 1000), init=values.get("init", "symmetric"),
            eval_every=values.get("eval_every"), n_eval=values.get("n_eval", 400), n_runs=values.get("n_runs", 20),
            audit=audit, seed=values.get("seed", 0) if seed is None else seed, data_path=values.get("data_path"),
            holdout=values.get("holdout", 0.0),
        )
    except DomainError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, seed: int | None = None) -> tuple[ExperimentConfig, dict]:
    """Read ``path``; returns the experiment config and the raw validated values."""
    path = Path(path)
    values = parse_config(path.read_text(), str(path))
    if values.get("data_path") and not Path(values["data_path"]).is_absolute():
        values["data_path"] = str((path.parent / values["data_path"]).resolve())
    return config_from_dict(values, str(path), seed), values


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`load_config` for family-name targets."""
    if not isinstance(cfg.target, str):
        raise ConfigError("only family-name targets can be written to a config file")
    d = {"version": CONFIG_VERSION, "d": cfg.d, "m": cfg.m, "target": cfg.target, "tau": cfg.tau}
    if isinstance(cfg.schedule, InverseTime):
        d |= {"schedule": "inverse_time", "theta": cfg.schedule.theta}
    else:
        d |= {"schedule": "constant", "eta": cfg.schedule.eta_value}
    d |= {"T": cfg.T, "init": cfg.init, "eval_every": cfg.every, "n_eval": cfg.n_eval, "n_runs": cfg.n_runs,
          "probes_per_audit": cfg.audit.probes_per_audit, "deviation_probes": cfg.audit.deviation_probes,
          "seed": cfg.seed, "holdout": cfg.holdout}
    if cfg.audit.sandwich_every is not None:
        d["sandwich_every"] = cfg.audit.sandwich_every
    if cfg.data_path:
        d["data_path"] = cfg.data_path
    return yaml.safe_dump(d, sort_keys=False)
