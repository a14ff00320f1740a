"""INI experiment configs: parsing with line diagnostics and canonical rendering.

Schema (every key optional except ``experiment.seed``)::

    [experiment]  task, seed, epochs, batch_size, hidden, method, q3r_targets,
                  include_head, retentions, output_dir
    [data]        input_dim, hidden_dim, num_classes, teacher_rank, samples,
                  label_noise, seq_len
    [optimizer]   alpha, beta1, beta2, delta, eta, lambda, period,
                  target_rank | target_retention, clip_norm
    [recovery]    d1, d2, rank, oversample, iterations   (task = matrix_recover)
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

from q3r.harness.data import SyntheticTeacherSpec
from q3r.harness.experiment import PAPER_RETENTIONS, ExperimentConfig
from q3r.optim import OptimizerConfig, TargetRank


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RecoverySpec:
    d1: int = 32
    d2: int = 32
    rank: int = 3
    oversample: float = 4.0
    iterations: int = 20000


# standard AdamQ3R defaults: alpha=1e-3, eta=3, lambda=1e-3, reweighting period 5
DEFAULT_OPTIMIZER = OptimizerConfig(alpha=0.001, eta=3.0, lam=0.001, period=5)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(" ", "").split(",") if x)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(" ", "").split(",") if x)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "off") else float(s)


SCHEMA = {
    "experiment": {
        "task": str,
        "seed": int,
        "epochs": int,
        "batch_size": int,
        "hidden": _ints,
        "method": str,
        "q3r_targets": str,
        "include_head": _bool,
        "retentions": _floats,
        "output_dir": str,
    },
    "data": {
        "input_dim": int,
        "hidden_dim": int,
        "num_classes": int,
        "teacher_rank": int,
        "samples": int,
        "label_noise": float,
        "seq_len": int,
    },
    "optimizer": {
        "alpha": float,
        "beta1": float,
        "beta2": float,
        "delta": float,
        "eta": float,
        "lambda": float,
        "period": int,
        "target_rank": int,
        "target_retention": float,
        "clip_norm": _opt_float,
    },
    "recovery": {
        "d1": int,
        "d2": int,
        "rank": int,
        "oversample": float,
        "iterations": int,
    },
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return i
    return None


def parse_config(text: str, source: str = "<config>") -> tuple[ExperimentConfig, RecoverySpec]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    def fail(section, key, msg):
        line = _line_of(text, section, key)
        where = f"{source}:{line}" if line else source
        label = f"{section}.{key}" if key else f"[{section}]"
        raise ConfigError(f"{where}: {label}: {msg}")

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            fail(section, None, f"unknown section; expected one of {sorted(SCHEMA)}")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                fail(section, key, f"unknown key; expected one of {sorted(SCHEMA[section])}")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                fail(section, key, f"bad value {raw!r} ({exc})")

    exp = values.get("experiment", {})
    if "seed" not in exp:
        fail("experiment", None, "missing mandatory key 'seed'")
    opt = dict(values.get("optimizer", {}))
    if "target_rank" in opt and "target_retention" in opt:
        fail("optimizer", "target_rank", "give target_rank or target_retention, not both")
    try:
        target = (
            TargetRank(rank=opt.pop("target_rank"))
            if "target_rank" in opt
            else TargetRank(retention=opt.pop("target_retention", 0.2))
        )
        if "lambda" in opt:
            opt["lam"] = opt.pop("lambda")
        optimizer = replace(DEFAULT_OPTIMIZER, target=target, **opt)
    except (TypeError, ValueError) as exc:
        fail("optimizer", None, str(exc))
    try:
        data = SyntheticTeacherSpec(seed=exp["seed"], **values.get("data", {}))
    except (TypeError, ValueError) as exc:
        fail("data", None, str(exc))
    try:
        cfg = ExperimentConfig(optimizer=optimizer, data=data, **exp)
    except (TypeError, ValueError) as exc:
        fail("experiment", None, str(exc))
    recovery = RecoverySpec(**values.get("recovery", {}))
    return cfg, recovery


def load_config(path) -> tuple[ExperimentConfig, RecoverySpec]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def render_config(cfg: ExperimentConfig, recovery: RecoverySpec | None = None) -> str:
    """Canonical INI text for ``cfg``; ``parse_config`` reads it back unchanged."""
    lines = ["[experiment]"]
    for key in SCHEMA["experiment"]:
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    lines += ["", "[data]"]
    for key in SCHEMA["data"]:
        lines.append(f"{key} = {_fmt(getattr(cfg.data, key))}")
    lines += ["", "[optimizer]"]
    o = cfg.optimizer
    for key in ("alpha", "beta1", "beta2", "delta", "eta"):
        lines.append(f"{key} = {_fmt(getattr(o, key))}")
    lines.append(f"lambda = {_fmt(o.lam)}")
    lines.append(f"period = {o.period}")
    if o.target.rank is not None:
        lines.append(f"target_rank = {o.target.rank}")
    else:
        lines.append(f"target_retention = {_fmt(o.target.retention)}")
    lines.append(f"clip_norm = {_fmt(o.clip_norm)}")
    if recovery is not None and cfg.task == "matrix_recover":
        lines += ["", "[recovery]"]
        for f in fields(RecoverySpec):
            lines.append(f"{f.name} = {_fmt(getattr(recovery, f.name))}")
    return "\n".join(lines) + "\n"


__all__ = [
    "ConfigError",
    "DEFAULT_OPTIMIZER",
    "PAPER_RETENTIONS",
    "RecoverySpec",
    "load_config",
    "parse_config",
    "render_config",
]
