"""Grid sweeps over lambda, reweighting period and target rank."""
from __future__ import annotations

import itertools
import logging
from dataclasses import replace

import numpy as np

from q3r.harness.experiment import ExperimentConfig, train, truncation_sweep
from q3r.optim import NumericalError, TargetRank

log = logging.getLogger(__name__)

GRID_KEYS = ("lambda", "T", "r_target")
_ALIASES = {"lambda": "lambda", "lam": "lambda", "T": "T", "period": "T", "r_target": "r_target"}


class GridError(ValueError):
    pass


def _target(text: str) -> TargetRank:
    """``4`` is an absolute rank; ``0.2`` or ``20%`` is a retention fraction."""
    text = text.strip()
    if text.endswith("%"):
        return TargetRank(retention=float(text[:-1]) / 100)
    if "." in text or "e" in text.lower():
        return TargetRank(retention=float(text))
    return TargetRank(rank=int(text))


def _target_key(t: TargetRank):
    return (0, t.rank) if t.rank is not None else (1, t.retention)


def parse_grid(spec: str) -> dict[str, list]:
    """Parse ``lambda=0.001,0.01;T=5,25,100;r_target=0.2`` into sorted value lists."""
    grid: dict[str, list] = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        key, sep, values = part.partition("=")
        key = _ALIASES.get(key.strip())
        if not sep or key is None:
            raise GridError(f"bad grid entry {part.strip()!r}; keys are {GRID_KEYS}")
        if key in grid:
            raise GridError(f"grid key {key!r} given twice")
        raw = [v for v in values.split(",") if v.strip()]
        if not raw:
            raise GridError(f"grid key {key!r} has no values")
        try:
            if key == "lambda":
                vals = sorted({float(v) for v in raw})
            elif key == "T":
                vals = sorted({int(v) for v in raw})
            else:
                vals = sorted({_target(v) for v in raw}, key=_target_key)
        except ValueError as exc:
            raise GridError(f"grid key {key!r}: {exc}") from None
        grid[key] = vals
    if not grid:
        raise GridError("empty grid")
    return grid


def grid_cells(cfg: ExperimentConfig, grid: dict[str, list]):
    """Yield ``(lambda, T, target, cfg)`` in sorted grid-key order."""
    o = cfg.optimizer
    axes = [grid.get("lambda", [o.lam]), grid.get("T", [o.period]), grid.get("r_target", [o.target])]
    for lam, period, target in itertools.product(*axes):
        yield lam, period, target, replace(cfg, optimizer=replace(o, lam=lam, period=period, target=target))


def run_sweep(cfg: ExperimentConfig, grid: dict[str, list]) -> list[dict]:
    """Train and truncate every grid cell in turn; a failing cell is marked, not fatal.

    Every cell reuses ``cfg.seed`` so cells differ only in the swept values.
    """
    rows = []
    for lam, period, target, cell in grid_cells(cfg, grid):
        base = {"lambda": lam, "period": period, "r_target": str(target)}
        try:
            result = train(cell)
            reports = truncation_sweep(result, cell)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("grid cell lambda=%g T=%d r_target=%s failed: %s", lam, period, target, exc)
            status = f"failed: {type(exc).__name__}: {exc}"
            rows += [{**base, "status": status, "retention": p, "accuracy": None, "loss": None} for p in cell.retentions]
            continue
        for rep in reports:
            rows.append({**base, "status": "ok", "retention": rep.retention, "accuracy": rep.accuracy, "loss": rep.loss})
    return rows
