"""CSV emission with fixed headers and deterministic float formatting.

Floats are written with ``repr`` (shortest round-trip form), so identical runs
give byte-identical files.  Schemas are documented in ``docs/csv_schemas.md``.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

TRAIN_LOG = ("epoch", "matrix", "train_loss", "eval_loss", "eval_accuracy", "eps", "r_env", "tail_ratio", "q3r_value")
TIMINGS = ("phase", "seconds")
TRUNCATION = ("label", "retention", "metric", "value")
TRUNCATION_MATRICES = ("label", "retention", "matrix", "rows", "cols", "rank", "param_retention", "tail_ratio")
SWEEP = ("lambda", "period", "r_target", "status", "retention", "accuracy", "loss")
RECOVERY = (
    "d1", "d2", "rank", "measurements", "lambda", "iterations",
    "rel_error", "tail_ratio", "residual", "final_eps",
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError(f"refusing to write non-finite value {v!r}")
        return repr(v)
    return str(v)


def write_csv(path, header: tuple[str, ...], rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row[k]) for k in header])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def truncation_rows(label: str, reports) -> tuple[list[dict], list[dict]]:
    """Long-format metric rows and per-matrix rows for a list of TruncationReport."""
    metrics, matrices = [], []
    for rep in reports:
        metrics.append({"label": label, "retention": rep.retention, "metric": "loss", "value": rep.loss})
        if rep.accuracy is not None:
            metrics.append({"label": label, "retention": rep.retention, "metric": "accuracy", "value": rep.accuracy})
        for m in rep.records:
            matrices.append({
                "label": label,
                "retention": rep.retention,
                "matrix": m.name,
                "rows": m.shape[0],
                "cols": m.shape[1],
                "rank": m.rank,
                "param_retention": m.retention,
                "tail_ratio": m.tail_ratio,
            })
    return metrics, matrices
