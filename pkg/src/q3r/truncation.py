"""Post-training SVD truncation and evaluation of truncated networks."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from q3r.spectral import as_matrix, tail_ratio
from q3r.tinynet import Attention, Batch, Dense, Net, evaluate

TARGET_SETS = ("dense", "attention", "dense+attention")


@dataclass(frozen=True)
class MatrixRecord:
    name: str
    shape: tuple[int, int]
    rank: int
    retention: float
    tail_ratio: float


@dataclass
class TruncationReport:
    """Outcome of evaluating one retention level.

    ``retention`` is the requested level; per-matrix ``retention`` values are the
    realised factor fractions ``r (d1 + d2) / (d1 d2)`` (capped at 1 when the
    matrix is kept dense).
    """

    retention: float
    loss: float
    accuracy: float | None
    records: list[MatrixRecord] = field(default_factory=list)


def truncate_matrix(w, r: int) -> np.ndarray:
    """Best rank-``r`` approximation of ``w`` in Frobenius norm."""
    w = as_matrix(w)
    d = min(w.shape)
    if not 1 <= r <= d:
        raise ValueError(f"rank {r} outside [1, {d}]")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    return (u[:, :r] * s[:r]) @ vt[:r]


def rank_for_retention(d1: int, d2: int, p: float) -> int:
    """Largest factor rank whose ``r (d1 + d2)`` parameters fit in ``p d1 d2``."""
    if not 0 < p <= 1:
        raise ValueError("retention must lie in (0, 1]")
    r = math.floor(p * d1 * d2 / (d1 + d2))
    return int(min(max(r, 1), min(d1, d2)))


def factor_retention(d1: int, d2: int, r: int) -> float:
    return r * (d1 + d2) / (d1 * d2)


def target_matrices(net: Net, target_set: str, include_head: bool = False):
    """Yield ``(layer, attribute, ParamTensor)`` for every matrix in ``target_set``.

    The last dense layer is treated as the classifier head and skipped unless
    ``include_head`` is set.
    """
    if target_set not in TARGET_SETS:
        raise ValueError(f"unknown target set {target_set!r}; choose from {TARGET_SETS}")
    dense_layers = [l for l in net if isinstance(l, Dense)]
    head = dense_layers[-1] if dense_layers and not include_head else None
    out = []
    for layer in net:
        if isinstance(layer, Dense) and "dense" in target_set and layer is not head:
            out.append((layer, "W", layer.W))
        elif isinstance(layer, Attention) and "attention" in target_set:
            for attr in ("Wq", "Wk", "Wv", "Wo"):
                out.append((layer, attr, getattr(layer, attr)))
    return out


def truncate_and_eval(
    net: Net,
    eval_batches: Sequence[Batch],
    retentions: Sequence[float],
    target_set: str = "dense",
    loss_kind: str = "ce",
    include_head: bool = False,
) -> list[TruncationReport]:
    """Evaluate a truncated copy of ``net`` at each retention level.

    A level of 1.0 or more is the untruncated reference.  ``net`` itself is
    never modified.
    """
    if not eval_batches:
        raise ValueError("empty evaluation set")
    reports = []
    for p in retentions:
        trial = copy.deepcopy(net)
        records = []
        for _, _, param in target_matrices(trial, target_set, include_head):
            d1, d2 = param.shape
            if p >= 1:
                r, kept = min(d1, d2), 1.0
            else:
                r = rank_for_retention(d1, d2, p)
                kept = min(factor_retention(d1, d2, r), 1.0)
            # tail ratio of the trained matrix, before it is cut
            records.append(MatrixRecord(param.name, (d1, d2), r, kept, tail_ratio(param.w, r)))
            if p < 1:
                param.w = truncate_matrix(param.w, r)
        loss, acc = evaluate(trial, eval_batches, loss_kind)
        reports.append(TruncationReport(float(p), loss, acc, records))
    return reports
