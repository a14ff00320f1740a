"""Low-rank matrix recovery from Gaussian linear measurements.

Minimizes ``1/2 ||A(W) - y||^2 + lam * Q3R(W)`` with AdamQ3R, starting from
the back-projection ``A*(y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from q3r.optim import OptimizerConfig, ParamTensor, TargetRank, adamq3r_step
from q3r.spectral import tail_ratio


@dataclass(frozen=True)
class RecoveryReport:
    d1: int
    d2: int
    rank: int
    measurements: int
    lam: float
    iterations: int
    rel_error: float
    tail_ratio: float
    residual: float
    final_eps: float


def n_measurements(d1: int, d2: int, rank: int, oversample: float) -> int:
    """``ceil(oversample * r (d1 + d2 - r))``: degrees-of-freedom times oversampling."""
    return math.ceil(oversample * rank * (d1 + d2 - rank))


def make_problem(d1: int, d2: int, rank: int, oversample: float, seed: int):
    """Ground truth ``X*`` (rank ``rank``, unit-variance entries), sensing matrix and data."""
    m = n_measurements(d1, d2, rank, oversample)
    if m > d1 * d2:
        raise ValueError(f"oversampling {oversample} needs {m} measurements but only {d1 * d2} are informative")
    if not 1 <= rank <= min(d1, d2):
        raise ValueError(f"rank {rank} outside [1, {min(d1, d2)}]")
    rng = np.random.default_rng(seed)
    x_star = rng.standard_normal((d1, rank)) @ rng.standard_normal((rank, d2)) / math.sqrt(rank)
    sensing = rng.standard_normal((m, d1 * d2)) / math.sqrt(m)
    y = sensing @ x_star.ravel()
    return x_star, sensing, y


def run_matrix_recovery(
    d1: int,
    d2: int,
    rank: int,
    oversample: float,
    lam: float,
    cfg: OptimizerConfig | None = None,
    *,
    r_target: int | None = None,
    iterations: int = 20000,
    seed: int = 0,
    tol: float = 0.0,
) -> RecoveryReport:
    """Recover a rank-``rank`` matrix; stop early once the relative change drops below ``tol``."""
    x_star, sensing, y = make_problem(d1, d2, rank, oversample, seed)
    target = TargetRank(rank=r_target if r_target is not None else rank)
    base = cfg if cfg is not None else OptimizerConfig()
    cfg = OptimizerConfig(
        alpha=base.alpha, beta1=base.beta1, beta2=base.beta2, delta=base.delta, eta=base.eta,
        lam=lam, period=base.period, target=target, clip_norm=base.clip_norm,
    )
    param = ParamTensor("X", (sensing.T @ y).reshape(d1, d2))
    if lam > 0:
        param.enable_q3r(target)
    done = 0
    for t in range(iterations):
        resid = sensing @ param.w.ravel() - y
        grad = (sensing.T @ resid).reshape(d1, d2)
        before = param.w
        adamq3r_step([param], [grad], cfg, t)
        done = t + 1
        if tol > 0 and np.linalg.norm(param.w - before) <= tol * np.linalg.norm(before):
            break
    w = param.w
    return RecoveryReport(
        d1=d1,
        d2=d2,
        rank=rank,
        measurements=sensing.shape[0],
        lam=lam,
        iterations=done,
        rel_error=float(np.linalg.norm(w - x_star) / np.linalg.norm(x_star)),
        tail_ratio=tail_ratio(w, min(rank, min(d1, d2))),
        residual=float(np.linalg.norm(sensing @ w.ravel() - y) / np.linalg.norm(y)),
        final_eps=float(param.state.eps) if param.state is not None and param.state.eps is not None else 0.0,
    )
