"""AdamQ3R, plain Adam, and Adam applied to the Q3R-regularized loss.

All three share the same moment bookkeeping.  They differ only in where the
Q3R gradient ``R(W)`` enters:

* ``adamq3r_step``: decoupled, added outside the adaptive moments
  (``W <- W - eta * (alpha * m_hat / (sqrt(v_hat) + delta) + lam * R(W))``);
* ``adam_with_q3r_in_loss_step``: coupled, ``lam * R(W)`` is added to the
  gradient before the moments see it;
* ``adam_step``: no Q3R term at all.

Iteration indices ``t`` start at 0; operators refresh whenever
``t % period == 0`` and bias corrections use ``t + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from q3r.reweighting import (
    ReweightingOperator,
    SmoothingState,
    apply,
    update_operator,
)


class NumericalError(ArithmeticError):
    """Raised when a non-finite value shows up during an update."""


@dataclass(frozen=True)
class TargetRank:
    """Target rank given either as an absolute rank or as a retention fraction.

    A fraction ``p`` maps a ``d1 x d2`` matrix to
    ``floor(p * d1 * d2 / (d1 + d2))``, clamped to ``[1, min(d1, d2) - 1]``.
    """

    rank: int | None = None
    retention: float | None = None

    def __post_init__(self):
        if (self.rank is None) == (self.retention is None):
            raise ValueError("give exactly one of rank or retention")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.retention is not None and not 0 < self.retention <= 1:
            raise ValueError("retention must lie in (0, 1]")

    def for_shape(self, d1: int, d2: int) -> int:
        upper = min(d1, d2) - 1
        if upper < 1:
            raise ValueError(f"matrix {d1}x{d2} too small for a target rank")
        if self.rank is not None:
            r = self.rank
        else:
            r = math.floor(self.retention * d1 * d2 / (d1 + d2))
        return int(min(max(r, 1), upper))

    def __str__(self):
        return str(self.rank) if self.rank is not None else f"{self.retention:g}p"


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    eta: float = 3.0
    lam: float = 0.0
    period: int = 5
    target: TargetRank = field(default_factory=lambda: TargetRank(retention=0.2))
    clip_norm: float | None = None

    def __post_init__(self):
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")
        if self.alpha <= 0 or self.delta <= 0:
            raise ValueError("alpha and delta must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class ParamTensor:
    """A trainable array together with its Adam moments and Q3R state.

    Only 2-d parameters may have ``q3r_enabled``; biases stay 1-d.
    """

    name: str
    w: np.ndarray
    q3r_enabled: bool = False
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0
    op: ReweightingOperator | None = None
    state: SmoothingState | None = None

    def __post_init__(self):
        self.w = np.array(self.w, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(self.w)
        if self.v is None:
            self.v = np.zeros_like(self.w)
        if self.q3r_enabled and self.w.ndim != 2:
            raise ValueError(f"{self.name}: Q3R needs a 2-d parameter")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.w.shape

    def enable_q3r(self, target: TargetRank, eps_floor: float = 1e-12) -> None:
        self.q3r_enabled = True
        if self.w.ndim != 2:
            raise ValueError(f"{self.name}: Q3R needs a 2-d parameter")
        self.state = SmoothingState(r_target=target.for_shape(*self.w.shape), eps_floor=eps_floor)
        self.op = None


def _validate(params: Sequence[ParamTensor], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(params) != len(grads):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    out = []
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.name} {p.w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at {p.name}")
        out.append(g)
    return out


def _clip(grads: list[np.ndarray], clip_norm: float | None) -> list[np.ndarray]:
    if clip_norm is None:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= clip_norm:
        return grads
    scale = clip_norm / total
    return [g * scale for g in grads]


def refresh_operators(params: Sequence[ParamTensor], cfg: OptimizerConfig, t: int) -> None:
    """Refresh every Q3R-enabled operator when ``t`` falls on the period."""
    if t % cfg.period != 0:
        return
    for p in params:
        if not p.q3r_enabled:
            continue
        if p.state is None:
            p.enable_q3r(cfg.target)
        p.op, p.state = update_operator(p.w, p.state)


def _q3r_grad(p: ParamTensor) -> np.ndarray | None:
    if not p.q3r_enabled:
        return None
    if p.op is None:
        raise RuntimeError(f"{p.name}: Q3R enabled but no operator computed yet")
    return apply(p.op, p.w)


def _moments(p: ParamTensor, g: np.ndarray, cfg: OptimizerConfig, t: int) -> np.ndarray:
    """Update ``m``, ``v`` in place and return the bias-corrected Adam direction."""
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * g
    p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * (g * g)
    m_hat = p.m / (1.0 - cfg.beta1 ** (t + 1))
    v_hat = p.v / (1.0 - cfg.beta2 ** (t + 1))
    p.step_count += 1
    return cfg.alpha * m_hat / (np.sqrt(v_hat) + cfg.delta)


def _finish(p: ParamTensor, w_new: np.ndarray) -> None:
    if not np.all(np.isfinite(w_new)):
        raise NumericalError(f"non-finite update at {p.name}")
    p.w = w_new


def adamq3r_step(params: Sequence[ParamTensor], grads, cfg: OptimizerConfig, t: int) -> Sequence[ParamTensor]:
    """One AdamQ3R iteration with the Q3R gradient kept out of the moments."""
    if t < 0:
        raise ValueError("t must be >= 0")
    grads = _clip(_validate(params, grads), cfg.clip_norm)
    if cfg.lam > 0:
        refresh_operators(params, cfg, t)
    for p, g in zip(params, grads):
        r = _q3r_grad(p) if cfg.lam > 0 else None
        direction = _moments(p, g, cfg, t)
        if r is None:
            _finish(p, p.w - cfg.eta * direction)
        else:
            _finish(p, p.w - cfg.eta * (direction + cfg.lam * r))
    return params


def adam_step(params: Sequence[ParamTensor], grads, cfg: OptimizerConfig, t: int) -> Sequence[ParamTensor]:
    """Plain Adam with step size ``eta * alpha``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    grads = _clip(_validate(params, grads), cfg.clip_norm)
    for p, g in zip(params, grads):
        _finish(p, p.w - cfg.eta * _moments(p, g, cfg, t))
    return params


def adam_with_q3r_in_loss_step(
    params: Sequence[ParamTensor], grads, cfg: OptimizerConfig, t: int
) -> Sequence[ParamTensor]:
    """Adam on ``L + lam * sum Q3R``: ``lam * R(W)`` joins the loss gradient.

    ``grads`` are gradients of the data loss only; the operator refresh and
    the addition of ``lam * R(W)`` happen here so both use the same schedule
    as :func:`adamq3r_step`.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    grads = _clip(_validate(params, grads), cfg.clip_norm)
    if cfg.lam > 0:
        refresh_operators(params, cfg, t)
    for p, g in zip(params, grads):
        r = _q3r_grad(p) if cfg.lam > 0 else None
        total = g if r is None else g + cfg.lam * r
        _finish(p, p.w - cfg.eta * _moments(p, total, cfg, t))
    return params


StepFn = Callable[[Sequence[ParamTensor], Sequence[np.ndarray], OptimizerConfig, int], Sequence[ParamTensor]]

METHODS: dict[str, StepFn] = {
    "adamq3r": adamq3r_step,
    "adam": adam_step,
    "adam_q3r_loss": adam_with_q3r_in_loss_step,
}


def get_step(method: str) -> StepFn:
    try:
        return METHODS[method]
    except KeyError:
        raise ValueError(f"unknown optimizer {method!r}; choose from {sorted(METHODS)}") from None
