"""The reweighting operator, the Q3R value and the smoothing schedule.

An operator is a frozen snapshot of the leading singular triplets of an
anchor matrix ``W'`` whose singular values exceed ``eps``.  Applying it to
``W`` costs ``O(d1 d2 r)`` via the compact form

    R(W) = W + U S U^T W + W V S V^T + U S U^T W V S V^T,   S = eps/Sigma - I.

``S`` has entries in ``(-1, 0]`` so no real square root of it is taken
anywhere; value computations use the signed diagonal directly.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from q3r.spectral import F_eps_from_svd, as_matrix, svd_truncated, tail_ratio

__all__ = [
    "ReweightingOperator",
    "SmoothingState",
    "apply",
    "apply_expanded",
    "grad_q3r",
    "identity_operator",
    "operator_from_matrix",
    "q3r_value",
    "quadratic_model",
    "tail_ratio",
    "update_operator",
]


@dataclass(frozen=True)
class SmoothingState:
    """Per-matrix smoothing parameter and target rank.

    ``eps is None`` stands for the initial ``eps = +inf``.
    """

    r_target: int
    eps: float | None = None
    eps_floor: float = 1e-12

    def __post_init__(self):
        if self.r_target < 1:
            raise ValueError("r_target must be >= 1")
        if self.eps_floor <= 0:
            raise ValueError("eps_floor must be positive")
        if self.eps is not None and self.eps < self.eps_floor:
            raise ValueError("eps below eps_floor")


@dataclass(frozen=True)
class ReweightingOperator:
    """Partial-SVD snapshot defining ``R_{W', eps}``.

    With ``eps is None`` the envelope is empty and the operator is the identity.
    """

    shape: tuple[int, int]
    u: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    eps: float | None
    f_eps_at_anchor: float
    anchor_frob_sq: float

    @property
    def r_env(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def s_diag(self) -> np.ndarray:
        """Diagonal of ``S = eps * Sigma^{-1} - I`` on the envelope."""
        if self.r_env == 0:
            return np.zeros(0)
        return self.eps / self.sigma - 1.0

    @property
    def anchor_q3r(self) -> float:
        """``1/2 <W', R(W')>`` in closed form from the stored spectrum."""
        if self.r_env == 0:
            return 0.5 * self.anchor_frob_sq
        head = self.r_env * self.eps * self.eps
        tail = max(self.anchor_frob_sq - float(np.sum(self.sigma**2)), 0.0)
        return 0.5 * (head + tail)

    def with_flipped_signs(self, index: int) -> "ReweightingOperator":
        """Copy with the ``index``-th singular vector pair negated."""
        u, v = self.u.copy(), self.v.copy()
        u[:, index] *= -1.0
        v[:, index] *= -1.0
        return replace(self, u=u, v=v)


def identity_operator(shape: tuple[int, int], anchor=None) -> ReweightingOperator:
    """Operator for ``eps = +inf``; ``R`` is the identity and Q3R is ``||W||_F^2 / 2``."""
    d1, d2 = shape
    frob_sq = 0.0 if anchor is None else float(np.sum(np.square(anchor)))
    return ReweightingOperator(
        shape=(int(d1), int(d2)),
        u=np.zeros((d1, 0)),
        v=np.zeros((d2, 0)),
        sigma=np.zeros(0),
        eps=None,
        f_eps_at_anchor=0.5 * frob_sq,
        anchor_frob_sq=frob_sq,
    )


def operator_from_matrix(w, eps: float, n_values: int | None = None) -> ReweightingOperator:
    """Build ``R_{w, eps}`` keeping the singular values strictly above ``eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = as_matrix(w)
    k = min(w.shape) if n_values is None else n_values
    svd = svd_truncated(w, k)
    return _operator_from_svd(w.shape, svd, eps)


def _operator_from_svd(shape, svd, eps: float) -> ReweightingOperator:
    r_env = int(np.count_nonzero(svd.s > eps))
    if r_env == svd.k and svd.k < min(shape):
        raise ValueError("partial SVD does not cover the envelope")
    return ReweightingOperator(
        shape=(int(shape[0]), int(shape[1])),
        u=svd.u[:, :r_env].copy(),
        v=svd.v[:, :r_env].copy(),
        sigma=svd.s[:r_env].copy(),
        eps=float(eps),
        f_eps_at_anchor=F_eps_from_svd(svd, eps),
        anchor_frob_sq=svd.frob_sq,
    )


def update_operator(w, state: SmoothingState) -> tuple[ReweightingOperator, SmoothingState]:
    """Refresh the operator at ``w`` and apply ``eps <- min(eps, sigma_{r+1}(w))``."""
    w = as_matrix(w)
    d = min(w.shape)
    if state.r_target + 1 > d:
        raise ValueError("target rank too large for matrix")
    svd = svd_truncated(w, d)
    sigma_next = float(svd.s[state.r_target])
    eps_old = np.inf if state.eps is None else state.eps
    eps_new = max(state.eps_floor, min(eps_old, sigma_next))
    op = _operator_from_svd(w.shape, svd, eps_new)
    return op, replace(state, eps=eps_new)


def _check(op: ReweightingOperator, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != op.shape:
        raise ValueError(f"shape {w.shape} does not match operator shape {op.shape}")
    return w


def apply(op: ReweightingOperator, w) -> np.ndarray:
    """``R_{W', eps}(w)`` via the compact four-term form."""
    w = _check(op, w)
    if op.r_env == 0:
        return w
    u, v, s = op.u, op.v, op.s_diag
    a = u.T @ w  # r x d2
    b = w @ v  # d1 x r
    c = a @ v  # r x r
    e = (s[:, None] * c) * s[None, :]
    return w + u @ (s[:, None] * a) + (b * s) @ v.T + u @ e @ v.T


def apply_expanded(op: ReweightingOperator, w) -> np.ndarray:
    """``R_{W', eps}(w)`` written with explicit projectors onto the envelope.

    Slower than :func:`apply`; kept as an independent evaluation path.
    """
    w = _check(op, w)
    if op.r_env == 0:
        return w.copy()
    u, v, eps = op.u, op.v, op.eps
    inv = 1.0 / op.sigma
    left = (u * inv) @ u.T
    right = (v * inv) @ v.T
    pu = np.eye(op.shape[0]) - u @ u.T
    pv = np.eye(op.shape[1]) - v @ v.T
    return (
        eps * eps * left @ w @ right
        + eps * left @ w @ pv
        + eps * pu @ w @ right
        + pu @ w @ pv
    )


def q3r_value(op: ReweightingOperator, w) -> float:
    """``1/2 <w, R(w)>`` from the trace decomposition with signed weights."""
    w = _check(op, w)
    frob = float(np.sum(w * w))
    if op.r_env == 0:
        return 0.5 * frob
    s = op.s_diag
    t = w @ op.v
    b = w.T @ op.u
    c = op.u.T @ t
    total = (
        frob
        + float(np.sum((s[:, None] * s[None, :]) * c * c))
        + float(np.sum(np.sum(t * t, axis=0) * s))
        + float(np.sum(np.sum(b * b, axis=0) * s))
    )
    return 0.5 * total


def grad_q3r(op: ReweightingOperator, w) -> np.ndarray:
    """Gradient of :func:`q3r_value` in ``w``, which is ``R(w)`` itself."""
    return apply(op, w)


def quadratic_model(op: ReweightingOperator, w) -> float:
    """Majorizing quadratic model ``F(W') + Q3R(w) - Q3R(W')``."""
    return op.f_eps_at_anchor + q3r_value(op, w) - op.anchor_q3r
