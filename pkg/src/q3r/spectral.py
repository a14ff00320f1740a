"""Dense SVD access and the eps-smoothed log-determinant rank surrogate.

Matrices are plain ``float64`` numpy arrays of shape ``(d1, d2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SvdResult:
    """Leading ``k`` singular triplets of a matrix.

    ``frob_sq`` is the squared Frobenius norm of the *whole* matrix, not just
    of the retained part, so that tail energy can be recovered without a
    full spectrum.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    frob_sq: float

    @property
    def k(self) -> int:
        return int(self.s.shape[0])


def as_matrix(w, name: str = "matrix") -> np.ndarray:
    """Validate and return ``w`` as a finite 2-d float64 array."""
    a = np.asarray(w, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {a.shape}")
    if a.size == 0:
        raise ValueError("empty matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def svd_truncated(w, k: int) -> SvdResult:
    """Return the leading ``k`` singular triplets of ``w``.

    At the sizes this package targets a full LAPACK decomposition followed by
    truncation is both exact and fast enough.
    """
    w = as_matrix(w)
    d = min(w.shape)
    if not 1 <= k <= d:
        raise ValueError(f"k={k} outside [1, {d}]")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    # LAPACK already returns non-increasing values; enforce it anyway
    order = np.argsort(-s, kind="stable")
    u, s, vt = u[:, order], s[order], vt[order]
    frob_sq = float(np.sum(w * w))
    return SvdResult(u=u[:, :k].copy(), s=s[:k].copy(), v=vt[:k].T.copy(), frob_sq=frob_sq)


def singular_values(w) -> np.ndarray:
    return np.linalg.svd(as_matrix(w), compute_uv=False)


def f_eps(sigma, eps: float):
    """Scalar branch of the smoothed log-determinant.

    Quadratic ``sigma**2 / 2`` below ``eps`` and ``eps**2 * (log(sigma/eps) + 1/2)``
    from ``eps`` on. Accepts scalars or arrays.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("sigma must be non-negative")
    # np.maximum keeps log() away from zero on the quadratic branch
    log_branch = eps * eps * (np.log(np.maximum(s, eps)) - np.log(eps)) + 0.5 * eps * eps
    out = np.where(s >= eps, log_branch, 0.5 * s * s)
    return float(out) if out.ndim == 0 else out


def F_eps_from_svd(svd: SvdResult, eps: float) -> float:
    """F_eps using only the singular values above ``eps`` plus the cached norm.

    ``svd`` must contain every singular value strictly larger than ``eps``.
    """
    big = svd.s[svd.s > eps]
    head = float(np.sum(f_eps(big, eps))) if big.size else 0.0
    tail_sq = max(svd.frob_sq - float(np.sum(big * big)), 0.0)
    return head + 0.5 * tail_sq


def F_eps(w, eps: float) -> float:
    """Smoothed log-determinant ``sum_i f_eps(sigma_i(w))``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = as_matrix(w)
    svd = svd_truncated(w, min(w.shape))
    return F_eps_from_svd(svd, eps)


def grad_F_eps_oracle(w, eps: float) -> np.ndarray:
    """Gradient of F_eps from a full SVD: ``U dg(sigma / max(sigma/eps, 1)**2) V^T``.

    Intended as a reference; training never calls this.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = as_matrix(w)
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    weights = s / np.maximum(s / eps, 1.0) ** 2
    return (u * weights) @ vt


def tail_ratio(w, r: int) -> float:
    """Fraction of squared spectral energy held by the top ``r`` singular values.

    A zero matrix returns 1.0 by convention.
    """
    w = as_matrix(w)
    d = min(w.shape)
    if not 1 <= r <= d:
        raise ValueError(f"r={r} outside [1, {d}]")
    s = singular_values(w)
    total = float(np.sum(s * s))
    if total == 0.0:
        return 1.0
    head = float(np.sum(s[:r] ** 2))
    return min(head / total, 1.0)
