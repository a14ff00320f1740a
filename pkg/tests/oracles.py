"""Independent reference implementations used as test oracles.

Nothing here imports the package's reweighting or optimizer code; each oracle
is written from the defining formulas with full decompositions and loops.
"""
from __future__ import annotations

import math

import numpy as np


def f_eps_scalar(sigma: float, eps: float) -> float:
    if sigma >= eps:
        return eps * eps * (math.log(sigma) - math.log(eps)) + 0.5 * eps * eps
    return 0.5 * sigma * sigma


def F_eps_dense(w, eps: float) -> float:
    return sum(f_eps_scalar(float(s), eps) for s in np.linalg.svd(w, compute_uv=False))


def dense_operator(anchor, eps: float):
    """``R_{W', eps}`` as an explicit function from a full SVD of the anchor.

    ``R(W) = U Sigma1^{-1} U^T W V Sigma2^{-1} V^T`` with
    ``Sigma_d = diag(max(sigma_i / eps, 1))`` padded by ones beyond the rank.
    """
    d1, d2 = anchor.shape
    u, s, vt = np.linalg.svd(anchor, full_matrices=True)
    w1 = np.ones(d1)
    w2 = np.ones(d2)
    k = len(s)
    w1[:k] = np.maximum(s / eps, 1.0)
    w2[:k] = np.maximum(s / eps, 1.0)
    left = u @ np.diag(1.0 / w1) @ u.T
    right = vt.T @ np.diag(1.0 / w2) @ vt

    def apply(w):
        return left @ w @ right

    return apply


def grad_F_dense(w, eps: float):
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    return u @ np.diag(s / np.maximum(s / eps, 1.0) ** 2) @ vt


def central_diff(f, w, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(w, dtype=np.float64)
    for idx in np.ndindex(*w.shape):
        wp = w.copy()
        wm = w.copy()
        wp[idx] += h
        wm[idx] -= h
        g[idx] = (f(wp) - f(wm)) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / denom


def adamq3r_transcript(w0, grad_fn, steps, *, alpha, beta1, beta2, delta, eta, lam, period, r_target, eps_floor=1e-12):
    """Line-by-line AdamQ3R on a single matrix parameter.

    Refresh the reweighting every ``period`` iterations (``eps <- max(floor,
    min(eps, sigma_{r+1}))``, anchor = current W), then take the Adam step with
    the Q3R gradient added outside the moments, the whole update scaled by eta.
    """
    w = np.array(w0, dtype=np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    eps = math.inf
    op = None
    history = []
    for t in range(steps):
        if t % period == 0:
            s = np.linalg.svd(w, compute_uv=False)
            eps = max(eps_floor, min(eps, float(s[r_target])))
            op = dense_operator(w.copy(), eps)
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** (t + 1))
        v_hat = v / (1 - beta2 ** (t + 1))
        r = op(w)
        w = w - eta * (alpha * m_hat / (np.sqrt(v_hat) + delta) + lam * r)
        history.append((w.copy(), eps))
    return history


def random_orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
