import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import F_eps_dense, central_diff, f_eps_scalar, grad_F_dense, random_orthogonal, rel_err
from q3r.spectral import F_eps, as_matrix, f_eps, grad_F_eps_oracle, svd_truncated, tail_ratio


# -- svd_truncated ----------------------------------------------------------


def test_svd_diag():
    res = svd_truncated(np.diag([3.0, 1.0]), 1)
    assert res.s.tolist() == [3.0]
    assert abs(abs(res.u[0, 0]) - 1) < 1e-15 and abs(abs(res.v[0, 0]) - 1) < 1e-15


def test_svd_identity():
    np.testing.assert_allclose(svd_truncated(np.eye(3), 2).s, [1.0, 1.0])


def test_svd_matches_gram_eigenvalues():
    w = np.random.default_rng(0).standard_normal((8, 5))
    res = svd_truncated(w, 5)
    gram = np.sqrt(np.sort(np.linalg.eigvalsh(w.T @ w))[::-1])
    np.testing.assert_allclose(res.s, gram, rtol=1e-10)


def test_svd_orthonormal_and_frob():
    w = np.random.default_rng(1).standard_normal((9, 6))
    res = svd_truncated(w, 4)
    assert np.max(np.abs(res.u.T @ res.u - np.eye(4))) <= 1e-10
    assert np.max(np.abs(res.v.T @ res.v - np.eye(4))) <= 1e-10
    assert res.frob_sq == pytest.approx(np.sum(w**2), rel=1e-14)
    assert np.all(np.diff(res.s) <= 0)


def test_svd_reconstruction_identity():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 7))
    res = svd_truncated(w, 3)
    resid = np.sum((w - (res.u * res.s) @ res.v.T) ** 2)
    assert resid + np.sum(res.s**2) == pytest.approx(res.frob_sq, rel=1e-9)


def test_svd_errors():
    with pytest.raises(ValueError, match="empty matrix"):
        svd_truncated(np.zeros((0, 3)), 1)
    with pytest.raises(ValueError):
        svd_truncated(np.eye(3), 4)
    with pytest.raises(ValueError, match="non-finite"):
        as_matrix([[1.0, np.nan]])


# -- f_eps / F_eps ----------------------------------------------------------


@pytest.mark.parametrize("sigma,eps,expected", [(1.0, 2.0, 0.5), (2.0, 2.0, 2.0), (math.e, 1.0, 1.5)])
def test_f_eps_values(sigma, eps, expected):
    assert f_eps(sigma, eps) == pytest.approx(expected, abs=1e-15)


def test_f_eps_vectorised_matches_scalar():
    s = np.array([0.0, 0.3, 1.0, 2.5])
    np.testing.assert_allclose(f_eps(s, 1.0), [f_eps_scalar(x, 1.0) for x in s], rtol=1e-15)


def test_f_eps_rejects_bad_input():
    with pytest.raises(ValueError):
        f_eps(1.0, 0.0)
    with pytest.raises(ValueError):
        f_eps(-1.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_f_eps_c1_at_seam(eps):
    h = 1e-6 * eps
    assert abs(f_eps(eps + h, eps) - f_eps(eps - h, eps)) <= 3 * h * eps
    right = (f_eps(eps + h, eps) - f_eps(eps, eps)) / h
    left = (f_eps(eps, eps) - f_eps(eps - h, eps)) / h
    assert abs(right - left) <= 1e-6 * max(1.0, eps)


def test_F_eps_examples():
    assert F_eps(np.eye(3), 2.0) == pytest.approx(1.5)
    assert F_eps(np.zeros((3, 2)), 0.7) == 0.0
    assert F_eps(np.diag([4.0, 0.5]), 1.0) == pytest.approx(math.log(4) + 0.5 + 0.125, abs=1e-12)


def test_F_eps_matches_dense_sum():
    rng = np.random.default_rng(3)
    for _ in range(20):
        w = rng.standard_normal((7, 5))
        eps = float(np.median(np.linalg.svd(w, compute_uv=False)))
        assert F_eps(w, eps) == pytest.approx(F_eps_dense(w, eps), rel=1e-12)


def test_F_eps_weight_decay_limit():
    w = np.random.default_rng(4).standard_normal((5, 4))
    eps = 1.01 * np.linalg.norm(w, 2)
    assert abs(F_eps(w, eps) - 0.5 * np.sum(w**2)) <= 1e-12


def test_F_eps_orthogonal_invariance():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((6, 4))
    q, p = random_orthogonal(rng, 6), random_orthogonal(rng, 4)
    assert F_eps(q @ w @ p, 0.8) == pytest.approx(F_eps(w, 0.8), rel=1e-10)


# -- gradient oracle --------------------------------------------------------


def test_grad_oracle_diag():
    np.testing.assert_allclose(grad_F_eps_oracle(np.diag([4.0, 0.5]), 1.0), np.diag([0.25, 0.5]), atol=1e-15)


def test_grad_oracle_below_eps_is_identity():
    w = np.random.default_rng(6).standard_normal((4, 3))
    np.testing.assert_allclose(grad_F_eps_oracle(w, 2 * np.linalg.norm(w, 2)), w, atol=1e-14)


def test_grad_oracle_finite_differences():
    w = np.random.default_rng(7).standard_normal((6, 4))
    eps = float(np.median(np.linalg.svd(w, compute_uv=False)))
    fd = central_diff(lambda x: F_eps(x, eps), w, 1e-5)
    assert rel_err(grad_F_eps_oracle(w, eps), fd) <= 1e-6
    assert rel_err(grad_F_eps_oracle(w, eps), grad_F_dense(w, eps)) <= 1e-13


def test_grad_oracle_is_1_lipschitz():
    rng = np.random.default_rng(8)
    eps = 0.7
    for _ in range(200):
        a = rng.standard_normal((5, 4))
        b = a + rng.standard_normal((5, 4)) * rng.uniform(0.01, 2)
        lhs = np.linalg.norm(grad_F_eps_oracle(a, eps) - grad_F_eps_oracle(b, eps))
        assert lhs <= (1 + 1e-8) * np.linalg.norm(a - b)


# -- tail ratio -------------------------------------------------------------


def test_tail_ratio_examples():
    assert tail_ratio(np.diag([4.0, 3.0]), 1) == pytest.approx(0.64)
    rng = np.random.default_rng(9)
    low = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 6))
    assert tail_ratio(low, 2) == pytest.approx(1.0, abs=1e-12)
    assert tail_ratio(np.zeros((3, 3)), 1) == 1.0


def test_tail_ratio_brute_force():
    w = np.random.default_rng(10).standard_normal((10, 10))
    s = np.linalg.svd(w, compute_uv=False)
    assert abs(tail_ratio(w, 3) - np.sum(s[:3] ** 2) / np.sum(w**2)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_tail_ratio_in_unit_interval(seed, d1, d2):
    w = np.random.default_rng(seed).standard_normal((d1, d2))
    for r in range(1, min(d1, d2) + 1):
        assert 0.0 <= tail_ratio(w, r) <= 1.0
    assert tail_ratio(w, min(d1, d2)) == pytest.approx(1.0)
