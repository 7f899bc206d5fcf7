import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashopt.eigen import _round_robin, dense_eigensolve
from flashopt.oracle import ContractViolation


def _random_symmetric(d, seed):
    a = np.random.default_rng(seed).standard_normal((d, d))
    return 0.5 * (a + a.T)


def _negative_inertia(H, sigma):
    """Number of eigenvalues below sigma via symmetric elimination (Sylvester's law)."""
    A = H - sigma * np.eye(H.shape[0])
    count = 0
    A = A.copy()
    n = A.shape[0]
    for k in range(n):
        piv = A[k, k]
        if piv == 0.0:
            piv = 1e-300
        if piv < 0:
            count += 1
        if k + 1 < n:
            col = A[k + 1:, k] / piv
            A[k + 1:, k + 1:] -= np.outer(col, A[k, k + 1:])
    return count


def _bisection_eigenvalues(H, tol=1e-10):
    """Independent oracle: each eigenvalue by bisection on the inertia count."""
    bound = np.max(np.sum(np.abs(H), axis=1)) + 1.0
    out = []
    for k in range(H.shape[0]):
        lo, hi = -bound, bound
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _negative_inertia(H, mid) >= k + 1:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


def test_diag_example():
    res = dense_eigensolve(np.diag([1.0, -0.5]))
    assert np.allclose(res.eigenvalues, [-0.5, 1.0], atol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 5, 16])
def test_identity(d):
    assert np.allclose(dense_eigensolve(np.eye(d)).eigenvalues, 1.0)


def test_reconstruction_8x8():
    H = _random_symmetric(8, 0)
    res = dense_eigensolve(H)
    V, lam = res.eigenvectors, res.eigenvalues
    assert np.linalg.norm(V @ np.diag(lam) @ V.T - H) <= 1e-8


def test_round_robin_covers_all_pairs_once():
    for m in (2, 4, 8, 10):
        seen = []
        for p, q in _round_robin(m):
            assert len(set(p) | set(q)) == m  # disjoint within a round
            seen.extend(zip(p.tolist(), q.tolist()))
        assert len(seen) == len(set(seen)) == m * (m - 1) // 2


@given(st.integers(2, 8), st.integers(0, 10**6))
def test_matches_bisection_oracle(d, seed):
    H = _random_symmetric(d, seed)
    assert np.allclose(dense_eigensolve(H).eigenvalues, _bisection_eigenvalues(H), atol=1e-6)


@given(st.integers(1, 64), st.integers(0, 10**6))
def test_residual_and_orthonormality(d, seed):
    H = _random_symmetric(d, seed)
    res = dense_eigensolve(H)
    norm = np.linalg.norm(H, 2)
    assert np.all(res.residuals <= 1e-8 * max(norm, 1e-300))
    V = res.eigenvectors
    assert np.max(np.abs(V.T @ V - np.eye(d))) <= 1e-8
    assert np.all(np.diff(res.eigenvalues) >= 0)


def test_repeated_eigenvalues():
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 6)))
    H = Q @ np.diag([-1, -1, -1, 2, 2, 5.0]) @ Q.T
    res = dense_eigensolve(H)
    assert np.allclose(res.eigenvalues, [-1, -1, -1, 2, 2, 5], atol=1e-10)


def test_nonfinite_rejected():
    H = np.eye(3)
    H[0, 1] = H[1, 0] = np.nan
    with pytest.raises(ContractViolation):
        dense_eigensolve(H)


def test_asymmetric_rejected():
    with pytest.raises(ContractViolation):
        dense_eigensolve(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_tiny_asymmetry_symmetrised():
    H = np.array([[1.0, 0.5 + 1e-12], [0.5, 2.0]])
    assert dense_eigensolve(H).residuals.max() < 1e-8


def test_dimension_limit():
    with pytest.raises(ContractViolation):
        dense_eigensolve(np.eye(513))
