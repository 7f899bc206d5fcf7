"""Dense symmetric eigensolver used as the ground-truth curvature oracle.

Cyclic Jacobi with round-robin ordering: each round annihilates ``d/2``
disjoint off-diagonal pairs at once.  Rotations on disjoint index pairs
commute, so one round is a single orthogonal similarity and can be applied
with whole-row and whole-column numpy operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import ContractViolation

MAX_DIM = 512


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns, orthonormal
    residuals: np.ndarray  # ||H v - lambda v|| per pair
    sweeps: int

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """``m - 1`` rounds of ``m / 2`` disjoint pairs covering every pair once (circle method)."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _layouts(m: int):
    """Per round, the index order placing pair ``i`` at positions ``(i, i + m/2)``,
    and the gather taking each layout to the next one (the last wraps to the first)."""
    orders = [np.concatenate([p, q]) for p, q in _round_robin(m)]
    gathers = []
    for cur, nxt in zip(orders, orders[1:] + orders[:1]):
        where = np.empty(m, dtype=int)
        where[cur] = np.arange(m)
        gathers.append(where[nxt])
    return orders, gathers


def _rotate_round(W, m, h, idx, jdx):
    """Annihilate ``A[i, h + i]`` for every ``i < h`` with one combined rotation.

    ``W`` stacks ``A`` over ``V``; the column rotation acts on both, the row
    rotation on ``A`` only.
    """
    A = W[:m]
    apq = A[idx, jdx]
    theta = (A[jdx, jdx] - A[idx, idx]) / np.where(apq == 0.0, 1.0, 2.0 * apq)
    t = np.copysign(1.0, theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
    t[apq == 0.0] = 0.0
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    left, right = W[:, :h], W[:, h:]
    keep = left.copy()
    left *= c
    left -= s * right
    right *= c
    right += s * keep
    top, bottom = A[:h], A[h:]
    keep = top.copy()
    top *= c[:, None]
    top -= s[:, None] * bottom
    bottom *= c[:, None]
    bottom += s[:, None] * keep
    A[idx, jdx] = 0.0
    A[jdx, idx] = 0.0


def dense_eigensolve(H, max_dim: int = MAX_DIM, tol: float = 1e-14, max_sweeps: int = 60) -> EigenResult:
    H = np.array(H, dtype=float, copy=True)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {H.shape}")
    d = H.shape[0]
    if d > max_dim:
        raise ContractViolation(f"dense eigensolve limited to d <= {max_dim}, got {d}")
    if not np.all(np.isfinite(H)):
        raise ContractViolation("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(H))))
    if np.max(np.abs(H - H.T)) > 1e-8 * scale:
        raise ContractViolation("matrix is not symmetric to within 1e-8")
    H = 0.5 * (H + H.T)
    original = H.copy()

    if d == 1:
        return EigenResult(H[0].copy(), np.ones((1, 1)), np.zeros(1), 0)

    m = d + (d % 2)
    h = m // 2
    orders, gathers = _layouts(m)
    padded = np.zeros((m, m))
    padded[:d, :d] = H
    # Work in the first round's layout; position k holds original index orders[0][k].
    W = np.vstack([padded[np.ix_(orders[0], orders[0])], np.eye(m)[:, orders[0]]])
    idx = np.arange(h)
    jdx = idx + h
    # Rows of A follow the permutation, rows of V stay; columns permute in both.
    moves = [(np.concatenate([g, np.arange(m, 2 * m)]), g) for g in gathers]
    frob = np.linalg.norm(W[:m])
    sweeps = 0
    while sweeps < max_sweeps:
        A = W[:m]
        if np.linalg.norm(A - np.diag(np.diag(A))) <= tol * max(frob, 1e-300):
            break
        sweeps += 1
        for rows, cols in moves:
            _rotate_round(W, m, h, idx, jdx)
            W = W.take(rows, axis=0).take(cols, axis=1)
    A, V = W[:m], W[m:]

    keep = orders[0] < d  # drop the padding index
    evals = np.diag(A)[keep].copy()
    evecs = V[:d][:, keep].copy()
    order = np.argsort(evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    residuals = np.linalg.norm(original @ evecs - evecs * evals, axis=0)
    return EigenResult(evals, evecs, residuals, sweeps)
