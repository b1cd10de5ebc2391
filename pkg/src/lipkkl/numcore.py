"""Small dense linear algebra and seeded random draws.

Matrices here are tiny (at most a few dozen rows), so everything is plain
numpy with explicit loops where the algorithm is the point.
"""
from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-12


class SingularMatrixError(ValueError):
    """Raised when a factorization meets a pivot below ``PIVOT_TOL``."""


class ConvergenceError(RuntimeError):
    pass


def as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def lu_factor(m) -> tuple[np.ndarray, np.ndarray]:
    """LU factorization with partial pivoting.

    Returns ``(lu, perm)`` where ``lu`` packs unit-lower L below the diagonal
    and U on and above it, and ``m[perm] == L @ U``.
    """
    a = as_matrix(m).copy()
    n, k = a.shape
    if n != k:
        raise ValueError(f"matrix must be square, got {a.shape}")
    perm = np.arange(n)
    for j in range(n):
        p = j + int(np.argmax(np.abs(a[j:, j])))
        if abs(a[p, j]) < PIVOT_TOL:
            raise SingularMatrixError(
                f"pivot {abs(a[p, j]):.3e} in column {j} is below {PIVOT_TOL:g}"
            )
        if p != j:
            a[[j, p]] = a[[p, j]]
            perm[[j, p]] = perm[[p, j]]
        a[j + 1:, j] /= a[j, j]
        a[j + 1:, j + 1:] -= np.outer(a[j + 1:, j], a[j, j + 1:])
    return a, perm


def lu_solve(factors: tuple[np.ndarray, np.ndarray], rhs) -> np.ndarray:
    lu, perm = factors
    b = np.array(rhs, dtype=float)
    vector = b.ndim == 1
    x = b.reshape(len(perm), -1)[perm].copy()
    n = len(perm)
    for i in range(n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x[:, 0] if vector else x


def solve(m, rhs) -> np.ndarray:
    return lu_solve(lu_factor(m), rhs)


def mat_inverse(m) -> np.ndarray:
    a = as_matrix(m)
    return lu_solve(lu_factor(a), np.eye(a.shape[0]))


def spectral_norm(m, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``m.T @ m``.

    Starts from the normalized all-ones vector. If that start lies in the
    null space of ``m``, it is replaced by a fixed deterministic perturbation.
    Stops once the eigen-residual of ``m.T @ m`` falls below ``tol`` times the
    current eigenvalue estimate.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise ValueError("spectral_norm of an empty matrix")
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    n = gram.shape[0]
    v = np.ones(n) / np.sqrt(n)
    restarts = 0
    for _ in range(max_iter):
        w = gram @ v
        lam = float(v @ w)
        wn = np.linalg.norm(w)
        if wn == 0.0 or lam <= 0.0:
            restarts += 1
            v = np.cos(np.arange(1, n + 1) * (1.0 + restarts))
            v /= np.linalg.norm(v)
            continue
        if np.linalg.norm(w - lam * v) <= tol * lam:
            return float(np.sqrt(lam))
        v = w / wn
    raise ConvergenceError(f"power iteration did not reach tol={tol:g} in {max_iter} iterations")


def solve_lyapunov(a, q) -> np.ndarray:
    """Solve ``a @ P + P @ a.T + q = 0`` through the Kronecker-vectorized system.

    With row-major vec, ``vec(a P) = (a kron I) vec P`` and
    ``vec(P a.T) = (I kron a) vec P``.
    """
    a = as_matrix(a)
    q = as_matrix(q)
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise ValueError(f"shape mismatch: a {a.shape}, q {q.shape}")
    eye = np.eye(n)
    big = np.kron(a, eye) + np.kron(eye, a)
    try:
        p = solve(big, -q.reshape(-1)).reshape(n, n)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"Lyapunov system is singular; is `a` Hurwitz? ({exc})") from exc
    return 0.5 * (p + p.T)


def make_rng(seed) -> np.random.Generator:
    """Philox (counter-based) stream; same seed gives the same draws on every platform."""
    return np.random.Generator(np.random.Philox(seed))


def gaussian(rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal(n)
