"""Levinson-Durbin solvers for symmetric positive-definite Toeplitz systems."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument


def levinson_durbin(r: np.ndarray):
    """Backward predictors and prediction errors for autocorrelation ``r``.

    Returns ``(U, err)`` with ``U`` unit upper-triangular such that
    ``T^{-1} = U @ diag(1/err) @ U.T`` for ``T = toeplitz(r)``; column ``k`` of
    ``U`` is the order-k backward predictor.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.size
    if n == 0 or r[0] <= 0:
        raise InvalidArgument("autocorrelation must be non-empty with r[0] > 0")
    U = np.zeros((n, n))
    err = np.empty(n)
    a = np.zeros(n)  # forward predictor of the current order, a[0] = 1
    a[0] = 1.0
    err[0] = r[0]
    U[0, 0] = 1.0
    for k in range(1, n):
        acc = np.dot(a[:k], r[k:0:-1])
        refl = -acc / err[k - 1]
        a[:k + 1] = a[:k + 1] + refl * a[k::-1]
        err[k] = err[k - 1] * (1.0 - refl * refl)
        if err[k] <= 0:
            raise InvalidArgument("Toeplitz matrix is not positive definite")
        U[:k + 1, k] = a[k::-1]
    return U, err


def solve_toeplitz(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``toeplitz(r) @ x = b`` by the Levinson recursion in O(n^2)."""
    r = np.asarray(r, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = r.size
    if b.shape != (n,):
        raise InvalidArgument(f"rhs must have shape ({n},), got {b.shape}")
    if r[0] <= 0:
        raise InvalidArgument("r[0] must be positive")
    f = np.zeros(n)  # forward vector: T_k f = e_0 (scaled)
    x = np.zeros(n)
    f[0] = 1.0 / r[0]
    x[0] = b[0] / r[0]
    for k in range(1, n):
        # errors from extending by one row
        ef = np.dot(r[k:0:-1], f[:k])
        ex = np.dot(r[k:0:-1], x[:k])
        denom = 1.0 - ef * ef
        if denom <= 0:
            raise InvalidArgument("Toeplitz matrix is not positive definite")
        fk = np.zeros(k + 1)
        fk[:k] = f[:k]
        bk = fk[::-1]
        f_new = (fk - ef * bk) / denom
        x[:k + 1] = x[:k + 1] + (b[k] - ex) * f_new[::-1]
        f[:k + 1] = f_new
    return x


class ToeplitzInverse:
    """Factored inverse of a symmetric Toeplitz matrix, reusable across right-hand sides."""

    def __init__(self, r: np.ndarray):
        self.U, self.err = levinson_durbin(r)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.U @ ((self.U.T @ b) / self.err)
