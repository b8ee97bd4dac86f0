"""Link-function primitives and small dense linear algebra."""

import math

import numpy as np
import scipy.linalg


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be positive definite is not."""


def sigmoid(x):
    """Numerically stable logistic function; accepts scalars or arrays."""
    if np.ndim(x) == 0:
        x = float(x)
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, z) / (1.0 + z)


def sigmoid_deriv(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def sigmoid_second_deriv(x):
    s = sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow: -log(1 + exp(-x))."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def mahalanobis_norm(v, m):
    """sqrt(v^T m v), with tiny negative quadratic forms clamped to zero."""
    v = np.asarray(v, dtype=float)
    m = np.asarray(m, dtype=float)
    if m.shape != (v.shape[0], v.shape[0]):
        raise ValueError(f"dimension mismatch: vector {v.shape}, matrix {m.shape}")
    q = float(v @ m @ v)
    if q < 0.0:
        if q < -1e-12:
            raise ValueError(f"matrix is not PSD along v (v^T m v = {q:.3e})")
        q = 0.0
    return math.sqrt(q)


class PsdFactor:
    """Cholesky factor of a symmetric PD matrix, reusable across many solves.

    ``inv_norm(v)`` returns ||v||_{M^{-1}} for one vector or each row of a 2-D
    array, which is the operation every exploration bonus needs.
    """

    def __init__(self, m):
        m = np.asarray(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        try:
            self._chol = scipy.linalg.cho_factor(m, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"matrix is not numerically PD: {exc}") from exc
        self.dim = m.shape[0]

    def solve(self, v):
        return scipy.linalg.cho_solve(self._chol, np.asarray(v, dtype=float))

    def inv_norm_sq(self, v):
        v = np.asarray(v, dtype=float)
        low = self._chol[0]
        if v.ndim == 1:
            w = scipy.linalg.solve_triangular(low, v, lower=True)
            return float(w @ w)
        w = scipy.linalg.solve_triangular(low, v.T, lower=True)
        return np.einsum("ij,ij->j", w, w)

    def inv_norm(self, v):
        return np.sqrt(self.inv_norm_sq(v))


def psd_solve(m, v):
    """Solve m x = v for symmetric PD m via Cholesky."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if m.shape[0] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {m.shape}, vector {v.shape}")
    return PsdFactor(m).solve(v)


def min_eigenvalue(m):
    return float(np.linalg.eigvalsh(np.asarray(m, dtype=float))[0])


def is_psd(m, slack=1e-9):
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
        return False
    return min_eigenvalue(m) >= -slack
