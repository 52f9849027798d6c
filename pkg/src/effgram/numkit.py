"""Dense linear algebra and quadrature primitives.

Matrices are plain 2-D float64 numpy arrays. ``sym_eig`` uses LAPACK by
default; ``jacobi_eigh`` is a self-contained cyclic Jacobi solver kept as an
alternative backend and as a cross-check.
"""
from typing import NamedTuple

import numpy as np

from .errors import InputError, ShapeError


class SymEigen(NamedTuple):
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # columns, same order


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} has non-finite entries")
    return a


def _check_symmetric(a, tol):
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > tol * scale:
        raise ShapeError("matrix is not symmetric within tolerance")


def sym_eig(a, tol=1e-10, method="lapack"):
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    a = as_matrix(a)
    _check_symmetric(a, tol)
    a = 0.5 * (a + a.T)
    if method == "jacobi":
        return jacobi_eigh(a, tol=min(tol, 1e-14))
    if method != "lapack":
        raise InputError(f"unknown eigensolver {method!r}")
    vals, vecs = np.linalg.eigh(a)
    # eigh already returns ascending order; a stable sort keeps ties in place
    order = np.argsort(vals, kind="stable")
    return SymEigen(vals[order], vecs[:, order])


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Sweeps over all off-diagonal pairs (p, q) and annihilates each with a
    plane rotation until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``.
    """
    a = np.array(as_matrix(a), copy=True)
    n = a.shape[0]
    if n != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n == 0 or norm == 0.0:
        return SymEigen(np.diag(a).copy(), v)

    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta  # theta^2 would overflow
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return SymEigen(vals[order], v[:, order])


# Pade [13/13] coefficients and the 1-norm threshold below which the
# approximant is accurate to double precision (Higham 2005).
_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def mat_exp(a):
    """Matrix exponential by scaling and squaring around a Pade [13/13] core."""
    a = as_matrix(a)
    n = a.shape[0]
    if n != a.shape[1]:
        raise ShapeError(f"mat_exp needs a square matrix, got {a.shape}")
    if n == 0:
        return a.copy()
    norm1 = np.linalg.norm(a, 1)
    s = 0
    if norm1 > _THETA13:
        s = int(np.ceil(np.log2(norm1 / _THETA13)))
    a = a / (2.0 ** s)
    b = _PADE13
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def _check_grid(values, grid):
    values = np.asarray(values, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or values.shape[:1] != grid.shape:
        raise InputError(
            f"values and grid lengths differ ({values.shape[:1]} vs {grid.shape})")
    if grid.size < 2:
        raise InputError("need at least two grid points")
    if np.any(np.diff(grid) <= 0):
        raise InputError("grid must be strictly increasing")
    return values, grid


def trapezoid_integrate(values, grid):
    """Composite trapezoid rule; ``values`` may carry trailing axes."""
    values, grid = _check_grid(values, grid)
    h = np.diff(grid).reshape((-1,) + (1,) * (values.ndim - 1))
    return np.sum(h * (values[1:] + values[:-1]) * 0.5, axis=0)


def cumulative_trapezoid(values, grid):
    """Running trapezoid integral, starting at 0 on ``grid[0]``."""
    values, grid = _check_grid(values, grid)
    h = np.diff(grid).reshape((-1,) + (1,) * (values.ndim - 1))
    out = np.zeros_like(values)
    out[1:] = np.cumsum(h * (values[1:] + values[:-1]) * 0.5, axis=0)
    return out


def trapezoid_weights(grid):
    """Weights w with sum(w * f(grid)) equal to the trapezoid integral."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 2:
        return np.zeros_like(grid)
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def spectral_norm(a):
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))
