"""Closed forms for linear regression on two orthonormal input points.

Samples ``1..n/2`` sit at ``(x1, y1)``, the rest at ``(x2, y2)``, the model
is ``f(w, x) = w^T x`` with loss ``(f - y)^2 / 2`` and gradient flow starts
from ``w = 0``. Everything lives in the ``(x1, x2)`` coordinate plane.

Leaving out one sample on side ``k`` slows the fit along ``x_k`` to rate
``(n-2)/(2(n-1))`` and speeds the other side up to ``n/(2(n-1))``. Because the
loss is quadratic in the coordinate, the loss difference decays at twice the
slow rate, so the averaged contraction factor is ``(n-2)/(n-1)``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .numkit import sym_eig


@dataclass(frozen=True)
class TwoPointParams:
    n: int
    y1: float = 1.0
    y2: float = 1.0
    eps0: float = 1e-3

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise InputError(f"n must be even and >= 2, got {self.n}")

    @property
    def slow_rate(self):
        return (self.n - 2) / (2 * (self.n - 1))

    @property
    def fast_rate(self):
        return self.n / (2 * (self.n - 1))

    @property
    def c_bar(self):
        return (self.n - 2) / (self.n - 1)

    @property
    def y_norm2(self):
        return self.y1 ** 2 + self.y2 ** 2


def closed_form_trajectories(p, t):
    """Coordinates of ``w(t)`` and of the leave-one-out runs in the ``(x1, x2)`` basis.

    Returns ``(w, w_minus)`` where ``w_minus[k]`` is the run that omitted a
    sample from side ``k`` (0 or 1).
    """
    t = float(t)
    if t < 0:
        raise InputError("time must be nonnegative")
    y = np.array([p.y1, p.y2])
    w = (1.0 - np.exp(-t / 2)) * y
    slow = 1.0 - np.exp(-p.slow_rate * t)
    fast = 1.0 - np.exp(-p.fast_rate * t)
    w_minus = np.array([[slow * p.y1, fast * p.y2],
                        [fast * p.y1, slow * p.y2]])
    return w, w_minus


def closed_form_delta(p, t):
    """Exact averaged loss difference ``|y|^2 / 4 (exp(-c t) - exp(-t))``."""
    t = np.asarray(t, dtype=np.float64)
    return 0.25 * p.y_norm2 * (np.exp(-p.c_bar * t) - np.exp(-t))


def perturbation_schedule(t, eps0):
    """``eps0`` on ``[0, 1]``, ``eps0 / t^2`` afterwards."""
    t = np.asarray(t, dtype=np.float64)
    return eps0 * np.where(t <= 1.0, 1.0, 1.0 / np.maximum(t, 1.0) ** 2)


def residual_span(n):
    """Orthonormal ``(u1, u2)``: normalized indicators of the two halves."""
    u = np.zeros((n, 2))
    u[: n // 2, 0] = 1.0
    u[n // 2:, 1] = 1.0
    return u * np.sqrt(2.0 / n)


def perturb_null_space(P, n, eps, rtol=1e-9):
    """``P + (n eps / 2) (I - Pi)``, with ``Pi`` the projector onto the range of symmetric ``P``.

    Leaves the residual dynamics unchanged when the residual stays in the
    range of ``P``, while lifting the zero eigenvalues.
    """
    P = np.asarray(P, dtype=np.float64)
    eig = sym_eig(0.5 * (P + P.T), tol=1e-6)
    scale = max(np.max(np.abs(eig.eigenvalues)), 1e-300)
    V = eig.eigenvectors[:, np.abs(eig.eigenvalues) > rtol * scale]
    null = np.eye(P.shape[0]) - V @ V.T
    return P + 0.5 * n * eps * null


def closed_form_gram_eigen(p, t):
    """Residual-span eigenvalue ``lam(t)`` and the bracket for the complement eigenvalue.

    Returns ``(lam, (lower, upper), c_bar)``. For ``n = 2`` the bracket uses
    the ``c -> 0`` limit, which is linear in ``t``.
    """
    t = float(t)
    c = p.c_bar
    nm1 = p.n - 1
    if c == 0.0:
        lam = (1.0 - np.exp(-t)) / (2 * nm1)
        return lam, (t / (2 * nm1), t / nm1), c
    lam = 0.5 / (1.0 - c) / nm1 * (np.exp(-c * t) - np.exp(-t))
    base = (1.0 - np.exp(-c * t)) / (c * nm1)
    return lam, (0.5 * base, base), c


def complement_eigen(p, t, cov_factor=True, nodes=20001):
    """Complement eigenvalue for the perturbation schedule, by fine quadrature.

    ``cov_factor`` applies the ``1 - eps/2`` factor that appears when the
    perturbed operator also stands in for ``H``.
    """
    s = np.linspace(0.0, float(t), nodes)
    eps = perturbation_schedule(s, p.eps0)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(s) * (eps[1:] + eps[:-1]))])
    f = np.exp(-cum) * np.exp(-p.c_bar * (t - s))
    if cov_factor:
        f = f * (1.0 - eps / 2)
    return float(np.trapezoid(f, s)) / (p.n - 1)


def comparison_bounds(p):
    """Weight-norm bound ``sqrt(2|y|^2/n)`` and accumulated-perturbation bound ``|y|^2/(4(n-1))``."""
    return np.sqrt(2.0 * p.y_norm2 / p.n), p.y_norm2 / (4.0 * (p.n - 1))


def single_support_probability(n):
    """Chance that n uniform draws from two points all land on one of them."""
    return 2.0 ** (-(n - 1))
