"""Residual propagators, the effective Gram matrix and loss-difference reconstruction.

The residual obeys the linear time-varying ODE ``dr/dt = -P(t) r / n``. Its
propagator is approximated by a product of Euler factors, by the first one
or two Magnus terms over the whole interval, or by a product of per-interval
exponentials. The effective Gram matrix is

    K(t0, t) = 1/(n-1) int_{t0}^{t} Omega(s)^T (M - H/n)(s) Omega(s) exp(-int_s^t c) ds,

with both integrals done by the trapezoid rule on the record grid. Inputs
that run over time (P series, blocks, propagators) may be any iterable, so
long runs can be streamed without holding every matrix in memory.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError
from .numkit import cumulative_trapezoid, mat_exp, spectral_norm, sym_eig, trapezoid_weights

METHODS = ("product", "magnus1", "magnus2", "exponential")


@dataclass
class Propagator:
    times: np.ndarray
    omegas: list
    method: str = "product"


class ProductStepper:
    """``Omega <- (I - h/n P(t_k)) Omega`` with ``P`` taken at the left end of each step."""

    def __init__(self, dim, n):
        self.omega = np.eye(dim)
        self.n = n
        self._prev = None

    def advance(self, P, t):
        if self._prev is not None:
            P0, t0 = self._prev
            self.omega = self.omega - ((t - t0) / self.n) * (P0 @ self.omega)
        self._prev = (P, t)
        return self.omega


class MagnusStepper:
    """Truncated Magnus series with trapezoid quadrature.

    ``w1 = -1/n int P`` and ``w2 = 1/2 int [A(t1), w1(t1)] dt1`` with
    ``A = -P/n``; the propagator is ``exp(w1 [+ w2])``.
    """

    def __init__(self, dim, n, order):
        if order not in (1, 2):
            raise InputError("Magnus order must be 1 or 2")
        self.n = n
        self.order = order
        self.w1 = np.zeros((dim, dim))
        self.w2 = np.zeros((dim, dim))
        self._prev = None

    def advance(self, P, t):
        A = -P / self.n
        if self._prev is None:
            comm = np.zeros_like(A)
        else:
            A0, t0, comm0 = self._prev
            h = t - t0
            self.w1 = self.w1 + 0.5 * h * (A0 + A)
            comm = A @ self.w1 - self.w1 @ A
            if self.order == 2:
                self.w2 = self.w2 + 0.25 * h * (comm0 + comm)
        self._prev = (A, t, comm)
        gen = self.w1 + self.w2 if self.order == 2 else self.w1
        return mat_exp(gen)


class ExponentialStepper:
    """``Omega <- exp(-h/(2n) (P_k + P_{k+1})) Omega``: first-order Magnus on each grid interval.

    Unlike the Euler product it stays bounded when ``h * ||P|| / n`` is not
    small, so it can run on a strided record grid.
    """

    def __init__(self, dim, n):
        self.omega = np.eye(dim)
        self.n = n
        self._prev = None

    def advance(self, P, t):
        if self._prev is not None:
            P0, t0 = self._prev
            self.omega = mat_exp((-0.5 * (t - t0) / self.n) * (P0 + P)) @ self.omega
        self._prev = (P, t)
        return self.omega


def make_stepper(method, dim, n):
    if method == "product":
        return ProductStepper(dim, n)
    if method == "magnus1":
        return MagnusStepper(dim, n, 1)
    if method == "magnus2":
        return MagnusStepper(dim, n, 2)
    if method == "exponential":
        return ExponentialStepper(dim, n)
    raise InputError(f"unknown propagator method {method!r}")


def _as_grid(times):
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 1:
        raise InputError("empty time grid")
    if np.any(np.diff(times) <= 0):
        raise InputError("time grid must be strictly increasing")
    return times


def iter_propagator(P_series, times, n, method="product"):
    """Yield ``Omega(t0, t_k)`` for every grid point; ``P_series`` may be a generator."""
    times = _as_grid(times)
    stepper = None
    count = 0
    for k, P in enumerate(P_series):
        if k >= times.size:
            raise InputError("P series is longer than the time grid")
        P = np.asarray(P, dtype=np.float64)
        if stepper is None:
            stepper = make_stepper(method, P.shape[0], n)
        yield stepper.advance(P, times[k]).copy()
        count += 1
    if count != times.size:
        raise InputError(f"P series has {count} entries for a grid of {times.size}")


def propagator_product(P_series, times, n):
    times = _as_grid(times)
    return Propagator(times, list(iter_propagator(P_series, times, n, "product")), "product")


def propagator_magnus(P_series, times, n, order=1):
    times = _as_grid(times)
    method = f"magnus{order}"
    return Propagator(times, list(iter_propagator(P_series, times, n, method)), method)


def damping_integral(c_bar, masked, times):
    """Cumulative trapezoid of the contraction factor; masked entries count as 0."""
    times = _as_grid(times)
    c = np.where(np.asarray(masked, dtype=bool), 0.0, np.asarray(c_bar, dtype=np.float64))
    if c.shape != times.shape:
        raise InputError("contraction series and grid differ in length")
    if times.size == 1:
        return np.zeros(1)
    return cumulative_trapezoid(c, times)


def kernel_weights(c_bar, masked, times, horizon=None):
    """Quadrature weights ``w_k exp(C(t_k) - C(t_h))`` for the integral up to ``horizon``."""
    times = _as_grid(times)
    h = times.size - 1 if horizon is None else int(horizon)
    if not 0 <= h < times.size:
        raise InputError(f"horizon index {h} outside the grid")
    C = damping_integral(c_bar, masked, times)
    w = np.zeros(times.size)
    if h > 0:
        w[: h + 1] = trapezoid_weights(times[: h + 1]) * np.exp(C[: h + 1] - C[h])
    return w


@dataclass
class EffectiveGram:
    K: np.ndarray
    horizon: float
    start: float
    method: str = "product"
    damping: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.K.shape[0]


def _finish(acc, n, horizon, start, method, c_bar, masked, times):
    K = acc / (n - 1)
    K = 0.5 * (K + K.T)
    live = ~np.asarray(masked, dtype=bool)
    C = damping_integral(c_bar, masked, times)
    stats = {
        "integral": float(C[-1]),
        "masked": int((~live).sum()),
        "negative_fraction": float(np.mean(np.asarray(c_bar)[live] < 0)) if live.any() else 0.0,
    }
    return EffectiveGram(K, float(horizon), float(start), method, stats)


def effective_gram(blocks, c_bar, masked, omegas, times, n, method="product"):
    """Trapezoid approximation of the effective Gram matrix at the last grid point.

    ``blocks`` yields objects with ``M`` and ``H`` (or the ``M - H/n`` matrix
    via ``covariance_form``); ``omegas`` yields the propagator on the same grid.
    """
    times = _as_grid(times)
    if n < 2:
        raise InputError("n must be at least 2")
    w = kernel_weights(c_bar, masked, times)
    acc = None
    count = 0
    for k, (blk, om) in enumerate(zip(blocks, omegas)):
        if k >= times.size:
            raise InputError("series longer than the time grid")
        A = _cov_form(blk, n)
        if acc is None:
            acc = np.zeros_like(A)
        if w[k] != 0.0:
            acc += w[k] * (om.T @ A @ om)
        count += 1
    if count != times.size:
        raise InputError(f"got {count} blocks/propagators for a grid of {times.size}")
    return _finish(acc, n, times[-1], times[0], method, c_bar, masked, times)


def _cov_form(blk, n):
    if hasattr(blk, "covariance_form"):
        return blk.covariance_form
    M, H = blk
    return M - H / n


def quadratic_form(K, r0):
    Km = K.K if isinstance(K, EffectiveGram) else np.asarray(K, dtype=np.float64)
    r0 = np.asarray(r0, dtype=np.float64).reshape(-1)
    if Km.shape != (r0.size, r0.size):
        raise ShapeError(f"kernel {Km.shape} and residual of length {r0.size} disagree")
    return float(r0 @ Km @ r0)


def reconstruct_delta(c_bar, masked, eps, times):
    """``D(t) = int_0^t eps(s) exp(-int_s^t c) ds`` at every grid point."""
    times = _as_grid(times)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != times.shape:
        raise InputError("perturbation series and grid differ in length")
    C = damping_integral(c_bar, masked, times)
    out = np.zeros(times.size)
    for j in range(1, times.size):
        h = times[j] - times[j - 1]
        decay = np.exp(C[j - 1] - C[j])
        out[j] = decay * (out[j - 1] + 0.5 * h * eps[j - 1]) + 0.5 * h * eps[j]
    return out


@dataclass
class KernelRun:
    """Everything a single streamed pass over the blocks produces."""
    gram: EffectiveGram
    eps_hat: np.ndarray           # r0^T Omega^T (M - H/n) Omega r0 / (n-1)
    propagated: np.ndarray        # Omega(t_k) r0, shape (K, N)
    lambda_min: np.ndarray        # smallest eigenvalue of (P + P^T)/2
    lambda_max: np.ndarray
    cov_norm: np.ndarray          # ||M - H/n||_2 / (n-1)
    times: np.ndarray


def run_kernel(blocks, c_bar, masked, times, n, r0, method="product", spectra=True,
               spectra_every=1):
    """One pass over ``blocks``: propagator, Gram integral, perturbation estimate, diagnostics.

    Eigenvalue diagnostics are taken every ``spectra_every`` points (and at the
    last one); the rest stay NaN.
    """
    times = _as_grid(times)
    r0 = np.asarray(r0, dtype=np.float64).reshape(-1)
    w = kernel_weights(c_bar, masked, times)
    stepper = make_stepper(method, r0.size, n)
    acc = np.zeros((r0.size, r0.size))
    K = times.size
    eps_hat = np.zeros(K)
    prop = np.zeros((K, r0.size))
    lmin = np.full(K, np.nan)
    lmax = np.full(K, np.nan)
    cnorm = np.full(K, np.nan)
    count = 0
    for k, blk in enumerate(blocks):
        if k >= K:
            raise InputError("blocks series longer than the time grid")
        if blk.P.shape != (r0.size, r0.size):
            raise ShapeError("blocks and residual dimensions disagree")
        om = stepper.advance(blk.P, times[k])
        A = _cov_form(blk, n)
        AO = A @ om
        if w[k] != 0.0:
            acc += w[k] * (om.T @ AO)
        v = om @ r0
        prop[k] = v
        eps_hat[k] = v @ A @ v / (n - 1)
        if spectra and (k % spectra_every == 0 or k == K - 1):
            sym = sym_eig(0.5 * (blk.P + blk.P.T), tol=1e-6).eigenvalues
            lmin[k], lmax[k] = sym[0], sym[-1]
            cnorm[k] = np.max(np.abs(sym_eig(A, tol=1e-6).eigenvalues)) / (n - 1)
        count += 1
    if count != K:
        raise InputError(f"got {count} blocks for a grid of {K}")
    gram = _finish(acc, n, times[-1], times[0], method, c_bar, masked, times)
    return KernelRun(gram, eps_hat, prop, lmin, lmax, cnorm, times)


def effective_gram_from_t0(blocks, c_bar, masked, times, n, r_t0, method="product"):
    """Gram matrix for training restarted at ``times[0]`` and the predicted increment.

    Callers pass the series restricted to ``[t0, horizon]`` and the residual
    at ``t0``. Returns ``(EffectiveGram, increment)``.
    """
    times = _as_grid(times)
    run = run_kernel(blocks, c_bar, masked, times, n, r_t0, method, spectra=False)
    return run.gram, quadratic_form(run.gram, r_t0)


def convergence_diagnostics(lambda_min, cov_norm, c_bar, masked, times, n):
    """Observational report on the sufficient conditions for the Gram limit to exist.

    ``omega(t) = exp(-(2/n) int lambda_min)`` bounds the squared propagator
    norm; ``m(t) = ||M - H/n||_2 / (n-1)``. Nothing here raises: the
    conditions are sufficient, not necessary.
    """
    times = _as_grid(times)
    lam = np.asarray(lambda_min, dtype=np.float64)
    m = np.asarray(cov_norm, dtype=np.float64)
    have = np.isfinite(lam) & np.isfinite(m)
    if not have.all():
        if not have.any():
            raise InputError("no spectral diagnostics were recorded")
        times, lam, m = times[have], lam[have], m[have]
        masked, c_bar = np.asarray(masked)[have], np.asarray(c_bar)[have]
    if times.size < 2:
        omega = np.ones(1)
        integral = np.zeros(1)
    else:
        omega = np.exp(np.clip(-(2.0 / n) * cumulative_trapezoid(lam, times), None, 300.0))
        integral = cumulative_trapezoid(omega * m, times)
    prod = omega * m
    half = times.size // 2
    tail_growth = float(integral[-1] - integral[half]) if times.size > 2 else 0.0
    live = ~np.asarray(masked, dtype=bool)
    c = np.asarray(c_bar)[live]
    neg = float(np.mean(c < 0)) if c.size else 0.0
    omega_decays = bool(omega[-1] < 0.5 * omega[0]) if times.size > 1 else False
    # product should shrink over the second half if the improper integral converges
    settling = bool(prod[-1] <= 0.5 * np.max(prod[half:])) if times.size > 2 else False
    return {
        "lambda_min_min": float(np.min(lam)),
        "lambda_min_final": float(lam[-1]),
        "omega_final": float(omega[-1]),
        "omega_decays": omega_decays,
        "integral_omega_m": float(integral[-1]),
        "integral_second_half": tail_growth,
        "integral_settling": settling,
        "sup_omega_m": float(np.max(prod)),
        "omega_m_final": float(prod[-1]),
        "c_bar_negative_fraction": neg,
        "c_bar_nonnegative": neg == 0.0,
        "conditions_observed": bool(omega_decays and settling and neg == 0.0),
    }
