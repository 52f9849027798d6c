"""Contraction and perturbation factors, and the kernel blocks P, M, H.

Block matrices are indexed sample-major: row ``i*C + a`` is output ``a`` of
sample ``i``. With ``J_i`` the ``C x P`` output Jacobian of sample ``i`` and
``L_i`` its loss-output Hessian,

    H[i, j] = J_i J_j^T,   M = blockdiag(H[i, i]),   P[i, j] = L_i J_i J_j^T.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import net
from .errors import InputError, ShapeError
from .traj import aligned_offset, split_arrays

log = logging.getLogger(__name__)

MAX_KERNEL_DIM = 4000


@dataclass
class KernelBlocks:
    P: np.ndarray
    M: np.ndarray
    H: np.ndarray
    time: float = 0.0
    C: int = 1

    @property
    def n(self):
        return self.M.shape[0] // self.C

    @property
    def covariance_form(self):
        """``M - H/n``; its quadratic form in the residual is the gradient-covariance trace."""
        return self.M - self.H / self.n


def assemble_blocks(spec, w, S, time=0.0, max_dim=MAX_KERNEL_DIM):
    n, c = S.n, spec.output_dim
    if n * c > max_dim:
        raise ShapeError(f"kernel dimension n*C = {n * c} exceeds the cap {max_dim}")
    J = net.output_jacobians(spec, w, S.inputs).reshape(n * c, -1)
    H = J @ J.T
    M = H * np.kron(np.eye(n), np.ones((c, c)))
    L = net.loss_output_hessian(spec, w, S.inputs, S.targets)
    P = np.einsum("iab,ibjc->iajc", L, H.reshape(n, c, n, c)).reshape(n * c, n * c)
    return KernelBlocks(P, M, H, time, c)


def iter_blocks(spec, record, S, start=0):
    """Kernel blocks at each record point from index ``start`` on."""
    for k in range(start, len(record)):
        yield assemble_blocks(spec, record.weights[k], S, float(record.times[k]))


def _trace_cov(G):
    gbar = G.mean(axis=0)
    return max(float(np.mean(np.sum(G * G, axis=1)) - gbar @ gbar), 0.0)


def perturbation_factor(spec, w, S, G=None):
    """``tr(Cov_i grad l(w, z_i)) / (n - 1)``, with the population covariance over S."""
    n = S.n
    if n < 2:
        raise InputError("perturbation factor needs n >= 2")
    if G is None:
        G = net.per_sample_gradients(spec, w, S.inputs, S.targets)
    return _trace_cov(G) / (n - 1)


def _batch_masks(plan, n):
    masks = np.zeros((plan.num_batches, n), dtype=bool)
    for b, idx in enumerate(plan.batches):
        masks[b, idx] = True
    return masks


def _batch_means(G, masks):
    """Per batch: mean gradient over the batch and over the rest."""
    wts = _split_weights(masks)
    g = wts @ G
    B = masks.shape[0]
    return g[:B], g[B:]


def batch_perturbation(spec, w, S, plan, G=None):
    """Plan average of ``grad l(S_B) . (grad l(S) - grad l(S minus B))``.

    This is the perturbation term that drives the measured loss difference
    for this particular plan; its expectation over random batches equals
    ``perturbation_factor``.
    """
    if G is None:
        G = net.per_sample_gradients(spec, w, S.inputs, S.targets)
    gb, gr = _batch_means(G, _batch_masks(plan, S.n))
    return float(np.mean(np.sum(gb * (G.mean(axis=0) - gr), axis=1)))


def classical_bound(c_star, eps_star, t):
    """Uniform-factor bound ``(eps/c) (1 - exp(-c t))``."""
    if not c_star > 0:
        raise InputError("the uniform contraction rate must be positive")
    return eps_star / c_star * (1.0 - np.exp(-c_star * np.asarray(t, dtype=np.float64)))


def _split_weights(masks):
    """Rows averaging over each batch and over its complement: shape ``(2B, n)``."""
    m = masks.astype(np.float64)
    rest = 1.0 - m
    return np.concatenate([m / m.sum(axis=1, keepdims=True),
                           rest / rest.sum(axis=1, keepdims=True)])


def _leave_out_terms(spec, leave_outs, masks, S, k):
    B = len(leave_outs)
    wts = _split_weights(masks)
    out = np.empty(B)
    for b, lo in enumerate(leave_outs):
        _, g = net.weighted_gradients(spec, lo.weights[k], S.inputs, S.targets,
                                      wts[[b, B + b]])
        out[b] = g[0] @ g[1]
    return out


def contraction_numerators(spec, full, leave_outs, plan, S):
    """Per-batch ``g_B . g_rest`` evaluated at the leave-out weights minus at the full weights.

    Returns an array ``(B, K)`` on the shared grid.
    """
    k0 = aligned_offset(full, leave_outs)
    K = len(full) - k0
    masks = _batch_masks(plan, S.n)
    out = np.zeros((plan.num_batches, K))
    for k in range(K):
        G = net.per_sample_gradients(spec, full.weights[k0 + k], S.inputs, S.targets)
        gb, gr = _batch_means(G, masks)
        out[:, k] = _leave_out_terms(spec, leave_outs, masks, S, k) - np.sum(gb * gr, axis=1)
    return out


def mask_floor(loss_scale):
    return 1e-12 * (1.0 + abs(loss_scale))


def contraction_exact(numerators, delta_bar, loss_scale, baseline=0.0):
    """``c = mean_B numerator / (delta_bar - baseline)``, masked where the denominator is tiny.

    Returns ``(c_bar, masked)``; masked entries hold 0. ``baseline`` is the
    loss difference at a checkpoint start (zero for a shared initialization).
    """
    num = np.mean(np.atleast_2d(numerators), axis=0)
    denom = np.asarray(delta_bar, dtype=np.float64) - baseline
    masked = np.abs(denom) < mask_floor(loss_scale)
    c = np.zeros_like(denom)
    c[~masked] = num[~masked] / denom[~masked]
    if masked.all():
        log.warning("every contraction entry is masked; the run is degenerate")
    return c, masked


def contraction_approx(spec, w, S, displacement):
    """Rayleigh-quotient style estimate ``g^T Hess d / g^T d`` at the full weights.

    ``displacement`` is the plan mean of ``w_leave_out - w``. Returns NaN when
    the denominator vanishes.
    """
    d = np.asarray(displacement, dtype=np.float64)
    _, g = net.train_loss_and_grad(spec, w, S.inputs, S.targets)
    den = g @ d
    if not np.any(d) or abs(den) <= 1e-300 or abs(den) <= 1e-14 * np.linalg.norm(g) * np.linalg.norm(d):
        return float("nan")
    hv = net.hvp_train_loss(spec, w, S.inputs, S.targets, d)
    return float(g @ hv / den)


@dataclass
class FactorSeries:
    times: np.ndarray
    c_bar: np.ndarray
    masked: np.ndarray
    eps_bar: np.ndarray
    delta_bar: np.ndarray
    per_batch: np.ndarray
    c_bar_approx: np.ndarray = None
    eps_batch: np.ndarray = None
    numerator: np.ndarray = None   # plan mean of the contraction numerators
    offset: int = 0
    loss_scale: float = 1.0

    def negative_fraction(self):
        live = ~self.masked
        return float(np.mean(self.c_bar[live] < 0)) if live.any() else 0.0

    def from_index(self, k):
        """Series restricted to ``times[k:]`` for an analysis started at ``times[k]``.

        The contraction factor is recomputed against the loss-difference
        increment ``delta_bar - delta_bar[k]``.
        """
        if not 0 <= k < len(self.times):
            raise InputError(f"start index {k} outside the series")
        c, masked = contraction_exact(self.numerator[k:], self.delta_bar[k:],
                                      self.loss_scale, self.delta_bar[k])
        sl = slice(k, None)
        return FactorSeries(
            self.times[sl], c, masked, self.eps_bar[sl], self.delta_bar[sl],
            self.per_batch[:, sl],
            None if self.c_bar_approx is None else self.c_bar_approx[sl],
            None if self.eps_batch is None else self.eps_batch[sl],
            self.numerator[sl], self.offset + k, self.loss_scale)


def compute_factors(spec, full, leave_outs, plan, S, approx=True, baseline_from_start=True):
    """All factor series on the shared record grid."""
    from .traj import measure_loss_difference

    diff = measure_loss_difference(spec, full, leave_outs, plan, S)
    k0 = diff.offset
    K = len(diff.times)
    masks = _batch_masks(plan, S.n)
    nums = np.zeros((plan.num_batches, K))
    eps = np.empty(K)
    eps_b = np.empty(K)
    c_apx = np.full(K, np.nan) if approx else None
    for k in range(K):
        w = full.weights[k0 + k]
        G = net.per_sample_gradients(spec, w, S.inputs, S.targets)
        gb, gr = _batch_means(G, masks)
        nums[:, k] = _leave_out_terms(spec, leave_outs, masks, S, k) - np.sum(gb * gr, axis=1)
        eps[k] = _trace_cov(G) / (S.n - 1)
        eps_b[k] = float(np.mean(np.sum(gb * (G.mean(axis=0) - gr), axis=1)))
        if approx:
            disp = np.mean([lo.weights[k] for lo in leave_outs], axis=0) - w
            c_apx[k] = contraction_approx(spec, w, S, disp)
    loss_scale = float(full.train_loss[0])
    baseline = diff.delta_bar[0] if baseline_from_start else 0.0
    c_bar, masked = contraction_exact(nums, diff.delta_bar, loss_scale, baseline)
    return FactorSeries(diff.times, c_bar, masked, eps, diff.delta_bar, diff.per_batch,
                        c_apx, eps_b, nums.mean(axis=0), k0, loss_scale)
