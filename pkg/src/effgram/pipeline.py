"""End-to-end runs: train, measure factors, integrate the Gram matrix, summarize."""
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data, factors, gram, net, oracle, spectral, traj
from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisConfig:
    m: int = 10
    num_batches: int = 10
    plan_seed: int = 0
    method: str = "product"
    from_record: int = 0
    interp_threshold: float = 0.05
    approx: bool = True
    spectra_every: int = 1

    def to_dict(self):
        return asdict(self)


@dataclass
class Analysis:
    factors: factors.FactorSeries
    kernel: gram.KernelRun
    r0: np.ndarray
    delta_c_eps: np.ndarray       # reconstruction with the measured perturbation factor
    delta_c_eps_hat: np.ndarray   # reconstruction with the propagated perturbation estimate
    prediction: float             # r0^T K r0
    spectrum: spectral.SpectralReport
    diagnostics: dict
    gap: traj.GapSeries = None
    residual_error: np.ndarray = None
    summary: dict = field(default_factory=dict)


def run_training(spec, S, cfg, plan, jobs=1, from_record=None):
    full = traj.train_full(spec, S, cfg)
    leave_outs = traj.train_leave_out(spec, S, plan, cfg, from_record=from_record,
                                      full=full, jobs=jobs)
    return full, leave_outs


def residual_errors(propagated, recorded):
    """Relative l2 error of the propagated residual at every record point."""
    num = np.linalg.norm(propagated - recorded, axis=1)
    den = np.maximum(np.linalg.norm(recorded, axis=1), 1e-300)
    return num / den


def propagation_errors(spec, full, S, method="product", start=0):
    """Propagate the recorded residual from ``start`` and compare it with the record.

    Needs only the full run, so it can use a dense record grid without the
    leave-out trajectories.
    """
    Ps = (blk.P for blk in factors.iter_blocks(spec, full, S, start=start))
    r0 = full.residual[start]
    oms = gram.iter_propagator(Ps, full.times[start:], S.n, method)
    prop = np.array([om @ r0 for om in oms])
    return residual_errors(prop, full.residual[start:])


def analyze(spec, S, full, leave_outs, plan, acfg=AnalysisConfig(), S_test=None,
            factor_series=None):
    """Factors, propagator, Gram matrix, reconstructions and the summary row."""
    fs = factor_series or factors.compute_factors(spec, full, leave_outs, plan, S,
                                                  approx=acfg.approx)
    start = acfg.from_record
    if start:
        if fs.offset > start:
            raise InputError("leave-out runs start after the requested analysis start")
        fs = fs.from_index(start - fs.offset)
    k0 = fs.offset
    times = fs.times
    r0 = full.residual[k0]
    blocks = factors.iter_blocks(spec, full, S, start=k0)
    run = gram.run_kernel(blocks, fs.c_bar, fs.masked, times, S.n, r0, acfg.method,
                          spectra=True, spectra_every=acfg.spectra_every)
    d_eps = gram.reconstruct_delta(fs.c_bar, fs.masked, fs.eps_bar, times)
    d_hat = gram.reconstruct_delta(fs.c_bar, fs.masked, run.eps_hat, times)
    pred = gram.quadratic_form(run.gram, r0)
    rep = spectral.spectral_report(run.gram, r0)
    diag = gram.convergence_diagnostics(run.lambda_min, run.cov_norm, fs.c_bar, fs.masked,
                                        times, S.n)
    err = residual_errors(run.propagated, full.residual[k0:])
    gap = traj.measure_generalization_gap(spec, full, S, S_test) if S_test is not None else None
    an = Analysis(fs, run, r0, d_eps, d_hat, pred, rep, diag, gap, err)
    an.summary = summarize(an, full, acfg)
    return an


def summarize(an, full, acfg):
    fs = an.factors
    train_final = float(full.train_loss[-1])
    row = {
        "delta_c_eps_hat": float(an.delta_c_eps_hat[-1]),
        "delta_c_eps": float(an.delta_c_eps[-1]),
        "delta_measured": float(fs.delta_bar[-1] - fs.delta_bar[0]),
        "gap": float(an.gap.gap[-1]) if an.gap is not None else float("nan"),
        "train_loss": train_final,
        "sigma_mean": float(an.spectrum.sigma_mean),
        "r0_norm2": float(an.r0 @ an.r0),
        "prediction": float(an.prediction),
        "horizon": float(fs.times[-1]),
        "start": float(fs.times[0]),
        "interpolating": bool(train_final <= acfg.interp_threshold),
        "max_residual_error": float(np.max(an.residual_error)),
        "c_bar_negative_fraction": fs.negative_fraction(),
        "tail_recovery_3pct": spectral.tail_recovery(an.spectrum, 0.03),
        "method": acfg.method,
    }
    if not row["interpolating"]:
        log.warning("train loss %.4g is above the interpolation threshold %.4g",
                    train_final, acfg.interp_threshold)
    return row


TABLE_COLUMNS = ("delta_c_eps_hat", "delta_c_eps", "delta_measured", "gap", "train_loss",
                 "sigma_mean", "r0_norm2")


# --- the two-point linear regression task ---------------------------------

def two_point_spec(d=2):
    return net.MLPSpec(widths=(d, 1), activation="identity", loss="squared",
                       init="zeros", seed=0, bias=False)


def two_point_plan(n):
    """One representative omitted sample per side.

    Every leave-one-out run on the same side is identical, so averaging the
    two representatives equals averaging over all n omissions.
    """
    return data.LeaveOutPlan(1, (np.array([0]), np.array([n // 2])))


@dataclass
class TwoPointRun:
    params: oracle.TwoPointParams
    spec: net.MLPSpec
    dataset: data.Dataset
    full: traj.TrajectoryRecord
    leave_outs: list
    factors: factors.FactorSeries


def simulate_two_point(n, y1=1.0, y2=1.0, lr=1e-3, steps=10_000, stride=1, d=2, eps0=1e-3):
    p = oracle.TwoPointParams(n, y1, y2, eps0)
    S = data.gen_two_point(n, y1, y2, d)
    spec = two_point_spec(d)
    cfg = traj.TrainConfig(lr=lr, steps=steps, stride=stride, init="standard")
    plan = two_point_plan(n)
    full, leave_outs = run_training(spec, S, cfg, plan)
    fs = factors.compute_factors(spec, full, leave_outs, plan, S, approx=False)
    return TwoPointRun(p, spec, S, full, leave_outs, fs)


def two_point_gram(run, perturbed=True, method="product"):
    """Gram matrix for a simulated two-point run, optionally with the lifted operator."""
    p, S, spec, full, fs = run.params, run.dataset, run.spec, run.full, run.factors
    times = fs.times
    eps = oracle.perturbation_schedule(times, p.eps0)

    def blocks():
        for k, blk in enumerate(factors.iter_blocks(spec, full, S, start=fs.offset)):
            if perturbed:
                blk = factors.KernelBlocks(oracle.perturb_null_space(blk.P, S.n, eps[k]),
                                           blk.M, blk.H, blk.time, blk.C)
            yield blk

    r0 = full.residual[fs.offset]
    return gram.run_kernel(blocks(), fs.c_bar, fs.masked, times, S.n, r0, method,
                           spectra=False)


def span_eigenvalues(K, n):
    """Eigenvalues of K compressed to the residual span and to its complement."""
    U = oracle.residual_span(n)
    Km = getattr(K, "K", K)
    inside = np.linalg.eigvalsh(U.T @ Km @ U)
    Q, _ = np.linalg.qr(np.hstack([U, np.eye(n)]))
    comp = Q[:, 2:n]
    outside = np.linalg.eigvalsh(comp.T @ Km @ comp) if n > 2 else np.zeros(0)
    return inside, outside
