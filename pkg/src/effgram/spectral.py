"""Alignment statistics between a residual and the eigenbasis of a Gram matrix.

Eigenvalues are sorted ascending, so "head" indices are the small-eigenvalue
tail of the spectrum.
"""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .numkit import sym_eig

NEG_TOL = 1e-8


@dataclass
class SpectralReport:
    sigma: np.ndarray               # ascending
    sigma_mean: float
    projection: np.ndarray          # |r^T U_k| / ||r||
    explained_residual: np.ndarray  # ||r^T U_{1:k}||^2 / ||r||^2
    explained_kernel: np.ndarray    # sum_{i<=k} sigma_i / sum sigma
    relative_index: np.ndarray
    eigenvectors: np.ndarray = None
    quadratic_form: float = float("nan")


def _kernel_matrix(K):
    return np.asarray(getattr(K, "K", K), dtype=np.float64)


def spectrum_stats(K):
    eig = sym_eig(_kernel_matrix(K), tol=1e-8)
    return eig.eigenvalues, float(np.mean(eig.eigenvalues))


def projection(r, E):
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    nr = np.linalg.norm(r)
    if nr == 0.0:
        raise InputError("cannot project a zero residual")
    return np.abs(E.T @ r) / nr


def explained_residual(r, E):
    p = projection(r, E)
    out = np.cumsum(p * p)
    return out / out[-1] if out[-1] > 0 else out


def explained_kernel(K=None, sigma=None):
    if sigma is None:
        sigma, _ = spectrum_stats(K)
    sigma = np.asarray(sigma, dtype=np.float64)
    scale = max(np.max(np.abs(sigma)), 0.0) if sigma.size else 0.0
    if np.any(sigma < -NEG_TOL * max(scale, 1e-300)):
        raise InputError("kernel has eigenvalues below the PSD tolerance")
    s = np.clip(sigma, 0.0, None)
    total = s.sum()
    if total <= 0:
        raise InputError("kernel has zero trace")
    return np.cumsum(s) / total


def relative_index(l, n=None):
    n = l if n is None else n
    if l < 1 or n < 1:
        raise InputError("index lengths must be positive")
    return np.arange(1, l + 1) / n


def spectral_report(K, r):
    eig = sym_eig(_kernel_matrix(K), tol=1e-8)
    sigma, E = eig.eigenvalues, eig.eigenvectors
    p = projection(r, E)
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    return SpectralReport(
        sigma=sigma,
        sigma_mean=float(np.mean(sigma)),
        projection=p,
        explained_residual=explained_residual(r, E),
        explained_kernel=explained_kernel(sigma=sigma),
        relative_index=relative_index(sigma.size),
        eigenvectors=E,
        quadratic_form=float(r @ _kernel_matrix(K) @ r),
    )


def tail_recovery(report, kernel_mass=0.03):
    """Fraction of ||r||^2 inside the small-eigenvalue subspace holding < ``kernel_mass`` of the trace."""
    k = int(np.searchsorted(report.explained_kernel, kernel_mass, side="left"))
    if k == 0:
        return 0.0
    return float(report.explained_residual[k - 1])


def write_spectrum_csv(path, report):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["relative_index", "sigma", "proj", "explained_residual", "explained_kernel"])
        for row in zip(report.relative_index, report.sigma, report.projection,
                       report.explained_residual, report.explained_kernel):
            w.writerow([repr(float(v)) for v in row])
