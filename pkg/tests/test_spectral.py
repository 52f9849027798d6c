import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from effgram import spectral
from effgram.errors import InputError


def psd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 12))
def test_report_invariants(seed, d):
    rng = np.random.default_rng(seed)
    K, r = psd(rng, d), rng.normal(size=d)
    rep = spectral.spectral_report(K, r)
    assert abs(np.sum(rep.projection ** 2) - 1) <= 1e-10
    assert np.all(np.diff(rep.explained_residual) >= -1e-15)
    assert np.all(np.diff(rep.explained_kernel) >= -1e-15)
    assert np.isclose(rep.explained_residual[-1], 1) and np.isclose(rep.explained_kernel[-1], 1)
    quad = np.sum(rep.sigma * (rep.eigenvectors.T @ r) ** 2)
    assert abs(quad - r @ K @ r) <= 1e-8 * max(1.0, abs(r @ K @ r))
    assert np.isclose(rep.sigma_mean, np.trace(K) / d)


def test_explained_curves_on_diagonal_kernel():
    K = np.diag([4.0, 1.0, 0.0, 3.0])
    rep = spectral.spectral_report(K, np.array([0.0, 0.0, 3.0, 4.0]))
    assert np.allclose(rep.sigma, [0, 1, 3, 4])
    assert np.allclose(rep.explained_residual, [9 / 25, 9 / 25, 1, 1])
    assert np.allclose(rep.explained_kernel, [0, 1 / 8, 4 / 8, 1])
    assert np.allclose(rep.relative_index, [0.25, 0.5, 0.75, 1.0])
    assert rep.quadratic_form == pytest.approx(48.0)
    # kernel mass below 3% lives in the zero eigenvalue, which holds 9/25 of the residual
    assert spectral.tail_recovery(rep, 0.03) == pytest.approx(9 / 25)


def test_relative_index_and_errors():
    assert np.allclose(spectral.relative_index(3, 6), [1 / 6, 2 / 6, 0.5])
    with pytest.raises(InputError):
        spectral.relative_index(0)
    with pytest.raises(InputError):
        spectral.projection(np.zeros(3), np.eye(3))
    with pytest.raises(InputError):
        spectral.explained_kernel(sigma=np.array([-1.0, 1.0]))
    with pytest.raises(InputError):
        spectral.explained_kernel(sigma=np.zeros(3))


def test_spectrum_csv(tmp_path):
    rep = spectral.spectral_report(np.diag([1.0, 2.0]), np.array([1.0, 1.0]))
    spectral.write_spectrum_csv(tmp_path / "s.csv", rep)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0].startswith("relative_index") and len(rows) == 3
