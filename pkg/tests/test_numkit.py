import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from effgram import numkit
from effgram.errors import InputError, ShapeError


def random_sym(rng, n):
    a = rng.normal(size=(n, n))
    return 0.5 * (a + a.T)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_sym_eig_reconstructs(method):
    rng = np.random.default_rng(0)
    a = random_sym(rng, 12)
    eig = numkit.sym_eig(a, method=method)
    vals, vecs = eig
    assert np.all(np.diff(vals) >= 0)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-12)
    assert np.allclose(vecs.T @ vecs, np.eye(12), atol=1e-12)


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(1)
    a = random_sym(rng, 20)
    ref = scipy.linalg.eigh(a, eigvals_only=True)
    assert np.allclose(numkit.jacobi_eigh(a).eigenvalues, ref, atol=1e-12)


def test_sym_eig_diagonal_and_repeated():
    eig = numkit.sym_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(eig.eigenvalues, [1, 2, 3])
    vals = numkit.sym_eig(np.eye(4) * 2.5).eigenvalues
    assert np.allclose(vals, 2.5)


def test_sym_eig_rejects_asymmetric_and_nonsquare():
    with pytest.raises(ShapeError):
        numkit.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        numkit.sym_eig(np.ones((2, 3)))
    with pytest.raises(InputError):
        numkit.sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


@pytest.mark.parametrize("scale", [1e-3, 1.0, 30.0])
def test_mat_exp_against_scipy(scale):
    rng = np.random.default_rng(2)
    a = rng.normal(size=(8, 8)) * scale
    ref = scipy.linalg.expm(a)
    assert np.allclose(numkit.mat_exp(a), ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


def test_mat_exp_known_values():
    assert np.allclose(numkit.mat_exp(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(numkit.mat_exp(np.diag([0.0, 1.0, -2.0])), np.diag(np.exp([0, 1, -2])))
    rot = numkit.mat_exp(np.array([[0.0, -np.pi / 2], [np.pi / 2, 0.0]]))
    assert np.allclose(rot, [[0, -1], [1, 0]], atol=1e-14)
    # nilpotent: exp(N) = I + N
    n = np.array([[0.0, 5.0], [0.0, 0.0]])
    assert np.allclose(numkit.mat_exp(n), np.eye(2) + n)


def test_mat_exp_commuting_sum():
    rng = np.random.default_rng(3)
    a = random_sym(rng, 5)
    e1 = numkit.mat_exp(0.3 * a) @ numkit.mat_exp(0.7 * a)
    assert np.allclose(e1, numkit.mat_exp(a), rtol=1e-12)


def test_trapezoid_matches_scipy():
    t = np.sort(np.random.default_rng(4).uniform(0, 3, 50))
    f = np.sin(t)
    assert np.isclose(numkit.trapezoid_integrate(f, t), scipy.integrate.trapezoid(f, t))
    cum = numkit.cumulative_trapezoid(f, t)
    assert np.allclose(cum, scipy.integrate.cumulative_trapezoid(f, t, initial=0.0))
    assert np.isclose(numkit.trapezoid_weights(t) @ f, cum[-1])


def test_trapezoid_exact_on_linear_and_matrix_valued():
    t = np.linspace(0, 2, 7)
    assert np.isclose(numkit.trapezoid_integrate(3 * t + 1, t), 8.0)
    vals = np.stack([np.eye(2) * s for s in t])
    assert np.allclose(numkit.trapezoid_integrate(vals, t), 2.0 * np.eye(2))


def test_trapezoid_grid_errors():
    with pytest.raises(InputError):
        numkit.trapezoid_integrate([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(InputError):
        numkit.trapezoid_integrate([1.0, 2.0, 3.0], [0.0, 1.0])


def test_spectral_norm():
    assert numkit.spectral_norm(np.diag([1.0, -4.0, 2.0])) == pytest.approx(4.0)
