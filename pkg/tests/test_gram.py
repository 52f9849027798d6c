import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from effgram import factors, gram
from effgram.errors import InputError, ShapeError


def random_psd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * a @ a.T / d


def const_series(P, K):
    return [P] * K


@pytest.mark.parametrize("method", ["magnus1", "magnus2", "exponential"])
def test_constant_generator_is_exact(method):
    rng = np.random.default_rng(0)
    P = random_psd(rng, 4)
    t = np.linspace(0, 2, 9)
    om = list(gram.iter_propagator(const_series(P, 9), t, n=3, method=method))
    for k in (0, 4, 8):
        assert np.allclose(om[k], scipy.linalg.expm(-t[k] * P / 3), atol=1e-12)


def test_product_converges_first_order():
    rng = np.random.default_rng(1)
    P = random_psd(rng, 4)
    ref = scipy.linalg.expm(-P)
    errs = []
    for K in (101, 201, 401):
        t = np.linspace(0, 1, K)
        errs.append(np.linalg.norm(gram.propagator_product(const_series(P, K), t, 1).omegas[-1] - ref))
    assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2


def test_magnus_commuting_time_dependent():
    # P(t) = (1 + t) P0 commutes with itself: Omega = exp(-(t + t^2/2) P0 / n)
    rng = np.random.default_rng(2)
    P0 = random_psd(rng, 3)
    t = np.linspace(0, 1, 41)
    Ps = [(1 + s) * P0 for s in t]
    ref = scipy.linalg.expm(-(1 + 0.5) * P0 / 2)
    for method in ("magnus1", "magnus2", "exponential"):
        om = list(gram.iter_propagator(Ps, t, 2, method))[-1]
        assert np.allclose(om, ref, atol=1e-12), method


def test_magnus2_beats_magnus1_on_noncommuting():
    rng = np.random.default_rng(3)
    A, B = random_psd(rng, 3), random_psd(rng, 3)
    t = np.linspace(0, 1, 401)
    Ps = [A + np.sin(3 * s) * B for s in t]
    sol = scipy.integrate.solve_ivp(
        lambda s, y: (-(A + np.sin(3 * s) * B) @ y.reshape(3, 3)).ravel(),
        (0, 1), np.eye(3).ravel(), rtol=1e-12, atol=1e-12).y[:, -1].reshape(3, 3)
    e1 = np.linalg.norm(list(gram.iter_propagator(Ps, t, 1, "magnus1"))[-1] - sol)
    e2 = np.linalg.norm(list(gram.iter_propagator(Ps, t, 1, "magnus2"))[-1] - sol)
    ex = np.linalg.norm(list(gram.iter_propagator(Ps, t, 1, "exponential"))[-1] - sol)
    assert e2 < e1 and ex < 1e-5


def test_propagator_input_checks():
    P = np.eye(2)
    with pytest.raises(InputError):
        list(gram.iter_propagator([P, P], [0.0, 1.0, 2.0], 1))
    with pytest.raises(InputError):
        list(gram.iter_propagator([P, P], [0.0, 0.0], 1))
    with pytest.raises(InputError):
        gram.make_stepper("rk4", 2, 1)


def test_damping_and_weights():
    t = np.linspace(0, 2, 5)
    c = np.full(5, 0.5)
    masked = np.array([True, False, False, False, False])
    C = gram.damping_integral(c, masked, t)
    assert np.isclose(C[-1], 0.5 * 2 - 0.5 * 0.5 * 0.5)
    w = gram.kernel_weights(np.zeros(5), np.zeros(5, bool), t)
    assert np.isclose(w.sum(), 2.0)
    assert np.all(gram.kernel_weights(c, masked, t, horizon=0) == 0)


def blocks_const(M, H, K):
    return [(M, H)] * K


def test_gram_zero_at_start_and_psd():
    rng = np.random.default_rng(4)
    d, n = 6, 3
    M, H = random_psd(rng, d), random_psd(rng, d)
    P = random_psd(rng, d)
    t = np.array([0.0])
    K0 = gram.effective_gram(blocks_const(M, H, 1), [0.0], [True], [np.eye(d)], t, n)
    assert np.all(K0.K == 0)
    t = np.linspace(0, 3, 31)
    blks = [factors.KernelBlocks(P, M, H, s, 1) for s in t]
    r0 = rng.normal(size=d)
    run = gram.run_kernel(blks, np.full(31, 0.3), np.zeros(31, bool), t, n, r0)
    assert np.allclose(run.gram.K, run.gram.K.T)
    A = M - H / n
    if np.linalg.eigvalsh(A).min() >= 0:
        assert np.linalg.eigvalsh(run.gram.K).min() > -1e-12


def test_gram_closed_form_constant_operators():
    # P = p I, constant A, constant c: K = A/(n-1) int_0^T exp(-2 p s/n) exp(-c (T - s)) ds
    d, n, p, c, T = 3, 4, 2.0, 0.5, 2.0
    A = np.diag([1.0, 2.0, 3.0])
    Kt = 2001
    t = np.linspace(0, T, Kt)
    blks = [factors.KernelBlocks(p * np.eye(d), A, np.zeros((d, d)), s, 1) for s in t]
    run = gram.run_kernel(blks, np.full(Kt, c), np.zeros(Kt, bool), t, n, np.ones(d),
                          method="exponential")
    a = 2 * p / n
    integral = np.exp(-c * T) * (np.exp((c - a) * T) - 1) / (c - a)
    assert np.allclose(run.gram.K, A * integral / (n - 1), rtol=1e-6)
    # the propagated perturbation estimate is r^T Omega^T A Omega r / (n-1)
    assert np.isclose(run.eps_hat[-1], np.exp(-a * T) * 6.0 / (n - 1))


def test_quadratic_form():
    K = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert gram.quadratic_form(K, [1.0, -1.0]) == 3.0
    assert gram.quadratic_form(gram.EffectiveGram(K, 1.0, 0.0), [0.0, 1.0]) == 3.0
    with pytest.raises(ShapeError):
        gram.quadratic_form(K, [1.0, 2.0, 3.0])


def test_reconstruct_delta_constant_factors():
    t = np.linspace(0, 5, 5001)
    D = gram.reconstruct_delta(np.full(t.size, 0.4), np.zeros(t.size, bool), np.full(t.size, 0.1), t)
    assert np.allclose(D, 0.25 * (1 - np.exp(-0.4 * t)), atol=1e-7)
    D0 = gram.reconstruct_delta(np.zeros(t.size), np.zeros(t.size, bool), np.full(t.size, 0.1), t)
    assert np.allclose(D0, 0.1 * t)


def test_reconstruction_matches_quadratic_form():
    # delta(c, eps_hat) and r0^T K r0 are two quadratures of the same integral
    rng = np.random.default_rng(5)
    d, n, Kt = 4, 3, 201
    t = np.linspace(0, 2, Kt)
    P0, A0 = random_psd(rng, d), random_psd(rng, d)
    blks = [factors.KernelBlocks(P0 * (1 + s), A0 + np.eye(d) * s, np.zeros((d, d)), s, 1)
            for s in t]
    c = 0.3 + 0.1 * np.sin(t)
    r0 = rng.normal(size=d)
    run = gram.run_kernel(blks, c, np.zeros(Kt, bool), t, n, r0, method="exponential")
    D = gram.reconstruct_delta(c, np.zeros(Kt, bool), run.eps_hat, t)
    assert np.isclose(D[-1], gram.quadratic_form(run.gram, r0), rtol=1e-10)


def test_from_t0_restart():
    rng = np.random.default_rng(6)
    d, n, Kt = 3, 3, 101
    t = np.linspace(1, 2, Kt)
    P0, A0 = random_psd(rng, d), random_psd(rng, d)
    blks = [factors.KernelBlocks(P0, A0, np.zeros((d, d)), s, 1) for s in t]
    r = rng.normal(size=d)
    K, inc = gram.effective_gram_from_t0(blks, np.zeros(Kt), np.zeros(Kt, bool), t, n, r,
                                         method="magnus1")
    assert K.start == 1.0 and K.horizon == 2.0
    # with c = 0 the increment is additive over consecutive intervals
    Om = lambda s: scipy.linalg.expm(-s * P0 / n)
    f = lambda s: r @ Om(s).T @ A0 @ Om(s) @ r / (n - 1)
    ref = scipy.integrate.quad(f, 0, 1)[0]
    assert np.isclose(inc, ref, rtol=1e-4)


def test_run_kernel_checks():
    d = 2
    blk = factors.KernelBlocks(np.eye(d), np.eye(d), np.eye(d), 0.0, 1)
    with pytest.raises(ShapeError):
        gram.run_kernel([blk, blk], [0, 0], [True, False], [0.0, 1.0], 2, np.ones(3))
    with pytest.raises(InputError):
        gram.run_kernel([blk], [0, 0], [True, False], [0.0, 1.0], 2, np.ones(2))


def test_convergence_diagnostics():
    t = np.linspace(0, 50, 2001)
    lam = np.full(2001, 1.0)
    m = np.full(2001, 0.2)
    lam[::2] = np.nan
    d = gram.convergence_diagnostics(lam, m, np.full(2001, 0.1), np.zeros(2001, bool), t, 4)
    assert d["omega_decays"] and d["c_bar_nonnegative"] and d["conditions_observed"]
    assert np.isclose(d["integral_omega_m"], 0.2 * 2 * (1 - np.exp(-0.5 * 50)), rtol=1e-2)
    bad = gram.convergence_diagnostics(np.full(2001, -50.0), m, np.full(2001, -0.1),
                                       np.zeros(2001, bool), t, 4)
    assert not bad["conditions_observed"] and np.isfinite(bad["omega_final"])
    with pytest.raises(InputError):
        gram.convergence_diagnostics(np.full(3, np.nan), np.ones(3), np.zeros(3),
                                     np.zeros(3, bool), [0.0, 1.0, 2.0], 4)
