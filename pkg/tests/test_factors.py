import numpy as np
import pytest

from effgram import data, factors, net, traj
from effgram.errors import InputError, ShapeError


def problem(n=10, c=2, loss="cross-entropy", seed=0):
    teacher = net.MLPSpec(widths=(10, 8, c), seed=1)
    S = data.gen_gaussian_alpha(n, 12, 1.0, teacher, seed=seed)
    if loss == "squared":
        S = data.Dataset(S.inputs, S.targets - 0.5)
    spec = net.MLPSpec(widths=(12, 5, c), loss=loss, seed=seed)
    w = net.init_weights(spec) + 0.2 * np.random.default_rng(seed).normal(size=spec.num_params)
    return spec, S, w


@pytest.mark.parametrize("loss,c", [("cross-entropy", 3), ("squared", 2)])
def test_trace_covariance_identity(loss, c):
    # tr Cov_i grad l_i = r^T (M - H/n) r with r stacked and scaled by 1/sqrt(n)
    spec, S, w = problem(c=c, loss=loss)
    blk = factors.assemble_blocks(spec, w, S)
    r = traj.stacked_residual(spec, w, S)
    G = net.per_sample_gradients(spec, w, S.inputs, S.targets)
    tr = np.trace(np.cov(G.T, bias=True))
    assert np.isclose(r @ blk.covariance_form @ r, tr, rtol=1e-10)
    assert np.isclose(factors.perturbation_factor(spec, w, S), tr / (S.n - 1), rtol=1e-10)


def test_block_structure():
    spec, S, w = problem(n=5, c=3)
    blk = factors.assemble_blocks(spec, w, S, time=1.5)
    J = net.output_jacobians(spec, w, S.inputs)
    L = net.loss_output_hessian(spec, w, S.inputs, S.targets)
    assert blk.n == 5 and blk.C == 3 and blk.time == 1.5
    assert np.allclose(blk.H[3:6, 9:12], J[1] @ J[3].T)
    assert np.allclose(blk.P[3:6, 9:12], L[1] @ J[1] @ J[3].T)
    assert np.all(blk.M[0:3, 3:6] == 0) and np.allclose(blk.M[0:3, 0:3], blk.H[0:3, 0:3])
    assert np.all(np.linalg.eigvalsh(blk.covariance_form) > -1e-10)
    with pytest.raises(ShapeError):
        factors.assemble_blocks(spec, w, S, max_dim=10)


def test_residual_ode_matches_blocks():
    # d/dt r = -P r / n under gradient flow: check with a tiny Euler step
    spec, S, w = problem(n=6, c=2)
    r = traj.stacked_residual(spec, w, S)
    _, g = net.train_loss_and_grad(spec, w, S.inputs, S.targets)
    h = 1e-6
    dr = (traj.stacked_residual(spec, w - h * g, S) - traj.stacked_residual(spec, w + h * g, S)) / (2 * h)
    P = factors.assemble_blocks(spec, w, S).P
    assert np.allclose(dr, -P @ r / S.n, rtol=1e-6, atol=1e-9)


def test_batch_perturbation_is_unbiased_over_singletons():
    spec, S, w = problem(n=8)
    plan = data.leave_out_plan(S.n, 1, S.n, seed=0)
    eps = factors.perturbation_factor(spec, w, S)
    assert np.isclose(factors.batch_perturbation(spec, w, S, plan), eps, rtol=1e-10)


def test_batch_perturbation_expectation_over_random_batches():
    spec, S, w = problem(n=8)
    eps = factors.perturbation_factor(spec, w, S)
    G = net.per_sample_gradients(spec, w, S.inputs, S.targets)
    from itertools import combinations
    vals = [factors.batch_perturbation(spec, w, S, data.LeaveOutPlan(3, (np.array(b),)), G)
            for b in combinations(range(8), 3)]
    assert np.isclose(np.mean(vals), eps, rtol=1e-10)


def test_classical_bound():
    t = np.array([0.0, 1.0, 1e6])
    b = factors.classical_bound(0.5, 0.2, t)
    assert b[0] == 0 and np.isclose(b[1], 0.4 * (1 - np.exp(-0.5))) and np.isclose(b[-1], 0.4)
    with pytest.raises(InputError):
        factors.classical_bound(0.0, 0.2, t)


def test_contraction_masking():
    c, masked = factors.contraction_exact(np.array([[1.0, 2.0, 3.0]]),
                                          np.array([0.0, 1e-13, 0.5]), loss_scale=0.5)
    assert list(masked) == [True, True, False]
    assert np.array_equal(c, [0.0, 0.0, 6.0])
    c, masked = factors.contraction_exact(np.array([2.0, 4.0]), np.array([1.0, 3.0]), 1.0,
                                          baseline=1.0)
    assert masked[0] and c[1] == 2.0


def test_contraction_approx_linear_regression():
    spec = net.MLPSpec(widths=(3, 1), activation="identity", loss="squared", bias=False)
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))
    S = data.Dataset(X, Y)
    w, d = rng.normal(size=3), rng.normal(size=3)
    _, g = net.train_loss_and_grad(spec, w, X, Y)
    expect = g @ (X.T @ X / 8) @ d / (g @ d)
    assert np.isclose(factors.contraction_approx(spec, w, S, d), expect)
    assert np.isnan(factors.contraction_approx(spec, w, S, np.zeros(3)))


def test_compute_factors_against_direct_formula():
    spec, S, _ = problem(n=12)
    cfg = traj.TrainConfig(lr=0.2, steps=6, stride=2)
    plan = data.leave_out_plan(S.n, 3, 4, seed=0)
    full = traj.train_full(spec, S, cfg)
    los = traj.train_leave_out(spec, S, plan, cfg, full=full)
    fs = factors.compute_factors(spec, full, los, plan, S)
    k = 2
    nums = []
    for b, idx in enumerate(plan.batches):
        Xb, Yb, Xr, Yr = traj.split_arrays(S, idx)

        def dot(w):
            gb = net.train_loss_and_grad(spec, w, Xb, Yb)[1]
            gr = net.train_loss_and_grad(spec, w, Xr, Yr)[1]
            return gb @ gr
        nums.append(dot(los[b].weights[k]) - dot(full.weights[k]))
    assert np.isclose(fs.c_bar[k], np.mean(nums) / fs.delta_bar[k], rtol=1e-9)
    assert fs.masked[0] and not fs.masked[1:].any()
    eps = factors.perturbation_factor(spec, full.weights[k], S)
    assert np.isclose(fs.eps_bar[k], eps)
    assert np.isclose(fs.eps_batch[k], factors.batch_perturbation(spec, full.weights[k], S, plan))
    assert np.allclose(factors.contraction_numerators(spec, full, los, plan, S).mean(axis=0),
                       fs.numerator)
    assert np.isfinite(fs.c_bar_approx[1:]).all()


def test_factor_series_from_index():
    spec, S, _ = problem(n=12)
    cfg = traj.TrainConfig(lr=0.2, steps=6, stride=2)
    plan = data.leave_out_plan(S.n, 3, 2, seed=0)
    full = traj.train_full(spec, S, cfg)
    los = traj.train_leave_out(spec, S, plan, cfg, full=full)
    fs = factors.compute_factors(spec, full, los, plan, S, approx=False)
    sub = fs.from_index(1)
    assert sub.offset == 1 and len(sub.times) == 3 and sub.masked[0]
    assert np.isclose(sub.c_bar[2], fs.numerator[3] / (fs.delta_bar[3] - fs.delta_bar[1]))
    with pytest.raises(InputError):
        fs.from_index(10)
