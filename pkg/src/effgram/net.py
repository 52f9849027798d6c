"""Fully-connected networks with hand-written forward and backward passes.

Weights live in one flat float64 vector. Layer ``l`` contributes its weight
matrix ``W_l`` (out x in, row-major) followed by its bias ``b_l`` (when the
spec has biases). Every routine accepts a single input vector or a batch of
shape ``(n, d)``.

The quantities exposed here are exactly the ones the analysis needs:
per-sample loss gradients, the output Jacobian, the residual ``dl/df``, the
loss-output Hessian ``d2l/df2`` and Hessian-vector products of the training
loss.
"""
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InputError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("cross-entropy", "squared")
INITS = ("fan-in-uniform", "zeros")


@dataclass(frozen=True)
class MLPSpec:
    widths: tuple
    activation: str = "tanh"
    loss: str = "cross-entropy"
    init: str = "fan-in-uniform"
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise InputError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise InputError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"activation must be one of {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise InputError(f"loss must be one of {LOSSES}")
        if self.init not in INITS:
            raise InputError(f"init must be one of {INITS}")

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    @property
    def layer_shapes(self):
        return list(zip(self.widths[1:], self.widths[:-1]))

    @property
    def num_params(self):
        return sum(o * i + (o if self.bias else 0) for o, i in self.layer_shapes)

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_weights(spec, seed=None, zero_output=False):
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    With ``zero_output`` the last layer is zeroed so the network output is
    identically zero at initialization.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    parts = []
    last = len(spec.layer_shapes) - 1
    for l, (fan_out, fan_in) in enumerate(spec.layer_shapes):
        bound = 1.0 / np.sqrt(fan_in)
        size = fan_out * fan_in + (fan_out if spec.bias else 0)
        if spec.init == "zeros" or (zero_output and l == last):
            parts.append(np.zeros(size))
        else:
            parts.append(rng.uniform(-bound, bound, size=size))
    return np.concatenate(parts)


def unpack(spec, w):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.num_params,):
        raise ShapeError(f"weight vector has shape {w.shape}, expected ({spec.num_params},)")
    layers = []
    pos = 0
    for fan_out, fan_in in spec.layer_shapes:
        W = w[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        if spec.bias:
            b = w[pos:pos + fan_out]
            pos += fan_out
        else:
            b = None
        layers.append((W, b))
    return layers


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        # subgradient 0 at exactly 0
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != spec.input_dim:
        raise ShapeError(f"input has shape {x.shape}, expected trailing dim {spec.input_dim}")
    return xb, single


def forward(spec, w, x):
    """Evaluate the network. Returns ``(outputs, cache)``.

    ``cache`` holds pre-activations and activations per layer, which is all
    the backward passes need.
    """
    xb, single = _as_batch(spec, x)
    layers = unpack(spec, w)
    acts = [xb]
    pres = []
    a = xb
    for l, (W, b) in enumerate(layers):
        z = a @ W.T
        if b is not None:
            z = z + b
        pres.append(z)
        a = z if l == len(layers) - 1 else _act(spec.activation, z)
        acts.append(a)
    out = acts[-1]
    cache = {"layers": layers, "acts": acts, "pres": pres}
    return (out[0] if single else out), cache


def _check_targets(spec, y, n):
    y = np.asarray(y, dtype=np.float64)
    yb = y[None, :] if y.ndim == 1 else y
    if yb.shape != (n, spec.output_dim):
        raise ShapeError(f"targets have shape {y.shape}, expected ({n}, {spec.output_dim})")
    if spec.loss == "cross-entropy":
        if np.any(yb < -1e-12) or np.any(np.abs(yb.sum(axis=1) - 1.0) > 1e-9):
            raise InputError("cross-entropy targets must be probability vectors (e.g. one-hot)")
    return yb


def _softmax(f):
    z = f - f.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_from_outputs(spec, f, y):
    if spec.loss == "squared":
        r = f - y
        return 0.5 * np.sum(r * r, axis=-1), r
    z = f - f.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    loss = -np.sum(y * logp, axis=-1)
    return loss, np.exp(logp) - y


def loss_and_residual(spec, w, x, y):
    """Per-sample loss and residual ``r = dl/df``.

    Cross-entropy: ``r = softmax(f) - y``. Squared loss ``0.5 ||f - y||^2``:
    ``r = f - y``.
    """
    xb, single = _as_batch(spec, x)
    yb = _check_targets(spec, y, xb.shape[0])
    f, _ = forward(spec, w, xb)
    loss, r = _loss_from_outputs(spec, f, yb)
    if single:
        return float(loss[0]), r[0]
    return loss, r


def loss_output_hessian(spec, w, x, y):
    """``d2l/df2`` per sample: ``diag(p) - p p^T`` for cross-entropy, ``I`` for squared."""
    xb, single = _as_batch(spec, x)
    yb = _check_targets(spec, y, xb.shape[0])
    n, c = yb.shape
    if spec.loss == "squared":
        h = np.broadcast_to(np.eye(c), (n, c, c)).copy()
    else:
        f, _ = forward(spec, w, xb)
        p = _softmax(f)
        h = np.einsum("ij,jk->ijk", p, np.eye(c)) - p[:, :, None] * p[:, None, :]
    return h[0] if single else h


def _backward(spec, cache, delta_out, per_sample=True):
    """Backpropagate output gradients.

    ``delta_out`` has shape ``(n, k, C)``: ``k`` output cotangents per sample.
    Returns ``(n, k, P)`` per-sample gradients, or the ``(k, P)`` sum over
    samples when ``per_sample`` is False.
    """
    layers, acts, pres = cache["layers"], cache["acts"], cache["pres"]
    n, k, _ = delta_out.shape
    blocks = [None] * len(layers)
    delta = delta_out
    for l in range(len(layers) - 1, -1, -1):
        W, b = layers[l]
        a_in = acts[l]
        if per_sample:
            gW = delta[:, :, :, None] * a_in[:, None, None, :]
            parts = [gW.reshape(n, k, -1)]
            if b is not None:
                parts.append(delta)
            blocks[l] = np.concatenate(parts, axis=-1)
        else:
            gW = np.einsum("nko,ni->koi", delta, a_in)
            parts = [gW.reshape(k, -1)]
            if b is not None:
                parts.append(delta.sum(axis=0))
            blocks[l] = np.concatenate(parts, axis=-1)
        if l > 0:
            delta = delta @ W
            delta = delta * _act_grad(spec.activation, pres[l - 1], acts[l])[:, None, :]
    return np.concatenate(blocks, axis=-1)


def per_sample_gradients(spec, w, X, Y):
    """``(n, P)`` matrix whose rows are ``grad_w l(w, z_i)``."""
    xb, _ = _as_batch(spec, X)
    yb = _check_targets(spec, Y, xb.shape[0])
    f, cache = forward(spec, w, xb)
    _, r = _loss_from_outputs(spec, f, yb)
    return _backward(spec, cache, r[:, None, :])[:, 0, :]


def per_sample_gradient(spec, w, x, y):
    return per_sample_gradients(spec, w, np.atleast_2d(x), np.atleast_2d(y))[0]


def output_jacobians(spec, w, X):
    """``(n, C, P)`` array; entry ``[i, j]`` is ``grad_w f^(j)(w, x_i)``."""
    xb, _ = _as_batch(spec, X)
    _, cache = forward(spec, w, xb)
    c = spec.output_dim
    eye = np.broadcast_to(np.eye(c), (xb.shape[0], c, c))
    return _backward(spec, cache, eye)


def output_jacobian(spec, w, x):
    """``(P, C)`` Jacobian of the outputs at a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("output_jacobian takes a single input vector")
    return output_jacobians(spec, w, x[None, :])[0].T


def train_loss_and_grad(spec, w, X, Y):
    """Mean loss over the batch and its gradient, without per-sample storage."""
    xb, _ = _as_batch(spec, X)
    yb = _check_targets(spec, Y, xb.shape[0])
    n = xb.shape[0]
    f, cache = forward(spec, w, xb)
    loss, r = _loss_from_outputs(spec, f, yb)
    g = _backward(spec, cache, r[:, None, :], per_sample=False)[0]
    return float(loss.mean()), g / n


def weighted_gradients(spec, w, X, Y, weights):
    """Per-sample losses and ``(k, P)`` gradients ``sum_i weights[j, i] grad l(w, z_i)``.

    One forward and one backward pass serve all ``k`` weightings, e.g. the
    mean gradient over a batch and over its complement.
    """
    xb, _ = _as_batch(spec, X)
    yb = _check_targets(spec, Y, xb.shape[0])
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if weights.shape[1] != xb.shape[0]:
        raise ShapeError(f"weights have shape {weights.shape} for {xb.shape[0]} samples")
    f, cache = forward(spec, w, xb)
    loss, r = _loss_from_outputs(spec, f, yb)
    delta = weights.T[:, :, None] * r[:, None, :]
    return loss, _backward(spec, cache, delta, per_sample=False)


def train_loss(spec, w, X, Y):
    xb, _ = _as_batch(spec, X)
    yb = _check_targets(spec, Y, xb.shape[0])
    f, _ = forward(spec, w, xb)
    loss, _ = _loss_from_outputs(spec, f, yb)
    return float(loss.mean())


def hvp_train_loss(spec, w, X, Y, v):
    """Hessian-vector product of the mean training loss.

    Central difference of the full-batch gradient along ``v`` with step
    ``h = 1e-4 (1 + ||w||) / (1 + ||v||)``.
    """
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != w.shape:
        raise ShapeError(f"direction has shape {v.shape}, expected {w.shape}")
    vnorm = np.linalg.norm(v)
    if vnorm == 0.0:
        return np.zeros_like(w)
    h = 1e-4 * (1.0 + np.linalg.norm(w)) / (1.0 + vnorm)
    _, gp = train_loss_and_grad(spec, w + h * v, X, Y)
    _, gm = train_loss_and_grad(spec, w - h * v, X, Y)
    return (gp - gm) / (2.0 * h)
