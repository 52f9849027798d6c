"""Datasets: synthetic generators, relabelling, file ingestion, leave-out plans."""
import csv
import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net
from .errors import FormatError, InputError
from .numkit import sym_eig

KINDS = ("two-point", "gaussian-alpha", "syn-projected", "random-label", "external")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    kind: str = "external"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise InputError("inputs and targets must be 2-D (samples first)")
        if x.shape[0] != y.shape[0]:
            raise InputError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        if x.shape[0] < 2:
            raise InputError("a dataset needs at least two samples")
        if self.kind not in KINDS:
            raise InputError(f"unknown dataset kind {self.kind!r}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dim(self):
        return self.targets.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.targets[idx], self.kind, self.seed, dict(self.meta))

    def without(self, idx):
        keep = np.setdiff1d(np.arange(self.n), np.asarray(idx, dtype=np.int64))
        return self.subset(keep)

    def split(self, n_first):
        if not 2 <= n_first <= self.n - 2:
            raise InputError(f"cannot split {self.n} samples at {n_first}")
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, self.n))

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"labels outside [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def gen_two_point(n, y1, y2, d=2):
    """Two orthonormal inputs e1, e2; first half of samples at (e1, y1), rest at (e2, y2)."""
    if n < 2 or n % 2:
        raise InputError(f"two-point dataset needs an even n >= 2, got {n}")
    if d < 2:
        raise InputError("two-point dataset needs d >= 2")
    x = np.zeros((n, d))
    x[: n // 2, 0] = 1.0
    x[n // 2:, 1] = 1.0
    y = np.where(np.arange(n) < n // 2, float(y1), float(y2))[:, None]
    return Dataset(x, y, "two-point", 0, {"y1": float(y1), "y2": float(y2)})


def _whiten(p):
    mu = p.mean(axis=0)
    sd = p.std(axis=0)
    sd[sd == 0] = 1.0
    return (p - mu) / sd


def _teacher_labels(teacher, proj):
    if teacher.input_dim != proj.shape[1]:
        raise InputError(
            f"teacher input width {teacher.input_dim} != projection dim {proj.shape[1]}")
    w = net.init_weights(teacher)
    logits, _ = net.forward(teacher, w, proj)
    return one_hot(np.argmax(logits, axis=1), teacher.output_dim)


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def gen_gaussian_alpha(n, d, alpha, teacher, seed=0, proj_dim=10):
    """Gaussian inputs whose covariance has eigenvalues exp(-alpha * i), i = 1..d.

    Labels come from a random-weight ``teacher`` applied to the whitened
    projection onto the top ``proj_dim`` covariance eigenvectors.
    """
    if d < proj_dim:
        raise InputError(f"gaussian-alpha needs d >= {proj_dim}, got {d}")
    if alpha <= 0:
        raise InputError("alpha must be positive")
    rng = np.random.default_rng(seed)
    q = random_orthogonal(d, rng)
    eig = np.exp(-alpha * np.arange(1, d + 1))
    x = (rng.normal(size=(n, d)) * np.sqrt(eig)) @ q.T
    proj = _whiten(x @ q[:, :proj_dim])
    y = _teacher_labels(teacher, proj)
    meta = {"alpha": float(alpha), "d": int(d), "basis": q, "projection": proj}
    return Dataset(x, y, "gaussian-alpha", seed, meta)


def synthesize_projected(corpus, a, b, teacher, n_moment, seed=0):
    """Relabel ``corpus`` with a teacher acting on eigen-directions a..b.

    The second-moment matrix is estimated from ``n_moment`` randomly chosen
    held-out samples; the returned dataset holds the remaining samples with
    their original inputs.
    """
    d = corpus.input_dim
    if not 1 <= a <= b <= d:
        raise InputError(f"need 1 <= a <= b <= {d}, got a={a}, b={b}")
    if corpus.n < n_moment + 2:
        raise InputError(f"corpus has {corpus.n} samples, need more than n_moment={n_moment}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(corpus.n)
    xm = corpus.inputs[perm[:n_moment]]
    rest = perm[n_moment:]
    moment = xm.T @ xm / n_moment
    eig = sym_eig(moment)
    q = eig.eigenvectors[:, ::-1]  # largest first
    basis = q[:, a - 1:b]
    x = corpus.inputs[rest]
    proj = _whiten(x @ basis)
    y = _teacher_labels(teacher, proj)
    meta = {"a": int(a), "b": int(b), "basis": basis, "projection": proj}
    return Dataset(x, y, "syn-projected", seed, meta)


def randomize_labels(base, num_classes, seed=0):
    """Replace targets by i.i.d. uniform one-hot labels; inputs are untouched."""
    if num_classes < 2:
        raise InputError("need at least two classes")
    rng = np.random.default_rng(seed)
    y = one_hot(rng.integers(0, num_classes, size=base.n), num_classes)
    return Dataset(base.inputs, y, "random-label", seed, {"base_kind": base.kind})


def load_csv(path, feature_cols=None, label_col="label", one_hot_labels=True, num_classes=None):
    """Read a CSV with a header row.

    With ``one_hot_labels`` the label column holds integer classes; otherwise
    it holds a real target. ``feature_cols=None`` means every other column.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_col not in header:
            raise FormatError(f"{path}: no label column {label_col!r}")
        lab_idx = header.index(label_col)
        if feature_cols is None:
            feat_idx = [i for i in range(len(header)) if i != lab_idx]
        else:
            missing = [c for c in feature_cols if c not in header]
            if missing:
                raise FormatError(f"{path}: missing feature columns {missing}")
            feat_idx = [header.index(c) for c in feature_cols]
        xs, ys = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                xs.append([float(row[i]) for i in feat_idx])
                ys.append(float(row[lab_idx]))
            except ValueError as exc:
                raise FormatError(f"{path}: row {row_no}: {exc}") from None
    if not xs:
        raise FormatError(f"{path}: no data rows")
    ys = np.array(ys)
    if one_hot_labels:
        if np.any(ys != np.round(ys)):
            raise FormatError(f"{path}: non-integer class labels")
        k = int(num_classes or ys.max() + 1)
        y = one_hot(ys.astype(np.int64), k)
    else:
        y = ys[:, None]
    return Dataset(np.array(xs), y, "external", 0, {"source": str(path)})


IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims))
    payload = raw[head:]
    if len(payload) != count:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {count}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, num_classes=10, classes=None, limit=None):
    """MNIST-style IDX pair -> Dataset with pixels scaled to [0, 1].

    ``classes`` keeps only the listed digits and re-indexes them 0..k-1.
    """
    images = read_idx(images_path, IDX_IMAGES)
    labels = read_idx(labels_path, IDX_LABELS).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if classes is not None:
        classes = list(classes)
        keep = np.isin(labels, classes)
        x, labels = x[keep], labels[keep]
        remap = {c: i for i, c in enumerate(classes)}
        labels = np.array([remap[int(v)] for v in labels], dtype=np.int64)
        num_classes = len(classes)
    if limit is not None:
        x, labels = x[:limit], labels[:limit]
    return Dataset(x, one_hot(labels, num_classes), "external", 0,
                   {"source": str(images_path)})


def write_idx(path, array):
    """Write a uint8 array in IDX format (used for fixtures and round trips)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


@dataclass(frozen=True)
class LeaveOutPlan:
    m: int
    batches: tuple  # tuple of int arrays

    @property
    def num_batches(self):
        return len(self.batches)

    def to_dict(self):
        return {"m": self.m, "batches": [b.tolist() for b in self.batches]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), tuple(np.asarray(b, dtype=np.int64) for b in d["batches"]))

    def validate(self, n):
        seen = set()
        for b in self.batches:
            if len(b) != self.m:
                raise InputError(f"batch of size {len(b)}, plan says m={self.m}")
            if np.any(b < 0) or np.any(b >= n):
                raise InputError("batch index out of range")
            s = set(int(i) for i in b)
            if seen & s:
                raise InputError("leave-out batches overlap")
            seen |= s
        if self.m >= n:
            raise InputError("leaving out every sample is ill-posed")


def leave_out_plan(n, m, num_batches, seed=0):
    """Disjoint, uniformly sampled index batches of size ``m``."""
    if m < 1 or num_batches < 1:
        raise InputError("m and num_batches must be positive")
    if m >= n:
        raise InputError(f"m={m} leaves no training data out of n={n}")
    if m * num_batches > n:
        raise InputError(f"{num_batches} disjoint batches of {m} do not fit in n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)[: m * num_batches]
    batches = tuple(np.sort(perm[k * m:(k + 1) * m]) for k in range(num_batches))
    return LeaveOutPlan(m, batches)
