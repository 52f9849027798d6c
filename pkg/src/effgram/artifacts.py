"""On-disk layout of a run directory.

Every file is written whole to a temporary sibling and renamed into place, so
a crash never leaves a half-written artifact. ``manifest.json`` records a
SHA-256 digest per file; loaders check it and raise ``IntegrityError`` on any
mismatch or missing entry.

Layout::

    manifest.json        schema version, config, file digests
    dataset.npz          training set (and test set, if any)
    plan.json            leave-out batches
    traj/full.npz        full-batch trajectory
    traj/loo_XXX.npz     one per leave-out batch
    factors.csv          c, eps, delta series
    K.bin + K.json       effective Gram matrix (raw little-endian float64) + header
    r0.bin               initial residual, described in K.json
    analysis.json        scalar results of the analysis
    spectrum.csv         alignment of r0 with the eigenbasis of K
"""
import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .data import Dataset, LeaveOutPlan
from .errors import FormatError, IntegrityError
from .traj import TrajectoryRecord

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


def atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def atomic_write_json(path, obj):
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"missing file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _npz_bytes(**arrays):
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


# --- manifest ---------------------------------------------------------------

class RunDir:
    """A run directory and its manifest; files are registered as they are written."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = {"schema_version": SCHEMA_VERSION, "files": {}}

    @classmethod
    def open(cls, root, verify=True):
        root = Path(root)
        if not root.is_dir():
            raise IntegrityError(f"run directory {root} does not exist")
        mpath = root / MANIFEST
        if not mpath.exists():
            raise IntegrityError(f"{root} has no {MANIFEST}; not a run directory")
        man = read_json(mpath)
        if man.get("schema_version") != SCHEMA_VERSION:
            raise IntegrityError(
                f"{mpath}: schema version {man.get('schema_version')!r}, expected {SCHEMA_VERSION}")
        if not isinstance(man.get("files"), dict):
            raise IntegrityError(f"{mpath}: no file table")
        rd = cls(root)
        rd.manifest = man
        if verify:
            rd.verify()
        return rd

    def path(self, name):
        return self.root / name

    def has(self, name):
        return name in self.manifest["files"]

    def verify(self, names=None):
        for name in names or list(self.manifest["files"]):
            self.check(name)

    def check(self, name):
        files = self.manifest["files"]
        if name not in files:
            raise IntegrityError(f"{self.root}: manifest has no entry for {name}")
        p = self.path(name)
        if not p.exists():
            raise IntegrityError(f"{self.root}: {name} is listed in the manifest but missing")
        if sha256_file(p) != files[name]:
            raise IntegrityError(f"{self.root}: {name} does not match its manifest digest")
        return p

    def write_bytes(self, name, payload):
        atomic_write_bytes(self.path(name), payload)
        self.manifest["files"][name] = hashlib.sha256(payload).hexdigest()

    def write_text(self, name, text):
        self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name, obj):
        self.write_text(name, dumps_json(obj))

    def read_json(self, name):
        return read_json(self.check(name))

    def drop(self, prefix):
        """Forget manifest entries under ``prefix`` (before a stage is rewritten)."""
        for name in [n for n in self.manifest["files"] if n.startswith(prefix)]:
            del self.manifest["files"][name]

    def save(self):
        atomic_write_json(self.path(MANIFEST), self.manifest)


# --- datasets and plans -------------------------------------------------------

def write_dataset(rd, S, S_test=None):
    arrays = {"inputs": S.inputs, "targets": S.targets}
    if S_test is not None:
        arrays.update(test_inputs=S_test.inputs, test_targets=S_test.targets)
    rd.write_bytes("dataset.npz", _npz_bytes(**arrays))
    rd.manifest["dataset"] = {"kind": S.kind, "seed": S.seed, "n": S.n,
                              "digest": S.digest(),
                              "n_test": 0 if S_test is None else S_test.n}


def read_dataset(rd):
    info = rd.manifest.get("dataset")
    if info is None:
        raise IntegrityError(f"{rd.root}: manifest has no dataset section")
    with np.load(rd.check("dataset.npz")) as z:
        S = Dataset(z["inputs"], z["targets"], info["kind"], info["seed"])
        S_test = None
        if "test_inputs" in z.files:
            S_test = Dataset(z["test_inputs"], z["test_targets"], info["kind"], info["seed"])
    if S.digest() != info["digest"]:
        raise IntegrityError(f"{rd.root}: dataset content does not match the manifest")
    return S, S_test


def write_plan(rd, plan):
    rd.write_json("plan.json", plan.to_dict())


def read_plan(rd):
    return LeaveOutPlan.from_dict(rd.read_json("plan.json"))


# --- trajectories -------------------------------------------------------------

def _traj_name(batch):
    return "traj/full.npz" if batch < 0 else f"traj/loo_{batch:03d}.npz"


def write_trajectory(rd, rec):
    arrays = {"steps": rec.steps, "lr": np.array(rec.lr), "weights": rec.weights,
              "train_loss": rec.train_loss, "batch": np.array(rec.batch)}
    if rec.residual is not None:
        arrays["residual"] = rec.residual
    rd.write_bytes(_traj_name(rec.batch), _npz_bytes(**arrays))


def read_trajectory(rd, batch):
    with np.load(rd.check(_traj_name(batch))) as z:
        res = z["residual"] if "residual" in z.files else None
        rec = TrajectoryRecord(z["steps"], float(z["lr"]), z["weights"], z["train_loss"],
                               res, int(z["batch"]))
    if rec.batch != batch:
        raise IntegrityError(f"{rd.root}: trajectory file for batch {batch} holds batch {rec.batch}")
    return rec


def read_trajectories(rd, num_batches):
    full = read_trajectory(rd, -1)
    return full, [read_trajectory(rd, b) for b in range(num_batches)]


# --- analysis outputs -----------------------------------------------------------

FACTOR_COLUMNS = ("time", "c_bar", "masked", "eps_bar", "eps_batch", "eps_hat",
                  "delta_bar", "delta_c_eps", "delta_c_eps_hat", "residual_error")


def _fmt(v):
    return repr(float(v))


def factors_csv(an):
    fs = an.factors
    cols = [fs.times, fs.c_bar, fs.masked.astype(int), fs.eps_bar, fs.eps_batch,
            an.kernel.eps_hat, fs.delta_bar, an.delta_c_eps, an.delta_c_eps_hat,
            an.residual_error]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FACTOR_COLUMNS)
    for row in zip(*cols):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_matrix(rd, name, a, header):
    a = np.ascontiguousarray(a, dtype="<f8")
    payload = a.tobytes()
    rd.write_bytes(name, payload)
    header[name] = {"shape": list(a.shape), "dtype": "<f8", "order": "C",
                    "sha256": hashlib.sha256(payload).hexdigest()}


def write_kernel(rd, gram_obj, r0):
    header = {"schema_version": SCHEMA_VERSION, "horizon": gram_obj.horizon,
              "start": gram_obj.start, "method": gram_obj.method,
              "damping": gram_obj.damping}
    write_matrix(rd, "K.bin", gram_obj.K, header)
    write_matrix(rd, "r0.bin", r0, header)
    rd.write_json("K.json", header)


def read_matrix(path, info):
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"missing file {path}")
    payload = path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != info["sha256"]:
        raise IntegrityError(f"{path} does not match its header digest")
    shape = tuple(info["shape"])
    if len(payload) != 8 * int(np.prod(shape)):
        raise IntegrityError(f"{path}: {len(payload)} bytes for shape {shape}")
    return np.frombuffer(payload, dtype=info.get("dtype", "<f8")).reshape(shape).copy()


def read_kernel(header_path):
    """``(K, r0, header)`` from a ``K.json`` header and the binaries beside it."""
    header_path = Path(header_path)
    header = read_json(header_path)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise IntegrityError(f"{header_path}: unsupported schema version")
    base = header_path.parent
    for key in ("K.bin", "r0.bin"):
        if key not in header:
            raise IntegrityError(f"{header_path}: no entry for {key}")
    K = read_matrix(base / "K.bin", header["K.bin"])
    r0 = read_matrix(base / "r0.bin", header["r0.bin"])
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != r0.size:
        raise IntegrityError(f"{header_path}: kernel {K.shape} and residual {r0.shape} disagree")
    return K, r0, header


def spectrum_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["relative_index", "sigma", "proj", "explained_residual", "explained_kernel"])
    for row in zip(report.relative_index, report.sigma, report.projection,
                   report.explained_residual, report.explained_kernel):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_factors_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != FACTOR_COLUMNS:
        raise IntegrityError(f"{path}: unexpected header")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return {c: data[:, i] for i, c in enumerate(FACTOR_COLUMNS)}


def read_spectrum_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IntegrityError(f"{path} is empty")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return {c: data[:, i] for i, c in enumerate(rows[0])}


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return _fmt(float("nan") if v is None else v)


def table_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()
