"""Run configuration: a versioned JSON document with dataset, model, training and analysis sections."""
import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import data, net
from .errors import InputError
from .pipeline import AnalysisConfig
from .traj import TrainConfig

SCHEMA_VERSION = 1

DATASET_KINDS = ("two-point", "gaussian-alpha", "syn-projected", "csv", "idx")


@dataclass
class DatasetConfig:
    kind: str = "gaussian-alpha"
    n: int = 100
    n_test: int = 0
    seed: int = 0
    random_labels: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise InputError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.n < 2 or self.n_test < 0:
            raise InputError("dataset needs n >= 2 and n_test >= 0")


@dataclass
class RunConfig:
    dataset: DatasetConfig
    model: net.MLPSpec
    training: TrainConfig
    analysis: AnalysisConfig
    out: str = None

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset": asdict(self.dataset),
            "model": self.model.to_dict(),
            "training": self.training.to_dict(),
            "analysis": self.analysis.to_dict(),
            "out": self.out,
        }

    def with_seed(self, seed):
        """Override every seed with ``seed``."""
        ds = replace(self.dataset, seed=seed)
        return replace(self, dataset=ds, model=replace(self.model, seed=seed),
                       training=replace(self.training, seed=seed),
                       analysis=replace(self.analysis, plan_seed=seed))


def _section(d, name, cls):
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise InputError(f"config section {name!r} must be an object")
    try:
        return cls(**sec)
    except TypeError as exc:
        raise InputError(f"config section {name!r}: {exc}") from exc


def from_dict(d):
    if not isinstance(d, dict):
        raise InputError("config must be a JSON object")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"config schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(d) - {"schema_version", "dataset", "model", "training", "analysis", "out"}
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    if "model" not in d or "training" not in d:
        raise InputError("config needs model and training sections")
    model = dict(d["model"])
    if "widths" not in model:
        raise InputError("model section needs widths")
    return RunConfig(
        dataset=_section(d, "dataset", DatasetConfig),
        model=_section({"model": model}, "model", net.MLPSpec),
        training=_section(d, "training", TrainConfig),
        analysis=_section(d, "analysis", AnalysisConfig),
        out=d.get("out"),
    )


def load(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file {path} not found")
    try:
        return from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _teacher(params, proj_dim):
    t = params.get("teacher", {})
    widths = t.get("widths", (proj_dim, 16, params.get("classes", 2)))
    return net.MLPSpec(widths=tuple(widths), activation=t.get("activation", "tanh"),
                       seed=int(t.get("seed", 0)))


def _load_external(kind, p):
    if kind == "csv":
        if "path" not in p:
            raise InputError("csv dataset needs params.path")
        return data.load_csv(p["path"], p.get("feature_cols"), p.get("label_col", "label"),
                             p.get("one_hot", True), p.get("num_classes"))
    if kind == "idx":
        for key in ("images", "labels"):
            if key not in p:
                raise InputError(f"idx dataset needs params.{key}")
        return data.load_idx(p["images"], p["labels"], p.get("num_classes", 10),
                             p.get("classes"), limit=p.get("limit"))
    raise InputError(f"cannot load a corpus of kind {kind!r}")


def build_dataset(dc):
    """``(train, test or None)`` for a dataset section."""
    p = dc.params
    total = dc.n + dc.n_test
    if dc.kind == "two-point":
        S = data.gen_two_point(dc.n, p.get("y1", 1.0), p.get("y2", 1.0), p.get("d", 2))
        return S, None
    if dc.kind == "gaussian-alpha":
        S = data.gen_gaussian_alpha(total, p.get("d", 20), p.get("alpha", 1.0),
                                    _teacher(p, 10), seed=dc.seed)
    elif dc.kind in ("csv", "idx"):
        S = _load_external(dc.kind, p)
    else:  # syn-projected on top of an idx or csv corpus
        base = _load_external(p.get("corpus_kind", "idx"), p.get("corpus", {}))
        a, b = p.get("a", 1), p.get("b", 10)
        S = data.synthesize_projected(base, a, b, _teacher(p, b - a + 1),
                                      p.get("n_moment", 1000), seed=dc.seed)
    if S.n < total:
        raise InputError(f"dataset has {S.n} samples, config asks for {total}")
    if dc.kind in ("csv", "idx", "syn-projected") and S.n > total:
        keep = np.random.default_rng(dc.seed).permutation(S.n)[:total]
        S = S.subset(np.sort(keep))
    train, test = (S, None) if dc.n_test == 0 else S.split(dc.n)
    if dc.random_labels:
        train = data.randomize_labels(train, train.output_dim, seed=dc.seed + 1)
        if test is not None:
            test = data.randomize_labels(test, test.output_dim, seed=dc.seed + 2)
    return train, test
