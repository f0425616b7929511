"""Dataset containers, file formats, the 50/30/10/10 split and normalisation.

Two on-disk formats are supported:

* univariate TSV: one sample per line, integer label then tab-separated values;
* multivariate JSON lines: ``{"label": int | null, "channels": [[...], ...]}``.

A dataset directory holds ``data.tsv`` or ``data.jsonl`` plus ``meta.json``.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_series_array

logger = logging.getLogger(__name__)

SPLIT_RATIOS = {"pretrain": 0.5, "train": 0.3, "validation": 0.1, "test": 0.1}
FLAT_TOLERANCE = 1e-10  # relative std below which a channel is treated as constant


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not follow its declared format."""


@dataclass
class TimeSeries:
    values: np.ndarray
    label: int = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"a series needs shape (channels >= 1, length >= 1), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("series values must be finite")
        self.values = values
        if self.label is not None:
            self.label = int(self.label)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = check_series_array(self.X)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (len(self.X),):
                raise ValueError("labels must be one integer per series")

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i):
        return TimeSeries(self.X[i], None if self.y is None else int(self.y[i]))

    @property
    def n_channels(self):
        return self.X.shape[1]

    @property
    def length(self):
        return self.X.shape[2]

    @property
    def classes(self):
        return [] if self.y is None else sorted(int(c) for c in np.unique(self.y))

    def describe(self):
        return {"name": self.name, "channels": self.n_channels, "length": self.length, "classes": self.classes}


# -- splits -------------------------------------------------------------------


@dataclass(frozen=True)
class UnlabeledSet:
    """Pretraining split: series only, no label attribute at all."""

    X: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.X)


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.X)


class TestSplit:
    """Held-out split whose labels are only read by ``pipeline.evaluate_test``."""

    __test__ = False  # not a pytest class

    def __init__(self, X, y, indices):
        self.X = X
        self.indices = indices
        self.__labels = np.asarray(y, dtype=np.int64)

    def __len__(self):
        return len(self.X)

    def _reveal_labels(self):
        return self.__labels


@dataclass(frozen=True)
class SplitBundle:
    pretrain: UnlabeledSet
    train: LabeledSet
    validation: LabeledSet
    test: TestSplit
    seed: int
    source: str

    def sizes(self):
        return {
            "pretrain": len(self.pretrain),
            "train": len(self.train),
            "validation": len(self.validation),
            "test": len(self.test),
        }


def split_sizes(n):
    """Floor of each supervised ratio; every leftover sample goes to pretraining."""
    if n < 10:
        raise ValueError(f"need at least 10 series to split, got {n}")
    train = math.floor(n * SPLIT_RATIOS["train"])
    validation = math.floor(n * SPLIT_RATIOS["validation"])
    test = math.floor(n * SPLIT_RATIOS["test"])
    return {"pretrain": n - train - validation - test, "train": train, "validation": validation, "test": test}


def split(dataset, seed):
    """Random pretrain/train/validation/test partition (unstratified)."""
    if dataset.y is None:
        raise ValueError("splitting needs a labeled dataset")
    sizes = split_sizes(len(dataset))
    order = np.random.default_rng(seed).permutation(len(dataset))
    cuts = np.cumsum([sizes["pretrain"], sizes["train"], sizes["validation"]])
    pre, tr, va, te = np.split(order, cuts)
    X, y = dataset.X, dataset.y
    return SplitBundle(
        pretrain=UnlabeledSet(X[pre], pre),
        train=LabeledSet(X[tr], y[tr], tr),
        validation=LabeledSet(X[va], y[va], va),
        test=TestSplit(X[te], y[te], te),
        seed=seed,
        source=dataset.name,
    )


# -- normalisation ------------------------------------------------------------


def znormalize(X, mode="per_series"):
    """Per-series, per-channel ``(x - mean) / std``; flat channels become zeros.

    A channel counts as flat when its std is at rounding level relative to its
    magnitude, so a constant channel maps to zeros whatever its value.
    """
    if mode == "off":
        return np.asarray(X, dtype=np.float64).copy()
    if mode != "per_series":
        raise ValueError(f"unknown normalisation mode {mode!r}")
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=-1, keepdims=True)
    std = X.std(axis=-1, keepdims=True)
    live = std > FLAT_TOLERANCE * np.abs(X).max(axis=-1, keepdims=True, initial=0.0)
    safe = np.where(live, std, 1.0)
    return np.where(live, (X - mean) / safe, 0.0)


class ZNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapper around :func:`znormalize`."""

    def __init__(self, mode="per_series"):
        self.mode = mode

    def fit(self, X, y=None):
        check_series_array(X)
        return self

    def transform(self, X):
        return znormalize(check_series_array(X), self.mode)


def resample_length(X, length):
    """Linearly resample the last axis of ``X`` to ``length`` points."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] == length:
        return X.copy()
    src = np.linspace(0.0, 1.0, X.shape[-1])
    dst = np.linspace(0.0, 1.0, length)
    flat = X.reshape(-1, X.shape[-1])
    return np.stack([np.interp(dst, src, row) for row in flat]).reshape(X.shape[:-1] + (length,))


# -- file formats -------------------------------------------------------------


def _float(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: non-numeric value {token!r}") from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"line {lineno}: missing or non-finite value {token!r}")
    return value


def _read_tsv(path):
    labels, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            try:
                labels.append(int(fields[0]))
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: label {fields[0]!r} is not an integer") from None
            values = [_float(tok, lineno) for tok in fields[1:]]
            if not values:
                raise DatasetFormatError(f"line {lineno}: no values after the label")
            if rows and len(values) != len(rows[0]):
                raise DatasetFormatError(
                    f"line {lineno}: ragged row with {len(values)} values, expected {len(rows[0])}"
                )
            rows.append(values)
    if not rows:
        raise DatasetFormatError(f"{path}: no samples")
    return np.asarray(rows)[:, None, :], np.asarray(labels, dtype=np.int64)


def _read_jsonl(path):
    labels, samples = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "channels" not in obj or "label" not in obj:
                raise DatasetFormatError(f"line {lineno}: expected an object with 'label' and 'channels'")
            label = obj["label"]
            if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
                raise DatasetFormatError(f"line {lineno}: label must be an integer or null")
            channels = obj["channels"]
            if not isinstance(channels, list) or not channels or not all(isinstance(c, list) for c in channels):
                raise DatasetFormatError(f"line {lineno}: 'channels' must be a non-empty list of lists")
            lengths = {len(c) for c in channels}
            if len(lengths) != 1 or 0 in lengths:
                raise DatasetFormatError(f"line {lineno}: channels have unequal or zero lengths {sorted(lengths)}")
            values = []
            for c in channels:
                if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in c):
                    raise DatasetFormatError(f"line {lineno}: non-numeric channel value")
                values.append([_float(v, lineno) for v in c])
            if samples and len(values) != len(samples[0]):
                raise DatasetFormatError(f"line {lineno}: {len(values)} channels, expected {len(samples[0])}")
            samples.append(np.asarray(values))
            labels.append(label)
    if not samples:
        raise DatasetFormatError(f"{path}: no samples")
    lengths = [s.shape[1] for s in samples]
    if len(set(lengths)) > 1:
        target = int(np.median(lengths))
        logger.warning("%s: variable lengths resampled to the median length %d", path, target)
        samples = [resample_length(s, target) for s in samples]
    if all(label is None for label in labels):
        y = None
    elif any(label is None for label in labels):
        raise DatasetFormatError(f"{path}: mixes labeled and unlabeled samples")
    else:
        y = np.asarray(labels, dtype=np.int64)
    return np.stack(samples), y


def _detect_format(path):
    if path.endswith(".tsv"):
        return "tsv"
    if path.endswith(".jsonl"):
        return "jsonl"
    raise ValueError(f"cannot infer the format of {path!r}; pass format='tsv' or 'jsonl'")


def load_dataset(path, format=None):
    """Load a data file, or a dataset directory with ``data.*`` and ``meta.json``."""
    path = os.fspath(path)
    meta, name = {}, os.path.splitext(os.path.basename(path.rstrip("/")))[0]
    if os.path.isdir(path):
        meta_path = os.path.join(path, "meta.json")
        if os.path.exists(meta_path):
            with open(meta_path, encoding="utf-8") as fh:
                meta = json.load(fh)
        name = meta.get("name", os.path.basename(path.rstrip("/")))
        for candidate in ("data.tsv", "data.jsonl"):
            if os.path.exists(os.path.join(path, candidate)):
                path = os.path.join(path, candidate)
                break
        else:
            raise FileNotFoundError(f"no data.tsv or data.jsonl in {path}")
    fmt = format or _detect_format(path)
    if fmt == "tsv":
        X, y = _read_tsv(path)
    elif fmt == "jsonl":
        X, y = _read_jsonl(path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    return Dataset(X, y, name=name, meta=meta)


def _fmt(value):
    return repr(float(value))


def write_dataset(dataset, path, format=None):
    """Write ``dataset`` in canonical form (shortest round-trip float repr)."""
    path = os.fspath(path)
    fmt = format or _detect_format(path)
    labels = [None] * len(dataset) if dataset.y is None else [int(v) for v in dataset.y]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "tsv":
            if dataset.n_channels != 1:
                raise ValueError("the TSV format holds univariate series only")
            if dataset.y is None:
                raise ValueError("the TSV format requires labels")
            for label, x in zip(labels, dataset.X):
                fh.write("\t".join([str(label)] + [_fmt(v) for v in x[0]]) + "\n")
        elif fmt == "jsonl":
            for label, x in zip(labels, dataset.X):
                fh.write(json.dumps({"label": label, "channels": x.tolist()}) + "\n")
        else:
            raise ValueError(f"unknown dataset format {fmt!r}")


def write_dataset_dir(dataset, directory, format=None):
    """Write ``<directory>/data.<fmt>`` and ``<directory>/meta.json``."""
    fmt = format or ("tsv" if dataset.n_channels == 1 and dataset.y is not None else "jsonl")
    os.makedirs(directory, exist_ok=True)
    write_dataset(dataset, os.path.join(directory, f"data.{fmt}"), fmt)
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(dataset.describe(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


# -- built-in synthetic datasets ---------------------------------------------


def _balanced_labels(n, n_classes, rng):
    labels = np.arange(n) % n_classes
    return labels[rng.permutation(n)]


def _waves(n, length, noise, channels, rng):
    y = _balanced_labels(n, 3, rng)
    t = np.arange(length) / length
    X = np.empty((n, channels, length))
    for i, label in enumerate(y):
        for c in range(channels):
            cycles = rng.integers(2, 5)
            phase = rng.uniform(0.0, 1.0)
            u = (cycles * t + phase) % 1.0
            if label == 0:
                wave = np.sin(2 * np.pi * u)
            elif label == 1:
                wave = np.where(u < 0.5, 1.0, -1.0)
            else:
                wave = 2.0 * u - 1.0
            X[i, c] = wave
    return X + rng.normal(0.0, noise, X.shape), y


def _two_freq(n, length, noise, channels, rng):
    y = _balanced_labels(n, 2, rng)
    t = np.arange(length) / length
    X = np.empty((n, channels, length))
    for i, label in enumerate(y):
        for c in range(channels):
            cycles = rng.uniform(1.0, 3.0) if label == 0 else rng.uniform(6.0, 10.0)
            X[i, c] = np.sin(2 * np.pi * (cycles * t + rng.uniform(0.0, 1.0)))
    return X + rng.normal(0.0, noise, X.shape), y


def _blobs_walk(n, length, noise, channels, rng, n_classes=3):
    y = _balanced_labels(n, n_classes, rng)
    drifts = np.linspace(-0.3, 0.3, n_classes)
    steps = rng.normal(drifts[y][:, None, None], 1.0, (n, channels, length))
    steps[:, :, 0] = 0.0
    X = np.cumsum(steps, axis=-1)
    return X + rng.normal(0.0, noise, X.shape), y


SYNTHETIC = {
    "three-class-waves": _waves,
    "two-class-freq": _two_freq,
    "gaussian-blobs-walk": _blobs_walk,
}


def synth_dataset(name, n=300, length=64, noise=0.3, seed=0, channels=1):
    """Balanced, seeded, labeled synthetic dataset from the built-in catalogue."""
    if name not in SYNTHETIC:
        raise ValueError(f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTHETIC)}")
    if n < 1 or length < 1 or channels < 1:
        raise ValueError("n, length and channels must be positive")
    rng = np.random.default_rng(seed)
    X, y = SYNTHETIC[name](n, length, noise, channels, rng)
    return Dataset(X, y, name=name, meta={"synthetic": True, "noise": noise, "seed": seed})
