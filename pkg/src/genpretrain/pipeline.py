"""Pretrain -> fine-tune -> validate -> test driver for one configuration.

An :class:`ExperimentConfig` names a backbone (or a 1NN baseline), an optional
pretraining method and a generator. :func:`run_experiment` returns an
:class:`ExperimentRecord`; :func:`run_grid` runs many of them in a process
pool, persisting one JSON document per experiment and skipping experiments
whose record already exists.
"""

import dataclasses
import hashlib
import itertools
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .augmentations import AugmentParams
from .backbones import DualDomainModel, EncoderModel, ResNetSpec, TransformerSpec
from .baselines import OneNearestNeighborClassifier
from .datasets import load_dataset, split, synth_dataset, znormalize
from .generators import GENERATOR_KINDS, UCR_THRESHOLD, UEA_THRESHOLD, make_generator, n_gen_policy
from .pretrainers import PTM_KINDS, ContrastConfig, pretrain_step
from .tensor import no_grad
from .tensor import functional as F
from .training import OptimConfig, fit_epochs
from .validation import check_labels, check_series_array

logger = logging.getLogger(__name__)

BACKBONES = ("resnet", "transformer")
BASELINES = {"1nn-ed": "euclidean", "1nn-dtw": "dtw"}
STAGES = ("data", "generate", "pretrain", "finetune", "validate", "test")
DISPLAY = {
    "resnet": "ResNet",
    "transformer": "Transformer",
    "1nn-ed": "1NN-ED",
    "1nn-dtw": "1NN-DTW",
    "timeclr": "TimeCLR",
    "ts2vec": "TS2Vec",
    "mixingup": "MixingUp",
    "tfc": "TF-C",
    "ng": "NG",
    "rw": "RW",
    "sw": "SW",
    "mg": "MG",
    "gan": "GAN",
    "vae": "β-VAE",
    "diff": "Diff",
}


class ExperimentError(RuntimeError):
    """A stage of the pipeline failed; ``stage`` says which."""

    def __init__(self, stage, message, record=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.record = record


@dataclass(frozen=True)
class DatasetSpec:
    """Either a built-in synthetic dataset (``name`` + size options) or ``path``."""

    name: str = "three-class-waves"
    path: str = None
    format: str = None
    n: int = 300
    length: int = 64
    noise: float = 0.3
    seed: int = 0
    channels: int = 1

    def load(self):
        if self.path:
            return load_dataset(self.path, self.format)
        return synth_dataset(self.name, self.n, self.length, self.noise, self.seed, self.channels)

    @property
    def label(self):
        return os.path.basename(self.path.rstrip("/")) if self.path else self.name


@dataclass(frozen=True)
class ExperimentConfig:
    backbone: str = "resnet"
    ptm: str = None
    generator: str = "ng"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    seed: int = 0
    epochs: int = 400
    finetune_epochs: int = None  # defaults to ``epochs``
    generator_epochs: int = None  # defaults to ``epochs``
    batch_size: int = 64
    val_every: int = 10
    normalization: str = "per_series"
    threshold: int = None  # defaults by archive type: univariate 1494, multivariate 3398
    backbone_options: dict = field(default_factory=dict)
    generator_options: dict = field(default_factory=dict)
    contrast: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)
    dtw_window: int = None

    def __post_init__(self):
        ptm = None if self.ptm in (None, "none", "") else str(self.ptm).lower()
        object.__setattr__(self, "ptm", ptm)
        object.__setattr__(self, "backbone", str(self.backbone).lower())
        generator = "ng" if ptm is None else str(self.generator or "ng").lower()
        object.__setattr__(self, "generator", generator)
        if isinstance(self.dataset, dict):
            object.__setattr__(self, "dataset", DatasetSpec(**self.dataset))
        if self.backbone not in BACKBONES and self.backbone not in BASELINES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.backbone in BASELINES and ptm is not None:
            raise ValueError("1NN baselines take no pretraining method")
        if ptm is not None and ptm not in PTM_KINDS:
            raise ValueError(f"unknown pretraining method {ptm!r}")
        if generator != "ng" and generator not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator {generator!r}")
        for name in ("epochs", "batch_size", "val_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("finetune_epochs", "generator_epochs", "threshold"):
            if getattr(self, name) is not None and getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.normalization not in ("off", "per_series"):
            raise ValueError("normalization must be 'off' or 'per_series'")

    @property
    def method(self):
        parts = [self.backbone] + ([self.ptm, self.generator] if self.ptm else [])
        return "+".join(DISPLAY[p] for p in parts)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolved_threshold(self, n_channels):
        if self.threshold is not None:
            return self.threshold
        return UCR_THRESHOLD if n_channels == 1 else UEA_THRESHOLD


@dataclass
class ExperimentRecord:
    config: dict
    config_hash: str
    method: str
    dataset: str
    status: str = "running"
    failed_stage: str = None
    error: str = None
    split_sizes: dict = None
    pretrain_size: int = None
    n_gen: int = None
    generator_losses: list = field(default_factory=list)
    pretrain_losses: list = field(default_factory=list)
    finetune_losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # [{"epoch", "val_accuracy"}]
    selected_checkpoint: int = None  # 1-based index into ``checkpoints``
    test_accuracy: float = None
    wall_time: float = field(default=None, compare=False)

    def to_dict(self, include_wall_time=False):
        d = dataclasses.asdict(self)
        if not include_wall_time:
            d.pop("wall_time")
        return d

    def to_json(self):
        """Canonical JSON; leaves out wall time so reruns are byte-identical."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# -- model construction -------------------------------------------------------


def backbone_spec(kind, in_channels, options=None):
    options = dict(options or {})
    if kind == "resnet":
        return ResNetSpec(in_channels=in_channels, **options)
    if kind == "transformer":
        return TransformerSpec(in_channels=in_channels, **options)
    raise ValueError(f"unknown backbone {kind!r}")


def build_model(backbone, ptm, in_channels, rng, options=None):
    """TF-C gets the dual-domain model at halved width; TS2Vec starts per time step."""
    spec = backbone_spec(backbone, in_channels, options)
    if ptm == "tfc":
        return DualDomainModel.build(spec, rng=rng)
    if ptm == "ts2vec":
        spec = spec.for_ts2vec()
    return EncoderModel.build(spec, rng=rng)


def contrast_config(options):
    options = dict(options or {})
    if "augment" in options and isinstance(options["augment"], dict):
        options["augment"] = AugmentParams(**options["augment"])
    if "tfc_weights" in options:
        options["tfc_weights"] = tuple(options["tfc_weights"])
    return ContrastConfig(**options)


def _subseed(seq):
    return int(seq.generate_state(1)[0])


# -- stages -----------------------------------------------------------------


def pretrain(model, X, ptm, contrast, optim_cfg, epochs, batch_size, rng):
    """Self-supervised training on ``X``; returns per-epoch mean losses."""
    X = check_series_array(X)
    if len(X) < 2:
        raise ValueError("pretraining needs at least 2 series")
    return fit_epochs(
        model.parameters(),
        len(X),
        lambda idx: pretrain_step(ptm, X[idx], model, contrast, rng),
        epochs,
        batch_size,
        optim_cfg,
        rng,
        min_batch=2,
    )


def predict_logits(model, X, chunk=256):
    with no_grad():
        return np.concatenate([model.logits(X[i : i + chunk]).data for i in range(0, len(X), chunk)])


def accuracy(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("accuracy of an empty split is undefined")
    return float(np.mean(y_true == y_pred))


@dataclass
class FineTuneResult:
    losses: list
    checkpoints: list  # [{"epoch", "val_accuracy"}]
    states: list  # state dicts, aligned with ``checkpoints``


def fine_tune(model, train, validation, classes, optim_cfg, epochs, batch_size, val_every, rng):
    """Cross-entropy training of backbone, projector and classifier together.

    Labels are encoded as indices into ``classes``. A checkpoint (with its
    validation accuracy) is taken every ``val_every`` epochs and after the
    final epoch.
    """
    classes = np.asarray(classes)
    n_out = predict_logits(model, train.X[:1]).shape[1]
    if n_out != len(classes):
        raise ValueError(f"classifier has {n_out} outputs but the training split has {len(classes)} classes")
    y = np.searchsorted(classes, train.y)
    val_y = np.asarray(validation.y) if validation is not None else None
    result = FineTuneResult([], [], [])

    def checkpoint(epoch, loss):
        result.losses.append(loss)
        if epoch % val_every and epoch != epochs:
            return
        val_acc = None
        if val_y is not None and len(val_y):
            val_acc = accuracy(val_y, classes[predict_logits(model, validation.X).argmax(axis=1)])
        result.checkpoints.append({"epoch": epoch, "val_accuracy": val_acc})
        result.states.append(model.state_dict())

    fit_epochs(
        model.parameters(),
        len(train.X),
        lambda idx: F.cross_entropy(model.logits(train.X[idx]), y[idx]),
        epochs,
        batch_size,
        optim_cfg,
        rng,
        on_epoch=checkpoint,
    )
    return result


def select_checkpoint(val_accuracies):
    """1-based index of the best validation accuracy; ties go to the earliest."""
    acc = np.asarray(val_accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("no checkpoints to select from")
    return int(np.argmax(acc)) + 1


def evaluate_test(model, test, classes=None):
    """Accuracy of ``model`` on the held-out split.

    ``model`` is either a network exposing ``logits`` (predictions are
    ``classes[argmax]``, or the argmax itself if ``classes`` is None) or any
    object with ``predict``. This is the only reader of test labels.
    """
    if len(test) == 0:
        raise ValueError("the test split is empty")
    if hasattr(model, "logits"):
        idx = predict_logits(model, test.X).argmax(axis=1)
        pred = idx if classes is None else np.asarray(classes)[idx]
    else:
        pred = model.predict(test.X)
    return accuracy(test._reveal_labels(), pred)


# -- the four-stage run -----------------------------------------------------


class _Stage:
    def __init__(self, record):
        self.record = record
        self.name = None

    def __call__(self, name):
        self.name = name
        return self

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            self.record.status = "failed"
            self.record.failed_stage = self.name
            self.record.error = f"{type(exc).__name__}: {exc}"
            raise ExperimentError(self.name, self.record.error, self.record) from exc
        return False


def run_experiment(config, on_record=None):
    """Run one configuration end to end and return its record.

    ``on_record(record)`` is called with the (possibly partial) record when
    the run finishes or fails, before any stage error propagates.
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    started = time.perf_counter()
    record = ExperimentRecord(config.to_dict(), config.config_hash(), config.method, config.dataset.label)
    stage = _Stage(record)
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    init_rng, gen_seq, sample_seq, pre_rng, ft_rng = (
        np.random.default_rng(seeds[0]), seeds[1], seeds[2], np.random.default_rng(seeds[3]), np.random.default_rng(seeds[4])
    )
    optim_cfg = OptimConfig(**config.optim)
    ft_epochs = config.finetune_epochs or config.epochs
    try:
        with stage("data"):
            dataset = config.dataset.load()
            if config.normalization != "off":
                dataset.X = znormalize(dataset.X, config.normalization)
            bundle = split(dataset, config.seed)
            record.split_sizes = bundle.sizes()
            record.pretrain_size = len(bundle.pretrain)
            classes = np.unique(bundle.train.y)

        if config.backbone in BASELINES:
            with stage("finetune"):
                clf = OneNearestNeighborClassifier(BASELINES[config.backbone], config.dtw_window)
                clf.fit(bundle.train.X, bundle.train.y)
            with stage("test"):
                record.test_accuracy = evaluate_test(clf, bundle.test)
            record.status = "complete"
            return record

        with stage("pretrain"):
            model = build_model(config.backbone, config.ptm, dataset.n_channels, init_rng, config.backbone_options)
        if config.ptm is not None:
            data = bundle.pretrain.X
            if config.generator != "ng":
                with stage("generate"):
                    threshold = config.resolved_threshold(dataset.n_channels)
                    record.n_gen = n_gen_policy(len(bundle.pretrain), threshold)
                    gen = _fit_generator(config, data, _subseed(gen_seq))
                    record.generator_losses = list(getattr(gen, "history_", []))
                    data = gen.sample(record.n_gen, np.random.default_rng(sample_seq))
                    if config.normalization != "off":
                        data = znormalize(data, config.normalization)
            with stage("pretrain"):
                contrast = contrast_config(config.contrast)
                record.pretrain_losses = pretrain(
                    model, data, config.ptm, contrast, optim_cfg, config.epochs, config.batch_size, pre_rng
                )
                model.set_per_timestep(False)

        with stage("finetune"):
            model.set_classes(len(classes), rng=init_rng)
            result = fine_tune(
                model, bundle.train, bundle.validation, classes, optim_cfg, ft_epochs, config.batch_size,
                config.val_every, ft_rng,
            )
            record.finetune_losses = result.losses
            record.checkpoints = result.checkpoints
        with stage("validate"):
            val = [c["val_accuracy"] for c in result.checkpoints]
            record.selected_checkpoint = select_checkpoint([-1.0 if v is None else v for v in val])
            model.load_state_dict(result.states[record.selected_checkpoint - 1])
        with stage("test"):
            record.test_accuracy = evaluate_test(model, bundle.test, classes)
        record.status = "complete"
        return record
    finally:
        record.wall_time = time.perf_counter() - started
        if on_record is not None:
            on_record(record)


def _fit_generator(config, X, seed):
    params = dict(config.generator_options)
    if config.generator in ("gan", "vae", "diff"):
        params.setdefault("epochs", config.generator_epochs or config.epochs)
        params.setdefault("batch_size", config.batch_size)
        params.setdefault("random_state", seed)
    return make_generator(config.generator, **params).fit(X)


# -- persistence and grids ------------------------------------------------------


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_path(out_dir, config_hash):
    return os.path.join(out_dir, "records", f"{config_hash}.json")


def load_records(records_dir, complete_only=True):
    """All records in ``records_dir`` (the directory itself or its ``records/``)."""
    if os.path.isdir(os.path.join(records_dir, "records")):
        records_dir = os.path.join(records_dir, "records")
    records = []
    for name in sorted(os.listdir(records_dir)):
        if name.endswith(".json") and not name.startswith("."):
            with open(os.path.join(records_dir, name), encoding="utf-8") as fh:
                rec = ExperimentRecord.from_dict(json.load(fh))
            if rec.status == "complete" or not complete_only:
                records.append(rec)
    return records


def _persist(out_dir):
    def save(record):
        write_atomic(record_path(out_dir, record.config_hash), record.to_json())
        with open(os.path.join(out_dir, "timing.jsonl"), "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"config_hash": record.config_hash, "wall_time": record.wall_time}) + "\n")

    return save


def _run_one(config_dict, out_dir):
    config = ExperimentConfig.from_dict(config_dict)
    try:
        record = run_experiment(config, on_record=_persist(out_dir) if out_dir else None)
    except ExperimentError as exc:
        logger.error("%s on %s failed: %s", config.method, config.dataset.label, exc)
        return exc.record.to_dict()
    return record.to_dict()


def run_grid(configs, out_dir=None, workers=1, resume=True):
    """Run every config; completed records already under ``out_dir`` are reused."""
    results, todo = {}, []
    for config in configs:
        h = config.config_hash()
        path = record_path(out_dir, h) if out_dir else None
        if resume and path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                rec = json.load(fh)
            if rec.get("status") == "complete":
                results[h] = ExperimentRecord.from_dict(rec)
                continue
        todo.append(config)
    if out_dir:
        os.makedirs(os.path.join(out_dir, "records"), exist_ok=True)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = pool.map(_run_one, [c.to_dict() for c in todo], itertools.repeat(out_dir))
            for config, rec in zip(todo, done):
                results[config.config_hash()] = ExperimentRecord.from_dict(rec)
    else:
        for config in todo:
            results[config.config_hash()] = ExperimentRecord.from_dict(_run_one(config.to_dict(), out_dir))
    return [results[c.config_hash()] for c in configs]


GRID_KEYS = ("backbone", "ptm", "generator", "seed", "dataset")


def expand_grid(spec):
    """Expand a config mapping into ExperimentConfigs.

    ``backbone``, ``ptm``, ``generator``, ``seed`` (or ``seeds``) and
    ``dataset`` (or ``datasets``) may be lists; every combination is produced,
    with duplicates (e.g. several generators when ``ptm`` is none) dropped.
    """
    spec = dict(spec)
    for plural, singular in (("seeds", "seed"), ("datasets", "dataset")):
        if plural in spec:
            spec[singular] = spec.pop(plural)
    axes = {}
    for key in GRID_KEYS:
        value = spec.pop(key, None)
        if value is None:
            continue
        axes[key] = value if isinstance(value, list) else [value]
    configs, seen = [], set()
    for combo in itertools.product(*axes.values()):
        chosen = dict(zip(axes.keys(), combo))
        if chosen.get("backbone") in BASELINES and chosen.get("ptm") not in (None, "none"):
            continue  # a 1NN baseline has no pretraining axis
        config = ExperimentConfig(**spec, **chosen)
        if config.config_hash() not in seen:
            seen.add(config.config_hash())
            configs.append(config)
    return configs


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        spec = yaml.safe_load(fh)
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return expand_grid(spec)


# -- estimator wrapper -------------------------------------------------------------


class PretrainedClassifier(ClassifierMixin, BaseEstimator):
    """Optionally pretrain, then fine-tune a backbone classifier.

    ``fit(X, y, X_unlabeled=None, X_val=None, y_val=None)``: pretraining uses
    ``X_unlabeled`` (or ``X``), or series sampled from ``generator`` fitted on
    it; the checkpoint with the best accuracy on ``(X_val, y_val)`` is kept,
    otherwise the last.
    """

    def __init__(
        self, backbone="resnet", ptm=None, generator="ng", epochs=100, finetune_epochs=None, batch_size=64,
        val_every=10, n_gen=None, backbone_options=None, contrast=None, optim=None, random_state=0,
    ):
        self.backbone = backbone
        self.ptm = ptm
        self.generator = generator
        self.epochs = epochs
        self.finetune_epochs = finetune_epochs
        self.batch_size = batch_size
        self.val_every = val_every
        self.n_gen = n_gen
        self.backbone_options = backbone_options
        self.contrast = contrast
        self.optim = optim
        self.random_state = random_state

    def fit(self, X, y, X_unlabeled=None, X_val=None, y_val=None):
        X = check_series_array(X)
        y = check_labels(y, len(X))
        seeds = np.random.SeedSequence(self.random_state).spawn(4)
        rng = [np.random.default_rng(s) for s in seeds]
        optim_cfg = OptimConfig(**(self.optim or {}))
        ptm = None if self.ptm in (None, "none") else self.ptm
        self.model_ = build_model(self.backbone, ptm, X.shape[1], rng[0], self.backbone_options)
        self.pretrain_losses_ = []
        if ptm is not None:
            data = X if X_unlabeled is None else check_series_array(X_unlabeled)
            if self.generator not in (None, "ng"):
                gen = make_generator(self.generator).fit(data)
                data = gen.sample(self.n_gen or len(data), rng[1])
            self.pretrain_losses_ = pretrain(
                self.model_, data, ptm, contrast_config(self.contrast), optim_cfg, self.epochs, self.batch_size, rng[2]
            )
            self.model_.set_per_timestep(False)
        self.classes_ = np.unique(y)
        self.model_.set_classes(len(self.classes_), rng=rng[0])
        train = _Split(X, y)
        val = _Split(check_series_array(X_val), check_labels(y_val, len(X_val))) if X_val is not None else None
        result = fine_tune(
            self.model_, train, val, self.classes_, optim_cfg, self.finetune_epochs or self.epochs,
            self.batch_size, self.val_every, rng[3],
        )
        self.finetune_losses_ = result.losses
        self.checkpoints_ = result.checkpoints
        if val is not None:
            best = select_checkpoint([c["val_accuracy"] for c in result.checkpoints])
        else:
            best = len(result.checkpoints)
        self.model_.load_state_dict(result.states[best - 1])
        self.selected_checkpoint_ = best
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return predict_logits(self.model_, check_series_array(X))

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]


@dataclass
class _Split:
    X: np.ndarray
    y: np.ndarray
