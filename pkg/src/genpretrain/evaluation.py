"""Cross-dataset ranking, top-k tables, size-vs-gain regression and reports."""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def _get(record, key):
    return record[key] if isinstance(record, dict) else getattr(record, key)


@dataclass
class ResultsMatrix:
    """Methods x datasets test accuracies; ``nan`` marks a missing cell."""

    methods: list
    datasets: list
    accuracy: np.ndarray
    pretrain_sizes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.methods = list(self.methods)
        self.datasets = list(self.datasets)
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        if self.accuracy.shape != (len(self.methods), len(self.datasets)):
            raise ValueError(f"accuracy grid must be {len(self.methods)} x {len(self.datasets)}")
        if len(set(self.methods)) != len(self.methods) or len(set(self.datasets)) != len(self.datasets):
            raise ValueError("method and dataset names must be unique")
        seen = self.accuracy[~np.isnan(self.accuracy)]
        if np.any((seen < 0) | (seen > 1)):
            raise ValueError("accuracies must lie in [0, 1]")

    @classmethod
    def from_records(cls, records):
        """Grid over completed records; repeated seeds of a cell are averaged."""
        cells, sizes = {}, {}
        for rec in records:
            if _get(rec, "status") != "complete":
                continue
            key = (_get(rec, "method"), _get(rec, "dataset"))
            cells.setdefault(key, []).append(_get(rec, "test_accuracy"))
            if _get(rec, "pretrain_size") is not None:
                sizes[key[1]] = _get(rec, "pretrain_size")
        methods = sorted({m for m, _ in cells})
        datasets = sorted({d for _, d in cells})
        acc = np.full((len(methods), len(datasets)), np.nan)
        for (m, d), values in cells.items():
            acc[methods.index(m), datasets.index(d)] = float(np.mean(values))
        return cls(methods, datasets, acc, sizes)

    @classmethod
    def from_dict(cls, table):
        """``{method: {dataset: accuracy}}`` -> matrix."""
        methods = sorted(table)
        datasets = sorted({d for row in table.values() for d in row})
        acc = np.array([[table[m].get(d, np.nan) for d in datasets] for m in methods], dtype=np.float64)
        return cls(methods, datasets, acc.reshape(len(methods), len(datasets)))

    def missing_counts(self):
        return {m: int(np.isnan(row).sum()) for m, row in zip(self.methods, self.accuracy)}

    def complete_columns(self):
        return ~np.isnan(self.accuracy).any(axis=0)


@dataclass
class RankTable:
    methods: list
    avg_rank: np.ndarray
    n_datasets: int
    excluded: list = field(default_factory=list)
    missing: dict = field(default_factory=dict)
    archive: str = ""

    @classmethod
    def from_ranks(cls, ranks, n_datasets=0, archive=""):
        """Wrap already-computed average ranks (e.g. published ones)."""
        methods = list(ranks)
        return cls(methods, np.array([ranks[m] for m in methods], dtype=np.float64), n_datasets, archive=archive)

    def as_dict(self):
        return {m: float(r) for m, r in zip(self.methods, self.avg_rank)}


def dataset_ranks(accuracy):
    """Per-column ranks, 1 = highest accuracy, ties share the mean position."""
    return np.apply_along_axis(lambda col: rankdata(-col, method="average"), 0, np.asarray(accuracy, dtype=np.float64))


def average_rank(matrix, archive=""):
    """Mean per-dataset rank over the datasets where every method has a result."""
    if len(matrix.methods) < 2:
        raise ValueError("ranking needs at least 2 methods")
    complete = matrix.complete_columns()
    if not complete.any():
        raise ValueError("no dataset has results for every method")
    ranks = dataset_ranks(matrix.accuracy[:, complete])
    excluded = [d for d, ok in zip(matrix.datasets, complete) if not ok]
    return RankTable(
        list(matrix.methods), ranks.mean(axis=1), int(complete.sum()), excluded, matrix.missing_counts(), archive
    )


def top_k(table, k=None):
    """Methods by ascending average rank; equal ranks fall back to the name."""
    order = sorted(zip(table.avg_rank.tolist(), table.methods), key=lambda t: (t[0], t[1]))
    k = len(order) if k is None else k
    if not 0 <= k <= len(order):
        raise ValueError(f"k must be between 0 and {len(order)}")
    return [m for _, m in order[:k]]


def ols_fit(x, y):
    """Least-squares line ``y = slope * x + intercept``."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ValueError("a line fit needs at least 2 points")
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(slope), float(intercept)


@dataclass
class GainFit:
    slope: float
    intercept: float
    points: list  # [(dataset, pretrain_size, gain)]


def _per_dataset(records):
    acc, size = {}, {}
    for rec in records:
        if _get(rec, "status") != "complete":
            continue
        d = _get(rec, "dataset")
        acc.setdefault(d, []).append(_get(rec, "test_accuracy"))
        size[d] = _get(rec, "pretrain_size")
    return {d: (size[d], float(np.mean(v))) for d, v in acc.items()}


def size_vs_gain(records_a, records_b):
    """Regress ``acc_A - acc_B`` on pretraining-set size across datasets.

    Positive gain means method A (typically a generated-data variant) beat
    method B. Seeds of the same dataset are averaged.
    """
    a, b = _per_dataset(records_a), _per_dataset(records_b)
    if set(a) != set(b):
        raise ValueError(f"methods were evaluated on different datasets: {sorted(set(a) ^ set(b))}")
    points = [(d, a[d][0], a[d][1] - b[d][1]) for d in sorted(a)]
    if len(points) < 2:
        raise ValueError("size-vs-gain needs at least 2 datasets")
    slope, intercept = ols_fit([p[1] for p in points], [p[2] for p in points])
    return GainFit(slope, intercept, points)


def generator_pairs(methods):
    """(generated-data method, matching NG method) pairs present in ``methods``."""
    present = set(methods)
    pairs = []
    for m in sorted(methods):
        parts = m.split("+")
        if len(parts) == 3 and parts[2] != "NG":
            base = "+".join(parts[:2] + ["NG"])
            if base in present:
                pairs.append((m, base))
    return pairs


# -- report files -----------------------------------------------------------------


def _num(x):
    return repr(float(x))


def rank_table_csv(table):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "avg_rank", "n_datasets"])
    for m in top_k(table):
        writer.writerow([m, _num(table.as_dict()[m]), table.n_datasets])
    return buf.getvalue()


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit_report(tables, records, out_dir):
    """Write ``summary.md``, the rank table CSV(s) and ``size_vs_gain.csv``.

    ``tables`` is one RankTable or a list; with several, each CSV is named
    ``rank_table_<archive>.csv``. Output depends only on the inputs, so
    regenerating from the same records is byte-identical.
    """
    tables = [tables] if isinstance(tables, RankTable) else list(tables)
    if not tables:
        raise ValueError("no rank tables to report")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i, table in enumerate(tables):
        name = "rank_table.csv" if len(tables) == 1 else f"rank_table_{table.archive or i}.csv"
        _write(os.path.join(out_dir, name), rank_table_csv(table))
        written.append(name)

    by_method = {}
    for rec in records:
        by_method.setdefault(_get(rec, "method"), []).append(rec)
    scatter = io.StringIO()
    writer = csv.writer(scatter, lineterminator="\n")
    writer.writerow(["method_a", "method_b", "dataset", "pretrain_size", "gain"])
    fits = []
    for a, b in generator_pairs(by_method):
        try:
            fit = size_vs_gain(by_method[a], by_method[b])
        except ValueError:
            continue
        fits.append((a, b, fit))
        for d, size, gain in fit.points:
            writer.writerow([a, b, d, size, _num(gain)])
    _write(os.path.join(out_dir, "size_vs_gain.csv"), scatter.getvalue())
    written.append("size_vs_gain.csv")

    lines = ["# Results summary", ""]
    for table in tables:
        title = f"Average rank ({table.archive})" if table.archive else "Average rank"
        lines += [f"## {title}", "", f"Datasets ranked: {table.n_datasets}"]
        if table.excluded:
            lines.append(f"Datasets excluded for missing results: {len(table.excluded)} ({', '.join(table.excluded)})")
        lines += ["", "| # | method | avg rank | missing cells |", "|---|---|---|---|"]
        ranks = table.as_dict()
        for pos, m in enumerate(top_k(table), 1):
            lines.append(f"| {pos} | {m} | {ranks[m]:.2f} | {table.missing.get(m, 0)} |")
        lines.append("")
    lines += ["## Per-seed test accuracy", "", "| method | dataset | seed | test accuracy |", "|---|---|---|---|"]
    rows = sorted(
        (_get(r, "method"), _get(r, "dataset"), _get(r, "config")["seed"], _get(r, "test_accuracy"))
        for r in records
        if _get(r, "status") == "complete"
    )
    lines += [f"| {m} | {d} | {s} | {acc:.4f} |" for m, d, s, acc in rows]
    lines.append("")
    if fits:
        lines += ["## Pretraining-set size vs accuracy gain", "", "| generated | baseline | slope | intercept | datasets |"]
        lines.append("|---|---|---|---|---|")
        lines += [f"| {a} | {b} | {f.slope:.6g} | {f.intercept:.6g} | {len(f.points)} |" for a, b, f in fits]
        lines.append("")
    _write(os.path.join(out_dir, "summary.md"), "\n".join(lines))
    written.append("summary.md")
    return written
