"""Benchmark harness: dataset loading, shuffled splits, experiments and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierModel, EngineConfig

log = logging.getLogger(__name__)

REPORT_SCHEMA = "xokde-bench-report"
REPORT_VERSION = 1
METRICS = ("accuracy", "avg_nll", "mean_components", "train_time_s", "footprint_bytes")
TIMING_FIELDS = ("train_time_s",)
BYTES_PER_SCALAR = 8

# Shapes of the UCI datasets used in the evaluation: (samples, dims, classes).
KNOWN_SHAPES = {
    "iris": (150, 4, 3),
    "yeast": (1484, 8, 10),
    "pima": (768, 8, 2),
    "wine": (178, 13, 3),
    "letter": (20000, 16, 26),
    "seg": (2310, 19, 7),
    "steel": (1941, 27, 7),
    "cancer": (569, 30, 2),
    "skin": (245057, 3, 2),
    "covtype": (581012, 10, 7),
}


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    y: list

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(set(self.y))

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.name, self.X[idx], [self.y[i] for i in idx])


def _label_index(label_col, n_cols: int) -> int:
    if label_col in (None, "last"):
        return n_cols - 1
    if label_col == "first":
        return 0
    idx = int(label_col)
    if not -n_cols <= idx < n_cols:
        raise DatasetError(f"label column {label_col} out of range for {n_cols} columns")
    return idx % n_cols


def load_csv(path, label_col="last", skip_header: bool = False, delimiter: str | None = ",",
             name: str | None = None) -> Dataset:
    """Read delimiter-separated numeric features plus one label column.

    No normalization or balancing is applied. ``delimiter=None`` splits on
    whitespace. Blank lines are ignored.
    """
    path = Path(path)
    rows, labels = [], []
    label_idx = None
    n_cols = None
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in (line.split(delimiter) if delimiter else line.split())]
            if n_cols is None:
                n_cols = len(fields)
                if n_cols < 2:
                    raise DatasetError(f"{path}:{lineno}: need at least one feature and a label")
                label_idx = _label_index(label_col, n_cols)
            elif len(fields) != n_cols:
                raise DatasetError(
                    f"{path}:{lineno}: expected {n_cols} columns, found {len(fields)}"
                )
            values = []
            for col, text in enumerate(fields):
                if col == label_idx:
                    continue
                try:
                    values.append(float(text))
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: column {col + 1} is not numeric: {text!r}"
                    ) from None
            if not all(math.isfinite(v) for v in values):
                raise DatasetError(f"{path}:{lineno}: non-finite feature value")
            rows.append(values)
            labels.append(fields[label_idx])
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    ds = Dataset(name or path.stem, np.array(rows, dtype=float), labels)
    expected = KNOWN_SHAPES.get(ds.name.lower())
    if expected and expected != (len(ds), ds.d, ds.n_classes):
        log.warning("%s has shape %s, expected %s", ds.name, (len(ds), ds.d, ds.n_classes), expected)
    return ds


SYNTHETIC_PREFIX = "synthetic:"


def make_synthetic(n: int, d: int, n_classes: int, seed: int = 0,
                   constant_features: int = 0) -> Dataset:
    """Gaussian classes with random means and covariances.

    Classes are balanced up to one sample. The last ``constant_features``
    columns are set to a per-column constant, which makes every class
    covariance singular along those axes.
    """
    if n < n_classes or d < 1 or n_classes < 1 or not 0 <= constant_features < d:
        raise ValueError("invalid synthetic dataset shape")
    rng = np.random.default_rng(seed)
    sizes = [n // n_classes + (c < n % n_classes) for c in range(n_classes)]
    parts, labels = [], []
    for c, size in enumerate(sizes):
        mean = rng.normal(0.0, 2.0, d)
        root = rng.normal(0.0, 1.0, (d, d)) / math.sqrt(d)
        parts.append(mean + rng.standard_normal((size, d)) @ root.T)
        labels += [f"c{c}"] * size
    X = np.concatenate(parts)
    if constant_features:
        X[:, d - constant_features:] = rng.normal(0.0, 5.0, constant_features)
    name = f"synthetic-{n}x{d}x{n_classes}" + (f"-const{constant_features}" if constant_features else "")
    return Dataset(name, X, labels)


def load_dataset(source: str, label_col="last", skip_header: bool = False,
                 delimiter: str | None = ",") -> Dataset:
    """Load a CSV path or build ``synthetic:N,D,C[,CONST]``."""
    if not source.startswith(SYNTHETIC_PREFIX):
        return load_csv(source, label_col, skip_header, delimiter)
    try:
        fields = [int(v) for v in source[len(SYNTHETIC_PREFIX):].split(",")]
    except ValueError:
        raise DatasetError(f"bad synthetic spec {source!r}; expected synthetic:N,D,C[,CONST]") from None
    if len(fields) not in (3, 4):
        raise DatasetError(f"bad synthetic spec {source!r}; expected synthetic:N,D,C[,CONST]")
    n, d, c = fields[:3]
    const = fields[3] if len(fields) == 4 else 0
    try:
        return make_synthetic(n, d, c, seed=0, constant_features=const)
    except ValueError as exc:
        raise DatasetError(f"{source}: {exc}") from None


def shuffle_split(ds: Dataset, seed, fraction: float = 0.75) -> tuple[Dataset, Dataset]:
    """Seeded permutation split; the first ``floor(fraction * N)`` rows train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_train = int(math.floor(fraction * len(ds)))
    return ds.take(perm[:n_train]), ds.take(perm[n_train:])


@dataclass
class ExperimentConfig:
    dataset: str
    covariance: str = "full"
    shuffles: int = 12
    train_fraction: float = 0.75
    seed: int = 0
    dth: float = 0.02
    forgetting: float = 1.0
    trigger_floor: int = 10
    growth_factor: float = 1.5
    label_col: str = "last"
    skip_header: bool = False
    delimiter: str | None = ","
    output: str = "json"

    def __post_init__(self) -> None:
        if self.covariance not in ("full", "diag"):
            raise ValueError("covariance must be 'full' or 'diag'")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must lie in (0, 1)")
        if self.shuffles < 1:
            raise ValueError("need at least one shuffle")
        if self.output not in ("json", "csv"):
            raise ValueError("output must be 'json' or 'csv'")

    def engine(self) -> EngineConfig:
        return EngineConfig(
            diagonal=self.covariance == "diag",
            forgetting=self.forgetting,
            dth=self.dth,
            trigger_floor=self.trigger_floor,
            growth_factor=self.growth_factor,
        )


@dataclass
class ShuffleResult:
    shuffle: int
    status: str = "ok"
    accuracy: float | None = None
    avg_nll: float | None = None
    mean_components: float | None = None
    train_time_s: float | None = None
    footprint_bytes: float | None = None
    excluded: int = 0
    error: str | None = None


@dataclass
class ExperimentReport:
    dataset: dict
    config: dict
    rows: list[ShuffleResult] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def compute_aggregate(self) -> None:
        ok = [r for r in self.rows if r.status == "ok"]
        self.aggregate = {}
        for metric in METRICS:
            vals = np.array([getattr(r, metric) for r in ok], dtype=float)
            if vals.size == 0:
                self.aggregate[metric] = {"mean": None, "std": None}
                continue
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            self.aggregate[metric] = {"mean": float(np.mean(vals)), "std": std}
        self.aggregate["failed"] = len(self.rows) - len(ok)

    def to_dict(self, include_timing: bool = True) -> dict:
        rows = [asdict(r) for r in self.rows]
        aggregate = dict(self.aggregate)
        if not include_timing:
            for r in rows:
                for f in TIMING_FIELDS:
                    r.pop(f, None)
            for f in TIMING_FIELDS:
                aggregate.pop(f, None)
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "dataset": self.dataset,
            "config": self.config,
            "rows": rows,
            "aggregate": aggregate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentReport:
        if data.get("schema") != REPORT_SCHEMA:
            raise ValueError("not a benchmark report")
        if data.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {data.get('version')!r}")
        rows = [ShuffleResult(**r) for r in data["rows"]]
        return cls(data["dataset"], data["config"], rows, data["aggregate"])


def _run_shuffle(index: int, train: Dataset, test: Dataset, all_labels: set,
                 cfg: ExperimentConfig) -> ShuffleResult:
    missing = all_labels - set(train.y)
    if missing:
        return ShuffleResult(index, status="failed",
                             error=f"no training samples for classes {sorted(missing)}")
    clf = ClassifierModel(cfg.engine())
    start = time.perf_counter()
    clf.fit(train.X, train.y)
    # The final bandwidth estimate counts as training work.
    for model in clf.classes.values():
        if model.n_eff >= 2:
            model.kde()
    elapsed = time.perf_counter() - start

    pred = clf.predict_many(test.X)
    accuracy = 100.0 * float(np.mean([p == t for p, t in zip(pred, test.y)]))
    nll, excluded = clf.avg_neg_log_likelihood(test.X, test.y, return_excluded=True)
    components = float(np.mean([len(m) for m in clf.classes.values()]))
    footprint = float(sum(m.footprint_scalars() for m in clf.classes.values()) * BYTES_PER_SCALAR)
    return ShuffleResult(index, "ok", accuracy, nll, components, elapsed, footprint, excluded)


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> ExperimentReport:
    """Train and evaluate one classifier per shuffle and aggregate the metrics.

    A shuffle that raises is recorded as a failed row and the run continues.
    """
    ds = dataset if dataset is not None else load_dataset(
        cfg.dataset, cfg.label_col, cfg.skip_header, cfg.delimiter)
    report = ExperimentReport(
        dataset={"name": ds.name, "samples": len(ds), "dims": ds.d, "classes": ds.n_classes},
        config=asdict(cfg),
    )
    all_labels = set(ds.y)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.shuffles)
    for i, ss in enumerate(seeds):
        train, test = shuffle_split(ds, np.random.default_rng(ss), cfg.train_fraction)
        try:
            row = _run_shuffle(i, train, test, all_labels, cfg)
        except Exception as exc:  # noqa: BLE001 - failures become report rows
            log.exception("shuffle %d failed", i)
            row = ShuffleResult(i, status="failed", error=f"{type(exc).__name__}: {exc}")
        report.rows.append(row)
    report.compute_aggregate()
    return report


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: ExperimentReport, fmt: str = "json", include_timing: bool = True) -> str:
    """Render a report as versioned JSON or as CSV with trailing mean/std rows."""
    if fmt == "json":
        return json.dumps(report.to_dict(include_timing), indent=2, sort_keys=True) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    metrics = [m for m in METRICS if include_timing or m not in TIMING_FIELDS]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["row", "status", *metrics, "excluded", "error"])
    for r in report.rows:
        writer.writerow([r.shuffle, r.status, *(_fmt(getattr(r, m)) for m in metrics),
                         r.excluded, r.error or ""])
    for stat in ("mean", "std"):
        writer.writerow([stat, "aggregate",
                         *(_fmt(report.aggregate[m][stat]) for m in metrics), "", ""])
    return buf.getvalue()
