"""Metrics, repeated-split validation, detector comparison and timing.

A *detector factory* is either an unfitted scikit-learn style estimator
(cloned per repeat, with its ``seed`` parameter set to the repeat seed when
it has one) or a callable ``factory(seed) -> estimator``. Detectors are fit
with ``fit(X, y_scaled, eval_set=(X_test, y_test))`` and must provide
``predict``; a ``knock_probability`` or ``predict_relative`` method adds the
six-class confusion matrix to the report.
"""
from __future__ import annotations

import hashlib
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone
from threadpoolctl import threadpool_limits

from .dataset import N_EXPERTS, probability_to_class, split_indices
from .exceptions import ConfigurationError, DomainError, ShapeError
from .validation import binarize

N_CLASSES = N_EXPERTS + 1
BINARY_BOUNDARY = 3  # relative classes >= 3 are knocking

# Leave-groups-out scenarios over three subsets: (train tags, test tags).
LEAVE_OUT_SCENARIOS = (
    (("A",), ("B", "C")),
    (("B",), ("A", "C")),
    (("C",), ("A", "B")),
    (("A", "B"), ("C",)),
    (("A", "C"), ("B",)),
    (("B", "C"), ("A",)),
)


# -- metrics ---------------------------------------------------------------

def binary_accuracy(predictions, labels):
    """Fraction of agreeing binary decisions; inputs may be scaled labels or probabilities."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if len(p) != len(y):
        raise ShapeError(f"{len(p)} predictions for {len(y)} labels")
    if len(p) == 0:
        raise DomainError("accuracy of an empty set is undefined")
    return float(np.mean(binarize(p) == binarize(y)))


@dataclass
class ConfusionMatrix6:
    """Counts with rows = true relative class, columns = predicted class."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=int))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if self.counts.shape != (N_CLASSES, N_CLASSES) or np.any(self.counts < 0):
            raise DomainError("a confusion matrix is a 6x6 array of non-negative counts")

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        """Row-normalised fractions; empty rows stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def binary_accuracy(self):
        knock = np.arange(N_CLASSES) >= BINARY_BOUNDARY
        agree = knock[:, None] == knock[None, :]
        return float(self.counts[agree].sum() / self.total)

    def __add__(self, other):
        return ConfusionMatrix6(self.counts + other.counts)


def confusion_matrix(predicted, true):
    p = np.asarray(predicted).ravel()
    t = np.asarray(true).ravel()
    if len(p) != len(t):
        raise ShapeError(f"{len(p)} predicted classes for {len(t)} true classes")
    for name, a in (("predicted", p), ("true", t)):
        if len(a) and (np.any(a != np.round(a)) or a.min() < 0 or a.max() >= N_CLASSES):
            raise DomainError(f"{name} classes must be integers in 0..{N_CLASSES - 1}")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(counts, (t.astype(int), p.astype(int)), 1)
    return ConfusionMatrix6(counts)


@dataclass(frozen=True)
class DiagonalMetrics:
    main: float
    main_plus_secondary: float
    main_plus_secondary_modified: float

    ROW_NAMES = ("Main diagonal", "Main + secondary diagonals", "Main + secondary (modified)")

    def as_tuple(self):
        return (self.main, self.main_plus_secondary, self.main_plus_secondary_modified)


def diagonal_metrics(cm):
    """Share of cycles on the main diagonal, with the one-step neighbours, and
    with the neighbours except the 2 <-> 3 pair that flips the binary label."""
    c = cm.counts if isinstance(cm, ConfusionMatrix6) else np.asarray(cm)
    total = c.sum()
    if total <= 0:
        raise DomainError("diagonal metrics of an empty confusion matrix are undefined")
    main = np.trace(c)
    secondary = np.trace(c, 1) + np.trace(c, -1)
    crossing = c[BINARY_BOUNDARY - 1, BINARY_BOUNDARY] + c[BINARY_BOUNDARY, BINARY_BOUNDARY - 1]
    return DiagonalMetrics(float(main / total), float((main + secondary) / total),
                           float((main + secondary - crossing) / total))


# -- cross-validation --------------------------------------------------------

def _stats(values):
    v = np.asarray(values, dtype=float)
    return {
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "max": float(v.max()),
        "min": float(v.min()),
        # sample standard deviation; a single split has no spread
        "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
    }


AGGREGATES = ("mean", "median", "max", "min", "std")


@dataclass
class CVReport:
    detector: str
    seeds: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    split_fingerprints: list = field(default_factory=list)
    confusion: list = field(default_factory=list)
    extras: list = field(default_factory=list)

    def aggregates(self):
        if not self.test_accuracy:
            raise DomainError(f"report for {self.detector!r} has no splits")
        return {"train": _stats(self.train_accuracy), "test": _stats(self.test_accuracy)}

    def diagonal(self):
        """Diagonal metrics per split (empty if the detector gives no classes)."""
        return [diagonal_metrics(cm) for cm in self.confusion]

    def to_dict(self):
        return {
            "detector": self.detector,
            "seeds": list(self.seeds),
            "train_accuracy": list(self.train_accuracy),
            "test_accuracy": list(self.test_accuracy),
            "split_fingerprints": list(self.split_fingerprints),
            "confusion": [cm.counts.tolist() for cm in self.confusion],
            "extras": list(self.extras),
        }


def split_fingerprint(train_idx, test_idx):
    h = hashlib.sha256()
    h.update(np.asarray(train_idx, dtype="<i8").tobytes())
    h.update(b"|")
    h.update(np.asarray(test_idx, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def make_detector(factory, seed):
    if isinstance(factory, BaseEstimator):
        det = clone(factory)
        if "seed" in det.get_params():
            det.set_params(seed=seed)
        return det
    if callable(factory):
        return factory(seed)
    raise ConfigurationError(f"cannot build a detector from {factory!r}")


def predicted_classes(detector, X):
    """Relative classes 0..5 from a fitted detector, or ``None`` if it only gives labels."""
    if hasattr(detector, "predict_relative"):
        return np.asarray(detector.predict_relative(X), dtype=int)
    if hasattr(detector, "knock_probability"):
        return probability_to_class(np.asarray(detector.knock_probability(X), dtype=float))
    return None


@dataclass
class SplitResult:
    train_accuracy: float
    test_accuracy: float
    confusion: ConfusionMatrix6 | None
    extra: dict


def fit_and_score(detector, train, test):
    """Fit on one dataset, score on both; returns a SplitResult."""
    detector.fit(train.windows, train.scaled_labels, eval_set=(test.windows, test.scaled_labels))
    train_acc = binary_accuracy(detector.predict(train.windows), train.binary_labels)
    test_acc = binary_accuracy(detector.predict(test.windows), test.binary_labels)
    classes = predicted_classes(detector, test.windows)
    cm = None if classes is None else confusion_matrix(classes, test.relative_labels)
    extra = {}
    report = getattr(detector, "report_", None)
    if report is not None:
        extra = {"stop_epoch": report.stop_epoch, "best_epoch": report.best_epoch,
                 "stop_reason": report.stop_reason}
    return SplitResult(train_acc, test_acc, cm, extra)


def _annotate(exc, index, seed):
    if hasattr(exc, "add_note"):
        exc.add_note(f"while fitting split {index} (seed {seed})")
    else:  # Python < 3.11
        exc.args = (f"split {index} (seed {seed}): {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


def compare_detectors(dataset, spec, detectors, n_repeats=10, callback=None):
    """Cross-validate several detectors on one shared sequence of splits.

    ``detectors`` maps a column name to a detector factory. Repeat ``r``
    uses split seed ``spec.seed + r`` for every detector, and that seed is
    also handed to the factory. ``callback(detector_name, repeat, detector)``
    runs after each fit (e.g. for kernel analysis).
    """
    if n_repeats < 1:
        raise ConfigurationError("n_repeats must be at least 1")
    if not detectors:
        raise ConfigurationError("no detectors to evaluate")
    reports = {name: CVReport(name) for name in detectors}
    for r in range(n_repeats):
        seed = spec.seed + r
        train_idx, test_idx = split_indices(dataset, spec.with_seed(seed))
        fp = split_fingerprint(train_idx, test_idx)
        train, test = dataset.subset(train_idx), dataset.subset(test_idx)
        for name, factory in detectors.items():
            det = make_detector(factory, seed)
            try:
                res = fit_and_score(det, train, test)
            except Exception as exc:
                raise _annotate(exc, r, seed)
            rep = reports[name]
            rep.seeds.append(seed)
            rep.train_accuracy.append(res.train_accuracy)
            rep.test_accuracy.append(res.test_accuracy)
            rep.split_fingerprints.append(fp)
            if res.confusion is not None:
                rep.confusion.append(res.confusion)
            rep.extras.append(res.extra)
            if callback is not None:
                callback(name, r, det)
    return reports


def cross_validate(factory, dataset, spec, n_repeats=10, name="detector", callback=None):
    """Repeated stratified splits with seeds ``spec.seed .. spec.seed + n_repeats - 1``."""
    return compare_detectors(dataset, spec, {name: factory}, n_repeats, callback)[name]


# -- generalisation ------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Train on whole subsets, test on whole subsets.

    ``nonknock_tag``/``nonknock_fraction`` add a seeded sample of that
    subset's normal cycles to training; those cycles leave the test set.
    """

    train_tags: tuple
    test_tags: tuple
    nonknock_tag: str | None = None
    nonknock_fraction: float = 0.0

    @property
    def name(self):
        extra = f"+{self.nonknock_tag}*{100 * self.nonknock_fraction:g}%" if self.nonknock_tag else ""
        return f"{''.join(self.train_tags)}{extra}->{''.join(self.test_tags)}"


@dataclass
class ScenarioResult:
    scenario: Scenario
    n_train: int
    n_test: int
    train_accuracy: float
    test_accuracy: float


def generalization_matrix(dataset, scenarios, factory, seed=0):
    tags = set(dataset.tags)
    if len(tags) < 2:
        raise ConfigurationError("generalisation needs at least two subset tags")
    results = []
    for sc in scenarios:
        if not isinstance(sc, Scenario):
            sc = Scenario(tuple(sc[0]), tuple(sc[1]))
        missing = (set(sc.train_tags) | set(sc.test_tags) | ({sc.nonknock_tag} - {None})) - tags
        if missing:
            raise ConfigurationError(f"scenario {sc.name} names unknown subsets {sorted(missing)}")
        if not sc.train_tags and not sc.nonknock_tag:
            raise ConfigurationError("a scenario needs at least one training subset")
        if not sc.test_tags:
            raise ConfigurationError(f"scenario {sc.name} has no test subsets")
        train_idx = np.flatnonzero(np.isin(dataset.subset_tags, sc.train_tags))
        test_idx = np.flatnonzero(np.isin(dataset.subset_tags, sc.test_tags))
        if sc.nonknock_tag:
            pool = np.flatnonzero((dataset.subset_tags == sc.nonknock_tag) & (dataset.binary_labels == 0))
            n = math.floor(sc.nonknock_fraction * len(pool) + 1e-9)
            extra = np.sort(np.random.default_rng(seed).choice(pool, n, replace=False))
            train_idx = np.union1d(train_idx, extra)
            test_idx = np.setdiff1d(test_idx, extra)
        if len(train_idx) == 0:
            raise ConfigurationError(f"scenario {sc.name} selects no training cycles")
        res = fit_and_score(make_detector(factory, seed), dataset.subset(train_idx), dataset.subset(test_idx))
        results.append(ScenarioResult(sc, len(train_idx), len(test_idx), res.train_accuracy, res.test_accuracy))
    return results


@dataclass
class TransferResult:
    seed: int
    mixed: float
    held_out_excluded: float
    with_nonknock: float

    @property
    def gap(self):
        return self.mixed - self.held_out_excluded

    @property
    def recovered(self):
        return self.with_nonknock - self.held_out_excluded


def nonknock_transfer(dataset, spec, factory, held_out, fraction=0.2, seed=0):
    """Effect of a held-out subset's normal cycles on transfer to that subset.

    With the split for ``seed``, the same held-out test cycles are scored
    after training on (i) every subset's training part, (ii) the training
    part without the held-out subset, and (iii) (ii) plus a seeded sample
    of ``floor(fraction * n_normal)`` normal cycles from the held-out
    subset's training part, where ``n_normal`` counts all its normal cycles.
    """
    if held_out not in dataset.tags:
        raise ConfigurationError(f"unknown subset {held_out!r}")
    train_idx, test_idx = split_indices(dataset, spec.with_seed(seed))
    tags = dataset.subset_tags
    test = dataset.subset(test_idx[tags[test_idx] == held_out])
    others = train_idx[tags[train_idx] != held_out]
    pool = train_idx[(tags[train_idx] == held_out) & (dataset.binary_labels[train_idx] == 0)]
    n_normal = int(np.sum((tags == held_out) & (dataset.binary_labels == 0)))
    n = min(len(pool), math.floor(fraction * n_normal + 1e-9))
    extra = np.sort(np.random.default_rng(seed).choice(pool, n, replace=False))
    acc = []
    for idx in (train_idx, others, np.union1d(others, extra)):
        det = make_detector(factory, seed)
        acc.append(fit_and_score(det, dataset.subset(idx), test).test_accuracy)
    return TransferResult(seed, *acc)


# -- latency -------------------------------------------------------------------

@dataclass
class LatencyReport:
    mean_s: float
    p99_s: float
    n_warmup: int
    n_measured: int

    def passes(self, budget_s):
        return self.mean_s < budget_s


def _single_window_call(detector):
    if hasattr(detector, "forward"):
        return detector.forward
    if hasattr(detector, "predict"):
        return lambda w: detector.predict(w[None, :])
    if callable(detector):
        return detector
    raise ConfigurationError(f"cannot classify with {detector!r}")


def latency_benchmark(detector, windows, n_warmup=100, n_measured=1000):
    """Wall-clock time per single-window classification on one thread."""
    if n_measured < 100:
        raise ConfigurationError("n_measured must be at least 100")
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 1:
        windows = windows[None, :]
    if len(windows) == 0:
        raise ConfigurationError("no windows to classify")
    call = _single_window_call(detector)
    times = np.empty(n_measured)
    with threadpool_limits(limits=1):
        for i in range(n_warmup):
            call(windows[i % len(windows)])
        for i in range(n_measured):
            w = windows[i % len(windows)]
            t0 = time.perf_counter()
            call(w)
            times[i] = time.perf_counter() - t0
    return LatencyReport(float(times.mean()), float(np.percentile(times, 99)), n_warmup, n_measured)


# -- report writers --------------------------------------------------------------

def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    out = io.StringIO()
    for row in [header, ["-" * w for w in widths]] + rows:
        out.write("  ".join(str(c).rjust(w) for c, w in zip(row, widths)).rstrip() + "\n")
    return out.getvalue()


def format_cv_table(reports):
    """One row per split, then mean/median/max/min/std rows; train and test per detector."""
    reports = list(reports.values()) if isinstance(reports, dict) else list(reports)
    header = ["split"] + [f"{r.detector} {part}" for r in reports for part in ("train", "test")]
    n = len(reports[0].test_accuracy)
    rows = [[str(i + 1)] + [f"{v:.4f}" for r in reports for v in (r.train_accuracy[i], r.test_accuracy[i])]
            for i in range(n)]
    aggs = [r.aggregates() for r in reports]
    for key in AGGREGATES:
        rows.append([key] + [f"{a[part][key]:.4f}" for a in aggs for part in ("train", "test")])
    return _table(header, rows)


def cv_csv(reports):
    reports = list(reports.values()) if isinstance(reports, dict) else list(reports)
    lines = ["detector,split,seed,train_accuracy,test_accuracy,split_fingerprint"]
    for r in reports:
        for i, (s, a, b, fp) in enumerate(zip(r.seeds, r.train_accuracy, r.test_accuracy, r.split_fingerprints)):
            lines.append(f"{r.detector},{i + 1},{s},{a!r},{b!r},{fp}")
        for key in AGGREGATES:
            agg = r.aggregates()
            lines.append(f"{r.detector},{key},,{agg['train'][key]!r},{agg['test'][key]!r},")
    return "\n".join(lines) + "\n"


def format_confusion(cm, title=""):
    header = ["true\\pred"] + [str(j) for j in range(N_CLASSES)]
    counts = [[str(i)] + [str(v) for v in row] for i, row in enumerate(cm.counts)]
    fracs = [[str(i)] + [f"{v:.3f}" for v in row] for i, row in enumerate(cm.normalized())]
    head = f"{title}\n" if title else ""
    return f"{head}counts\n{_table(header, counts)}row-normalised\n{_table(header, fracs)}"


def mean_diagonal_metrics(report):
    """Per-split diagonal metrics averaged over the splits of a report."""
    rows = np.array([d.as_tuple() for d in report.diagonal()])
    return DiagonalMetrics(*rows.mean(axis=0)) if len(rows) else None


def format_diagonal_table(reports):
    reports = list(reports.values()) if isinstance(reports, dict) else list(reports)
    reports = [r for r in reports if r.confusion]
    header = ["metric"] + [r.detector for r in reports]
    means = [mean_diagonal_metrics(r).as_tuple() for r in reports]
    rows = [[name] + [f"{m[i]:.4f}" for m in means] for i, name in enumerate(DiagonalMetrics.ROW_NAMES)]
    return _table(header, rows)


def diagonal_csv(reports):
    reports = list(reports.values()) if isinstance(reports, dict) else list(reports)
    lines = ["detector,split,main,main_plus_secondary,main_plus_secondary_modified"]
    for r in reports:
        for i, d in enumerate(r.diagonal()):
            lines.append(f"{r.detector},{i + 1}," + ",".join(repr(v) for v in d.as_tuple()))
    return "\n".join(lines) + "\n"


def format_generalization(results):
    header = ["scenario", "n_train", "n_test", "train acc.", "test acc."]
    rows = [[r.scenario.name, str(r.n_train), str(r.n_test), f"{r.train_accuracy:.4f}", f"{r.test_accuracy:.4f}"]
            for r in results]
    return _table(header, rows)


def format_latency(report, budget_s=None, label="classification"):
    lines = [
        f"{label}: mean {report.mean_s * 1e6:.1f} us, p99 {report.p99_s * 1e6:.1f} us "
        f"({report.n_warmup} warmup, {report.n_measured} measured, 1 thread)",
    ]
    if budget_s is not None:
        verdict = "PASS" if report.passes(budget_s) else "FAIL"
        lines.append(f"{verdict}: mean {'<' if report.passes(budget_s) else '>='} budget {budget_s * 1e6:g} us")
    return "\n".join(lines) + "\n"


__all__ = [
    "AGGREGATES", "LEAVE_OUT_SCENARIOS", "CVReport", "ConfusionMatrix6", "DiagonalMetrics",
    "LatencyReport", "Scenario", "ScenarioResult", "TransferResult",
    "binary_accuracy", "compare_detectors", "confusion_matrix", "cross_validate", "cv_csv",
    "diagonal_csv", "diagonal_metrics", "fit_and_score", "format_confusion", "format_cv_table",
    "format_diagonal_table", "format_generalization", "format_latency", "generalization_matrix",
    "latency_benchmark", "make_detector", "mean_diagonal_metrics", "nonknock_transfer",
    "predicted_classes", "split_fingerprint",
]
