"""Labelled cycle collections, label conversion, splitting and file I/O."""
from __future__ import annotations

import csv
import hashlib
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DomainError, ParseError
from .signals import (
    CYCLE_LENGTH,
    CYCLE_START_ANGLE,
    DEFAULT_RESOLUTION,
    WINDOW_LENGTH,
    AnalysisWindow,
    extract_windows,
)

N_EXPERTS = 5
# Lower edges of relative classes 1..5; intervals are [lo, hi), the last one closed.
CLASS_EDGES = np.array([0.1, 0.3, 0.5, 0.7, 0.9])


class BinaryLabel(IntEnum):
    NORMAL = 0
    KNOCKING = 1


@dataclass(frozen=True)
class ExpertVotes:
    votes: tuple

    def __post_init__(self):
        votes = tuple(int(v) for v in self.votes)
        if len(votes) != N_EXPERTS or any(v not in (0, 1) for v in votes):
            raise DomainError(f"expected {N_EXPERTS} binary votes, got {self.votes!r}")
        object.__setattr__(self, "votes", votes)


def labels_from_votes(votes):
    """Return ``(relative_label, scaled_label, binary_label)`` for one cycle."""
    if not isinstance(votes, ExpertVotes):
        votes = ExpertVotes(tuple(votes))
    relative = sum(votes.votes)
    binary = BinaryLabel.KNOCKING if relative >= 3 else BinaryLabel.NORMAL
    return relative, relative / N_EXPERTS, binary


def probability_to_class(p):
    """Map model probabilities onto the six relative classes.

    Works on scalars and arrays; boundaries belong to the upper class.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    cls = np.searchsorted(CLASS_EDGES, arr, side="right")
    return int(cls) if cls.ndim == 0 else cls.astype(int)


@dataclass
class LabeledCycle:
    window: AnalysisWindow
    votes: ExpertVotes
    subset_tag: str = ""

    @property
    def relative_label(self):
        return labels_from_votes(self.votes)[0]

    @property
    def scaled_label(self):
        return labels_from_votes(self.votes)[1]

    @property
    def binary_label(self):
        return labels_from_votes(self.votes)[2]


class KnockDataset:
    """Column-oriented store of analysis windows, votes and subset tags.

    Immutable by convention: `subset` and `concatenate` return new objects.
    """

    def __init__(self, windows, votes, subset_tags=None, cycle_ids=None,
                 resolution=DEFAULT_RESOLUTION, targets=None):
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 2:
            raise ValueError("windows must be a 2-D array (n_cycles, n_samples)")
        n = len(windows)
        votes = np.asarray(votes, dtype=np.int8).reshape(n, -1) if n else np.zeros((0, N_EXPERTS), np.int8)
        if votes.shape[1] != N_EXPERTS or np.any((votes != 0) & (votes != 1)):
            raise DomainError(f"votes must be an (n, {N_EXPERTS}) array of 0/1")
        if subset_tags is None:
            subset_tags = [""] * n
        if cycle_ids is None:
            cycle_ids = [f"c{i:05d}" for i in range(n)]
        self.windows = windows
        self.votes = votes
        self.subset_tags = np.asarray(subset_tags, dtype=object)
        self.cycle_ids = np.asarray(cycle_ids, dtype=object)
        self.resolution = resolution
        self.targets = None if targets is None else np.asarray(targets, dtype=int)
        if not (len(self.subset_tags) == len(self.cycle_ids) == n):
            raise ValueError("column lengths differ")
        self.windows.setflags(write=False)
        self.votes.setflags(write=False)

    def __len__(self):
        return len(self.windows)

    def __getitem__(self, i):
        return LabeledCycle(
            AnalysisWindow(self.windows[i], 0.0, self.resolution, str(self.cycle_ids[i]),
                           str(self.subset_tags[i])),
            ExpertVotes(tuple(self.votes[i])),
            str(self.subset_tags[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_cycles(cls, cycles):
        cycles = list(cycles)
        if not cycles:
            return cls(np.zeros((0, WINDOW_LENGTH)), np.zeros((0, N_EXPERTS)))
        return cls(
            np.stack([c.window.samples for c in cycles]),
            np.array([c.votes.votes for c in cycles]),
            [c.subset_tag for c in cycles],
            [c.window.cycle_id for c in cycles],
            cycles[0].window.resolution,
        )

    @property
    def relative_labels(self):
        return self.votes.sum(axis=1).astype(int)

    @property
    def scaled_labels(self):
        return self.relative_labels / N_EXPERTS

    @property
    def binary_labels(self):
        return (self.relative_labels >= 3).astype(int)

    @property
    def tags(self):
        """Distinct subset tags in order of first appearance."""
        return list(dict.fromkeys(self.subset_tags.tolist()))

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return KnockDataset(
            self.windows[idx], self.votes[idx], self.subset_tags[idx], self.cycle_ids[idx],
            self.resolution, None if self.targets is None else self.targets[idx],
        )

    def select_tags(self, tags):
        tags = set(tags)
        return self.subset(np.flatnonzero([t in tags for t in self.subset_tags]))

    @staticmethod
    def concatenate(datasets):
        datasets = [d for d in datasets if len(d)]
        if not datasets:
            return KnockDataset(np.zeros((0, WINDOW_LENGTH)), np.zeros((0, N_EXPERTS)))
        targets = None
        if all(d.targets is not None for d in datasets):
            targets = np.concatenate([d.targets for d in datasets])
        return KnockDataset(
            np.concatenate([d.windows for d in datasets]),
            np.concatenate([d.votes for d in datasets]),
            np.concatenate([d.subset_tags for d in datasets]),
            np.concatenate([d.cycle_ids for d in datasets]),
            datasets[0].resolution,
            targets,
        )

    def fingerprint(self):
        """Short content hash over ids, tags, votes and samples."""
        h = hashlib.sha256()
        h.update("\x1f".join(map(str, self.cycle_ids)).encode())
        h.update("\x1f".join(map(str, self.subset_tags)).encode())
        h.update(np.ascontiguousarray(self.votes).tobytes())
        h.update(np.ascontiguousarray(self.windows).tobytes())
        return h.hexdigest()[:16]


@dataclass
class SplitSpec:
    """Per-subset training fractions, e.g. ``{"A": .7, "B": .7, "C": .7}``."""

    fractions: dict
    seed: int = 0

    def __post_init__(self):
        for tag, f in self.fractions.items():
            if not 0.0 <= f <= 1.0:
                raise ConfigurationError(f"training fraction for subset {tag!r} must lie in [0, 1], got {f}")

    @classmethod
    def parse(cls, text, tags, seed=0):
        """Parse the ``70/50/45`` notation against an ordered list of tags."""
        parts = [p for p in str(text).split("/") if p.strip()]
        if len(parts) != len(tags):
            raise ConfigurationError(f"split {text!r} has {len(parts)} parts for {len(tags)} subsets {list(tags)}")
        return cls({t: float(p) / 100.0 for t, p in zip(tags, parts)}, seed)

    def with_seed(self, seed):
        return SplitSpec(dict(self.fractions), seed)

    def __str__(self):
        return "/".join(f"{100 * f:g}" for f in self.fractions.values())


def split_indices(dataset, spec):
    """Label-stratified, per-subset shuffled split; returns sorted index arrays.

    Within each subset the knocking and the normal cycles form separate
    pools; each pool is shuffled and its first ``floor(fraction * size)``
    members go to training.
    """
    unknown = set(dataset.subset_tags.tolist()) - set(spec.fractions)
    if unknown:
        raise ConfigurationError(f"subset tags {sorted(unknown)} are not named in the split")
    rng = np.random.default_rng(spec.seed)
    binary = dataset.binary_labels
    train = []
    for tag, fraction in spec.fractions.items():
        in_tag = dataset.subset_tags == tag
        for label in (BinaryLabel.KNOCKING, BinaryLabel.NORMAL):
            pool = np.flatnonzero(in_tag & (binary == label))
            pool = pool[rng.permutation(len(pool))]
            train.append(pool[: math.floor(fraction * len(pool) + 1e-9)])
    train = np.sort(np.concatenate(train)) if train else np.zeros(0, int)
    test = np.setdiff1d(np.arange(len(dataset)), train)
    return train, test


def stratified_split(dataset, spec):
    train, test = split_indices(dataset, spec)
    return dataset.subset(train), dataset.subset(test)


def filter_nonknock(dataset, subset_tag, fraction, seed=0):
    """Seeded sample of ``floor(fraction * n_normal)`` normal cycles of one subset."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"fraction must lie in [0, 1], got {fraction}")
    pool = np.flatnonzero((dataset.subset_tags == subset_tag) & (dataset.binary_labels == 0))
    n = math.floor(fraction * len(pool) + 1e-9)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool, size=n, replace=False)) if n else np.zeros(0, int)
    return dataset.subset(chosen)


# ---------------------------------------------------------------------------
# text formats


def atomic_write(path, writer, mode="w"):
    """Run ``writer(fh)`` on a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_cycle_rows(path, cycle_ids, source_tags, rows, precision=10):
    rows = np.asarray(rows, dtype=float)
    fmt = f"%.{int(precision)}f"

    def write(fh):
        fh.write(",".join(["cycle_id", "source_tag"] + [f"s{i}" for i in range(rows.shape[1])]) + "\n")
        for cid, tag, row in zip(cycle_ids, source_tags, rows):
            fh.write(f"{cid},{tag}," + ",".join(fmt % v for v in row) + "\n")

    atomic_write(path, write)


def write_labels(path, cycle_ids, votes):
    def write(fh):
        fh.write("cycle_id,v1,v2,v3,v4,v5\n")
        for cid, v in zip(cycle_ids, votes):
            fh.write(f"{cid}," + ",".join(str(int(x)) for x in v) + "\n")

    atomic_write(path, write)


def save_cycles(dataset, path, labels_path=None, precision=10):
    """Write the windows (and optionally the votes) of a dataset as CSV."""
    write_cycle_rows(path, dataset.cycle_ids, dataset.subset_tags, dataset.windows, precision)
    if labels_path is not None:
        write_labels(labels_path, dataset.cycle_ids, dataset.votes)


def _parse_floats(fields, path, row):
    try:
        values = np.array([float(x) for x in fields])
    except ValueError as exc:
        raise ParseError(f"non-numeric sample ({exc})", path, row) from None
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite sample", path, row)
    return values


def read_cycle_rows(path):
    """Parse a cycles file; returns ``(ids, tags, samples)`` with rows of equal length."""
    path = Path(path)
    if not path.exists():
        raise ParseError("cycles file not found", path)
    ids, tags, rows = [], [], []
    expected = None
    with open(path, newline="") as fh:
        for rowno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if rowno == 1 and fields[0].strip() == "cycle_id":
                expected = len(fields) - 2
                if expected not in (WINDOW_LENGTH, CYCLE_LENGTH):
                    raise ParseError(f"header declares {expected} samples; expected {WINDOW_LENGTH} or {CYCLE_LENGTH}", path, rowno)
                continue
            if len(fields) < 3:
                raise ParseError("row needs cycle_id, source_tag and samples", path, rowno)
            n = len(fields) - 2
            if expected is None:
                if n not in (WINDOW_LENGTH, CYCLE_LENGTH):
                    raise ParseError(f"row has {n} samples; expected {WINDOW_LENGTH} or {CYCLE_LENGTH}", path, rowno)
                expected = n
            if n != expected:
                raise ParseError(f"row has {n} samples; expected {expected}", path, rowno)
            ids.append(fields[0].strip())
            tags.append(fields[1].strip())
            rows.append(_parse_floats(fields[2:], path, rowno))
    if not rows:
        raise ParseError("no cycles found", path)
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate cycle_id", path)
    return ids, tags, np.stack(rows)


def read_labels(path):
    path = Path(path)
    if not path.exists():
        raise ParseError("labels file not found", path)
    out = {}
    with open(path, newline="") as fh:
        for rowno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if rowno == 1 and fields[0].strip() == "cycle_id":
                continue
            if len(fields) != 1 + N_EXPERTS:
                raise ParseError(f"expected {N_EXPERTS} votes, got {len(fields) - 1}", path, rowno)
            try:
                votes = tuple(int(v) for v in fields[1:])
                ExpertVotes(votes)
            except (ValueError, DomainError):
                raise ParseError(f"votes must be 0 or 1, got {fields[1:]}", path, rowno) from None
            out[fields[0].strip()] = votes
    return out


def load_cycles(path, label_path=None, resolution=DEFAULT_RESOLUTION):
    """Load a cycles CSV (full 7200-sample cycles or 600-sample windows).

    Full cycles are cut to the analysis window on load. Without
    ``label_path`` all votes are zero.
    """
    ids, tags, rows = read_cycle_rows(path)
    if rows.shape[1] != WINDOW_LENGTH:
        rows = extract_windows(rows, CYCLE_START_ANGLE, resolution)
    if label_path is None:
        votes = np.zeros((len(ids), N_EXPERTS), dtype=int)
    else:
        labels = read_labels(label_path)
        missing = [cid for cid in ids if cid not in labels]
        if missing:
            raise ParseError(f"no labels for cycle(s) {missing[:5]}", label_path)
        votes = np.array([labels[cid] for cid in ids])
    return KnockDataset(rows, votes, tags, ids, resolution)


def load_angle_pressure(path, cycle_id=None, source_tag=""):
    """Read a two-column ``angle,pressure`` file holding a single cycle."""
    from .signals import PressureCycle

    path = Path(path)
    angles, pressure = [], []
    with open(path, newline="") as fh:
        for rowno, fields in enumerate(csv.reader(fh), start=1):
            if not fields:
                continue
            if rowno == 1 and not _is_number(fields[0]):
                continue
            if len(fields) != 2:
                raise ParseError("expected two columns angle,pressure", path, rowno)
            a, p = _parse_floats(fields, path, rowno)
            angles.append(a)
            pressure.append(p)
    if len(angles) < 2:
        raise ParseError("need at least two samples", path)
    steps = np.diff(angles)
    res = float(np.round(steps[0], 9))
    if res <= 0 or not np.allclose(steps, res, rtol=0, atol=1e-6):
        raise ParseError("angles must be uniformly increasing", path)
    return PressureCycle(np.array(pressure), angles[0], res, cycle_id or path.stem, source_tag)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True
