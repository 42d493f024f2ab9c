"""Datasets, pool partitions and the simulated labeling oracle.

A :class:`PoolState` is a value: ``acquire`` and ``corrupt_labels`` return a
new state and never mutate their input, so states can be shared freely
between runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_json, atomic_write_text, csv_text
from .errors import (
    AcquisitionError,
    ArgumentError,
    DimensionError,
    LabelError,
    ParseError,
)


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    true_label: int


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from and how it is split.

    ``source`` is either ``"synth"`` (Gaussian blobs parameterised by ``n``
    and ``sep``) or a path to a CSV file in the ``id,label,f1..fd`` format.
    """

    name: str
    dims: int
    classes: int
    source: str = "synth"
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    n: int = 1000
    sep: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ArgumentError(f"need at least 2 classes, got {self.classes}")
        if self.dims < 1:
            raise ArgumentError(f"need at least 1 dimension, got {self.dims}")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise ArgumentError(f"split must be three non-negative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ArgumentError(f"split fractions must sum to 1, got {sum(self.split)}")


@dataclass(frozen=True)
class PoolState:
    """Partition of a dataset into labeled / unlabeled / dev / test ids.

    ``oracle`` maps every id to its ground-truth label; ``observed_label``
    holds what the learner was told for labeled ids (different from the
    truth only for ids in ``corrupted``).
    """

    labeled: frozenset[int]
    unlabeled: frozenset[int]
    dev: tuple[int, ...]
    test: tuple[int, ...]
    observed_label: Mapping[int, int]
    oracle: Mapping[int, int]
    num_classes: int
    corrupted: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.labeled & self.unlabeled:
            raise ArgumentError("labeled and unlabeled pools overlap")
        train = self.labeled | self.unlabeled
        if train & set(self.dev) or train & set(self.test) or set(self.dev) & set(self.test):
            raise ArgumentError("dev/test must be disjoint from each other and the train pool")
        if not self.dev:
            raise ArgumentError("dev split is empty")
        missing = [i for i in self.labeled if i not in self.observed_label]
        if missing:
            raise ArgumentError(f"labeled ids without observed label: {sorted(missing)[:5]}")

    @property
    def train_size(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def labeled_ids(self) -> list[int]:
        return sorted(self.labeled)

    def unlabeled_ids(self) -> list[int]:
        return sorted(self.unlabeled)

    def manifest(self) -> dict:
        return {
            "labeled": sorted(self.labeled),
            "unlabeled": sorted(self.unlabeled),
            "dev": list(self.dev),
            "test": list(self.test),
            "corrupted": sorted(self.corrupted),
        }


class Dataset:
    """Dense feature matrix with id lookup.

    Rows are stored in ascending id order so that array views taken for a
    sorted id list are reproducible regardless of how samples were supplied.
    """

    def __init__(self, samples: Sequence[Sample], num_classes: int, name: str = "dataset"):
        if not samples:
            raise ArgumentError("dataset has no samples")
        ordered = sorted(samples, key=lambda s: s.id)
        ids = [s.id for s in ordered]
        if len(set(ids)) != len(ids):
            raise ArgumentError("sample ids are not unique")
        d = len(ordered[0].features)
        for s in ordered:
            if len(s.features) != d:
                raise DimensionError(f"sample {s.id} has {len(s.features)} features, expected {d}")
            if not 0 <= s.true_label < num_classes:
                raise LabelError(f"sample {s.id} has label {s.true_label} outside [0, {num_classes})")
        self.name = name
        self.num_classes = num_classes
        self.ids = np.asarray(ids, dtype=np.int64)
        self.X = np.vstack([np.asarray(s.features, dtype=np.float64) for s in ordered])
        self.y = np.asarray([s.true_label for s in ordered], dtype=np.int64)
        self._row = {i: r for r, i in enumerate(ids)}

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return len(self.ids)

    def rows(self, ids: Iterable[int]) -> np.ndarray:
        try:
            return np.asarray([self._row[i] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise AcquisitionError(f"unknown sample id {exc.args[0]}") from None

    def features(self, ids: Iterable[int]) -> np.ndarray:
        return self.X[self.rows(ids)]

    def labels(self, ids: Iterable[int]) -> np.ndarray:
        return self.y[self.rows(ids)]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.ids.tobytes())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()[:16]


def _split_counts(n: int, split: Sequence[float]) -> tuple[int, int, int]:
    n_dev = int(round(split[1] * n))
    n_test = int(round(split[2] * n))
    n_train = n - n_dev - n_test
    if n_train < 0:
        raise ArgumentError(f"split {tuple(split)} leaves no room for a train pool of {n} samples")
    return n_train, n_dev, n_test


def split_pool(samples: Sequence[Sample], split: Sequence[float], seed, num_classes: int) -> PoolState:
    """Shuffle ids with ``seed`` and cut them into train/dev/test.

    All train ids start out unlabeled.
    """
    ids = sorted(s.id for s in samples)
    n_train, n_dev, _ = _split_counts(len(ids), split)
    if n_dev == 0:
        raise ArgumentError("split leaves the dev pool empty")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[p] for p in perm]
    train = shuffled[:n_train]
    dev = sorted(shuffled[n_train:n_train + n_dev])
    test = sorted(shuffled[n_train + n_dev:])
    return PoolState(
        labeled=frozenset(),
        unlabeled=frozenset(train),
        dev=tuple(dev),
        test=tuple(test),
        observed_label={},
        oracle={s.id: int(s.true_label) for s in samples},
        num_classes=num_classes,
    )


def load_csv(path, spec: DatasetSpec, seed=None) -> tuple[list[Sample], PoolState]:
    """Read an ``id,label,f1..fd`` file and split it per ``spec``.

    ``seed`` defaults to ``spec.seed``. Line numbers in errors are 1-based
    and count the header.
    """
    path = Path(path)
    samples: list[Sample] = []
    seen: set[int] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", line=1)
        if len(header) < 2 or header[0].strip() != "id" or header[1].strip() != "label":
            raise ParseError("header must start with 'id,label'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError(f"expected id, label and features, got {len(row)} fields", line=lineno)
            try:
                sid = int(row[0])
                label = int(row[1])
                feats = np.asarray([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if sid < 0:
                raise ParseError(f"negative id {sid}", line=lineno)
            if sid in seen:
                raise ParseError(f"duplicate id {sid}", line=lineno)
            if len(feats) != spec.dims:
                raise DimensionError(f"line {lineno}: {len(feats)} features, expected {spec.dims}")
            if not 0 <= label < spec.classes:
                raise LabelError(f"line {lineno}: label {label} outside [0, {spec.classes})")
            seen.add(sid)
            samples.append(Sample(sid, feats, label))
    if not samples:
        raise ParseError("no data rows", line=2)
    pool = split_pool(samples, spec.split, spec.seed if seed is None else seed, spec.classes)
    return samples, pool


def write_csv(path, samples: Sequence[Sample]) -> None:
    d = len(samples[0].features)
    header = ["id", "label"] + [f"f{j + 1}" for j in range(d)]
    rows = [[s.id, s.true_label] + [repr(float(v)) for v in s.features] for s in samples]
    atomic_write_text(path, csv_text(header, rows))


def class_means(C: int, d: int, sep: float) -> np.ndarray:
    """Blob centres with adjacent centres exactly ``sep`` apart.

    With ``C <= d`` the centres are scaled basis vectors, so every pair is
    ``sep`` apart; otherwise they sit on a line along the first axis.
    """
    means = np.zeros((C, d))
    if C <= d:
        means[np.arange(C), np.arange(C)] = sep / math.sqrt(2.0)
    else:
        means[:, 0] = sep * np.arange(C)
    return means


def synth_blobs(n: int, C: int, d: int, sep: float, seed) -> list[Sample]:
    """Draw ``n`` samples from ``C`` unit-variance isotropic Gaussians.

    Sample ``i`` belongs to class ``i % C``, which keeps class counts within
    one of each other.
    """
    if C < 2:
        raise ArgumentError(f"need at least 2 classes, got {C}")
    if n < C:
        raise ArgumentError(f"n={n} is smaller than the class count {C}")
    if d < 1:
        raise ArgumentError(f"d must be positive, got {d}")
    if not sep > 0:
        raise ArgumentError(f"sep must be positive, got {sep}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % C
    X = class_means(C, d, sep)[labels] + rng.standard_normal((n, d))
    return [Sample(i, X[i], int(labels[i])) for i in range(n)]


def build_dataset(spec: DatasetSpec) -> tuple[Dataset, PoolState]:
    """Materialise ``spec`` into a dataset and its initial pool split."""
    if spec.source == "synth":
        samples = synth_blobs(spec.n, spec.classes, spec.dims, spec.sep, spec.seed)
        pool = split_pool(samples, spec.split, spec.seed, spec.classes)
    else:
        samples, pool = load_csv(spec.source, spec)
    return Dataset(samples, spec.classes, name=spec.name), pool


def acquire(pool: PoolState, ids: Iterable[int]) -> PoolState:
    """Move ``ids`` from unlabeled to labeled, asking the oracle for labels."""
    ids = list(ids)
    if not ids:
        return pool
    seen = set()
    for i in ids:
        if i not in pool.unlabeled or i in seen:
            raise AcquisitionError(f"id {i} is not in the unlabeled pool")
        seen.add(i)
    observed = dict(pool.observed_label)
    for i in ids:
        observed[i] = pool.oracle[i]
    return replace(
        pool,
        labeled=pool.labeled | seen,
        unlabeled=pool.unlabeled - seen,
        observed_label=observed,
    )


def corrupt_labels(pool: PoolState, ids: Sequence[int], ratio: float, seed) -> PoolState:
    """Flip ``floor(ratio * len(ids))`` observed labels to a different class.

    The flipped ids are drawn without replacement; each new label is uniform
    over the classes other than the current observed one. Ground truth in
    ``pool.oracle`` is left alone.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ArgumentError(f"ratio must lie in [0, 1], got {ratio}")
    ids = list(ids)
    for i in ids:
        if i not in pool.labeled:
            raise AcquisitionError(f"id {i} is not labeled; only labeled ids can be corrupted")
    count = math.floor(ratio * len(ids))
    if count == 0:
        return pool
    rng = np.random.default_rng(seed)
    chosen = [ids[j] for j in rng.choice(len(ids), size=count, replace=False)]
    observed = dict(pool.observed_label)
    C = pool.num_classes
    for i in chosen:
        r = int(rng.integers(C - 1))
        cur = observed[i]
        observed[i] = r if r < cur else r + 1
    return replace(pool, observed_label=observed, corrupted=pool.corrupted | frozenset(chosen))


def write_split_manifest(path, pool: PoolState) -> None:
    atomic_write_json(path, pool.manifest())
