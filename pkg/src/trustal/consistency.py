"""Prediction history of every generation on the fixed dev set.

Row ``t`` of an :class:`AccMatrix` is the dev-set correctness of the model
trained at generation ``t`` (``t = 0`` is the seed model). Predicted labels
are kept next to the boolean rows so that pairwise agreement metrics never
need a model re-evaluation.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .classifier import ModelParams, predict
from .errors import ArgumentError, GenerationIndexError, ShapeError


class AccMatrix:
    def __init__(self, labels: Sequence[int], dev_ids: Sequence[int] | None = None):
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.ndim != 1 or len(self.labels) == 0:
            raise ArgumentError("dev labels must be a non-empty vector")
        self.dev_ids = list(range(len(self.labels))) if dev_ids is None else list(dev_ids)
        if len(self.dev_ids) != len(self.labels):
            raise ShapeError("dev ids and labels differ in length")
        self._preds: list[np.ndarray] = []

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def generations(self) -> int:
        return len(self._preds)

    @property
    def last(self) -> int:
        return len(self._preds) - 1

    @property
    def preds(self) -> np.ndarray:
        return np.array(self._preds, dtype=np.int64).reshape(-1, self.m)

    @property
    def acc(self) -> np.ndarray:
        return self.preds == self.labels[None, :]

    def append_predictions(self, preds) -> "AccMatrix":
        preds = np.asarray(preds, dtype=np.int64)
        if preds.shape != (self.m,):
            raise ShapeError(f"expected {self.m} predictions, got shape {preds.shape}")
        self._preds.append(preds.copy())
        return self

    @classmethod
    def from_correctness(cls, rows) -> "AccMatrix":
        """Build a matrix from a boolean history alone (labels all zero).

        Correct entries predict label 0, wrong ones predict 1.
        """
        rows = np.asarray(rows, dtype=bool)
        if rows.ndim != 2:
            raise ShapeError("history must be 2-D (generations x dev samples)")
        mat = cls(np.zeros(rows.shape[1], dtype=np.int64))
        for r in rows:
            mat.append_predictions(np.where(r, 0, 1))
        return mat

    def row(self, t: int) -> np.ndarray:
        self._check(t)
        return self._preds[t] == self.labels

    def _check(self, t: int) -> None:
        if not 0 <= t <= self.last:
            raise GenerationIndexError(f"generation {t} not recorded (have 0..{self.last})")

    def to_csv(self) -> str:
        header = ["generation"] + [str(i) for i in self.dev_ids]
        rows = [[t] + [int(v) for v in r] for t, r in enumerate(self.acc)]
        return csv_text(header, rows)

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def record_generation(mat: AccMatrix, params: ModelParams, X_dev) -> AccMatrix:
    """Append the dev predictions of ``params`` as the next generation."""
    return mat.append_predictions(predict(params, X_dev))


def _check_pair(mat: AccMatrix, t1: int, t2: int) -> None:
    mat._check(t1)
    mat._check(t2)
    if not t1 < t2:
        raise GenerationIndexError(f"need t1 < t2, got {t1} and {t2}")


def forgetting_events(mat: AccMatrix, t1: int, t2: int) -> int:
    """Dev samples correct at ``t1`` and wrong at ``t2``."""
    _check_pair(mat, t1, t2)
    return int(np.sum(mat.row(t1) & ~mat.row(t2)))


def learning_events(mat: AccMatrix, t1: int, t2: int) -> int:
    _check_pair(mat, t1, t2)
    return int(np.sum(~mat.row(t1) & mat.row(t2)))


def correct_inconsistency(mat: AccMatrix, t: int) -> np.ndarray:
    """Per dev sample, how many of generations ``0..t-1`` were right where ``t`` is wrong."""
    mat._check(t)
    if t < 1:
        raise GenerationIndexError("generation 0 has no predecessors")
    acc = mat.acc
    return np.where(acc[t], 0, acc[:t].sum(axis=0)).astype(np.int64)


def mci(mat: AccMatrix, t: int) -> float:
    """Dev-wide correct inconsistency divided by the predecessor count ``t``."""
    return float(correct_inconsistency(mat, t).sum()) / t


def correct_consistency(mat: AccMatrix, m_gen: int, n_gen: int) -> float:
    """Fraction of dev samples that both generations classify correctly."""
    mat._check(m_gen)
    mat._check(n_gen)
    return float(np.mean(mat.row(m_gen) & mat.row(n_gen)))


def mean_pairwise_consistency(mat: AccMatrix) -> float | None:
    pairs = list(itertools.combinations(range(mat.generations), 2))
    if not pairs:
        return None
    return float(np.mean([correct_consistency(mat, a, b) for a, b in pairs]))
