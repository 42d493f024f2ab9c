"""Predecessor snapshots and teacher selection for distillation.

Selection rules:

* most recent (``select_mc``): the acquisition model itself.
* consistency-weighted (``select_nc``): softmax the current model's
  per-sample correct-inconsistency counts into importance weights, score each
  older snapshot by its weighted dev accuracy, keep the best.
* ensemble (``select_ensemble``): average the distributions of every
  snapshot; a comparison baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .classifier import ModelParams, predict_proba
from .data_pool import Dataset
from .errors import ArgumentError, SelectionError, ShapeError


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    generation: int
    params: ModelParams
    dev_acc: np.ndarray
    dev_preds: np.ndarray
    val_accuracy: float


class SnapshotStore:
    """Append-only list of snapshots with strictly increasing generations."""

    def __init__(self, snapshots: Sequence[ModelSnapshot] = ()):
        self._snaps: list[ModelSnapshot] = []
        for s in snapshots:
            self.add(s)

    def add(self, snap: ModelSnapshot) -> None:
        if self._snaps and snap.generation <= self._snaps[-1].generation:
            raise ArgumentError(
                f"generation {snap.generation} does not follow {self._snaps[-1].generation}")
        self._snaps.append(snap)

    def __len__(self):
        return len(self._snaps)

    def __iter__(self):
        return iter(self._snaps)

    def __getitem__(self, i) -> ModelSnapshot:
        return self._snaps[i]

    def latest(self) -> ModelSnapshot:
        if not self._snaps:
            raise SelectionError("snapshot store is empty")
        return self._snaps[-1]

    def by_generation(self, gen: int) -> ModelSnapshot:
        for s in self._snaps:
            if s.generation == gen:
                return s
        raise SelectionError(f"no snapshot for generation {gen}")

    def spill(self, directory) -> None:
        """Write every snapshot to ``directory/gen_XXXX.json``."""
        directory = Path(directory)
        for s in self._snaps:
            payload = {
                "generation": s.generation,
                "val_accuracy": s.val_accuracy,
                "dev_preds": s.dev_preds.tolist(),
                "dev_acc": s.dev_acc.astype(int).tolist(),
                "params": s.params.to_dict(),
            }
            atomic_write_text(directory / f"gen_{s.generation:04d}.json", json.dumps(payload))

    @classmethod
    def load(cls, directory) -> "SnapshotStore":
        store = cls()
        for path in sorted(Path(directory).glob("gen_*.json")):
            obj = json.loads(path.read_text(encoding="utf-8"))
            store.add(ModelSnapshot(
                generation=obj["generation"],
                params=ModelParams.from_dict(obj["params"]),
                dev_acc=np.asarray(obj["dev_acc"], dtype=bool),
                dev_preds=np.asarray(obj["dev_preds"], dtype=np.int64),
                val_accuracy=obj["val_accuracy"],
            ))
        return store


def select_mc(store: SnapshotStore) -> ModelSnapshot:
    return store.latest()


def importance_weights(ci) -> np.ndarray:
    """Softmax of the correct-inconsistency vector (max-shifted)."""
    ci = np.asarray(ci, dtype=np.float64)
    if ci.ndim != 1 or ci.size == 0:
        raise ArgumentError("correct-inconsistency vector must be non-empty and 1-D")
    e = np.exp(ci - ci.max())
    return e / e.sum()


def teacher_score(weights, candidate_acc) -> float:
    """Importance-weighted dev accuracy of a candidate, divided by ``m``."""
    weights = np.asarray(weights, dtype=np.float64)
    acc = np.asarray(candidate_acc, dtype=np.float64)
    if weights.shape != acc.shape:
        raise ShapeError(f"weights {weights.shape} and accuracy {acc.shape} differ")
    # fsum is correctly rounded, so candidates whose weighted terms form the
    # same multiset score bit-identically and the recency tie-break holds
    return math.fsum(weights * acc) / len(weights)


def nc_scores(store: SnapshotStore, current_ci) -> dict[int, float]:
    """Score every selectable snapshot: all but the newest one."""
    store.latest()
    w = importance_weights(current_ci)
    return {s.generation: teacher_score(w, s.dev_acc) for s in list(store)[:-1]}


def select_nc(store: SnapshotStore, current_ci) -> ModelSnapshot:
    """Pick the older snapshot that best covers the current model's forgotten samples.

    Candidates are every snapshot except the newest one (the acquisition
    model). Ties go to the most recent candidate. With no candidate the
    newest snapshot is returned, as in :func:`select_mc`.
    """
    scores = nc_scores(store, current_ci)
    if not scores:
        return select_mc(store)
    best = max(scores, key=lambda g: (scores[g], g))
    return store.by_generation(best)


class PseudoLabelCache:
    """Memo of teacher distributions keyed by ``(generation, sample_id)``."""

    def __init__(self):
        self._store: dict[tuple[int, int], np.ndarray] = {}
        self.hits = 0
        self.misses = 0
        self.forward_calls = 0

    def __len__(self):
        return len(self._store)

    @property
    def hit_ratio(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def stats(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "forward_calls": self.forward_calls,
                "hit_ratio": self.hit_ratio}


def pseudo_labels(cache: PseudoLabelCache, snapshot: ModelSnapshot, ids: Sequence[int],
                  dataset: Dataset) -> np.ndarray:
    """Teacher distributions for ``ids``; only cache misses hit the model."""
    gen = snapshot.generation
    ids = list(ids)
    missing = [i for i in ids if (gen, i) not in cache._store]
    cache.hits += len(ids) - len(missing)
    cache.misses += len(missing)
    if missing:
        cache.forward_calls += 1
        probs = predict_proba(snapshot.params, dataset.features(missing))
        for i, p in zip(missing, probs):
            cache._store[(gen, i)] = p
    C = snapshot.params.num_classes
    if not ids:
        return np.zeros((0, C))
    return np.vstack([cache._store[(gen, i)] for i in ids])


TeacherProvider = Callable[[Sequence[int]], np.ndarray]


def single_teacher(cache: PseudoLabelCache, snapshot: ModelSnapshot, dataset: Dataset) -> TeacherProvider:
    return lambda ids: pseudo_labels(cache, snapshot, ids, dataset)


def select_ensemble(store: SnapshotStore, cache: PseudoLabelCache, dataset: Dataset) -> TeacherProvider:
    """Provider returning the arithmetic mean of every snapshot's distribution."""
    snaps = list(store)
    if not snaps:
        raise SelectionError("snapshot store is empty")

    def provide(ids):
        total = pseudo_labels(cache, snaps[0], ids, dataset).copy()
        for s in snaps[1:]:
            total += pseudo_labels(cache, s, ids, dataset)
        return total / len(snaps)

    return provide


def trace_csv(trace: Sequence[dict]) -> str:
    """Teacher-selection trace: one row per (round, candidate).

    ``trace`` entries carry ``round``, ``chosen`` and a ``scores`` mapping
    (possibly empty, e.g. for the most-recent rule).
    """
    rows = []
    for entry in trace:
        scores = entry.get("scores") or {}
        if not scores:
            rows.append([entry["round"], entry["chosen"], entry["chosen"], "", 1])
        for gen in sorted(scores):
            rows.append([entry["round"], entry["chosen"], gen, repr(scores[gen]),
                         int(gen == entry["chosen"])])
    return csv_text(["round", "chosen_generation", "candidate_generation", "score", "selected"], rows)
