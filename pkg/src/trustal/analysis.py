"""Acquisition quality metrics and cross-run comparison tables.

All entropies are in nats.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import csv_text
from .acquisition import kmeanspp_seed
from .classifier import ModelParams, TrainConfig, accuracy, forward_batch, init_params, train
from .data_pool import Dataset, PoolState
from .engine import RoundReport, RunReport, phase_boundary, phase_summary
from .errors import AnalysisError, ArgumentError, ComparisonError


def entropy(p) -> float:
    """Shannon entropy of a distribution, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz))) + 0.0


@dataclass
class ReferenceModel:
    params: ModelParams
    ids: list[int]
    embeddings: np.ndarray
    probs: np.ndarray
    test_accuracy: float
    _row: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._row = {i: r for r, i in enumerate(self.ids)}

    def rows(self, ids) -> np.ndarray:
        try:
            return np.asarray([self._row[i] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise AnalysisError(f"id {exc.args[0]} is not in the reference train pool") from None


def train_reference(dataset: Dataset, pool: PoolState, config: TrainConfig, seed: int = 0) -> ReferenceModel:
    """Fit one model on the whole train pool (true labels), best dev epoch kept."""
    ids = sorted(pool.labeled | pool.unlabeled)
    X, y = dataset.features(ids), dataset.labels(ids)
    X_dev, y_dev = dataset.features(pool.dev), dataset.labels(pool.dev)
    rng = np.random.default_rng([seed, 100])
    init = init_params(config.arch, dataset.dims, dataset.num_classes, config.hidden, seed=rng)
    result = train(init, X, y, dataclasses.replace(config, alpha=0.0),
                   lambda p: accuracy(p, X_dev, y_dev), rng=rng)
    _, probs, emb = forward_batch(result.params, X)
    test_acc = accuracy(result.params, dataset.features(pool.test), dataset.labels(pool.test))
    return ReferenceModel(result.params, ids, emb, probs, test_acc)


def uncertainty_quality(ref: ReferenceModel, selections: Sequence[Sequence[int]]) -> list[float]:
    """Per round, mean predictive entropy of the selected ids under the reference model."""
    out = []
    for sel in selections:
        if len(sel) == 0:
            raise AnalysisError("empty selection")
        probs = ref.probs[ref.rows(sel)]
        out.append(float(np.mean([entropy(p) for p in probs])))
    return out


@dataclass
class ClusterAssignment:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list[float]

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _assign(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(len(points)), labels].sum())


def kmeans(points, k: int, seed=None, max_iters: int = 100) -> ClusterAssignment:
    """k-means++ seeding then Lloyd iterations until the assignment stops changing.

    An empty cluster keeps its previous centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ArgumentError("points must be 2-D")
    if k < 1 or len(points) < k:
        raise ArgumentError(f"need at least k={k} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    centroids = points[kmeanspp_seed(points, k, rng, first="uniform")].copy()
    labels, inertia = _assign(points, centroids)
    history = [inertia]
    for _ in range(max_iters):
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        new_labels, inertia = _assign(points, centroids)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return ClusterAssignment(centroids, labels, history)


def diversity_quality(ref: ReferenceModel, clusters: ClusterAssignment,
                      selections: Sequence[Sequence[int]]) -> list[float]:
    """Per round, entropy of the cluster histogram of the selected ids.

    ``clusters`` must be computed over ``ref.embeddings`` (row order of
    ``ref.ids``).
    """
    if len(clusters.labels) != len(ref.ids):
        raise AnalysisError("cluster assignment does not cover the reference train pool")
    out = []
    for sel in selections:
        if len(sel) == 0:
            raise AnalysisError("empty selection")
        counts = np.bincount(clusters.labels[ref.rows(sel)], minlength=clusters.k)
        out.append(entropy(counts / counts.sum()))
    return out


def quality_rows(report: RunReport, ref: ReferenceModel, clusters: ClusterAssignment) -> list[list]:
    selections = [r.acquired for r in report.rounds]
    unc = uncertainty_quality(ref, selections)
    div = diversity_quality(ref, clusters, selections)
    return [[r.round, r.labeled_fraction, len(r.acquired), u, d]
            for r, u, d in zip(report.rounds, unc, div)]


QUALITY_HEADER = ["round", "labeled_fraction", "selected", "uncertainty_entropy", "diversity_entropy"]


def quality_csv(rows) -> str:
    return csv_text(QUALITY_HEADER, [[a, repr(b), c, repr(u), repr(d)] for a, b, c, u, d in rows])


# ---------------------------------------------------------------------------
# comparison


def plateau(report: RunReport, metric: str = "test_accuracy", last: int = 3) -> float:
    """Mean of ``metric`` over the final ``last`` rounds."""
    if not report.rounds:
        raise AnalysisError("report has no rounds")
    return float(np.mean([getattr(r, metric) for r in report.rounds[-last:]]))


def rounds_to_threshold(report: RunReport, target: float, metric: str = "test_accuracy") -> int | None:
    """First round whose ``metric`` reaches ``target``; ``None`` if never."""
    for r in report.rounds:
        if getattr(r, metric) >= target:
            return r.round
    return None


def average_reports(reports: Sequence[RunReport]) -> RunReport:
    """Seed-average of reports sharing a configuration (per-round means).

    The phase boundary is re-detected on the averaged validation curve.
    """
    if not reports:
        raise AnalysisError("nothing to average")
    n_rounds = min(len(r.rounds) for r in reports)
    numeric = ("labeled_fraction", "test_accuracy", "val_accuracy", "mci")
    rounds = []
    for i in range(n_rounds):
        rs = [rep.rounds[i] for rep in reports]
        vals = {k: float(np.mean([getattr(r, k) for r in rs])) for k in numeric}
        rounds.append(RoundReport(
            round=rs[0].round,
            labeled_count=rs[0].labeled_count,
            forgetting_events=int(round(np.mean([r.forgetting_events for r in rs]))),
            learning_events=int(round(np.mean([r.learning_events for r in rs]))),
            teacher_generation=None, teacher_score=None, best_epoch=0, acquired=[],
            **vals,
        ))
    first = reports[0]
    boundary = phase_boundary([r.val_accuracy for r in rounds]) if len(rounds) >= 3 else None
    pairwise = [r.mean_pairwise_consistency for r in reports if r.mean_pairwise_consistency is not None]
    return RunReport(
        config=first.config, config_hash=first.config_hash, seed=-1,
        dataset_fingerprint=first.dataset_fingerprint, k=first.k, initial_count=first.initial_count,
        seed_round={}, rounds=rounds,
        mean_pairwise_consistency=float(np.mean(pairwise)) if pairwise else None,
        phase_boundary=boundary, phases=phase_summary(rounds, boundary),
        metadata={"seeds": [r.seed for r in reports]},
    )


def describe(report: RunReport, keys=("mode", "strategy", "train.alpha", "per_round_fraction")) -> str:
    parts = [f"{k}={report.config.get(k)}" for k in keys]
    if report.seed >= 0:
        parts.append(f"seed={report.seed}")
    return ",".join(parts)


@dataclass
class Comparison:
    baseline: int
    threshold: float
    plateau: float
    rows: list[dict]

    def row(self, i: int) -> dict:
        return self.rows[i]


def _phases(report: RunReport, boundary: int | None) -> dict:
    if boundary is None:
        boundary = report.phase_boundary
    return phase_summary(report.rounds, boundary)


def _delta(a, b):
    return None if a is None or b is None else a - b


def compare_runs(reports: Sequence[RunReport], baseline: int = 0, threshold: float = 1.0,
                 boundary: int | None = None, metric: str = "test_accuracy") -> Comparison:
    """Per-phase means, deltas against ``reports[baseline]``, and label efficiency.

    Each run is split at its own phase boundary unless ``boundary`` is given.
    Label efficiency is the first round at which a run's ``metric`` reaches
    ``threshold`` times the baseline plateau (mean of its last three rounds).
    """
    if len(reports) < 2:
        raise ComparisonError("need at least two reports to compare")
    fps = {r.dataset_fingerprint for r in reports}
    if len(fps) != 1:
        raise ComparisonError(f"reports come from different datasets: {sorted(fps)}")
    if not 0 <= baseline < len(reports):
        raise ComparisonError(f"baseline index {baseline} out of range")
    base = reports[baseline]
    target = threshold * plateau(base, metric)
    base_ph = _phases(base, boundary)
    rows = []
    for rep in reports:
        ph = _phases(rep, boundary)
        r2t = rounds_to_threshold(rep, target, metric)
        row = {
            "run": describe(rep),
            "mode": rep.config.get("mode"),
            "phase_boundary": rep.phase_boundary if boundary is None else boundary,
            "rounds_to_threshold": r2t,
            "labeled_fraction_at_threshold": (
                None if r2t is None else next(r.labeled_fraction for r in rep.rounds if r.round == r2t)),
        }
        for phase in ("stable", "saturated"):
            for key in ("acc", "mci"):
                row[f"{phase}_{key}"] = ph[phase][key]
                row[f"{phase}_{key}_delta"] = _delta(ph[phase][key], base_ph[phase][key])
        rows.append(row)
    return Comparison(baseline, threshold, target, rows)


def signed(value, delta, digits: int) -> str:
    """``0.788(+0.011)``-style cell; blank when the phase is empty."""
    if value is None:
        return ""
    if delta is None:
        return f"{value:.{digits}f}"
    return f"{value:.{digits}f}({delta:+.{digits}f})"


COMPARE_HEADER = [
    "run", "mode", "phase_boundary",
    "stable_acc", "stable_acc_delta", "stable_mci", "stable_mci_delta",
    "saturated_acc", "saturated_acc_delta", "saturated_mci", "saturated_mci_delta",
    "stable_acc_cell", "stable_mci_cell", "saturated_acc_cell", "saturated_mci_cell",
    "rounds_to_threshold", "labeled_fraction_at_threshold",
]


def comparison_csv(comp: Comparison) -> str:
    def num(v):
        return "" if v is None else repr(v)

    rows = []
    for r in comp.rows:
        rows.append([
            r["run"], r["mode"], num(r["phase_boundary"]),
            num(r["stable_acc"]), num(r["stable_acc_delta"]), num(r["stable_mci"]), num(r["stable_mci_delta"]),
            num(r["saturated_acc"]), num(r["saturated_acc_delta"]),
            num(r["saturated_mci"]), num(r["saturated_mci_delta"]),
            signed(r["stable_acc"], r["stable_acc_delta"], 3), signed(r["stable_mci"], r["stable_mci_delta"], 2),
            signed(r["saturated_acc"], r["saturated_acc_delta"], 3),
            signed(r["saturated_mci"], r["saturated_mci_delta"], 2),
            num(r["rounds_to_threshold"]), num(r["labeled_fraction_at_threshold"]),
        ])
    return csv_text(COMPARE_HEADER, rows)
