"""Acquisition strategies: pick ``k`` unlabeled ids using the current model.

All strategies return exactly ``k`` distinct ids drawn from the unlabeled
pool and are deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import ModelParams, forward_batch
from .data_pool import Dataset, PoolState
from .errors import ArgumentError, BudgetError, PreconditionError


@dataclass(frozen=True)
class AcquisitionRequest:
    model: ModelParams
    pool: PoolState
    dataset: Dataset
    k: int
    seed: object = None

    def __post_init__(self):
        if self.k < 1:
            raise BudgetError(f"budget k must be at least 1, got {self.k}")
        if self.k > len(self.pool.unlabeled):
            raise BudgetError(f"budget k={self.k} exceeds the {len(self.pool.unlabeled)} unlabeled samples")


def random_select(req: AcquisitionRequest) -> list[int]:
    ids = req.pool.unlabeled_ids()
    rng = np.random.default_rng(req.seed)
    picked = rng.choice(len(ids), size=req.k, replace=False)
    return [ids[i] for i in picked]


def least_confident(ids, probs, k: int) -> list[int]:
    """The ``k`` ids with the smallest max-probability, ties by ascending id."""
    ids = np.asarray(ids)
    conf = np.asarray(probs).max(axis=1)
    order = np.lexsort((ids, conf))
    return [int(i) for i in ids[order[:k]]]


def conf_select(req: AcquisitionRequest) -> list[int]:
    ids = req.pool.unlabeled_ids()
    _, probs, _ = forward_batch(req.model, req.dataset.features(ids))
    return least_confident(ids, probs, req.k)


def _min_distance(points: np.ndarray, centers: np.ndarray, chunk: int = 64) -> np.ndarray:
    # exact differences rather than the |a|^2 + |b|^2 - 2ab expansion, in
    # chunks to bound memory
    out = np.full(len(points), np.inf)
    for start in range(0, len(centers), chunk):
        diff = points[:, None, :] - centers[None, start:start + chunk, :]
        out = np.minimum(out, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).min(axis=1))
    return out


def k_center_greedy(candidates: np.ndarray, centers: np.ndarray, k: int) -> list[int]:
    """Furthest-first traversal.

    Returns row indices into ``candidates``. Each step takes the candidate
    whose distance to its nearest center (initial centers plus everything
    already chosen) is largest; ties go to the lowest row.
    """
    if len(centers) == 0:
        raise PreconditionError("k-center greedy needs at least one initial center")
    min_dist = _min_distance(candidates, centers)
    chosen = []
    taken = np.zeros(len(candidates), dtype=bool)
    for _ in range(k):
        score = np.where(taken, -np.inf, min_dist)
        j = int(np.argmax(score))
        chosen.append(j)
        taken[j] = True
        step = candidates - candidates[j]
        min_dist = np.minimum(min_dist, np.sqrt(np.einsum("ij,ij->i", step, step)))
    return chosen


def coreset_select(req: AcquisitionRequest) -> list[int]:
    if not req.pool.labeled:
        raise PreconditionError("coreset selection needs a non-empty labeled pool")
    ids = req.pool.unlabeled_ids()
    _, _, emb_u = forward_batch(req.model, req.dataset.features(ids))
    _, _, emb_l = forward_batch(req.model, req.dataset.features(req.pool.labeled_ids()))
    return [ids[j] for j in k_center_greedy(emb_u, emb_l, req.k)]


def gradient_embedding(probs: np.ndarray, penult: np.ndarray) -> np.ndarray:
    """Last-layer loss gradient under the model's own argmax label.

    Row ``n`` is ``(p_n - onehot(argmax p_n)) outer penult_n`` flattened to
    length ``C * h``.
    """
    n, C = probs.shape
    residual = probs.copy()
    residual[np.arange(n), np.argmax(probs, axis=1)] -= 1.0
    return (residual[:, :, None] * penult[:, None, :]).reshape(n, -1)


def kmeanspp_seed(points: np.ndarray, k: int, rng, first: str = "norm") -> list[int]:
    """k-means++ seeding by D^2 sampling; returns ``k`` distinct row indices.

    ``first="norm"`` draws the first center with probability proportional to
    the squared norm (BADGE's gradient-magnitude-aware start); ``"uniform"``
    is the textbook variant. Every draw uses one ``rng.random()`` and
    inverse-CDF lookup. When all remaining weight is zero the draw falls
    back to uniform over the rows not yet chosen.
    """
    n = len(points)
    if not 1 <= k <= n:
        raise ArgumentError(f"cannot seed {k} centers from {n} points")
    rng = np.random.default_rng(rng)
    points = np.asarray(points, dtype=np.float64)
    taken = np.zeros(n, dtype=bool)
    if first == "norm":
        weights = np.einsum("ij,ij->i", points, points)
    elif first == "uniform":
        weights = np.ones(n)
    else:
        raise ArgumentError(f"unknown first-center rule {first!r}")
    chosen: list[int] = []
    d2 = None
    for _ in range(k):
        w = np.where(taken, 0.0, weights if d2 is None else d2)
        cum = np.cumsum(w)
        if cum[-1] <= 0.0:
            w = (~taken).astype(np.float64)
            cum = np.cumsum(w)
        u = rng.random() * cum[-1]
        j = min(int(np.searchsorted(cum, u, side="right")), n - 1)
        while w[j] == 0.0:
            # u rounded up to the total; step back to the last weighted row
            j -= 1
        chosen.append(j)
        taken[j] = True
        diff = points - points[j]
        dj = np.einsum("ij,ij->i", diff, diff)
        d2 = dj if d2 is None else np.minimum(d2, dj)
    return chosen


def badge_select(req: AcquisitionRequest) -> list[int]:
    ids = req.pool.unlabeled_ids()
    _, probs, penult = forward_batch(req.model, req.dataset.features(ids))
    emb = gradient_embedding(probs, penult)
    return [ids[j] for j in kmeanspp_seed(emb, req.k, req.seed, first="norm")]


STRATEGIES = {
    "random": random_select,
    "conf": conf_select,
    "coreset": coreset_select,
    "badge": badge_select,
}


def get_strategy(name: str):
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ArgumentError(f"unknown acquisition strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
