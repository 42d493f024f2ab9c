"""Active-learning rounds: acquire, pick a teacher, label, retrain, record.

Randomness comes from independent named streams derived from one master
seed, keyed by ``(seed, stream, round)``. Parameter initialisation,
mini-batch order, acquisition and label corruption therefore never share a
generator. A distillation run with ``alpha = 0`` follows exactly the same
parameter trajectory as the baseline, and switching noise on changes
nothing before the first corrupted round.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._io import atomic_write_json, atomic_write_text
from .acquisition import AcquisitionRequest, get_strategy
from .classifier import ModelParams, accuracy, init_params, predict, train
from .config import RunConfig, config_hash, to_flat
from .consistency import (
    AccMatrix,
    correct_inconsistency,
    forgetting_events,
    learning_events,
    mci,
    mean_pairwise_consistency,
)
from .data_pool import Dataset, PoolState, acquire, build_dataset, corrupt_labels, write_split_manifest
from .errors import AnalysisError, ArgumentError
from .teacher import (
    ModelSnapshot,
    PseudoLabelCache,
    SnapshotStore,
    nc_scores,
    pseudo_labels,
    select_ensemble,
    select_mc,
    select_nc,
    trace_csv,
)

log = logging.getLogger(__name__)

STREAMS = {"init": 0, "batching": 1, "acquisition": 2, "corruption": 3}


def stream(seed: int, name: str, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name], t])


@dataclass
class RoundReport:
    round: int
    labeled_count: int
    labeled_fraction: float
    test_accuracy: float
    val_accuracy: float
    mci: float
    forgetting_events: int
    learning_events: int
    teacher_generation: int | None
    teacher_score: float | None
    best_epoch: int
    acquired: list[int]
    corrupted: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self, timing: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not timing:
            d.pop("wall_time")
        return d

    def metrics(self) -> dict:
        """Everything that must agree between runs on identical trajectories."""
        d = self.to_dict(timing=False)
        d.pop("teacher_generation")
        d.pop("teacher_score")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoundReport":
        return cls(**d)


@dataclass
class RunReport:
    config: dict
    config_hash: str
    seed: int
    dataset_fingerprint: str
    k: int
    initial_count: int
    seed_round: dict
    rounds: list[RoundReport]
    mean_pairwise_consistency: float | None
    phase_boundary: int | None
    phases: dict
    truncated: bool = False
    noise_start: int | None = None
    cache: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    acc_matrix: AccMatrix | None = field(default=None, repr=False, compare=False)
    teacher_trace: list = field(default_factory=list, repr=False, compare=False)
    final_pool: PoolState | None = field(default=None, repr=False, compare=False)

    @property
    def mode(self) -> str:
        return self.config["mode"]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "dataset_fingerprint": self.dataset_fingerprint,
            "k": self.k,
            "initial_count": self.initial_count,
            "seed_round": self.seed_round,
            "rounds": [r.to_dict(timing=False) for r in self.rounds],
            "mean_pairwise_consistency": self.mean_pairwise_consistency,
            "phase_boundary": self.phase_boundary,
            "phases": self.phases,
            "truncated": self.truncated,
            "noise_start": self.noise_start,
            "cache": self.cache,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        wall = d.get("metadata", {}).get("round_wall_time", [])
        rounds = []
        for i, r in enumerate(d.pop("rounds")):
            r = dict(r)
            r.setdefault("wall_time", wall[i] if i < len(wall) else 0.0)
            rounds.append(RoundReport.from_dict(r))
        return cls(rounds=rounds, **d)


def phase_boundary(val_accuracy: Sequence[float]) -> int:
    """Last round of the stable phase from a 1-based validation curve.

    ``W_j`` is the mean over rounds ``j, j+1, j+2``. The boundary is the
    first ``j >= 2`` with ``W_j <= W_{j-1}``; if the smoothed curve never
    stops increasing, it is the final round.
    """
    v = [float(x) for x in val_accuracy]
    if len(v) < 3:
        raise AnalysisError(f"phase detection needs at least 3 rounds, got {len(v)}")
    windows = [sum(v[j:j + 3]) / 3.0 for j in range(len(v) - 2)]
    for j in range(1, len(windows)):
        if windows[j] <= windows[j - 1]:
            return j + 1
    return len(v)


def detect_phases(report) -> int:
    """Phase boundary of a :class:`RunReport` (or of a raw accuracy list)."""
    if isinstance(report, RunReport):
        return phase_boundary([r.val_accuracy for r in report.rounds])
    return phase_boundary(report)


def phase_summary(rounds: Sequence[RoundReport], boundary: int | None) -> dict:
    def avg(rs, key):
        return float(np.mean([getattr(r, key) for r in rs])) if rs else None

    if boundary is None:
        stable, saturated = list(rounds), []
    else:
        stable = [r for r in rounds if r.round <= boundary]
        saturated = [r for r in rounds if r.round > boundary]
    return {
        name: {"rounds": [r.round for r in rs], "acc": avg(rs, "test_accuracy"), "mci": avg(rs, "mci")}
        for name, rs in (("stable", stable), ("saturated", saturated))
    }


class _Run:
    """State of one active-learning run; :meth:`execute` drives the rounds."""

    def __init__(self, config: RunConfig, seed: int, noise_start: int | None):
        self.config = config
        self.seed = seed
        self.noise_start = noise_start
        self.dataset, self.pool = build_dataset(config.dataset)
        ds, pool = self.dataset, self.pool
        self.X_dev = ds.features(pool.dev)
        self.y_dev = ds.labels(pool.dev)
        self.X_test = ds.features(pool.test)
        self.y_test = ds.labels(pool.test)
        n_train = pool.train_size
        self.k = max(1, int(round(config.per_round_fraction * n_train)))
        self.initial_count = max(1, int(round(config.initial_fraction * n_train)))
        self.mat = AccMatrix(self.y_dev, pool.dev)
        self.store = SnapshotStore()
        self.cache = PseudoLabelCache()
        self.trace: list[dict] = []

    def dev_eval(self, params: ModelParams) -> float:
        return accuracy(params, self.X_dev, self.y_dev)

    def fit(self, t: int, teacher=None, queries=()) -> tuple[ModelParams, int, float]:
        cfg = self.config.train
        ids = self.pool.labeled_ids()
        X = self.dataset.features(ids)
        y = np.asarray([self.pool.observed_label[i] for i in ids], dtype=np.int64)
        teacher_probs = teacher_mask = None
        if teacher is not None:
            teacher_probs = teacher(ids)
            if self.config.distill_scope == "queries":
                q = set(queries)
                teacher_mask = np.asarray([1.0 if i in q else 0.0 for i in ids])
        init = init_params(cfg.arch, self.dataset.dims, self.dataset.num_classes, cfg.hidden,
                           seed=stream(self.seed, "init", t))
        result = train(init, X, y, cfg, self.dev_eval, teacher_probs, teacher_mask,
                       rng=stream(self.seed, "batching", t))
        best_val = result.val_accuracy[result.best_epoch - 1]
        return result.params, result.best_epoch, best_val

    def record(self, t: int, params: ModelParams, val_acc: float) -> None:
        preds = predict(params, self.X_dev)
        self.mat.append_predictions(preds)
        self.store.add(ModelSnapshot(t, params, preds == self.y_dev, preds, val_acc))

    def choose_teacher(self, t: int):
        mode = self.config.mode
        if mode == "baseline":
            return None, None, None
        if mode == "trustal_mc":
            snap = select_mc(self.store)
            self.trace.append({"round": t, "chosen": snap.generation, "scores": {}})
            return self._provider(snap), snap.generation, None
        if mode == "trustal_nc":
            prev = t - 1
            ci = correct_inconsistency(self.mat, prev) if prev >= 1 else np.zeros(self.mat.m)
            scores = nc_scores(self.store, ci)
            snap = select_nc(self.store, ci)
            self.trace.append({"round": t, "chosen": snap.generation, "scores": scores})
            return self._provider(snap), snap.generation, scores.get(snap.generation)
        if mode == "trustal_ensemble":
            self.trace.append({"round": t, "chosen": -1,
                               "scores": {s.generation: 1.0 / len(self.store) for s in self.store}})
            return select_ensemble(self.store, self.cache, self.dataset), None, None
        raise ArgumentError(f"unknown mode {mode!r}")

    def _provider(self, snap):
        return lambda ids: pseudo_labels(self.cache, snap, ids, self.dataset)

    def execute(self) -> RunReport:
        cfg = self.config
        started = datetime.now(timezone.utc).isoformat()
        tick = time.perf_counter()

        # seed generation: random initial acquisition, CE-only training
        unl = self.pool.unlabeled_ids()
        if self.initial_count > len(unl):
            raise ArgumentError("initial acquisition exceeds the train pool")
        rng = stream(self.seed, "acquisition", 0)
        first = [unl[i] for i in rng.choice(len(unl), size=self.initial_count, replace=False)]
        self.pool = acquire(self.pool, first)
        params, best_epoch, val = self.fit(0)
        self.record(0, params, val)
        seed_round = {
            "labeled_count": len(self.pool.labeled),
            "test_accuracy": accuracy(params, self.X_test, self.y_test),
            "val_accuracy": val,
            "best_epoch": best_epoch,
            "acquired": first,
        }
        seed_wall = time.perf_counter() - tick

        strategy = get_strategy(cfg.strategy)
        rounds: list[RoundReport] = []
        truncated = False
        n_train = self.pool.train_size
        for t in range(1, cfg.rounds + 1):
            tick = time.perf_counter()
            if len(self.pool.unlabeled) < self.k:
                truncated = True
                log.info("unlabeled pool exhausted before round %d", t)
                break
            acq_model = self.store.latest().params
            req = AcquisitionRequest(acq_model, self.pool, self.dataset, self.k,
                                     seed=stream(self.seed, "acquisition", t))
            queries = [int(i) for i in strategy(req)]
            teacher, teacher_gen, teacher_score = self.choose_teacher(t)
            self.pool = acquire(self.pool, queries)
            corrupted: list[int] = []
            if cfg.noise is not None and self.noise_start is not None and t >= self.noise_start:
                before = self.pool.corrupted
                self.pool = corrupt_labels(self.pool, queries, cfg.noise.ratio,
                                           stream(self.seed, "corruption", t))
                corrupted = sorted(self.pool.corrupted - before)
            params, best_epoch, val = self.fit(t, teacher, queries)
            self.record(t, params, val)
            report = RoundReport(
                round=t,
                labeled_count=len(self.pool.labeled),
                labeled_fraction=len(self.pool.labeled) / n_train,
                test_accuracy=accuracy(params, self.X_test, self.y_test),
                val_accuracy=val,
                mci=mci(self.mat, t),
                forgetting_events=forgetting_events(self.mat, t - 1, t),
                learning_events=learning_events(self.mat, t - 1, t),
                teacher_generation=teacher_gen,
                teacher_score=teacher_score,
                best_epoch=best_epoch,
                acquired=queries,
                corrupted=corrupted,
                wall_time=time.perf_counter() - tick,
            )
            rounds.append(report)
            log.info("round %d: labeled=%d test_acc=%.4f val_acc=%.4f mci=%.3f teacher=%s",
                     t, report.labeled_count, report.test_accuracy, report.val_accuracy,
                     report.mci, teacher_gen)

        if cfg.phase_round is not None:
            boundary = min(cfg.phase_round, len(rounds)) if rounds else None
        elif len(rounds) >= 3:
            boundary = detect_phases([r.val_accuracy for r in rounds])
        else:
            boundary = None
        return RunReport(
            config=to_flat(cfg),
            config_hash=config_hash(cfg),
            seed=self.seed,
            dataset_fingerprint=self.dataset.fingerprint(),
            k=self.k,
            initial_count=self.initial_count,
            seed_round=seed_round,
            rounds=rounds,
            mean_pairwise_consistency=mean_pairwise_consistency(self.mat),
            phase_boundary=boundary,
            phases=phase_summary(rounds, boundary),
            truncated=truncated,
            noise_start=self.noise_start,
            cache=self.cache.stats(),
            metadata={
                "started": started,
                "finished": datetime.now(timezone.utc).isoformat(),
                "seed_wall_time": seed_wall,
                "round_wall_time": [r.wall_time for r in rounds],
                "version": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            acc_matrix=self.mat,
            teacher_trace=self.trace,
            final_pool=self.pool,
        )


def _seed(config: RunConfig, seed: int | None) -> int:
    return config.seeds[0] if seed is None else int(seed)


def _without_noise(config: RunConfig) -> RunConfig:
    return dataclasses.replace(config, noise=None)


def run_baseline(config: RunConfig, seed: int | None = None) -> RunReport:
    """Conventional loop: acquire with the last model, retrain on oracle labels."""
    if config.mode != "baseline":
        raise ArgumentError(f"run_baseline needs mode=baseline, got {config.mode}")
    return _Run(_without_noise(config), _seed(config, seed), None).execute()


def run_trustal(config: RunConfig, seed: int | None = None) -> RunReport:
    """Distillation loop: like the baseline but trained on CE + alpha * KL to a teacher."""
    if not config.mode.startswith("trustal_"):
        raise ArgumentError(f"run_trustal needs a trustal mode, got {config.mode}")
    return _Run(_without_noise(config), _seed(config, seed), None).execute()


def resolve_noise_start(config: RunConfig, seed: int | None = None) -> int:
    """First corrupted round.

    An integer ``noise.start`` is used as is. ``"phase"`` uses the configured
    ``phase_round`` if set, else runs the noise-free configuration once and
    starts right after its detected boundary.
    """
    start = config.noise.start
    if start != "phase":
        return int(start)
    if config.phase_round is not None:
        return config.phase_round + 1
    pilot = _Run(_without_noise(config), _seed(config, seed), None).execute()
    if pilot.phase_boundary is None:
        raise AnalysisError("cannot place noise after the stable phase: fewer than 3 rounds")
    return pilot.phase_boundary + 1


def run_noise_experiment(config: RunConfig, seed: int | None = None) -> RunReport:
    """The configured mode with each post-start acquisition batch partly mislabeled."""
    if config.noise is None:
        raise ArgumentError("run_noise_experiment needs a noise configuration")
    seed = _seed(config, seed)
    return _Run(config, seed, resolve_noise_start(config, seed)).execute()


def run(config: RunConfig, seed: int | None = None) -> RunReport:
    if config.noise is not None:
        return run_noise_experiment(config, seed)
    if config.mode == "baseline":
        return run_baseline(config, seed)
    return run_trustal(config, seed)


def _run_job(job):
    config, seed = job
    return run(config, seed)


def run_many(jobs: Sequence[tuple[RunConfig, int]], workers: int | None = None) -> list[RunReport]:
    """Execute independent ``(config, seed)`` runs, in order of ``jobs``.

    ``workers=1`` (or a single job) runs in-process; otherwise a process
    pool of ``workers`` (default: CPU count) is used.
    """
    import os

    jobs = list(jobs)
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_job, jobs))


def rounds_jsonl(report: RunReport) -> str:
    return "".join(json.dumps(r.to_dict(timing=False), sort_keys=True) + "\n" for r in report.rounds)


def write_run(report: RunReport, outdir) -> Path:
    """Write ``rounds.jsonl``, ``run.json``, ``accmatrix.csv``, ``teacher_trace.csv``, ``split.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(outdir / "rounds.jsonl", rounds_jsonl(report))
    if report.acc_matrix is not None:
        report.acc_matrix.write_csv(outdir / "accmatrix.csv")
    atomic_write_text(outdir / "teacher_trace.csv", trace_csv(report.teacher_trace))
    if report.final_pool is not None:
        write_split_manifest(outdir / "split.json", report.final_pool)
    atomic_write_json(outdir / "run.json", report.to_dict())
    return outdir


def read_run(outdir) -> RunReport:
    outdir = Path(outdir)
    d = json.loads((outdir / "run.json").read_text(encoding="utf-8"))
    return RunReport.from_dict(d)


def read_rounds(outdir) -> list[RoundReport]:
    lines = (Path(outdir) / "rounds.jsonl").read_text(encoding="utf-8").splitlines()
    return [RoundReport.from_dict(json.loads(line)) for line in lines if line.strip()]

