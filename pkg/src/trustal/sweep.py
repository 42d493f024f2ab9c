"""Hyperparameter sweeps: grid x seeds, with matching baselines for deltas.

Every distillation grid point is compared against the baseline run that
shares its configuration apart from the distillation-only keys (mode,
alpha, distillation scope). Missing baselines are added to the sweep
automatically, once per distinct configuration.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ._io import atomic_write_text, csv_text
from .analysis import average_reports, compare_runs, signed
from .config import build, resolve
from .engine import RunReport, run_many, write_run
from .errors import ConfigError

DISTILL_ONLY = ("mode", "train.alpha", "distill_scope")


@dataclass
class SweepPoint:
    name: str
    params: dict[str, Any]
    flat: dict[str, Any]

    @property
    def is_baseline(self) -> bool:
        return self.flat["mode"] == "baseline"

    def match_key(self) -> str:
        d = {k: v for k, v in self.flat.items() if k not in DISTILL_ONLY and k != "seeds"}
        return json.dumps(d, sort_keys=True)


def _slug(params: dict[str, Any]) -> str:
    slug = "_".join(f"{k}={v}" for k, v in params.items()) or "base"
    return slug.replace("/", "-").replace(" ", "")


def expand(base: dict[str, Any], grid: dict[str, list]) -> list[SweepPoint]:
    """Cartesian product of the grid plus any baselines needed for deltas."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid is empty", key="sweep")
    keys = list(grid)
    points: list[SweepPoint] = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        flat = resolve({**base, **params})
        build(flat)  # validate early, before any run starts
        points.append(SweepPoint(_slug(params), params, flat))
    have = {p.match_key() for p in points if p.is_baseline}
    for p in list(points):
        if p.is_baseline or p.match_key() in have:
            continue
        params = {k: v for k, v in p.params.items() if k not in DISTILL_ONLY}
        flat = resolve({**p.flat, "mode": "baseline"})
        points.append(SweepPoint("baseline" + (f"_{_slug(params)}" if params else ""), {**params, "mode": "baseline"}, flat))
        have.add(p.match_key())
    return points


def run_sweep(base: dict[str, Any], grid: dict[str, list], outdir, workers: int | None = None,
              on_report=None) -> list[dict]:
    """Execute the sweep, write one directory per (point, seed) plus ``compare.csv``."""
    outdir = Path(outdir)
    points = expand(base, grid)
    jobs, where = [], []
    for p in points:
        cfg = build(p.flat)
        for s in cfg.seeds:
            jobs.append((cfg, s))
            where.append((p, s))
    reports = run_many(jobs, workers)
    by_point: dict[str, list[RunReport]] = {}
    for (p, s), rep in zip(where, reports):
        write_run(rep, outdir / p.name / f"seed-{s}")
        by_point.setdefault(p.name, []).append(rep)
        if on_report is not None:
            on_report(p, s, rep)
    rows = aggregate(points, by_point)
    grid_keys = list(grid)
    header = ["point"] + grid_keys + [
        "phase_boundary", "stable_acc", "stable_mci", "saturated_acc", "saturated_mci",
        "stable_acc_delta", "stable_mci_delta", "saturated_acc_delta", "saturated_mci_delta",
        "stable_acc_cell", "stable_mci_cell", "saturated_acc_cell", "saturated_mci_cell",
        "rounds_to_threshold",
    ]

    def num(v):
        return "" if v is None else repr(v)

    table = []
    for r in rows:
        table.append([r["point"]] + [json.dumps(r["params"].get(k)) for k in grid_keys] + [
            num(r["phase_boundary"]),
            num(r["stable_acc"]), num(r["stable_mci"]), num(r["saturated_acc"]), num(r["saturated_mci"]),
            num(r["stable_acc_delta"]), num(r["stable_mci_delta"]),
            num(r["saturated_acc_delta"]), num(r["saturated_mci_delta"]),
            signed(r["stable_acc"], r["stable_acc_delta"], 3),
            signed(r["stable_mci"], r["stable_mci_delta"], 2),
            signed(r["saturated_acc"], r["saturated_acc_delta"], 3),
            signed(r["saturated_mci"], r["saturated_mci_delta"], 2),
            num(r["rounds_to_threshold"]),
        ])
    atomic_write_text(outdir / "compare.csv", csv_text(header, table))
    return rows


def aggregate(points: list[SweepPoint], by_point: dict[str, list[RunReport]]) -> list[dict]:
    """Seed-averaged per-phase numbers for every point, with baseline deltas.

    Both runs of a pair are split at the baseline's phase boundary so the
    two phases cover the same rounds.
    """
    baselines = {p.match_key(): p for p in points if p.is_baseline}
    rows = []
    for p in points:
        avg = average_reports(by_point[p.name])
        base_point = baselines[p.match_key()]
        base_avg = average_reports(by_point[base_point.name])
        comp = compare_runs([base_avg, avg], baseline=0, boundary=base_avg.phase_boundary)
        row = dict(comp.rows[1])
        row["point"] = p.name
        row["params"] = p.params
        row["baseline"] = base_point.name
        rows.append(row)
    return rows

