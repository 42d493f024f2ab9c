"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ._io import atomic_write_text
from .config import build, dumps, load_flat, split_sweep
from .errors import ConfigError, TrustALError

OUTPUT_ROOT_ENV = "TRUSTAL_OUTPUT_ROOT"

log = logging.getLogger("trustal")


class UsageError(TrustALError):
    pass


def _outdir(args) -> Path:
    if args.output:
        return Path(args.output)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _print_round(prefix, r):
    teacher = "-" if r.teacher_generation is None else r.teacher_generation
    print(f"{prefix}round {r.round:3d}  labeled={r.labeled_fraction:.3f}  test_acc={r.test_accuracy:.4f}  "
          f"val_acc={r.val_accuracy:.4f}  mci={r.mci:.3f}  forget={r.forgetting_events}  teacher={teacher}")


def cmd_run(args) -> int:
    from .engine import run, write_run

    flat = load_flat(args.config, args.override)
    base, grid = split_sweep(flat)
    if grid:
        raise ConfigError("config contains a sweep grid; use the 'sweep' subcommand", key="sweep")
    config = build(base)
    out = _outdir(args)
    for seed in config.seeds:
        report = run(config, seed)
        rundir = write_run(report, out / f"seed-{seed}")
        for r in report.rounds:
            _print_round(f"[seed {seed}] ", r)
        flag = " (truncated: pool exhausted)" if report.truncated else ""
        print(f"[seed {seed}] wrote {rundir}{flag}")
    return 0


def cmd_sweep(args) -> int:
    from .sweep import run_sweep

    flat = load_flat(args.config, args.override)
    base, grid = split_sweep(flat)
    if not grid:
        raise ConfigError("no sweep.* keys in config", key="sweep")
    workers = args.workers or base.get("workers")
    out = _outdir(args)

    def progress(point, seed, report):
        last = report.rounds[-1] if report.rounds else None
        acc = f"{last.test_accuracy:.4f}" if last else "n/a"
        print(f"{point.name} seed={seed}: {len(report.rounds)} rounds, final test_acc={acc}")

    rows = run_sweep(base, grid, out, workers=workers, on_report=progress)
    print(f"wrote {out / 'compare.csv'} ({len(rows)} rows)")
    return 0


def _load_report(path: Path):
    """A run directory, or a directory of seed subdirectories (averaged)."""
    from .analysis import average_reports
    from .engine import read_run

    if (path / "run.json").is_file():
        return read_run(path)
    subs = sorted(p.parent for p in path.glob("*/run.json"))
    if not subs:
        raise UsageError(f"{path} holds no run.json")
    return average_reports([read_run(p) for p in subs])


def cmd_compare(args) -> int:
    from .analysis import compare_runs, comparison_csv

    if len(args.runs) < 2:
        raise UsageError("compare needs at least two run directories")
    paths = [Path(p) for p in args.runs]
    for p in paths:
        if not p.is_dir():
            raise UsageError(f"{p} is not a directory")
    reports = [_load_report(p) for p in paths]
    comp = compare_runs(reports, baseline=args.baseline, threshold=args.threshold)
    text = comparison_csv(comp)
    out = Path(args.output) if args.output else Path("compare.csv")
    atomic_write_text(out, text)
    sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    from .analysis import kmeans, quality_csv, quality_rows, train_reference
    from .config import build
    from .data_pool import build_dataset
    from .engine import read_run

    for raw in args.runs:
        path = Path(raw)
        if not (path / "run.json").is_file():
            raise UsageError(f"{path} holds no run.json")
        report = read_run(path)
        config = build(report.config)
        dataset, pool = build_dataset(config.dataset)
        ref = train_reference(dataset, pool, config.train, seed=report.seed)
        clusters = kmeans(ref.embeddings, report.k, seed=report.seed)
        rows = quality_rows(report, ref, clusters)
        atomic_write_text(path / "quality.csv", quality_csv(rows))
        print(f"{path}: reference test_acc={ref.test_accuracy:.4f}, {len(rows)} rounds -> quality.csv")
    return 0


def cmd_synth(args) -> int:
    from .data_pool import synth_blobs, write_csv

    samples = synth_blobs(args.n, args.classes, args.dims, args.sep, args.seed)
    out = Path(args.output) if args.output else Path("blobs.csv")
    write_csv(out, samples)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_config(args) -> int:
    from .config import resolve

    sys.stdout.write(dumps(resolve(split_sweep(load_flat(args.config, args.override))[0])))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("-c", "--config", required=config_required, help="dotted-key config file")
        p.add_argument("-o", "--output", help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./runs)")
        p.add_argument("-O", "--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key; repeatable")

    p = sub.add_parser("run", help="run one configuration for each seed")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the cartesian product of sweep.* grids")
    common(p)
    p.add_argument("-j", "--workers", type=int, help="parallel runs (default: CPU count)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="per-phase comparison of finished runs")
    p.add_argument("runs", nargs="*", help="run directories (first is the baseline by default)")
    p.add_argument("-o", "--output", help="CSV path (default ./compare.csv)")
    p.add_argument("--baseline", type=int, default=0, help="index of the baseline run")
    p.add_argument("--threshold", type=float, default=1.0,
                   help="fraction of the baseline plateau for rounds-to-threshold")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="acquisition quality (uncertainty/diversity) of finished runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset as CSV")
    p.add_argument("-o", "--output")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dims", type=int, default=10)
    p.add_argument("--sep", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("config", help="print the fully resolved configuration")
    common(p, config_required=False)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"trustal: error: {exc}", file=sys.stderr)
        return 2
    except TrustALError as exc:
        print(f"trustal: runtime error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("unhandled exception", exc_info=True)
        print(f"trustal: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
