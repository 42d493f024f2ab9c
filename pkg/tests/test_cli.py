import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from trustal.cli import main
from trustal.engine import read_rounds, read_run

TINY = """\
dataset.n = 300
dataset.dims = 4
dataset.classes = 3
dataset.sep = 3.0
initial_fraction = 0.05
per_round_fraction = 0.05
rounds = 4
train.learning_rate = 0.01
train.epochs = 5
train.batch_size = 16
train.hidden = 8
strategy = badge
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY + "mode = trustal_mc\n")
    return path


def _metrics(rundir):
    return [r.metrics() for r in read_rounds(rundir)]


class TestRun:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", "-c", str(tmp_path / "missing.cfg"), "-o", str(tmp_path / "o")]) == 2
        assert "missing.cfg" in capsys.readouterr().err

    def test_bad_key_named(self, tmp_path, cfg, capsys):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "o"), "-O", "train.alhpa=1"]) == 2
        assert "train.alhpa" in capsys.readouterr().err

    def test_writes_outputs_and_summary(self, tmp_path, cfg, capsys):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert sum(1 for line in out.splitlines() if "round" in line and "test_acc=" in line) == 4
        rundir = tmp_path / "o" / "seed-0"
        for name in ("rounds.jsonl", "run.json", "accmatrix.csv", "teacher_trace.csv"):
            assert (rundir / name).is_file()

    def test_alpha_zero_override_matches_baseline(self, tmp_path, cfg):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "a"), "-O", "train.alpha=0"]) == 0
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "b"), "-O", "mode=baseline"]) == 0
        assert _metrics(tmp_path / "a" / "seed-0") == _metrics(tmp_path / "b" / "seed-0")

    def test_byte_identical_outputs(self, tmp_path, cfg):
        for d in ("x", "y"):
            assert main(["run", "-c", str(cfg), "-o", str(tmp_path / d)]) == 0
        for name in ("rounds.jsonl", "accmatrix.csv", "teacher_trace.csv", "split.json"):
            a = (tmp_path / "x" / "seed-0" / name).read_bytes()
            b = (tmp_path / "y" / "seed-0" / name).read_bytes()
            assert a == b, name
        ja = json.loads((tmp_path / "x" / "seed-0" / "run.json").read_text())
        jb = json.loads((tmp_path / "y" / "seed-0" / "run.json").read_text())
        ja.pop("metadata"), jb.pop("metadata")
        assert ja == jb

    def test_config_echo_reproduces(self, tmp_path, cfg):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "a"), "-O", "train.alpha=2.0"]) == 0
        echo = read_run(tmp_path / "a" / "seed-0").config
        assert echo["train.alpha"] == 2.0
        path = tmp_path / "echo.cfg"
        path.write_text("".join(f"{k} = {json.dumps(v)}\n" for k, v in echo.items()))
        assert main(["run", "-c", str(path), "-o", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "seed-0" / "rounds.jsonl").read_bytes() == \
            (tmp_path / "b" / "seed-0" / "rounds.jsonl").read_bytes()

    def test_output_root_env(self, tmp_path, cfg, monkeypatch):
        monkeypatch.setenv("TRUSTAL_OUTPUT_ROOT", str(tmp_path / "env"))
        assert main(["run", "-c", str(cfg), "-O", "rounds=1"]) == 0
        assert (tmp_path / "env" / "seed-0" / "run.json").is_file()

    def test_several_seeds(self, tmp_path, cfg):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "o"), "-O", "seeds=[0, 5]", "-O", "rounds=1"]) == 0
        assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["seed-0", "seed-5"]

    def test_sweep_config_rejected_by_run(self, tmp_path, cfg):
        with open(cfg, "a") as fh:
            fh.write("sweep.train.alpha = [0.3]\n")
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "o")]) == 2

    def test_runtime_error_exit_one(self, tmp_path, capsys):
        # a CSV source that does not exist fails once the run starts
        path = tmp_path / "bad.cfg"
        path.write_text(TINY + f'dataset.source = "{tmp_path / "none.csv"}"\n')
        assert main(["run", "-c", str(path), "-o", str(tmp_path / "o")]) == 1


class TestSweep:
    def test_empty_grid(self, tmp_path, cfg):
        assert main(["sweep", "-c", str(cfg), "-o", str(tmp_path / "s")]) == 2
        assert main(["sweep", "-c", str(cfg), "-o", str(tmp_path / "s"), "-O", "sweep.train.alpha=[]"]) == 2

    def test_alpha_grid_directories(self, tmp_path, cfg):
        with open(cfg, "a") as fh:
            fh.write("rounds = 3\nsweep.train.alpha = [0.3, 0.75, 1.5, 10, 20]\n")
        assert main(["sweep", "-c", str(cfg), "-o", str(tmp_path / "s"), "-j", "2"]) == 0
        dirs = sorted(p.name for p in (tmp_path / "s").iterdir() if p.is_dir())
        alpha_dirs = [d for d in dirs if d.startswith("train.alpha=")]
        assert len(alpha_dirs) == 5
        assert dirs == sorted(alpha_dirs + ["baseline"])
        for d in alpha_dirs:
            assert (tmp_path / "s" / d / "seed-0" / "rounds.jsonl").is_file()
        with open(tmp_path / "s" / "compare.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6

    def test_budget_grid_recomputes_k(self, tmp_path, cfg):
        with open(cfg, "a") as fh:
            fh.write("rounds = 2\nsweep.per_round_fraction = [0.02, 0.04, 0.1]\n")
        assert main(["sweep", "-c", str(cfg), "-o", str(tmp_path / "s"), "-j", "1"]) == 0
        ks = {}
        for frac in (0.02, 0.04, 0.1):
            rep = read_run(tmp_path / "s" / f"per_round_fraction={frac}" / "seed-0")
            ks[frac] = rep.k
            assert rep.k == max(1, round(frac * 240))
            assert all(len(r.acquired) == rep.k for r in rep.rounds)
        assert len(set(ks.values())) == 3


class TestCompareAnalyze:
    @pytest.fixture
    def two_runs(self, tmp_path, cfg):
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "base"), "-O", "mode=baseline"]) == 0
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "mc")]) == 0
        return tmp_path / "base" / "seed-0", tmp_path / "mc" / "seed-0"

    def test_one_directory(self, two_runs, capsys):
        assert main(["compare", str(two_runs[0])]) == 2

    def test_missing_directory(self, tmp_path, two_runs):
        assert main(["compare", str(two_runs[0]), str(tmp_path / "nope")]) == 2

    def test_deltas_match_hand_computation(self, tmp_path, two_runs):
        out = tmp_path / "cmp.csv"
        assert main(["compare", str(two_runs[0]), str(two_runs[1]), "-o", str(out)]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2

        def phase_means(rundir):
            rep = read_run(rundir)
            rounds = read_rounds(rundir)
            b = rep.phase_boundary
            st = [r for r in rounds if r.round <= b]
            sa = [r for r in rounds if r.round > b]

            def mean(rs, k):
                return float(np.mean([getattr(r, k) for r in rs])) if rs else None

            return {"stable_acc": mean(st, "test_accuracy"), "stable_mci": mean(st, "mci"),
                    "saturated_acc": mean(sa, "test_accuracy"), "saturated_mci": mean(sa, "mci")}

        base, cand = phase_means(two_runs[0]), phase_means(two_runs[1])
        for key in base:
            if base[key] is None or cand[key] is None:
                continue
            assert float(rows[1][key]) == pytest.approx(cand[key], abs=1e-12)
            assert float(rows[1][key + "_delta"]) == pytest.approx(cand[key] - base[key], abs=1e-12)
            assert float(rows[0][key + "_delta"]) == 0.0

    def test_seed_parent_directories_average(self, tmp_path, cfg):
        for mode in ("baseline", "trustal_mc"):
            assert main(["run", "-c", str(cfg), "-o", str(tmp_path / mode), "-O", f"mode={mode}",
                         "-O", "seeds=[0, 1]"]) == 0
        out = tmp_path / "cmp.csv"
        assert main(["compare", str(tmp_path / "baseline"), str(tmp_path / "trustal_mc"), "-o", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 3

    def test_analyze_writes_quality(self, two_runs):
        assert main(["analyze", str(two_runs[1])]) == 0
        with open(two_runs[1] / "quality.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["round"]) for r in rows] == [1, 2, 3, 4]
        assert all(float(r["uncertainty_entropy"]) >= 0 for r in rows)

    def test_analyze_missing(self, tmp_path):
        assert main(["analyze", str(tmp_path / "nope")]) == 2


class TestMisc:
    def test_synth(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["synth", "--n", "12", "--classes", "3", "--dims", "2", "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "id,label,f1,f2"
        assert len(lines) == 13

    def test_config_prints_resolved(self, cfg, capsys):
        assert main(["config", "-c", str(cfg), "-O", "train.alpha=3"]) == 0
        out = capsys.readouterr().out
        assert "train.alpha = 3.0" in out
        assert "mode = \"trustal_mc\"" in out

    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "trustal", "run", "-c", str(tmp_path / "x.cfg")],
                              capture_output=True, text=True)
        assert proc.returncode == 2
