import pytest

from trustal.config import (
    SCHEMA,
    build,
    config_hash,
    dumps,
    load_flat,
    parse_text,
    resolve,
    split_sweep,
    to_flat,
)
from trustal.errors import ConfigError
from trustal.sweep import expand


class TestGrammar:
    def test_values(self):
        flat = parse_text(
            "# header comment\n"
            "train.alpha = 0.75\n"
            "mode = trustal_nc   # bare word\n"
            'dataset.name = "a # b"\n'
            "seeds = [1, 2]\n"
            "phase_round = null\n"
            "\n"
        )
        assert flat == {"train.alpha": 0.75, "mode": "trustal_nc", "dataset.name": "a # b",
                        "seeds": [1, 2], "phase_round": None}

    def test_later_line_wins(self):
        assert parse_text("rounds = 3\nrounds = 4\n") == {"rounds": 4}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_text("rounds = 3\njunk\n")

    def test_broken_json(self):
        with pytest.raises(ConfigError) as info:
            parse_text("seeds = [1, 2\n")
        assert info.value.key == "seeds"

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("train.alpha = 0.75\nrounds = 3\n")
        flat = load_flat(path, ["train.alpha=0", "mode=trustal_mc"])
        assert flat == {"train.alpha": 0, "rounds": 3, "mode": "trustal_mc"}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_flat(tmp_path / "nope.cfg")


class TestResolve:
    def test_defaults_fill_in(self):
        r = resolve({})
        assert set(r) == set(SCHEMA)
        assert r["train.alpha"] == 0.75
        assert r["train.learning_rate"] == 0.001

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as info:
            resolve({"train.alhpa": 1.0})
        assert info.value.key == "train.alhpa"
        assert "train.alhpa" in str(info.value)

    @pytest.mark.parametrize("key,value", [
        ("rounds", "ten"), ("rounds", 0), ("train.alpha", -1.0), ("mode", "trustal_xx"),
        ("strategy", "entropy"), ("per_round_fraction", 1.5), ("noise.start", "soon"),
        ("dataset.split", [0.5, 0.5]), ("seeds", []),
    ])
    def test_bad_values(self, key, value):
        with pytest.raises(ConfigError):
            build({key: value})

    def test_bool_is_not_int(self):
        with pytest.raises(ConfigError):
            build({"rounds": True})

    def test_roundtrip(self):
        cfg = build({"mode": "trustal_nc", "noise.ratio": 0.15, "noise.start": 4, "seeds": [3, 4]})
        again = build(to_flat(cfg))
        assert again == cfg
        assert config_hash(again) == config_hash(cfg)
        assert build(parse_text(dumps(to_flat(cfg)))) == cfg

    def test_hash_sensitive(self):
        assert config_hash(build({"train.alpha": 0.3})) != config_hash(build({"train.alpha": 0.75}))


class TestSweepExpansion:
    def test_split(self):
        base, grid = split_sweep({"rounds": 3, "sweep.train.alpha": [0.3, 1.5]})
        assert base == {"rounds": 3}
        assert grid == {"train.alpha": [0.3, 1.5]}

    def test_sweep_unknown_key(self):
        with pytest.raises(ConfigError):
            split_sweep({"sweep.alhpa": [1]})

    def test_sweep_not_list(self):
        with pytest.raises(ConfigError):
            split_sweep({"sweep.train.alpha": 0.3})

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            expand({}, {})
        with pytest.raises(ConfigError):
            expand({}, {"train.alpha": []})

    def test_alpha_grid_adds_one_baseline(self):
        pts = expand({"mode": "trustal_mc"}, {"train.alpha": [0.3, 0.75, 1.5, 10, 20]})
        names = [p.name for p in pts]
        assert names[:5] == [f"train.alpha={a}" for a in (0.3, 0.75, 1.5, 10, 20)]
        assert names[5:] == ["baseline"]
        assert pts[5].flat["mode"] == "baseline"

    def test_budget_grid_baselines(self):
        pts = expand({"mode": "trustal_mc"}, {"per_round_fraction": [0.02, 0.04, 0.1]})
        baselines = [p for p in pts if p.is_baseline]
        assert len(baselines) == 3
        assert sorted(p.flat["per_round_fraction"] for p in baselines) == [0.02, 0.04, 0.1]

    def test_mode_in_grid_reuses_baseline(self):
        pts = expand({}, {"mode": ["baseline", "trustal_mc", "trustal_nc"]})
        assert len(pts) == 3

    def test_invalid_point_rejected_early(self):
        with pytest.raises(ConfigError):
            expand({}, {"train.alpha": [0.3, -1]})
