"""Run configuration and its flat dotted-key text format.

Grammar, one statement per line::

    # comment (also after a value: ``rounds = 10  # ten rounds``)
    dotted.key = value

``value`` is a JSON literal (``0.75``, ``true``, ``null``, ``"text"``,
``[0.3, 0.75]``) or, failing that, a bare word taken as a string
(``mode = trustal_nc``). Later lines win over earlier ones; command-line
overrides win over the file. Keys under ``sweep.`` hold lists of values for
the key that follows, e.g. ``sweep.train.alpha = [0.3, 0.75, 1.5]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .classifier import TrainConfig
from .data_pool import DatasetSpec
from .errors import ConfigError, TrustALError

MODES = ("baseline", "trustal_mc", "trustal_nc", "trustal_ensemble")
DISTILL_SCOPES = ("labeled", "queries")


@dataclass(frozen=True)
class NoiseConfig:
    ratio: float
    start: str | int = "phase"


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec
    strategy: str = "random"
    mode: str = "baseline"
    initial_fraction: float = 0.02
    per_round_fraction: float = 0.02
    rounds: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseConfig | None = None
    seeds: tuple[int, ...] = (0,)
    distill_scope: str = "labeled"
    phase_round: int | None = None

    def __post_init__(self):
        from .acquisition import STRATEGIES

        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}", key="strategy")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", key="mode")
        for key in ("initial_fraction", "per_round_fraction"):
            v = getattr(self, key)
            if not 0 < v <= 1:
                raise ConfigError(f"must lie in (0, 1], got {v}", key=key)
        if self.rounds < 1:
            raise ConfigError("must be at least 1", key="rounds")
        if not self.seeds:
            raise ConfigError("need at least one seed", key="seeds")
        if self.distill_scope not in DISTILL_SCOPES:
            raise ConfigError(f"must be one of {DISTILL_SCOPES}", key="distill_scope")
        if self.noise is not None:
            if not 0 <= self.noise.ratio <= 1:
                raise ConfigError("must lie in [0, 1]", key="noise.ratio")
            if self.noise.start != "phase" and not (isinstance(self.noise.start, int) and self.noise.start >= 1):
                raise ConfigError("must be 'phase' or a round number >= 1", key="noise.start")


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _opt(conv):
    return lambda v: None if v is None else conv(v)


def _split(v):
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise TypeError("expected a list of three fractions")
    return tuple(_float(x) for x in v)


def _seeds(v):
    if isinstance(v, int) and not isinstance(v, bool):
        return (v,)
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a non-empty list of integers")
    return tuple(_int(x) for x in v)


def _start(v):
    if v == "phase":
        return v
    return _int(v)


# key -> (converter, default)
SCHEMA: dict[str, tuple[Any, Any]] = {
    "dataset.name": (_str, "blobs"),
    "dataset.source": (_str, "synth"),
    "dataset.dims": (_int, 10),
    "dataset.classes": (_int, 4),
    "dataset.split": (_split, (0.8, 0.1, 0.1)),
    "dataset.n": (_int, 2000),
    "dataset.sep": (_float, 2.5),
    "dataset.seed": (_int, 0),
    "strategy": (_str, "random"),
    "mode": (_str, "baseline"),
    "initial_fraction": (_float, 0.02),
    "per_round_fraction": (_float, 0.02),
    "rounds": (_int, 10),
    "distill_scope": (_str, "labeled"),
    "phase_round": (_opt(_int), None),
    "train.optimizer": (_str, "adam"),
    "train.learning_rate": (_float, 0.001),
    "train.epochs": (_int, 10),
    "train.batch_size": (_int, 50),
    "train.alpha": (_float, 0.75),
    "train.arch": (_str, "mlp1"),
    "train.hidden": (_int, 32),
    "noise.ratio": (_opt(_float), None),
    "noise.start": (_start, "phase"),
    "seeds": (_seeds, (0,)),
    "workers": (_opt(_int), None),
}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if not text or any(c in text for c in "[]{}\"'"):
            raise
        return text


def _strip_comment(line: str) -> str:
    # a '#' inside a quoted string is kept
    in_str = False
    for i, c in enumerate(line):
        if c == '"' and (i == 0 or line[i - 1] != "\\"):
            in_str = not in_str
        elif c == "#" and not in_str:
            return line[:i]
    return line


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse the dotted-key grammar into a flat dict of raw values."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        try:
            out[key] = parse_value(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value ({exc.msg})", key=key) from None
    return out


def parse_overrides(items) -> dict[str, Any]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            out[key] = parse_value(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad override value ({exc.msg})", key=key) from None
    return out


def load_flat(path=None, overrides=None) -> dict[str, Any]:
    """File values layered over defaults, overrides layered over both."""
    flat: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        flat.update(parse_text(text, str(path)))
    flat.update(parse_overrides(overrides))
    return flat


def split_sweep(flat: dict[str, Any]) -> tuple[dict[str, Any], dict[str, list]]:
    base, grid = {}, {}
    for k, v in flat.items():
        if k.startswith("sweep."):
            target = k[len("sweep."):]
            if target not in SCHEMA:
                raise ConfigError("unknown key under sweep", key=k)
            if not isinstance(v, list):
                raise ConfigError("sweep values must be a list", key=k)
            grid[target] = v
        else:
            base[k] = v
    return base, grid


def resolve(flat: dict[str, Any]) -> dict[str, Any]:
    """Validate keys and types; return the full flat config with defaults."""
    out = {}
    for key in flat:
        if key not in SCHEMA:
            raise ConfigError("unknown configuration key", key=key)
    for key, (conv, default) in SCHEMA.items():
        if key in flat:
            try:
                out[key] = conv(flat[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{exc} (got {flat[key]!r})", key=key) from None
        else:
            out[key] = default
    return out


def build(flat: dict[str, Any]) -> RunConfig:
    """Turn a (possibly partial) flat dict into a validated :class:`RunConfig`."""
    r = resolve(flat)
    try:
        dataset = DatasetSpec(
            name=r["dataset.name"], dims=r["dataset.dims"], classes=r["dataset.classes"],
            source=r["dataset.source"], split=r["dataset.split"], n=r["dataset.n"],
            sep=r["dataset.sep"], seed=r["dataset.seed"],
        )
    except TrustALError as exc:
        raise ConfigError(str(exc), key="dataset") from None
    try:
        train = TrainConfig(
            optimizer=r["train.optimizer"], learning_rate=r["train.learning_rate"],
            epochs=r["train.epochs"], batch_size=r["train.batch_size"], alpha=r["train.alpha"],
            arch=r["train.arch"], hidden=r["train.hidden"],
        )
    except TrustALError as exc:
        raise ConfigError(str(exc), key="train") from None
    noise = None
    if r["noise.ratio"] is not None:
        noise = NoiseConfig(ratio=r["noise.ratio"], start=r["noise.start"])
    return RunConfig(
        dataset=dataset, strategy=r["strategy"], mode=r["mode"],
        initial_fraction=r["initial_fraction"], per_round_fraction=r["per_round_fraction"],
        rounds=r["rounds"], train=train, noise=noise, seeds=r["seeds"],
        distill_scope=r["distill_scope"], phase_round=r["phase_round"],
    )


def to_flat(config: RunConfig) -> dict[str, Any]:
    """Inverse of :func:`build`; JSON-serialisable."""
    d, t = config.dataset, config.train
    return {
        "dataset.name": d.name, "dataset.source": d.source, "dataset.dims": d.dims,
        "dataset.classes": d.classes, "dataset.split": list(d.split), "dataset.n": d.n,
        "dataset.sep": d.sep, "dataset.seed": d.seed,
        "strategy": config.strategy, "mode": config.mode,
        "initial_fraction": config.initial_fraction,
        "per_round_fraction": config.per_round_fraction,
        "rounds": config.rounds, "distill_scope": config.distill_scope,
        "phase_round": config.phase_round,
        "train.optimizer": t.optimizer, "train.learning_rate": t.learning_rate,
        "train.epochs": t.epochs, "train.batch_size": t.batch_size, "train.alpha": t.alpha,
        "train.arch": t.arch, "train.hidden": t.hidden,
        "noise.ratio": None if config.noise is None else config.noise.ratio,
        "noise.start": "phase" if config.noise is None else config.noise.start,
        "seeds": list(config.seeds),
    }


def dumps(flat: dict[str, Any]) -> str:
    """Render a flat dict back into the text grammar."""
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(flat.items()))


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(to_flat(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
