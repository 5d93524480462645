"""Experiment configuration: strict JSON schema with defaults.

Unknown keys are rejected with a suggestion; every validation error names
the offending key. ``FEDFTA_SEED`` in the environment overrides
``master_seed``.
"""

from __future__ import annotations

import difflib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

from .aggregate import GssConfig
from .errors import ArgumentError, ConfigError
from .federation import AGGREGATORS, RoundConfig

SEED_ENV = "FEDFTA_SEED"
PARTITIONS = ("iid", "dirichlet", "shards")

# Common spellings that difflib would not match on its own.
_ALIASES = {
    "lr": "eta",
    "learning_rate": "eta",
    "seed": "master_seed",
    "num_clients": "clients",
    "n_clients": "clients",
    "k": "participants",
    "clients_per_round": "participants",
    "t": "rounds",
    "num_rounds": "rounds",
    "epochs": "local_epochs",
    "e": "local_epochs",
    "batch": "batch_size",
    "out": "output_dir",
    "hidden": "hidden_sizes",
    "tolerance": "tol",
    "epsilon": "tol",
}


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    data_source: str = "synthetic"
    csv_path: Optional[str] = None
    class_counts: tuple[int, ...] = (684, 633, 810)
    input_dim: int = 20
    feature_dim: int = 64
    separation: float = 6.0
    noise_std: float = 1.0
    test_ratio: float = 0.2
    val_ratio: float = 0.1
    clients: int = 10
    partition: str = "iid"
    alpha: float = 0.5
    shards_per_client: int = 2
    rounds: int = 100
    participants: Optional[int] = None
    local_epochs: int = 1
    eta: float = 0.001
    batch_size: int = 32
    hidden_sizes: tuple[int, ...] = (200, 100)
    head_init_std: Optional[float] = None
    optimizer: str = "sgd"
    aggregator: str = "fta"
    gss: GssConfig = field(default_factory=GssConfig)
    seeds: int = 5
    distributions: tuple[str, ...] = ("iid", "dirichlet")
    target_accuracy: float = 0.88
    output_dir: str = "runs/default"
    data_out: Optional[str] = None
    workers: int = 1

    @property
    def k(self) -> int:
        return self.clients if self.participants is None else self.participants

    def round_config(self, aggregator: Optional[str] = None) -> RoundConfig:
        return RoundConfig(
            participants=self.k,
            local_epochs=self.local_epochs,
            eta=self.eta,
            batch_size=self.batch_size,
            aggregator=aggregator or self.aggregator,
            gss=self.gss,
            optimizer=self.optimizer,
            workers=self.workers,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("class_counts", "hidden_sizes", "distributions"):
            d[key] = list(d[key])
        return d


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_GSS_FIELDS = {f.name for f in fields(GssConfig)}


def _suggest(key: str, known) -> str:
    alias = _ALIASES.get(key.lower())
    if alias in known:
        return f'; did you mean "{alias}"?'
    close = difflib.get_close_matches(key, list(known), n=1, cutoff=0.6)
    return f'; did you mean "{close[0]}"?' if close else ""


def _int(raw: Mapping, key: str, lo: int | None = None, hi: int | None = None) -> int:
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"must be an integer, got {v!r}", key)
    if lo is not None and v < lo:
        raise ConfigError(f"must be >= {lo}, got {v}", key)
    if hi is not None and v > hi:
        raise ConfigError(f"must be <= {hi}, got {v}", key)
    return v


def _float(raw: Mapping, key: str) -> float:
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"must be a number, got {v!r}", key)
    return float(v)


def _int_list(raw: Mapping, key: str, allow_empty: bool) -> tuple[int, ...]:
    v = raw[key]
    if not isinstance(v, list) or (not v and not allow_empty):
        raise ConfigError(f"must be a{'' if allow_empty else ' nonempty'} list of integers, got {v!r}", key)
    if any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in v):
        raise ConfigError(f"entries must be positive integers, got {v!r}", key)
    return tuple(v)


def _choice(raw: Mapping, key: str, options) -> str:
    v = raw[key]
    if v not in options:
        raise ConfigError(f"must be one of {list(options)}, got {v!r}", key)
    return v


def config_from_dict(raw: Mapping[str, Any], env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Validate ``raw`` and fill defaults."""
    if not isinstance(raw, Mapping):
        raise ConfigError("top level must be a JSON object")
    for key in raw:
        if key not in _FIELDS:
            raise ConfigError(f"unknown key{_suggest(key, _FIELDS)}", key)
    raw = dict(raw)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            raw["master_seed"] = int(env[SEED_ENV], 10)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer", "master_seed") from None
    if "master_seed" not in raw:
        raise ConfigError("is required", "master_seed")

    vals: dict[str, Any] = {"master_seed": _int(raw, "master_seed", 0, 2**64 - 1)}
    defaults = ExperimentConfig(master_seed=0)

    def get(key, conv, *args):
        if key in raw:
            vals[key] = conv(raw, key, *args)

    get("data_source", _choice, ("synthetic", "csv"))
    if "csv_path" in raw:
        if raw["csv_path"] is not None and not isinstance(raw["csv_path"], str):
            raise ConfigError("must be a path string", "csv_path")
        vals["csv_path"] = raw["csv_path"]
    get("class_counts", _int_list, False)
    get("input_dim", _int, 1)
    get("feature_dim", _int, 1)
    get("separation", _float)
    get("noise_std", _float)
    get("test_ratio", _float)
    get("val_ratio", _float)
    get("clients", _int, 1)
    get("partition", _choice, PARTITIONS)
    get("alpha", _float)
    get("shards_per_client", _int, 1)
    get("rounds", _int, 1)
    if raw.get("participants") is not None:
        get("participants", _int, 1)
    get("local_epochs", _int, 1)
    get("eta", _float)
    get("batch_size", _int, 1)
    get("hidden_sizes", _int_list, True)
    if raw.get("head_init_std") is not None:
        get("head_init_std", _float)
    get("optimizer", _choice, ("sgd", "adam"))
    get("aggregator", _choice, AGGREGATORS)
    get("seeds", _int, 1)
    get("target_accuracy", _float)
    get("workers", _int, 1)
    for key in ("output_dir", "data_out"):
        if key in raw:
            if raw[key] is not None and not isinstance(raw[key], str):
                raise ConfigError("must be a path string", key)
            vals[key] = raw[key]
    if "distributions" in raw:
        v = raw["distributions"]
        if not isinstance(v, list) or not v or any(d not in PARTITIONS for d in v):
            raise ConfigError(f"must be a nonempty list drawn from {list(PARTITIONS)}, got {v!r}", "distributions")
        vals["distributions"] = tuple(v)
    if "gss" in raw:
        g = raw["gss"]
        if not isinstance(g, Mapping):
            raise ConfigError("must be an object", "gss")
        for key in g:
            if key not in _GSS_FIELDS:
                raise ConfigError(f"unknown key{_suggest(key, _GSS_FIELDS)}", f"gss.{key}")
        try:
            vals["gss"] = GssConfig(**{k: g[k] for k in g})
        except ArgumentError as exc:
            raise ConfigError(str(exc), "gss") from None

    cfg = ExperimentConfig(**{**{f: getattr(defaults, f) for f in _FIELDS if f != "master_seed"}, **vals})
    _check(cfg)
    return cfg


def _check(cfg: ExperimentConfig) -> None:
    if cfg.data_source == "csv" and not cfg.csv_path:
        raise ConfigError("is required when data_source is 'csv'", "csv_path")
    if len(cfg.class_counts) < 2:
        raise ConfigError("needs at least two classes", "class_counts")
    if not cfg.separation > 0:
        raise ConfigError("must be positive", "separation")
    if not cfg.noise_std >= 0:
        raise ConfigError("must be nonnegative", "noise_std")
    if not 0 < cfg.test_ratio < 1:
        raise ConfigError("must lie in (0, 1)", "test_ratio")
    if not 0 < cfg.val_ratio < 1:
        raise ConfigError("must lie in (0, 1); the server needs a validation set", "val_ratio")
    if not cfg.alpha > 0:
        raise ConfigError("must be positive", "alpha")
    if cfg.participants is not None and cfg.participants > cfg.clients:
        raise ConfigError(
            f"participants per round (K) cannot exceed clients ({cfg.clients}), got {cfg.participants}",
            "participants",
        )
    if not cfg.eta > 0:
        raise ConfigError("must be positive", "eta")
    if cfg.head_init_std is not None and not cfg.head_init_std > 0:
        raise ConfigError("must be positive", "head_init_std")
    if not 0 < cfg.target_accuracy <= 1:
        raise ConfigError("must lie in (0, 1]", "target_accuracy")


def parse_config(path: str | Path, env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return config_from_dict(raw, env)
