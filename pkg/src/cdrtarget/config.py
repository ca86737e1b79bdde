"""Run configuration shared by the generator, the pipeline stages and the CLI."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

CONFIG_ENV_VAR = "CDRTARGET_CONFIG"

WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    calls: str = "calls.csv"
    texts: str = "texts.csv"
    recharges: str = "recharges.csv"
    towers: str = "towers.csv"
    survey: str = "survey.csv"
    truth: str = "truth.csv"
    output_dir: str = "out"
    # relative input paths resolve under this directory (default: output_dir/bundle)
    data_dir: str | None = None


@dataclass
class SampleParams:
    phone_owner_share: float = 0.84
    # sample name -> fixed quota fraction; empty means derive from labels
    quota_override: dict = field(default_factory=dict)


@dataclass
class ModelParams:
    cdr_family: str = "gradient_boosting"
    # "compact" uses a subset of the published grids, "full" the complete grids
    grid: str = "compact"
    outer_k: int = 10
    inner_k: int = 5
    families: list = field(default_factory=lambda: [
        "logistic", "logistic_l1", "random_forest", "gradient_boosting"])


@dataclass
class RunConfig:
    """Everything a run depends on. ``seed`` is mandatory: there is no wall-clock default."""

    seed: int
    timezone_offset_s: int = 0
    weekend_days: list = field(default_factory=lambda: ["Sat", "Sun"])
    day_start_hour: float = 7.0
    day_end_hour: float = 19.0
    conversation_gap_s: float = 3600.0
    paths: Paths = field(default_factory=Paths)
    sample: SampleParams = field(default_factory=SampleParams)
    models: ModelParams = field(default_factory=ModelParams)
    bootstrap_b: int = 1000
    order_draws: int = 100
    workers: int = 1
    generator: dict = field(default_factory=dict)
    schema: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        self.seed = int(self.seed)
        for d in self.weekend_days:
            if d not in WEEKDAY_NAMES:
                raise ConfigError(f"unknown weekend day {d!r}; expected one of {WEEKDAY_NAMES}")
        if not 0 <= self.day_start_hour < self.day_end_hour <= 24:
            raise ConfigError("day boundaries must satisfy 0 <= start < end <= 24")

    @property
    def weekend_index(self) -> tuple[int, ...]:
        """Weekend days as Monday=0 indices."""
        return tuple(sorted(WEEKDAY_NAMES.index(d) for d in self.weekend_days))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = copy.deepcopy(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in data:
            raise ConfigError("seed is mandatory")
        nested = {"paths": Paths, "sample": SampleParams, "models": ModelParams}
        for key, typ in nested.items():
            if key in data and isinstance(data[key], dict):
                sub_known = {f.name for f in fields(typ)}
                bad = set(data[key]) - sub_known
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                data[key] = typ(**data[key])
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def data_dir(self) -> Path:
        if self.paths.data_dir is not None:
            return Path(self.paths.data_dir)
        return Path(self.paths.output_dir) / "bundle"

    def resolve(self, name: str) -> Path:
        """Input file path; relative names live under :attr:`data_dir`."""
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else self.data_dir / p


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Load a JSON run-config; ``path`` falls back to $CDRTARGET_CONFIG."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    data: dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    return RunConfig.from_dict(data)


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    cur = data
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
