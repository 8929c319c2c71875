"""Run configuration: one JSON document, validated up front, hashed for provenance."""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .backtest import BacktestConfig
from .embed.model import VaeConfig
from .embed.train import TrainConfig
from .errors import ConfigInvalid
from .evolve import EsConfig
from .flow import FlowModelConfig
from .geometry import SweepConfig
from .lang.generate import MutationConfig
from .market import FoldSpec, MarketSeries, SynthParams, generate_folds, load_csv, synth_series

CODE_VERSION = "0.1.0"


@dataclass(frozen=True)
class DataConfig:
    csv: str | None = None
    synth_seed: int = 7
    synth_days: int = 5200
    synth: SynthParams = field(default_factory=SynthParams)
    name: str = "synthetic"

    def load(self, base: Path | None = None) -> MarketSeries:
        if self.csv:
            path = Path(self.csv)
            if base is not None and not path.is_absolute():
                path = base / path
            series = load_csv(path)
            series.name = self.name
            return series
        series = synth_series(self.synth_seed, self.synth_days, self.synth)
        series.name = self.name
        return series


@dataclass(frozen=True)
class FoldConfig:
    anchor_train_start: str = "2008-01-01"
    anchor_train_end: str = "2010-06-30"
    k: int = 5
    embargo_days: int = 10
    search_folds: tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "search_folds", tuple(int(i) for i in self.search_folds))
        if self.k < 1 or any(not 1 <= i <= self.k for i in self.search_folds):
            raise ValueError("search_folds must index folds 1..k")

    def folds(self) -> list[FoldSpec]:
        return generate_folds(dt.date.fromisoformat(self.anchor_train_start),
                              dt.date.fromisoformat(self.anchor_train_end), self.k, self.embargo_days)


@dataclass(frozen=True)
class DatasetConfig:
    n_programs: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class DiagnoseConfig:
    n_prior_samples: int = 500
    disentangle_epsilon: float = 0.1
    disentangle_strategies: int = 100
    window: str = "val"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    run_id: str = "desk"
    out_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    folds: FoldConfig = field(default_factory=FoldConfig)
    language: MutationConfig = field(default_factory=MutationConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    geometry: SweepConfig = field(default_factory=SweepConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)
    es: EsConfig = field(default_factory=EsConfig)
    es_seeds: tuple[int, ...] = (0,)
    flow: FlowModelConfig = field(default_factory=FlowModelConfig)
    flow_traces: str = "isotropic"

    def __post_init__(self):
        object.__setattr__(self, "es_seeds", tuple(int(s) for s in self.es_seeds))
        if not self.es_seeds:
            raise ValueError("es_seeds must not be empty")
        if self.flow.latent_dim != self.vae.latent_dim:
            raise ValueError(f"flow.latent_dim {self.flow.latent_dim} != vae latent {self.vae.latent_dim}")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        """Hash of everything that affects results; output location is excluded."""
        d = self.to_dict()
        del d["out_dir"], d["run_id"]
        return config_hash(d)

    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_id

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _plain(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(d: dict) -> str:
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        sub = type(default) if dataclasses.is_dataclass(default) else None
        kw[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc


def config_from_dict(d: dict) -> RunConfig:
    return _build(RunConfig, d, "config")


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a config file; ``overrides`` replace top-level keys."""
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigInvalid(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(d)
