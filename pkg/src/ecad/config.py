"""Pipeline configuration: one JSON file with full-default fallback.

Every field has a default, so ``run-all --seed N`` works with an empty config.
Unknown keys are rejected to catch typos early.  Stage seeds, when left null,
are derived deterministically from the master seed so a single integer pins
the whole pipeline.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .backends import BackendSpec
from .detector import LocalityConfig
from .ensemble import AggregatorSpec
from .imputation import ImputerConfig
from .scenario import ErrorSpec, InjectionSpec, ScenarioConfig, TruthSpec

__all__ = ["EnsembleConfig", "FeatureConfig", "DetectorConfig", "PipelineConfig", "load_config"]

# Stage salts keep derived RNG streams independent of each other.
_SALT_SCENARIO = 1
_SALT_IMPUTER = 2
_SALT_ENSEMBLE = 3
_SALT_BACKEND = 4


@dataclass(frozen=True)
class EnsembleConfig:
    n_models: int = 25
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    seed: int | None = None

    def validate(self) -> None:
        if self.n_models < 1:
            raise ValueError(f"n_models must be >= 1, got {self.n_models}")
        self.aggregator.validate()


@dataclass(frozen=True)
class FeatureConfig:
    n_lags: int = 5
    neighbor_size: int = 5

    def validate(self) -> None:
        if self.n_lags < 1:
            raise ValueError(f"feature lag depth must be >= 1, got {self.n_lags}")
        if self.neighbor_size < 1:
            raise ValueError(f"feature neighbor size must be >= 1, got {self.neighbor_size}")


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.05
    locality: LocalityConfig = field(default_factory=LocalityConfig)
    exclude_flagged_from_window: bool = False

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        self.locality.validate()


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    missing_token: str = "NA"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    imputer: ImputerConfig = field(default_factory=ImputerConfig)
    backend: BackendSpec = field(default_factory=BackendSpec)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def validate(self) -> None:
        self.scenario.validate()
        self.imputer.validate()
        self.backend.validate()
        self.ensemble.validate()
        self.features.validate()
        self.detector.validate()
        if self.features.neighbor_size > self.scenario.n_sensors:
            raise ValueError("feature neighbor size exceeds sensor count")
        if self.features.n_lags >= self.scenario.n_train:
            raise ValueError("feature lag depth must be smaller than the training horizon")

    def out_path(self) -> Path:
        return Path(self.out_dir)


def _derived_seed(master: int, salt: int) -> int:
    return int(np.random.SeedSequence([int(master), salt]).generate_state(1)[0])


def resolve_seeds(cfg: PipelineConfig) -> PipelineConfig:
    """Fill any null stage seeds from the master seed."""
    scenario = cfg.scenario
    if scenario.seed is None:
        scenario = dataclasses.replace(scenario, seed=_derived_seed(cfg.seed, _SALT_SCENARIO))
    imputer = cfg.imputer
    if imputer.seed is None:
        imputer = dataclasses.replace(imputer, seed=_derived_seed(cfg.seed, _SALT_IMPUTER))
    ensemble = cfg.ensemble
    if ensemble.seed is None:
        ensemble = dataclasses.replace(ensemble, seed=_derived_seed(cfg.seed, _SALT_ENSEMBLE))
    backend = cfg.backend
    if backend.seed is None:
        backend = dataclasses.replace(backend, seed=_derived_seed(cfg.seed, _SALT_BACKEND))
    return dataclasses.replace(
        cfg, scenario=scenario, imputer=imputer, ensemble=ensemble, backend=backend
    )


_NESTED_TYPES: dict[type, dict[str, type]] = {
    PipelineConfig: {
        "scenario": ScenarioConfig,
        "imputer": ImputerConfig,
        "backend": BackendSpec,
        "ensemble": EnsembleConfig,
        "features": FeatureConfig,
        "detector": DetectorConfig,
    },
    ScenarioConfig: {"error": ErrorSpec, "injection": InjectionSpec, "truth": TruthSpec},
    ImputerConfig: {"inner_backend": BackendSpec},
    EnsembleConfig: {"aggregator": AggregatorSpec},
    DetectorConfig: {"locality": LocalityConfig},
}

_TUPLE_FIELDS = {(BackendSpec, "mlp_hidden")}


def _from_dict(cls: type, payload: dict[str, Any], path: str) -> Any:
    if not isinstance(payload, dict):
        raise ValueError(f"config section {path or 'root'} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ValueError(
            f"unknown config keys at {path or 'root'}: {sorted(unknown)}; known: {sorted(known)}"
        )
    kwargs: dict[str, Any] = {}
    nested = _NESTED_TYPES.get(cls, {})
    for key, value in payload.items():
        child = f"{path}.{key}" if path else key
        if key in nested:
            kwargs[key] = _from_dict(nested[key], value, child)
        elif (cls, key) in _TUPLE_FIELDS:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError(f"invalid config at {path or 'root'}: {exc}") from exc


def config_from_dict(payload: dict[str, Any]) -> PipelineConfig:
    return _from_dict(PipelineConfig, payload, "")


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path | None, seed: int | None = None, out_dir: str | None = None) -> PipelineConfig:
    """Load a pipeline config JSON; flags override the file's seed and out_dir."""
    if path is None:
        cfg = PipelineConfig()
    else:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc
        cfg = config_from_dict(payload)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=str(out_dir))
    cfg = resolve_seeds(cfg)
    cfg.validate()
    return cfg
