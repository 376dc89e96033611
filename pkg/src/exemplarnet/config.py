"""Run configuration for the command line: one JSON file, sectioned by stage.

Every section is optional; missing keys take the defaults below. Unknown keys
at any level are an error so that typos never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .optim import OptimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    grid_dim: int = 16
    embed_dim: int = 32
    hidden: int = 32
    dcn_combine: str = "mul"
    dcn_scaling: str = "v2"
    triplet_space: str = "attended"
    nu: float = 0.03
    gamma: float = 10.0
    alpha: float = 0.2
    lam: float = 1e-4
    quint_margins: tuple = (0.006, 0.2, 0.006)


@dataclass(frozen=True)
class ExemplarSection:
    k: int = 1
    num_bins: int = 50
    offset: int = 20


@dataclass(frozen=True)
class TrainSection:
    steps: int = 800
    retrieval_steps: int = 600


@dataclass(frozen=True)
class DecodeSection:
    max_len: int = 12
    temperature: float = 1.0


@dataclass(frozen=True)
class PathSection:
    data: str = "data"
    index: str = "index"
    runs: str = "runs"


# desk-scale defaults: small grid and widths so a full run takes seconds
DATA_DEFAULTS = {"regions": 49, "channels": 16, "bump_width": 1.0, "signal": 6.0, "sigma": 2.0}
OPTIM_DEFAULTS = {"lr_class": 0.003}

_SECTIONS = {
    "data": SyntheticSpec, "optim": OptimConfig, "model": ModelSection,
    "exemplars": ExemplarSection, "train": TrainSection, "decode": DecodeSection, "paths": PathSection,
}


@dataclass(frozen=True)
class RunConfig:
    data: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(**DATA_DEFAULTS))
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(**OPTIM_DEFAULTS))
    model: ModelSection = field(default_factory=ModelSection)
    exemplars: ExemplarSection = field(default_factory=ExemplarSection)
    train: TrainSection = field(default_factory=TrainSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    paths: PathSection = field(default_factory=PathSection)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, data=dataclasses.replace(self.data, seed=seed),
                                   optim=dataclasses.replace(self.optim, seed=seed))


def _section(cls, raw, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    base = {"data": DATA_DEFAULTS, "optim": OPTIM_DEFAULTS}.get(name, {})
    vals = {**base, **raw}
    if "quint_margins" in vals:
        vals["quint_margins"] = tuple(vals["quint_margins"])
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in {name!r}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    return RunConfig(**{name: _section(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()})


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)
