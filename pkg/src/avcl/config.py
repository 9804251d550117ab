"""Strict JSON run configuration.

Unknown keys anywhere in the file are rejected outright; a silently
ignored typo in an experiment config is how irreproducible results
happen. Every section is optional and falls back to the documented
defaults.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .audio import StftParams
from .data import SyntheticSpec
from .errors import ConfigError
from .losses import LossConfig
from .train import VALID_AXES, TrainConfig


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs"
    checkpoint: str | None = None
    data_dir: str | None = None
    manifest: str | None = None


@dataclass(frozen=True)
class AblateConfig:
    axes: tuple = tuple(VALID_AXES)
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for axis in self.axes:
            if axis not in VALID_AXES:
                raise ConfigError(f"ablate.axes: unknown axis {axis!r}; valid: {VALID_AXES}")


@dataclass
class RunConfig:
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    stft: StftParams = field(default_factory=StftParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        """A master seed overrides both the data and training seeds."""
        return dataclasses.replace(
            self,
            data=dataclasses.replace(self.data, seed=seed),
            train=dataclasses.replace(self.train, seed=seed))


_SCALARS = {int, float, bool, str}


def _coerce(value, ftype, where):
    origin = typing.get_origin(ftype)
    if origin is typing.Union:
        args = [a for a in typing.get_args(ftype) if a is not type(None)]
        if value is None:
            return None
        ftype = args[0]
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if ftype is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(dc_type, section: dict, where: str, overrides: dict | None = None):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {section!r}")
    spec_fields = {f.name: f for f in dataclasses.fields(dc_type)}
    hints = typing.get_type_hints(dc_type)
    unknown = sorted(set(section) - set(spec_fields) - set(overrides or {}))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(repr(k) for k in unknown)}")
    kwargs = {}
    for name, value in section.items():
        kwargs[name] = _coerce(value, hints.get(name, type(value)), f"{where}.{name}")
    if overrides:
        kwargs.update(overrides)
    try:
        return dc_type(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTIONS = ("data", "stft", "loss", "train", "ablate", "paths")


def parse_config(doc: dict, where: str = "config") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: top level must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(
            f"{where}: unknown section(s) {', '.join(repr(k) for k in unknown)}; "
            f"valid sections: {', '.join(_SECTIONS)}")
    loss = _build(LossConfig, doc.get("loss", {}), f"{where}.loss")
    train_section = dict(doc.get("train", {}))
    if "loss" in train_section:
        raise ConfigError(f"{where}.train: put loss settings in the top-level 'loss' section")
    return RunConfig(
        data=_build(SyntheticSpec, doc.get("data", {}), f"{where}.data"),
        stft=_build(StftParams, doc.get("stft", {}), f"{where}.stft"),
        train=_build(TrainConfig, train_section, f"{where}.train", overrides={"loss": loss}),
        ablate=_build(AblateConfig, doc.get("ablate", {}), f"{where}.ablate"),
        paths=_build(PathsConfig, doc.get("paths", {}), f"{where}.paths"),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(doc, where=str(path))


def config_dict(cfg: RunConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["train"].pop("loss", None)
    doc["loss"] = dataclasses.asdict(cfg.train.loss)
    return doc
