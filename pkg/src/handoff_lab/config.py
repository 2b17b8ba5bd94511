"""Experiment configuration as an INI file with one section per component."""

from __future__ import annotations

import configparser
import io
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .deployment import DeploymentConfig, Mode
from .handoff import RewardSpec
from .memn2n import Hyperparams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    data_dir: str = ""  # empty: generate into <out>/data
    policy: str = "modified"
    n_train: int = 1000
    n_dev: int = 200
    n_test: int = 1000
    seed: int = 599
    n_cuisines: int = 3
    n_locations: int = 3
    p_volunteer: float = 0.5
    p_update: float = 0.5
    max_extra_rejections: int = 3
    p_address: float = 0.5
    p_phone: float = 0.75

    def __post_init__(self):
        if self.policy not in ("modified", "original"):
            raise ConfigError(f"policy must be 'modified' or 'original', got {self.policy!r}")


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "runs/default"
    train_seed: int = 599


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: Hyperparams = field(default_factory=Hyperparams)
    deploy: DeploymentConfig = field(default_factory=DeploymentConfig)
    run: RunConfig = field(default_factory=RunConfig)

    SECTIONS = ("data", "model", "deploy", "run")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in self.SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _dump(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(cp.sections()) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        base = cls()
        parts = {}
        for name in cls.SECTIONS:
            default = getattr(base, name)
            values = dict(cp[name]) if cp.has_section(name) else {}
            parts[name] = _load_section(type(default), default, values, name)
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_ini(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ini())


def _dump(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, Mode):
        return value.value
    if isinstance(value, RewardSpec):
        return value.label()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(tp, raw: str, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.strip().lower() in ("none", ""):
            return None
        return _convert(args[0], raw, key)
    try:
        if tp is bool:
            return {"true": True, "false": False, "1": True, "0": False}[raw.strip().lower()]
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if tp is Mode:
            return Mode.parse(raw)
        if tp is RewardSpec:
            return RewardSpec.parse(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    raise ConfigError(f"unsupported field type for {key}: {tp}")


def _load_section(cls, default, values: dict, section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{section}.{k}") for k, v in values.items()}
    try:
        return replace(default, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def apply_overrides(cfg: ExperimentConfig, *, seed: Optional[int] = None, command: str = "",
                    mode: Optional[str] = None, reward: Optional[str] = None,
                    out_dir: Optional[str] = None) -> ExperimentConfig:
    """Command-line overrides; --seed applies to the seed the given command consumes."""
    data, model, deploy, run = cfg.data, cfg.model, cfg.deploy, cfg.run
    if seed is not None:
        if command == "gen-data":
            data = replace(data, seed=seed)
        elif command == "train":
            model = replace(model, init_seed=seed)
            run = replace(run, train_seed=seed)
        elif command == "deploy":
            deploy = replace(deploy, permutation_seed=seed)
    if mode is not None:
        deploy = replace(deploy, mode=Mode.parse(mode))
    if reward is not None:
        deploy = replace(deploy, reward=RewardSpec.parse(reward))
    if out_dir is not None:
        run = replace(run, out_dir=out_dir)
    return ExperimentConfig(data, model, deploy, run)
