"""Declarative run configuration: one strict TOML file drives every command.

Unknown keys are rejected with their dotted path so typos never silently
fall back to defaults.  Every section is optional; omitted values take the
defaults of the underlying dataclasses.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .environment import EnvConfig, EnvError, NoiseModel, RewardShaping
from .planners import GeometricSettings, PlannerError
from .rl.ppo import TrainConfig
from .volume import PhantomConfig, VolumeError

__all__ = ["ConfigError", "DatasetConfig", "PlannerConfig", "EvalConfig",
           "RunConfig", "load_run_config", "parse_run_config"]


class ConfigError(ValueError):
    """Malformed, unknown or out-of-range configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    dir: str = "data"
    count: int = 32
    split: float = 0.7

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"dataset.count must be >= 1, got {self.count}")
        if not (0 < self.split < 1):
            raise ConfigError(f"dataset.split must be in (0, 1), got {self.split}")


@dataclass(frozen=True)
class PlannerConfig:
    """Declarative planner entry; the rl kind resolves its checkpoint lazily."""

    kind: str
    diameter_grid: tuple[float, ...] = ()
    candidate_subsample: float = 0.25
    refine_iters: int = 2
    refine_step: float = 1.0
    healthy_penalty: float = 0.0
    checkpoint: str = ""

    def geometric_settings(self) -> GeometricSettings:
        return GeometricSettings(
            candidate_subsample=self.candidate_subsample,
            refine_iters=self.refine_iters,
            refine_step=self.refine_step,
            healthy_penalty=self.healthy_penalty,
        )


@dataclass(frozen=True)
class EvalConfig:
    planners: tuple[str, ...] = ("random", "centre", "geometric", "rl")

    def __post_init__(self):
        if len(self.planners) == 0:
            raise ConfigError("eval.planners must name at least one planner")


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "runs/default"
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    planners: dict = field(default_factory=dict)      # name -> PlannerConfig
    eval: EvalConfig = field(default_factory=EvalConfig)

    def planner_config(self, name: str) -> PlannerConfig:
        """Configured entry for name, or a bare default of that kind."""
        if name in self.planners:
            return self.planners[name]
        return PlannerConfig(kind=name)


def _build(cls, table: dict, path: str, casts: dict | None = None):
    """Construct a dataclass from a TOML table, rejecting unknown keys."""
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    kwargs = {}
    for key, value in table.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{path}.{key}'")
        if casts and key in casts:
            value = casts[key](value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, EnvError, PlannerError, VolumeError) as exc:
        raise ConfigError(f"invalid [{path}] section: {exc}") from exc


def parse_run_config(table: dict, source: str = "<config>") -> RunConfig:
    known = {"out_dir", "seed", "dataset", "phantom", "env", "train", "planners", "eval"}
    for key in table:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'")

    env_table = dict(table.get("env", {}))
    noise = _build(NoiseModel, env_table.pop("noise", {}), "env.noise")
    shaping = _build(RewardShaping, env_table.pop("shaping", {}), "env.shaping")
    env = _build(EnvConfig, env_table, "env")
    env = replace(env, noise=noise, shaping=shaping)

    planners = {}
    for name, sub in table.get("planners", {}).items():
        if not isinstance(sub, dict):
            raise ConfigError(f"'planners.{name}' must be a table")
        sub = dict(sub)
        sub.setdefault("kind", name)
        planners[name] = _build(PlannerConfig, sub, f"planners.{name}")
        if planners[name].kind not in ("random", "centre", "geometric", "rl"):
            raise ConfigError(f"'planners.{name}.kind' is {planners[name].kind!r}, "
                              "expected random, centre, geometric or rl")

    try:
        return RunConfig(
            out_dir=str(table.get("out_dir", RunConfig.out_dir)),
            seed=int(table.get("seed", RunConfig.seed)),
            dataset=_build(DatasetConfig, table.get("dataset", {}), "dataset"),
            phantom=_build(PhantomConfig, table.get("phantom", {}), "phantom"),
            env=env,
            train=_build(TrainConfig, table.get("train", {}), "train"),
            planners=planners,
            eval=_build(EvalConfig, table.get("eval", {}), "eval"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            table = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return parse_run_config(table, source=str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
