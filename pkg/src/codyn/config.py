"""Scenario and run configuration, loaded from YAML with strict key checking.

Top-level keys of a scenario file::

    seed:        seed used when the sweep block lists no seeds
    frames:      number of ego frames evaluated
    t_start:     first ego timestamp, ms
    grid:        x_min, x_max, y_min, y_max, cell_size, channels
    traffic:     lane_ys, speed_range, min_gap, max_gap, turner_fraction,
                 yaw_rate_max, extent, extent_jitter
    agents:      list of {id, pose, sensing_range, detect_prob, clock_offset};
                 the first entry is the ego
    schedule:    base_period, binomial_n, expected_delay_ms
    noise:       sigma_t (m), sigma_r (deg)
    detector:    fields of DetectorModel
    trust:       k, tau_frame, a, b, c0, tau_match
    fusion:      scales, weights ("identity" | "seeded"), weight_seed,
                 run_features, nms_iou
    matching:    "greedy" | "optimal"
    calibration: seed, frames

A run file adds a ``sweep`` block (delays_ms, noise_levels, variants, seeds)
next to ``scenario`` (inline mapping or a path to a scenario file).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

from .bev import GridSpec
from .detector import ConfigError, DetectorModel
from .flow import TrustParams
from .scenario import AgentSpec, ScheduleModel, TrafficModel

VARIANTS = ("full", "no-dftm", "no-compensation", "late-fusion", "single")


@dataclass(frozen=True)
class FusionConfig:
    scales: int = 2
    weights: str = "identity"
    weight_seed: int = 0
    run_features: bool = True
    nms_iou: float = 0.15

    def __post_init__(self):
        if self.weights not in ("identity", "seeded"):
            raise ConfigError(f"unknown fusion weights {self.weights!r}")
        if not (0.0 < self.nms_iou < 1.0):
            raise ConfigError("nms_iou must lie in (0, 1)")


@dataclass(frozen=True)
class CalibrationConfig:
    seed: int = 9001
    frames: int = 20


@dataclass(frozen=True)
class ScheduleConfig:
    base_period: float = 100.0
    binomial_n: int = 10
    expected_delay_ms: float = 0.0

    def model(self) -> ScheduleModel:
        return ScheduleModel.for_expected_delay(self.expected_delay_ms, self.base_period,
                                                self.binomial_n)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_t: float = 0.0
    sigma_r: float = 0.0

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ConfigError("pose noise must be nonnegative")


def _default_agents() -> tuple[AgentSpec, ...]:
    return (
        AgentSpec(0, (-20.0, 0.0, 0.0), sensing_range=35.0, detect_prob=0.95),
        AgentSpec(1, (20.0, 0.0, 3.141592653589793), sensing_range=35.0, detect_prob=0.95),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    frames: int = 30
    t_start: float = 1000.0
    grid: GridSpec = GridSpec(-40.0, 40.0, -20.0, 20.0, 0.4, 8)
    traffic: TrafficModel = TrafficModel()
    agents: tuple[AgentSpec, ...] = field(default_factory=_default_agents)
    schedule: ScheduleConfig = ScheduleConfig()
    noise: NoiseConfig = NoiseConfig()
    detector: DetectorModel = DetectorModel()
    trust: TrustParams = TrustParams(tau_match=6.0)
    fusion: FusionConfig = FusionConfig()
    matching: str = "greedy"
    calibration: CalibrationConfig = CalibrationConfig()

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if len(self.agents) < 1:
            raise ConfigError("need at least the ego agent")
        if len({a.id for a in self.agents}) != len(self.agents):
            raise ConfigError("agent ids must be unique")
        if self.matching not in ("greedy", "optimal"):
            raise ConfigError(f"unknown matching method {self.matching!r}")
        if self.t_start < 0:
            raise ConfigError("t_start must be >= 0")

    @property
    def ego(self) -> AgentSpec:
        return self.agents[0]

    @property
    def collaborators(self) -> tuple[AgentSpec, ...]:
        return self.agents[1:]

    def with_cell(self, expected_delay_ms: float, sigma_t: float, sigma_r: float) -> "ScenarioConfig":
        return dataclasses.replace(
            self,
            schedule=dataclasses.replace(self.schedule, expected_delay_ms=float(expected_delay_ms)),
            noise=NoiseConfig(float(sigma_t), float(sigma_r)),
        )

    def to_dict(self) -> dict:
        return _to_plain(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class SweepConfig:
    delays_ms: tuple[float, ...] = (0.0, 300.0, 500.0)
    noise_levels: tuple[float, ...] = (0.0,)
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not self.delays_ms or not self.noise_levels or not self.variants or not self.seeds:
            raise ConfigError("sweep grids and seed list must be nonempty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; choose from {list(VARIANTS)}")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    sweep: SweepConfig
    source: str | None = None


# -- dict <-> dataclass -------------------------------------------------------------

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(names[key], value, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    "grid": GridSpec, "traffic": TrafficModel, "schedule": ScheduleConfig, "noise": NoiseConfig,
    "detector": DetectorModel, "trust": TrustParams, "fusion": FusionConfig,
    "calibration": CalibrationConfig,
}
_TUPLE_FIELDS = {"lane_ys", "speed_range", "extent", "pose", "delays_ms", "noise_levels",
                 "variants", "seeds"}


def _coerce(f: dataclasses.Field, value, where: str):
    if f.name in _NESTED:
        return _build(_NESTED[f.name], value, where)
    if f.name == "agents":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list of agents")
        return tuple(_build(AgentSpec, _tuplify(a), f"{where}[{i}]") for i, a in enumerate(value))
    if f.name in _TUPLE_FIELDS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    return value


def _tuplify(d):
    if isinstance(d, dict) and "pose" in d and isinstance(d["pose"], list):
        d = {**d, "pose": tuple(d["pose"])}
    return d


def scenario_from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data or {}, "scenario")


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return scenario_from_dict(data or {})


def load_run_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(data) - {"scenario", "sweep"})
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    scen = data.get("scenario", {})
    if isinstance(scen, str):
        scen_path = scen if os.path.isabs(scen) else os.path.join(os.path.dirname(path), scen)
        if not os.path.exists(scen_path):
            raise ConfigError(f"scenario file not found: {scen_path}")
        scenario = load_scenario(scen_path)
    else:
        scenario = scenario_from_dict(scen)
    sweep_data = data.get("sweep") or {}
    if isinstance(sweep_data, dict) and "seeds" not in sweep_data:
        sweep_data = {**sweep_data, "seeds": [scenario.seed]}
    sweep = _build(SweepConfig, sweep_data, "sweep")
    return RunConfig(scenario, sweep, os.path.abspath(path))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
