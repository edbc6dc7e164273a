"""Synthetic worlds: moving objects, agents, irregular sampling schedules, pose noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bev import wrap_angle

FRAME_PERIOD_MS = 100.0


@dataclass(frozen=True)
class ObjectTrack:
    id: int
    pose0: tuple[float, float, float]
    velocity: tuple[float, float]
    yaw_rate: float = 0.0
    extent: tuple[float, float, float] = (4.5, 2.0, 1.6)

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("object extents must be positive")
        vals = (*self.pose0, *self.velocity, self.yaw_rate)
        if not all(map(math.isfinite, vals)):
            raise ValueError("non-finite kinematics")


@dataclass(frozen=True)
class ObjectState:
    """Snapshot of a track at a given time."""

    id: int
    x: float
    y: float
    yaw: float
    extent: tuple[float, float, float]
    velocity: tuple[float, float]


@dataclass(frozen=True)
class AgentSpec:
    id: int
    pose: tuple[float, float, float]
    sensing_range: float = 35.0
    detect_prob: float = 0.95
    clock_offset: float = 0.0

    def __post_init__(self):
        if self.sensing_range <= 0:
            raise ValueError("sensing_range must be positive")
        if not (0.0 < self.detect_prob <= 1.0):
            raise ValueError("detect_prob must lie in (0, 1]")


@dataclass(frozen=True)
class ScheduleModel:
    base_period: float = FRAME_PERIOD_MS
    binomial_n: int = 10
    binomial_p: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.binomial_p <= 1.0):
            raise ValueError("binomial_p must lie in [0, 1]")
        if self.binomial_n < 0 or self.base_period <= 0:
            raise ValueError("invalid schedule model")

    @classmethod
    def for_expected_delay(cls, expected_ms: float, base_period: float = FRAME_PERIOD_MS,
                           n: int = 10) -> "ScheduleModel":
        """n = 10 trials with p chosen so that base * n * p equals the expected interval."""
        p = expected_ms / (base_period * n)
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"expected delay {expected_ms} ms not reachable with n={n}")
        return cls(base_period, n, p)

    @property
    def expected_interval(self) -> float:
        return self.base_period * self.binomial_n * self.binomial_p


@dataclass(frozen=True)
class FrameObservation:
    agent_id: int
    t: float
    objects: list[ObjectState] = field(default_factory=list)


def state_at(track: ObjectTrack, t: float) -> ObjectState:
    s = t / 1000.0
    x0, y0, a0 = track.pose0
    return ObjectState(
        id=track.id,
        x=x0 + track.velocity[0] * s,
        y=y0 + track.velocity[1] * s,
        yaw=wrap_angle(a0 + track.yaw_rate * s),
        extent=track.extent,
        velocity=track.velocity,
    )


def world_at(tracks, t: float) -> list[ObjectState]:
    """Constant-velocity / constant-yaw-rate poses at time ``t`` (ms)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return [state_at(tr, t) for tr in tracks]


def sample_intervals(model: ScheduleModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Frame intervals in ms: base_period * Binomial(n, p), floored at one base period."""
    if count < 1:
        raise ValueError("count must be >= 1")
    draws = rng.binomial(model.binomial_n, model.binomial_p, size=count)
    return np.maximum(draws * model.base_period, model.base_period).astype(float)


def in_range(agent: AgentSpec, x: float, y: float) -> bool:
    return math.hypot(x - agent.pose[0], y - agent.pose[1]) <= agent.sensing_range


def observe(agent: AgentSpec, tracks, t: float, rng: np.random.Generator) -> FrameObservation:
    """Objects within range, each kept independently with probability ``detect_prob``."""
    states = sorted(world_at(tracks, t), key=lambda s: s.id)
    # one uniform per object keeps the RNG stream independent of which are in range
    u = rng.random(len(states))
    visible = [s for s, ui in zip(states, u)
               if in_range(agent, s.x, s.y) and ui < agent.detect_prob]
    return FrameObservation(agent.id, float(t), visible)


def perturb_pose(pose, sigma_t: float, sigma_r_deg: float, rng: np.random.Generator):
    """Gaussian pose error: N(0, sigma_t) on x and y, N(0, sigma_r) degrees on yaw."""
    if sigma_t < 0 or sigma_r_deg < 0:
        raise ValueError("noise standard deviations must be nonnegative")
    dx, dy = rng.normal(0.0, sigma_t, size=2)
    da = math.radians(rng.normal(0.0, sigma_r_deg))
    x, y, a = pose
    return (x + dx, y + dy, wrap_angle(a + da))


# -- world generation ---------------------------------------------------------

@dataclass(frozen=True)
class TrafficModel:
    """Lane-based traffic: parallel lanes along x, alternating direction."""

    lane_ys: tuple[float, ...] = (-14.0, -10.0, -6.0, -2.0, 2.0, 6.0, 10.0, 14.0)
    speed_range: tuple[float, float] = (8.0, 14.0)
    min_gap: float = 14.0
    max_gap: float = 30.0
    turner_fraction: float = 0.0
    yaw_rate_max: float = 0.05
    extent: tuple[float, float, float] = (4.5, 2.0, 1.6)
    extent_jitter: float = 0.1


def generate_tracks(model: TrafficModel, x_range: tuple[float, float], duration_ms: float,
                    rng: np.random.Generator) -> list[ObjectTrack]:
    """Fill each lane so that its span stays populated over ``duration_ms``."""
    tracks: list[ObjectTrack] = []
    s = duration_ms / 1000.0
    for lane, y in enumerate(model.lane_ys):
        direction = 1.0 if lane % 2 == 0 else -1.0
        lane_speed = rng.uniform(*model.speed_range)
        reach = model.speed_range[1] * s + model.max_gap
        lo, hi = x_range[0] - reach, x_range[1] + reach
        x = lo + rng.uniform(0.0, model.max_gap)
        while x < hi:
            speed = float(np.clip(lane_speed + rng.uniform(-0.5, 0.5), *model.speed_range))
            yaw = 0.0 if direction > 0 else math.pi
            yaw_rate = 0.0
            if rng.random() < model.turner_fraction:
                yaw_rate = float(rng.uniform(-model.yaw_rate_max, model.yaw_rate_max))
            scale = 1.0 + rng.uniform(-model.extent_jitter, model.extent_jitter)
            ext = (model.extent[0] * scale, model.extent[1] * scale, model.extent[2])
            tracks.append(ObjectTrack(
                id=len(tracks),
                pose0=(float(x), float(y), yaw),
                velocity=(direction * speed, 0.0),
                yaw_rate=yaw_rate,
                extent=ext,
            ))
            x += rng.uniform(model.min_gap, model.max_gap)
    return tracks


def agent_timestamps(agent: AgentSpec, model: ScheduleModel, t_end: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Strictly increasing sampling instants from ``clock_offset`` up to ``t_end``."""
    est = int(t_end / model.base_period) + 2
    steps = sample_intervals(model, est, rng)
    ts = agent.clock_offset + np.concatenate([[0.0], np.cumsum(steps)])
    return ts[ts <= t_end]
