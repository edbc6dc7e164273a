"""Synthetic single-agent detector with MC-dropout style uncertainty.

Each visible object gets ``T`` jittered inference draws around a
distance-dependent systematic error. The reported ROI is the mean draw;
the draw spread gives the epistemic terms and a variance-head analogue
(growing with range) gives the aleatoric terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bev import GridSpec, RoiBox, SparseFeatureMap, rasterize_roi_array, wrap_angle
from .message import CollabMessage, RawUncertainty, encode, pack_message  # noqa: F401
from .scenario import AgentSpec, FrameObservation

FP_ID_BASE = 1_000_000
_EMBED_TAG = 0xC0D1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorModel:
    T: int = 8
    center_noise_base: float = 0.05
    center_noise_slope: float = 0.004
    yaw_noise: float = 0.02
    extent_noise: float = 0.02
    conf_base: float = 0.95
    conf_distance_decay: float = 0.012
    false_positive_rate: float = 1.0
    dropout_jitter: float = 0.1
    ale_cls_base: float = 0.05
    ale_cls_ref: float = 20.0
    ale_noise: float = 0.1

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("T must be >= 2 (variance undefined otherwise)")
        stds = (self.center_noise_base, self.center_noise_slope, self.yaw_noise,
                self.extent_noise, self.dropout_jitter, self.ale_noise)
        if min(stds) < 0 or self.false_positive_rate < 0:
            raise ConfigError("noise levels and rates must be nonnegative")

    def center_noise(self, r: float) -> float:
        return self.center_noise_base + self.center_noise_slope * r

    def confidence(self, r: float) -> float:
        return float(np.clip(self.conf_base * math.exp(-self.conf_distance_decay * r), 0.05, 0.99))

    def ale_cls(self, r: float) -> float:
        return self.ale_cls_base * (1.0 + r / self.ale_cls_ref)

    def ale_reg(self, r: float) -> float:
        # yaw concentration folded in as an inverse-concentration (variance) term
        return self.center_noise(r) ** 2 + self.yaw_noise ** 2

    @classmethod
    def perfect(cls, T: int = 2) -> "DetectorModel":
        return cls(T=T, center_noise_base=0.0, center_noise_slope=0.0, yaw_noise=0.0,
                   extent_noise=0.0, conf_base=0.99, conf_distance_decay=0.0,
                   false_positive_rate=0.0, dropout_jitter=0.0, ale_noise=0.0)


@dataclass
class Detections:
    rois: list[RoiBox]
    uncertainties: list[RawUncertainty]
    source_ids: list[int]
    draws: list[np.ndarray] = field(default_factory=list)  # (T, 4): c, x, y, yaw per TP


def binary_entropy(c: float) -> float:
    if c <= 0.0 or c >= 1.0:
        return 0.0
    return -c * math.log(c) - (1.0 - c) * math.log(1.0 - c)


def _logit(c: float) -> float:
    return math.log(c / (1.0 - c))


def detect_frame(obs: FrameObservation, model: DetectorModel, rng: np.random.Generator,
                 agent: AgentSpec | None = None) -> Detections:
    ax, ay = (agent.pose[0], agent.pose[1]) if agent is not None else (0.0, 0.0)
    T = model.T
    out = Detections([], [], [])
    for obj in obs.objects:
        r = math.hypot(obj.x - ax, obj.y - ay)
        sc = model.center_noise(r)
        ex, ey = rng.normal(0.0, sc, size=2)
        ea = rng.normal(0.0, model.yaw_noise)
        scale = 1.0 + rng.normal(0.0, model.extent_noise, size=2)
        jit = rng.normal(0.0, model.dropout_jitter, size=(T, 4))
        logit_c = _logit(model.confidence(r))
        # draws stored as offsets from the draw-0 value so zero jitter gives identical draws
        base = np.array([0.0, obj.x + ex, obj.y + ey, obj.yaw + ea])
        offs = jit.copy()
        offs[:, 0] = 0.0
        offs[:, 3] *= 0.1
        draws = base + offs
        draws[:, 0] = 1.0 / (1.0 + np.exp(-(logit_c + jit[:, 0])))
        rel = draws - draws[0]
        mean = draws[0] + rel.mean(axis=0)
        var_xy = rel[:, 1:3].var(axis=0, ddof=1)
        c = float(np.clip(mean[0], 0.0, 1.0))
        dx = max(obj.extent[0] * scale[0], 0.1)
        dy = max(obj.extent[1] * scale[1], 0.1)
        out.rois.append(RoiBox(c, float(mean[1]), float(mean[2]), float(dx), float(dy),
                               wrap_angle(float(mean[3])), 0.0, obj.extent[2]))
        noise = np.exp(rng.normal(0.0, model.ale_noise, size=2))
        out.uncertainties.append(RawUncertainty(
            u_ale_cls=float(model.ale_cls(r) * noise[0]),
            u_ale_reg=float(model.ale_reg(r) * noise[1]),
            u_epi_cls=binary_entropy(c),
            u_epi_reg=float(var_xy.mean()),
        ))
        out.source_ids.append(obj.id)
        out.draws.append(draws)
    _append_false_positives(out, model, rng, (ax, ay),
                            agent.sensing_range if agent is not None else 30.0)
    return out


def _fp_uncertainty(model: DetectorModel, rng_range: float, c: float) -> RawUncertainty:
    """False-positive uncertainties sit at the 90th percentile of true-positive levels."""
    r90 = 0.9 * rng_range
    dof = 2 * (model.T - 1)
    epi_reg = model.dropout_jitter ** 2 * stats.chi2.ppf(0.9, dof) / dof
    lift = math.exp(model.ale_noise * stats.norm.ppf(0.9))
    return RawUncertainty(
        u_ale_cls=model.ale_cls(r90) * lift,
        u_ale_reg=model.ale_reg(r90) * lift,
        u_epi_cls=binary_entropy(c),
        u_epi_reg=float(epi_reg),
    )


def _append_false_positives(out: Detections, model: DetectorModel, rng: np.random.Generator,
                            origin, rng_range: float):
    n_fp = rng.poisson(model.false_positive_rate) if model.false_positive_rate > 0 else 0
    for k in range(n_fp):
        rad = rng_range * math.sqrt(rng.random())
        ang = rng.uniform(-math.pi, math.pi)
        c = float(rng.uniform(0.1, 0.35))
        yaw = float(rng.uniform(-math.pi, math.pi))
        out.rois.append(RoiBox(c, origin[0] + rad * math.cos(ang), origin[1] + rad * math.sin(ang),
                               4.5, 2.0, yaw))
        out.uncertainties.append(_fp_uncertainty(model, rng_range, c))
        out.source_ids.append(FP_ID_BASE + k)


def detect_stochastic(obs: FrameObservation, model: DetectorModel, rng: np.random.Generator,
                      agent: AgentSpec | None = None):
    det = detect_frame(obs, model, rng, agent)
    return det.rois, det.uncertainties


def embedding(source_id: int, D: int) -> np.ndarray:
    """Unit-norm pseudo-random direction tied to an object id."""
    g = np.random.default_rng(np.random.SeedSequence([_EMBED_TAG, int(source_id)]))
    v = g.normal(size=D)
    return v / np.linalg.norm(v)


def embed_features(rois, grid: GridSpec, D: int | None = None, ids=None) -> SparseFeatureMap:
    """Each ROI stamps ``confidence * e(id)`` onto its cells; overlaps add up."""
    D = grid.channels if D is None else D
    if D < 2:
        raise ConfigError("D must be >= 2")
    if D != grid.channels:
        raise ConfigError(f"D={D} does not match grid channels {grid.channels}")
    ids = list(range(len(rois))) if ids is None else list(ids)
    acc: dict[int, np.ndarray] = {}
    for roi, sid in zip(rois, ids):
        cells = rasterize_roi_array(roi, grid)
        if not len(cells):
            continue
        vec = roi.confidence * embedding(sid, D)
        for flat in (cells[:, 0] * grid.W + cells[:, 1]).tolist():
            if flat in acc:
                acc[flat] = acc[flat] + vec
            else:
                acc[flat] = vec.copy()
    if not acc:
        return SparseFeatureMap(grid)
    flats = np.array(sorted(acc))
    idx = np.stack([flats // grid.W, flats % grid.W], axis=1)
    return SparseFeatureMap(grid, idx, np.array([acc[f] for f in flats]))
