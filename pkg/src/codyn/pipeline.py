"""End-to-end experiment harness.

A *stream* is everything that does not depend on the pipeline variant: the
world, every agent's detections, and the collaborators' packed messages. All
variants of one (config, seed) run on the same stream, which is what makes
seed-paired comparisons meaningful.

Variants:

``full``             motion compensation + trust modulus
``no-dftm``          motion compensation, unit trust
``no-compensation``  trust modulus on stale ROIs/features (flow left at identity)
``late-fusion``      latest collaborator boxes merged by NMS at raw confidence
``single``           ego detections only
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bev import RoiBox, wrap_angle
from .config import VARIANTS, ConfigError, ScenarioConfig, SweepConfig
from .detector import FP_ID_BASE, detect_frame, embed_features
from .flow import build_flow_map, dftm, match_rois, reduce_uncertainty, warp_with_dftm
from .fusion import FusionWeights, decode_boxes, multi_scale_fuse
from .message import CollabMessage, encode, message_size, pack_message
from .metrics import DetectionRecord, ap_at_iou
from .scenario import (AgentSpec, ObjectState, agent_timestamps, generate_tracks, observe,
                       perturb_pose, world_at)
from .uncertainty import UncertaintyCalibration, calibrate_channels, rescale_set

log = logging.getLogger(__name__)

_TAG_WORLD, _TAG_SCHED, _TAG_DET, _TAG_POSE, _TAG_CALIB = 11, 13, 17, 19, 23

CSV_FIELDS = ["variant", "expected_delay_ms", "sigma_t_m", "sigma_r_deg", "seed",
              "ap50", "ap70", "mean_msg_bytes", "frames"]


class InvariantError(RuntimeError):
    """A harness-level invariant failed; indicates a bug, not bad input."""


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def apply_pose_error(roi: RoiBox, true_pose, believed_pose) -> RoiBox:
    """Re-express a world-frame box as seen through a wrong sender pose."""
    tx, ty, ta = true_pose
    bx, by, ba = believed_pose
    if (tx, ty, ta) == (bx, by, ba):
        return roi
    c, s = math.cos(ta), math.sin(ta)
    lx = c * (roi.x - tx) + s * (roi.y - ty)
    ly = -s * (roi.x - tx) + c * (roi.y - ty)
    c2, s2 = math.cos(ba), math.sin(ba)
    return roi.replace(x=bx + c2 * lx - s2 * ly, y=by + s2 * lx + c2 * ly,
                       yaw=wrap_angle(roi.yaw - ta + ba))


@dataclass
class EgoFrame:
    index: int
    t: float
    rois: list[RoiBox]
    source_ids: list[int]
    gts: list[RoiBox]


@dataclass
class CollabStream:
    agent: AgentSpec
    timestamps: np.ndarray
    messages: list[CollabMessage]
    sizes: list[int]

    def latest(self, t: float) -> int:
        """Index of the newest message stamped at or before ``t`` (-1 if none)."""
        return int(np.searchsorted(self.timestamps, t, side="right")) - 1


@dataclass
class Stream:
    config: ScenarioConfig
    seed: int
    ego: list[EgoFrame]
    collabs: list[CollabStream]

    def digest(self) -> str:
        h = hashlib.sha256()
        for f in self.ego:
            h.update(repr((f.t, [r.as_tuple() for r in f.rois], f.source_ids)).encode())
        for c in self.collabs:
            for m in c.messages:
                h.update(encode(m))
        return h.hexdigest()


def _gt_box(s: ObjectState) -> RoiBox:
    return RoiBox(1.0, s.x, s.y, s.extent[0], s.extent[1], s.yaw, 0.0, s.extent[2])


def build_stream(cfg: ScenarioConfig, seed: int) -> Stream:
    grid = cfg.grid
    t_end = cfg.t_start + (cfg.frames - 1) * cfg.schedule.base_period
    tracks = generate_tracks(cfg.traffic, (grid.x_min, grid.x_max), t_end, _rng(seed, _TAG_WORLD))
    ego_agent = cfg.ego
    ego = []
    for i in range(cfg.frames):
        t = cfg.t_start + i * cfg.schedule.base_period
        rng = _rng(seed, _TAG_DET, ego_agent.id, 0, i)
        det = detect_frame(observe(ego_agent, tracks, t, rng), cfg.detector, rng, ego_agent)
        gts = [_gt_box(s) for s in world_at(tracks, t) if grid.contains(s.x, s.y)]
        ego.append(EgoFrame(i, t, det.rois, det.source_ids, gts))

    collabs = []
    sched = cfg.schedule.model()
    for agent in cfg.collaborators:
        ts = agent_timestamps(agent, sched, t_end, _rng(seed, _TAG_SCHED, agent.id))
        msgs, sizes = [], []
        for k, t in enumerate(ts):
            rng = _rng(seed, _TAG_DET, agent.id, 1, k)
            det = detect_frame(observe(agent, tracks, t, rng), cfg.detector, rng, agent)
            believed = perturb_pose(agent.pose, cfg.noise.sigma_t, cfg.noise.sigma_r,
                                    _rng(seed, _TAG_POSE, agent.id, k))
            rois = [apply_pose_error(r, agent.pose, believed) for r in det.rois]
            feats = embed_features(rois, grid, grid.channels, det.source_ids)
            msg, data = pack_message(agent.id, t, rois, det.uncertainties, feats)
            msgs.append(msg)
            sizes.append(len(data))
        collabs.append(CollabStream(agent, np.asarray(ts, dtype=float), msgs, sizes))
    return Stream(cfg, seed, ego, collabs)


@lru_cache(maxsize=16)
def calibration_for(cfg: ScenarioConfig) -> UncertaintyCalibration:
    """Statistics of true-positive detections from a held-out calibration world."""
    calib_cfg = cfg.calibration
    grid = cfg.grid
    span = calib_cfg.frames * cfg.schedule.base_period
    tracks = generate_tracks(cfg.traffic, (grid.x_min, grid.x_max), span,
                             _rng(calib_cfg.seed, _TAG_CALIB, 0))
    samples = []
    for agent in cfg.agents:
        for i in range(calib_cfg.frames):
            t = i * cfg.schedule.base_period
            rng = _rng(calib_cfg.seed, _TAG_CALIB, 1, agent.id, i)
            det = detect_frame(observe(agent, tracks, t, rng), cfg.detector, rng, agent)
            samples += [(r, u) for r, u, sid in zip(det.rois, det.uncertainties, det.source_ids)
                        if sid < FP_ID_BASE]
    if len(samples) < 2:
        raise ConfigError("calibration world produced fewer than 2 true positives")
    return calibrate_channels(samples)


@dataclass
class PipelineResult:
    variant: str
    records: list[list[DetectionRecord]]
    gts: dict[int, list[RoiBox]]
    message_bytes: list[int] = field(default_factory=list)
    feature_energy: list[float] = field(default_factory=list)

    def flat_records(self) -> list[DetectionRecord]:
        return [r for frame in self.records for r in frame]

    def ap(self, iou_thr: float) -> float:
        return ap_at_iou(self.flat_records(), self.gts, iou_thr)

    @property
    def mean_message_bytes(self) -> float:
        return float(np.mean(self.message_bytes)) if self.message_bytes else 0.0


def _fusion_weights(cfg: ScenarioConfig) -> FusionWeights:
    D = cfg.grid.channels
    if cfg.fusion.weights == "identity":
        return FusionWeights.identity(D)
    return FusionWeights.seeded(D, cfg.fusion.weight_seed)


def compensate(curr: CollabMessage, prev: CollabMessage | None, t: float, cfg: ScenarioConfig,
               calib: UncertaintyCalibration, *, motion: bool = True, trust: bool = True):
    """One collaborator's contribution at ego time ``t``.

    Returns ``(boxes with moduli, warped sparse features, flow result)``.
    """
    grid = cfg.grid
    resc_curr = rescale_set(curr.uncertainties, curr.rois, calib)
    if prev is not None and len(prev.rois):
        resc_prev = rescale_set(prev.uncertainties, prev.rois, calib)
        pairs, unmatched = match_rois(prev.rois, curr.rois, cfg.trust.tau_match, cfg.matching)
        t_prev = prev.t
    else:
        resc_prev, pairs, unmatched = [], [], list(range(len(curr.rois)))
        t_prev = curr.t - cfg.schedule.base_period
    t_target = t if motion else curr.t
    flowres = build_flow_map(pairs, [curr.rois[j] for j in unmatched], grid,
                             t_prev, curr.t, t_target)
    dt = t - curr.t
    moduli = []
    frames = [[(prev.rois[p.prev_index].confidence, resc_prev[p.prev_index]),
               (curr.rois[p.curr_index].confidence, resc_curr[p.curr_index])] for p in pairs]
    frames += [[(curr.rois[j].confidence, resc_curr[j])] for j in unmatched]
    for fr in frames:
        if trust:
            s_bar, u_bar = reduce_uncertainty(fr)
            moduli.append(dftm(s_bar, u_bar, dt, cfg.trust))
        else:
            moduli.append(1.0)
    warped = warp_with_dftm(curr.features, flowres.flow, moduli, flowres.cells)
    return list(zip(flowres.predicted, moduli)), warped, flowres


def run_pipeline(variant: str, stream: Stream, calib: UncertaintyCalibration | None = None,
                 weights: FusionWeights | None = None) -> PipelineResult:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    cfg = stream.config
    grid = cfg.grid
    calib = calib or calibration_for(cfg)
    weights = weights or _fusion_weights(cfg)
    result = PipelineResult(variant, [], {f.index: f.gts for f in stream.ego})
    for frame in stream.ego:
        t = frame.t
        candidates = []
        features = []
        for cs in stream.collabs:
            k = cs.latest(t)
            if k < 0 or variant == "single":
                continue
            curr = cs.messages[k]
            if variant == "late-fusion":
                candidates += [(r, 1.0) for r in curr.rois]
                result.message_bytes.append(message_size(len(curr.rois), 0, grid.channels))
                continue
            prev = cs.messages[k - 1] if k >= 1 else None
            boxes, warped, _ = compensate(
                curr, prev, t, cfg, calib,
                motion=variant in ("full", "no-dftm"),
                trust=variant in ("full", "no-compensation"),
            )
            candidates += boxes
            features.append(warped.densify())
            result.message_bytes.append(cs.sizes[k])
        if cfg.fusion.run_features and features:
            ego_map = embed_features(frame.rois, grid, grid.channels, frame.source_ids).densify()
            fused = multi_scale_fuse(ego_map, features, weights, cfg.fusion.scales)
            result.feature_energy.append(float(np.abs(fused.values).sum()))
        decoded = decode_boxes(frame.rois, candidates, cfg.fusion.nms_iou)
        result.records.append([DetectionRecord(b, float(s), frame.index)
                               for b, s in decoded if grid.contains(b.x, b.y)])
    return result


# -- sweeps ---------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    variant: str
    expected_delay_ms: float
    sigma_t_m: float
    sigma_r_deg: float
    seed: int
    ap50: float
    ap70: float
    mean_msg_bytes: float
    frames: int

    def as_csv(self) -> list[str]:
        return [self.variant, f"{self.expected_delay_ms:g}", f"{self.sigma_t_m:g}",
                f"{self.sigma_r_deg:g}", str(self.seed), f"{self.ap50:.6f}", f"{self.ap70:.6f}",
                f"{self.mean_msg_bytes:.2f}", str(self.frames)]


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    stream_digests: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)

    def per_seed(self, variant: str, delay: float | None = None, noise: float | None = None):
        return [r for r in self.rows if r.seed >= 0 and r.variant == variant
                and (delay is None or r.expected_delay_ms == delay)
                and (noise is None or r.sigma_t_m == noise)]

    def aggregate(self, variant: str, delay: float, noise: float) -> ReportRow:
        return next(r for r in self.rows if r.seed == -1 and r.variant == variant
                    and r.expected_delay_ms == delay and r.sigma_t_m == noise)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow(r.as_csv())
        return buf.getvalue()


def run_cell(cfg: ScenarioConfig, seed: int, variants) -> tuple[list[ReportRow], str]:
    """All variants of one (delay, noise) cell for one seed, on a shared stream."""
    stream = build_stream(cfg, seed)
    calib = calibration_for(cfg)
    rows = []
    for v in variants:
        res = run_pipeline(v, stream, calib)
        ap50, ap70 = res.ap(0.5), res.ap(0.7)
        if not (0.0 <= ap50 <= 1.0 and 0.0 <= ap70 <= 1.0):
            raise InvariantError(f"AP outside [0, 1] for {v} seed {seed}")
        rows.append(ReportRow(v, cfg.schedule.expected_delay_ms, cfg.noise.sigma_t,
                              cfg.noise.sigma_r, seed, ap50, ap70,
                              res.mean_message_bytes, len(stream.ego)))
    return rows, stream.digest()


def _cell_job(args):
    import time

    cfg, seed, variants = args
    t0 = time.perf_counter()
    rows, digest = run_cell(cfg, seed, variants)
    return rows, digest, time.perf_counter() - t0


def sweep(base: ScenarioConfig, grid: SweepConfig, threads: int | None = None) -> ExperimentReport:
    """Every (delay, noise) cell x seed x variant; noise levels apply to both
    translation (m) and rotation (deg)."""
    if threads is None:
        threads = int(os.environ.get("CODYN_THREADS", "1") or 1)
    jobs = []
    for delay in grid.delays_ms:
        for noise in grid.noise_levels:
            cfg = base.with_cell(delay, noise, noise)
            for seed in grid.seeds:
                jobs.append((cfg, int(seed), tuple(grid.variants)))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_cell_job, jobs))
    else:
        outputs = [_cell_job(j) for j in jobs]
    report = ExperimentReport([])
    by_cell: dict = {}
    for (cfg, seed, _), (rows, digest, wall) in zip(jobs, outputs):
        key = (cfg.schedule.expected_delay_ms, cfg.noise.sigma_t)
        report.stream_digests[key + (seed,)] = digest
        report.wall_times[key] = report.wall_times.get(key, 0.0) + wall
        report.rows.extend(rows)
        by_cell.setdefault(key, []).extend(rows)
    for (delay, noise), rows in by_cell.items():
        for v in grid.variants:
            vr = [r for r in rows if r.variant == v]
            report.rows.append(ReportRow(
                v, delay, noise, noise, -1,
                float(np.mean([r.ap50 for r in vr])), float(np.mean([r.ap70 for r in vr])),
                float(np.mean([r.mean_msg_bytes for r in vr])), vr[0].frames,
            ))
    return report
