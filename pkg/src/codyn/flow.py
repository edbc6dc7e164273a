"""Motion compensation of stale collaborator features.

ROIs from a collaborator's two latest frames are matched, each match is
linearly extrapolated to the ego timestamp, and the per-ROI rigid motion is
written into a BEV flow map. A per-ROI trust modulus (confidence, uncertainty
and delay decay) scales the warped features.

Flow convention: ``flow.d[h, w] = (dh, dw)`` means destination cell (h, w)
gathers from source cell (h + dh, w + dw).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bev import DimensionError, GridSpec, RoiBox, SparseFeatureMap, rasterize_roi_array, wrap_angle
from .uncertainty import RescaledUncertainty


class TimestampError(ValueError):
    pass


@dataclass(frozen=True)
class TrustParams:
    k: float = 0.02
    tau_frame: float = 100.0  # ms per unit of delay in the decay exponent
    a: float = 4.0
    b: float = 4.0
    c0: float = 0.0
    tau_match: float = 3.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.tau_match <= 0 or self.tau_frame <= 0:
            raise ValueError("tau_match and tau_frame must be positive")


@dataclass(frozen=True)
class MatchedPair:
    roi_prev: RoiBox
    roi_curr: RoiBox
    distance: float
    prev_index: int = -1
    curr_index: int = -1


# -- matching -----------------------------------------------------------------

def _distances(prev, curr) -> np.ndarray:
    if not prev or not curr:
        return np.zeros((len(prev), len(curr)))
    p = np.array([[r.x, r.y] for r in prev])
    c = np.array([[r.x, r.y] for r in curr])
    return np.hypot(p[:, None, 0] - c[None, :, 0], p[:, None, 1] - c[None, :, 1])


def greedy_assignment(dist: np.ndarray, tau: float) -> list[tuple[int, int]]:
    """Ascending-distance greedy; ties by (distance, prev index, curr index)."""
    n, m = dist.shape
    ii, jj = np.nonzero(dist <= tau)
    order = np.lexsort((jj, ii, dist[ii, jj]))
    used_p, used_c, out = set(), set(), []
    for o in order:
        i, j = int(ii[o]), int(jj[o])
        if i in used_p or j in used_c:
            continue
        used_p.add(i)
        used_c.add(j)
        out.append((i, j))
        if len(out) == min(n, m):
            break
    return out


def optimal_assignment(dist: np.ndarray, tau: float) -> list[tuple[int, int]]:
    """Maximum number of gated pairs, then minimum total distance."""
    if dist.size == 0:
        return []
    big = 1e6 * (1.0 + float(dist.max()) * max(dist.shape))
    cost = np.where(dist <= tau, dist, big)
    rows, cols = linear_sum_assignment(cost)
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if dist[i, j] <= tau)


def match_rois(prev, curr, tau_match: float = 3.0, method: str = "greedy"):
    """Returns ``(pairs, unmatched_curr_indices)``."""
    prev, curr = list(prev), list(curr)
    dist = _distances(prev, curr)
    if method == "greedy":
        assign = greedy_assignment(dist, tau_match)
    elif method == "optimal":
        assign = optimal_assignment(dist, tau_match)
    else:
        raise ValueError(f"unknown matching method {method!r}")
    pairs = [MatchedPair(prev[i], curr[j], float(dist[i, j]), i, j) for i, j in assign]
    matched = {j for _, j in assign}
    return pairs, [j for j in range(len(curr)) if j not in matched]


# -- motion ---------------------------------------------------------------------

@dataclass(frozen=True)
class MotionEstimate:
    velocity: tuple[float, float]  # m/s
    yaw_rate: float  # rad/s
    displacement: tuple[float, float]  # m
    predicted: RoiBox


def estimate_motion(pair: MatchedPair, t_prev: float, t_curr: float, t_target: float) -> MotionEstimate:
    if not t_curr > t_prev:
        raise TimestampError(f"t_curr ({t_curr}) must exceed t_prev ({t_prev})")
    if t_target < t_curr:
        raise TimestampError(f"t_target ({t_target}) precedes t_curr ({t_curr})")
    span = (t_curr - t_prev) / 1000.0
    ahead = (t_target - t_curr) / 1000.0
    p, c = pair.roi_prev, pair.roi_curr
    vx, vy = (c.x - p.x) / span, (c.y - p.y) / span
    # shortest-arc yaw difference
    rate = wrap_angle(c.yaw - p.yaw) / span
    dx, dy = vx * ahead, vy * ahead
    pred = c.replace(x=c.x + dx, y=c.y + dy, yaw=wrap_angle(c.yaw + rate * ahead))
    return MotionEstimate((vx, vy), rate, (dx, dy), pred)


def stationary(roi: RoiBox) -> MotionEstimate:
    return MotionEstimate((0.0, 0.0), 0.0, (0.0, 0.0), roi)


# -- flow map -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FlowMap:
    grid: GridSpec
    d: np.ndarray  # (H, W, 2)

    def is_identity(self) -> bool:
        return not np.any(self.d)


@dataclass
class FlowResult:
    flow: FlowMap
    current: list[RoiBox]
    predicted: list[RoiBox]
    cells: list[np.ndarray]  # destination cells per predicted ROI
    matched: list[bool]
    motions: list[MotionEstimate] = field(default_factory=list)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    # tolerance keeps exact half-cell shifts from flipping on float noise
    return np.sign(v) * np.floor(np.abs(v) + 0.5 + 1e-9)


def build_flow_map(pairs, unmatched, grid: GridSpec, t_prev: float, t_curr: float,
                   t_target: float) -> FlowResult:
    """Per-cell backward displacement for every predicted ROI footprint.

    ``unmatched`` holds current-frame ROIs without history; they keep zero
    velocity. Where predicted footprints overlap, the ROI whose predicted
    center is closest to the cell wins (lower index on ties).
    """
    motions = [estimate_motion(p, t_prev, t_curr, t_target) for p in pairs]
    current = [p.roi_curr for p in pairs] + list(unmatched)
    motions += [stationary(r) for r in unmatched]
    predicted = [m.predicted for m in motions]
    d = np.zeros((grid.H, grid.W, 2))
    owner_dist = np.full(grid.shape, np.inf)
    cells_out = []
    cs = grid.cell_size
    for cur, pred in zip(current, predicted):
        cells = rasterize_roi_array(pred, grid)
        cells_out.append(cells)
        if not len(cells):
            continue
        px, py = grid.cell_center(cells[:, 0], cells[:, 1])
        rx, ry = px - pred.x, py - pred.y
        dyaw = pred.yaw - cur.yaw
        c, s = math.cos(dyaw), math.sin(dyaw)
        sx = cur.x + c * rx + s * ry
        sy = cur.y - s * rx + c * ry
        dh = _round_half_away((sy - py) / cs)
        dw = _round_half_away((sx - px) / cs)
        dist = np.hypot(rx, ry)
        take = dist < owner_dist[cells[:, 0], cells[:, 1]]
        hh, ww = cells[take, 0], cells[take, 1]
        owner_dist[hh, ww] = dist[take]
        d[hh, ww, 0] = dh[take]
        d[hh, ww, 1] = dw[take]
    d[d == 0] = 0.0  # normalize -0.0
    return FlowResult(FlowMap(grid, d), current, predicted, cells_out,
                      [True] * len(pairs) + [False] * len(unmatched), motions)


# -- trust modulus --------------------------------------------------------------

def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class LogisticTrustHead:
    """Deterministic stand-in for a learned trust head: sigmoid(a*S - b*U + c0)."""

    a: float = 4.0
    b: float = 4.0
    c0: float = 0.0

    def __call__(self, s_bar: float, u_bar: float) -> float:
        return logistic(self.a * s_bar - self.b * u_bar + self.c0)


TrustHead = Callable[[float, float], float]


def delay_decay(dt_ms: float, params: TrustParams = TrustParams()) -> float:
    """exp(-k * dt) with dt measured in frame periods."""
    if dt_ms < 0:
        raise TimestampError("delay must be nonnegative")
    return math.exp(-params.k * (dt_ms / params.tau_frame))


def dftm(s_bar: float, u_bar: float, dt_ms: float, params: TrustParams = TrustParams(),
         head: TrustHead | None = None) -> float:
    if not (0.0 <= s_bar <= 1.0):
        raise ValueError("mean confidence must lie in [0, 1]")
    head = head or LogisticTrustHead(params.a, params.b, params.c0)
    raw = head(s_bar, u_bar)
    if not (0.0 <= raw <= 1.0):
        raise ValueError(f"trust head returned {raw} outside [0, 1]")
    return raw * delay_decay(dt_ms, params)


def _z_plus(z: float) -> float:
    return min(max(z, 0.0), 3.0) / 3.0


def channel_reduction(u: RescaledUncertainty) -> float:
    """Four rescaled channels folded into one value in [0, 1]."""
    return 0.5 * (1.0 - u.u_cls_ale * u.u_cls_epi) + 0.25 * (_z_plus(u.u_reg_ale) + _z_plus(u.u_reg_epi))


def reduce_uncertainty(frames) -> tuple[float, float]:
    """Mean confidence and mean reduced uncertainty over one or two frames.

    ``frames`` is a sequence of ``(confidence, RescaledUncertainty)``.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    if len(frames) == 1:
        c, u = frames[0]
        return float(c), channel_reduction(u)
    s = sum(c for c, _ in frames) / len(frames)
    us = sum(channel_reduction(u) for _, u in frames) / len(frames)
    return float(s), float(us)


# -- warp -----------------------------------------------------------------------

def scatter_moduli(moduli, roi_cells, grid: GridSpec) -> np.ndarray:
    """Per-cell trust: max over covering ROIs, 0 outside every ROI."""
    out = np.zeros(grid.shape)
    for m, cells in zip(moduli, roi_cells):
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        if len(cells):
            cur = out[cells[:, 0], cells[:, 1]]
            out[cells[:, 0], cells[:, 1]] = np.maximum(cur, m)
    return out


def warp_with_dftm(f: SparseFeatureMap, flow: FlowMap, moduli, roi_cells) -> SparseFeatureMap:
    """Backward warp of ``f`` along ``flow``, scaled by the scattered per-ROI modulus."""
    if f.grid != flow.grid:
        raise DimensionError("feature map and flow map grids differ")
    moduli = list(moduli)
    roi_cells = list(roi_cells)
    if len(moduli) != len(roi_cells):
        raise ValueError("moduli and roi cell sets must be parallel")
    grid = f.grid
    trust = scatter_moduli(moduli, roi_cells, grid)
    dest = np.argwhere(trust > 0)
    if not len(dest) or not len(f):
        return SparseFeatureMap(grid)
    src_h = dest[:, 0] + flow.d[dest[:, 0], dest[:, 1], 0].astype(np.int64)
    src_w = dest[:, 1] + flow.d[dest[:, 0], dest[:, 1], 1].astype(np.int64)
    ok = (src_h >= 0) & (src_h < grid.H) & (src_w >= 0) & (src_w < grid.W)
    lookup = np.full(grid.shape, -1, dtype=np.int64)
    lookup[f.indices[:, 0], f.indices[:, 1]] = np.arange(len(f))
    row = np.full(len(dest), -1, dtype=np.int64)
    row[ok] = lookup[src_h[ok], src_w[ok]]
    keep = row >= 0
    dest, row = dest[keep], row[keep]
    scale = trust[dest[:, 0], dest[:, 1]]
    vecs = f.vectors[row]
    # unit trust must reproduce the source exactly
    vecs = np.where(scale[:, None] == 1.0, vecs, vecs * scale[:, None])
    return SparseFeatureMap(grid, dest, vecs)


# -- debug dumps ----------------------------------------------------------------

def dump_flow_csv(flow: FlowMap, path) -> int:
    """Nonzero flow cells as ``h,w,dh,dw`` rows; returns the row count."""
    nz = np.argwhere(np.any(flow.d != 0, axis=-1))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "w", "dh", "dw"])
        for h, ww in nz:
            w.writerow([int(h), int(ww), int(flow.d[h, ww, 0]), int(flow.d[h, ww, 1])])
    return len(nz)


def dump_dftm_csv(moduli, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["roi_index", "modulus"])
        for i, m in enumerate(moduli):
            w.writerow([i, repr(float(m))])
