"""BEV grid geometry, oriented boxes, feature maps and masks.

Conventions: rows ``h`` index the y axis and columns ``w`` index the x axis,
so a cell ``(h, w)`` has center ``(x_min + (w + 0.5) * cell, y_min + (h + 0.5) * cell)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_EXTENT = 1e-6


class DimensionError(ValueError):
    """Raised when two grids or arrays do not line up."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]. Values already in range are returned untouched."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell_size: float
    channels: int = 8

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        for span in (self.x_max - self.x_min, self.y_max - self.y_min):
            n = span / self.cell_size
            if round(n) < 1 or abs(n - round(n)) > 1e-9:
                raise ValueError(
                    f"grid span {span} is not a positive multiple of cell_size {self.cell_size}"
                )

    @property
    def H(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell_size))

    @property
    def W(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell_size))

    @property
    def shape(self) -> tuple[int, int]:
        return self.H, self.W

    def cell_center(self, h, w):
        x = self.x_min + (np.asarray(w) + 0.5) * self.cell_size
        y = self.y_min + (np.asarray(h) + 0.5) * self.cell_size
        return x, y

    def xy_to_cell(self, x, y):
        """Index of the cell containing (x, y); may be out of range."""
        w = np.floor((np.asarray(x) - self.x_min) / self.cell_size).astype(int)
        h = np.floor((np.asarray(y) - self.y_min) / self.cell_size).astype(int)
        return h, w

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max


@dataclass(frozen=True)
class RoiBox:
    """Oriented BEV box with a confidence score.

    ``z`` and ``dz`` ride along for the full 8-field detection tuple but take
    no part in BEV geometry.
    """

    confidence: float
    x: float
    y: float
    dx: float
    dy: float
    yaw: float
    z: float = 0.0
    dz: float = 1.5

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not (self.dx >= MIN_EXTENT and self.dy >= MIN_EXTENT):
            raise ValueError(f"degenerate box extent ({self.dx}, {self.dy})")
        if not all(map(math.isfinite, (self.x, self.y, self.yaw))):
            raise ValueError("non-finite box pose")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.dx, self.dy)

    def corners(self) -> np.ndarray:
        """Counter-clockwise 4x2 corner array."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hx, hy = 0.5 * self.dx, 0.5 * self.dy
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center

    def replace(self, **changes) -> "RoiBox":
        from dataclasses import replace

        return replace(self, **changes)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.confidence, self.x, self.y, self.dx, self.dy, self.yaw)


@dataclass(frozen=True, eq=False)
class DenseFeatureMap:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.H, self.grid.W, self.grid.channels):
            raise DimensionError(
                f"values shape {self.values.shape} does not match grid "
                f"{(self.grid.H, self.grid.W, self.grid.channels)}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "DenseFeatureMap":
        return cls(grid, np.zeros((grid.H, grid.W, grid.channels)))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    grid: GridSpec
    bits: np.ndarray

    def __post_init__(self):
        if self.bits.shape != self.grid.shape:
            raise DimensionError(f"mask shape {self.bits.shape} != grid {self.grid.shape}")
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")

    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class SparseFeatureMap:
    """Feature grid stored as its nonzero-support cells.

    ``indices`` is (C, 2) of (h, w) and ``vectors`` is (C, D). Cells are kept
    in row-major order so equal maps compare equal.
    """

    grid: GridSpec
    indices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    vectors: np.ndarray = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 2)
        vec = self.vectors
        if vec is None:
            vec = np.zeros((len(idx), self.grid.channels))
        vec = np.asarray(vec, dtype=float).reshape(len(idx), self.grid.channels)
        if len(idx):
            if (idx < 0).any() or (idx[:, 0] >= self.grid.H).any() or (idx[:, 1] >= self.grid.W).any():
                raise DimensionError("sparse cell index out of range")
            flat = idx[:, 0] * self.grid.W + idx[:, 1]
            if len(np.unique(flat)) != len(flat):
                raise ValueError("duplicate sparse cell indices")
            order = np.argsort(flat, kind="stable")
            idx, vec = idx[order], vec[order]
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "vectors", vec)

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseFeatureMap):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.vectors, other.vectors)
        )

    def cells(self) -> list[tuple[int, int, np.ndarray]]:
        return [(int(h), int(w), v) for (h, w), v in zip(self.indices, self.vectors)]

    def densify(self) -> DenseFeatureMap:
        out = np.zeros((self.grid.H, self.grid.W, self.grid.channels))
        if len(self):
            out[self.indices[:, 0], self.indices[:, 1]] = self.vectors
        return DenseFeatureMap(self.grid, out)

    @classmethod
    def from_dense(cls, dense: DenseFeatureMap) -> "SparseFeatureMap":
        """Support = cells with any nonzero channel."""
        nz = np.argwhere(np.any(dense.values != 0, axis=-1))
        return cls(dense.grid, nz, dense.values[nz[:, 0], nz[:, 1]] if len(nz) else None)


def rasterize_roi(roi: RoiBox, grid: GridSpec) -> set[tuple[int, int]]:
    """Cells whose center lies inside the rotated rectangle (boundary inclusive)."""
    return set(map(tuple, rasterize_roi_array(roi, grid).tolist()))


def rasterize_roi_array(roi: RoiBox, grid: GridSpec) -> np.ndarray:
    """Like :func:`rasterize_roi` but returns a sorted (K, 2) int array."""
    corners = roi.corners()
    cs = grid.cell_size
    w_lo = max(int(math.floor((corners[:, 0].min() - grid.x_min) / cs - 0.5)), 0)
    w_hi = min(int(math.ceil((corners[:, 0].max() - grid.x_min) / cs - 0.5)), grid.W - 1)
    h_lo = max(int(math.floor((corners[:, 1].min() - grid.y_min) / cs - 0.5)), 0)
    h_hi = min(int(math.ceil((corners[:, 1].max() - grid.y_min) / cs - 0.5)), grid.H - 1)
    if w_lo > w_hi or h_lo > h_hi:
        return np.zeros((0, 2), dtype=np.int64)
    hh, ww = np.meshgrid(np.arange(h_lo, h_hi + 1), np.arange(w_lo, w_hi + 1), indexing="ij")
    px, py = grid.cell_center(hh, ww)
    c, s = math.cos(roi.yaw), math.sin(roi.yaw)
    rx, ry = px - roi.x, py - roi.y
    # box-frame coordinates; small slack absorbs rounding on exact boundaries
    u = rx * c + ry * s
    v = -rx * s + ry * c
    eps = 1e-9
    inside = (np.abs(u) <= 0.5 * roi.dx + eps) & (np.abs(v) <= 0.5 * roi.dy + eps)
    return np.stack([hh[inside], ww[inside]], axis=1).astype(np.int64)


def make_mask(rois, grid: GridSpec) -> BinaryMask:
    bits = np.zeros(grid.shape, dtype=np.uint8)
    for roi in rois:
        cells = rasterize_roi_array(roi, grid)
        bits[cells[:, 0], cells[:, 1]] = 1
    return BinaryMask(grid, bits)


def sparsify(f: DenseFeatureMap, mask: BinaryMask) -> SparseFeatureMap:
    if f.grid != mask.grid:
        raise DimensionError("feature map and mask grids differ")
    idx = np.argwhere(mask.bits == 1)
    return SparseFeatureMap(f.grid, idx, f.values[idx[:, 0], idx[:, 1]])


def densify(s: SparseFeatureMap) -> DenseFeatureMap:
    return s.densify()


# -- rotated IoU ------------------------------------------------------------

def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area (positive for counter-clockwise vertices)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, output = output, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_intersect(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_intersect(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=float).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def rotated_iou(a: RoiBox, b: RoiBox) -> float:
    if a.as_tuple()[1:] == b.as_tuple()[1:]:
        return 1.0
    # cheap rejection on circumscribed circles
    if math.hypot(a.x - b.x, a.y - b.y) > 0.5 * (a.diagonal + b.diagonal):
        return 0.0
    area_a, area_b = a.dx * a.dy, b.dx * b.dy
    # order the pair canonically so the result is exactly symmetric
    p, q = (a, b) if a.as_tuple()[1:] <= b.as_tuple()[1:] else (b, a)
    inter = max(polygon_area(clip_polygon(p.corners(), q.corners())), 0.0)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = rotated_iou(a, b)
    return out
