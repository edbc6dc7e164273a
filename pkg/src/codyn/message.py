"""Collaboration message and its little-endian binary encoding (``.cdtm``).

Layout::

    header   magic "CDTM" | version u16 | sender u16 | timestamp u32 (ms)
             | roi_count u32 | cell_count u32 | D u16            (22 bytes)
    rois     roi_count x 6 float32   (c, x, y, dx, dy, yaw)
    uncs     roi_count x 4 float32   (u_ale_cls, u_ale_reg, u_epi_cls, u_epi_reg)
    cells    cell_count x (h u16, w u16, D float32)

Values are stored as float32, so :func:`pack_message` rounds the message to
float32 precision first; decoding then reproduces it exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bev import GridSpec, RoiBox, SparseFeatureMap

MAGIC = b"CDTM"
VERSION = 1
HEADER = struct.Struct("<4sHHIIIH")
HEADER_SIZE = HEADER.size  # 22


class EncodingError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class RawUncertainty:
    u_ale_cls: float
    u_ale_reg: float
    u_epi_cls: float
    u_epi_reg: float

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(np.isfinite(vals)) or min(vals) < 0:
            raise ValueError(f"uncertainties must be finite and nonnegative: {vals}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.u_ale_cls, self.u_ale_reg, self.u_epi_cls, self.u_epi_reg)


@dataclass(frozen=True, eq=True)
class CollabMessage:
    sender: int
    t: int
    rois: tuple[RoiBox, ...]
    uncertainties: tuple[RawUncertainty, ...]
    features: SparseFeatureMap

    def __post_init__(self):
        object.__setattr__(self, "rois", tuple(self.rois))
        object.__setattr__(self, "uncertainties", tuple(self.uncertainties))
        if len(self.rois) != len(self.uncertainties):
            raise ValueError("rois and uncertainties must be parallel")


def _f32(v: float) -> float:
    return float(np.float32(v))


def _f32_in_range(yaw: float) -> float:
    # float32(pi) > pi; step back inside (-pi, pi] so RoiBox does not re-wrap it
    y = np.float32(yaw)
    while float(y) > np.pi:
        y = np.nextafter(y, np.float32(0))
    while float(y) <= -np.pi:
        y = np.nextafter(y, np.float32(0))
    return float(y)


def quantize(msg: CollabMessage) -> CollabMessage:
    """Round every float field to float32, the precision carried on the wire."""
    rois = []
    for r in msg.rois:
        c, x, y, dx, dy, yaw = (_f32(v) for v in r.as_tuple())
        yaw = _f32_in_range(yaw)
        rois.append(RoiBox(min(max(c, 0.0), 1.0), x, y, dx, dy, yaw, r.z, r.dz))
    uncs = [RawUncertainty(*(_f32(v) for v in u.as_tuple())) for u in msg.uncertainties]
    f = msg.features
    feats = SparseFeatureMap(f.grid, f.indices, f.vectors.astype(np.float32).astype(float))
    return CollabMessage(msg.sender, int(msg.t), rois, uncs, feats)


def encode(msg: CollabMessage) -> bytes:
    R, C, D = len(msg.rois), len(msg.features), msg.features.grid.channels
    if R >= 2**32 or C >= 2**32:
        raise EncodingError("roi or cell count exceeds u32")
    if D >= 2**16 or not (0 <= msg.sender < 2**16):
        raise EncodingError("channel count or sender id exceeds u16")
    if not (0 <= msg.t < 2**32):
        raise EncodingError("timestamp outside u32")
    idx = msg.features.indices
    if len(idx) and idx.max() >= 2**16:
        raise EncodingError("cell index exceeds u16")
    parts = [HEADER.pack(MAGIC, VERSION, msg.sender, int(msg.t), R, C, D)]
    parts.append(np.array([r.as_tuple() for r in msg.rois], dtype="<f4").reshape(R, 6).tobytes())
    parts.append(np.array([u.as_tuple() for u in msg.uncertainties], dtype="<f4")
                 .reshape(R, 4).tobytes())
    cell_dtype = np.dtype([("h", "<u2"), ("w", "<u2"), ("v", "<f4", (D,))])
    cells = np.zeros(C, dtype=cell_dtype)
    if C:
        cells["h"], cells["w"] = idx[:, 0], idx[:, 1]
        cells["v"] = msg.features.vectors
    parts.append(cells.tobytes())
    return b"".join(parts)


def decode(data: bytes, grid: GridSpec | None = None) -> CollabMessage:
    """Inverse of :func:`encode`. ``grid`` supplies the BEV geometry the cells live on;
    without it a bounding grid of unit cells is synthesized from the header."""
    if len(data) < HEADER_SIZE:
        raise FormatError("truncated header")
    magic, version, sender, t, R, C, D = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    expected = message_size(R, C, D)
    if len(data) != expected:
        raise FormatError(f"length {len(data)} != expected {expected}")
    off = HEADER_SIZE
    roi_arr = np.frombuffer(data, dtype="<f4", count=6 * R, offset=off).reshape(R, 6)
    off += 24 * R
    unc_arr = np.frombuffer(data, dtype="<f4", count=4 * R, offset=off).reshape(R, 4)
    off += 16 * R
    cell_dtype = np.dtype([("h", "<u2"), ("w", "<u2"), ("v", "<f4", (D,))])
    cells = np.frombuffer(data, dtype=cell_dtype, count=C, offset=off)
    idx = np.stack([cells["h"], cells["w"]], axis=1).astype(np.int64) if C else np.zeros((0, 2), int)
    if grid is None:
        H = int(idx[:, 0].max()) + 1 if C else 1
        W = int(idx[:, 1].max()) + 1 if C else 1
        grid = GridSpec(0.0, float(W), 0.0, float(H), 1.0, max(D, 1))
    elif grid.channels != D:
        raise FormatError(f"message has D={D}, grid expects {grid.channels}")
    try:
        rois = [RoiBox(*map(float, row)) for row in roi_arr]
        uncs = [RawUncertainty(*map(float, row)) for row in unc_arr]
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    feats = SparseFeatureMap(grid, idx, cells["v"].astype(float) if C else None)
    return CollabMessage(sender, t, rois, uncs, feats)


def message_size(R: int, C: int, D: int) -> int:
    return HEADER_SIZE + 40 * R + (4 + 4 * D) * C


def message_bytes(msg: CollabMessage) -> int:
    return message_size(len(msg.rois), len(msg.features), msg.features.grid.channels)


def pack_message(sender: int, t, rois, uncs, features: SparseFeatureMap):
    """Build the wire-precision message and its encoding."""
    rois, uncs = list(rois), list(uncs)
    if len(rois) != len(uncs):
        raise ValueError("rois and uncertainties must be parallel")
    msg = quantize(CollabMessage(sender, int(round(t)), rois, uncs, features))
    return msg, encode(msg)


def write_message(path, msg: CollabMessage) -> int:
    data = encode(msg)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_message(path, grid: GridSpec | None = None) -> CollabMessage:
    with open(path, "rb") as fh:
        return decode(fh.read(), grid)
