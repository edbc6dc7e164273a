"""Hybrid MAXOUT/AVGOUT fusion across agents, multi-scale, and box decoding.

With identity-initialized weights the spatial weight is exactly 0.5 and the
channel gates exactly 1, so fusing N copies of one map returns that map.
Channel gates are ``2 * sigmoid(.)`` (range (0, 2)) so zero weights give the
identity.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bev import DimensionError, DenseFeatureMap, GridSpec, RoiBox, rotated_iou

_BLOB_MAGIC = b"CDFW"
_BLOB_VERSION = 1


def softplus(x):
    return np.logaddexp(0.0, x)


def mish(x):
    """x * tanh(softplus(x)); stable for large |x|."""
    x = np.asarray(x, dtype=float)
    out = x * np.tanh(softplus(x))
    return float(out) if out.ndim == 0 else out


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class FusionWeights:
    D: int
    conv1_w: np.ndarray  # (3, 3, 2D, D/2)
    conv1_b: np.ndarray  # (D/2,)
    conv2_w: np.ndarray  # (3, 3, D/2, 1)
    conv2_b: np.ndarray  # (1,)
    lin_w: np.ndarray  # (D, D)
    lin_b: np.ndarray  # (D,)
    mode: str = "identity"

    def __post_init__(self):
        D = self.D
        if D < 2 or D % 2:
            raise DimensionError("fusion needs an even channel count >= 2")
        shapes = {
            "conv1_w": (3, 3, 2 * D, D // 2), "conv1_b": (D // 2,),
            "conv2_w": (3, 3, D // 2, 1), "conv2_b": (1,),
            "lin_w": (D, D), "lin_b": (D,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, want {shape}")

    @classmethod
    def identity(cls, D: int) -> "FusionWeights":
        z = np.zeros
        return cls(D, z((3, 3, 2 * D, D // 2)), z(D // 2), z((3, 3, D // 2, 1)), z(1),
                   z((D, D)), z(D), "identity")

    @classmethod
    def seeded(cls, D: int, seed: int, scale: float = 0.1) -> "FusionWeights":
        g = np.random.default_rng(seed)
        n = lambda *s: g.normal(0.0, scale, size=s)  # noqa: E731
        return cls(D, n(3, 3, 2 * D, D // 2), n(D // 2), n(3, 3, D // 2, 1), n(1),
                   n(D, D), n(D), "seeded")

    def arrays(self):
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.lin_w, self.lin_b]

    def to_bytes(self) -> bytes:
        mode = 0 if self.mode == "identity" else 1
        head = struct.pack("<4sHHB", _BLOB_MAGIC, _BLOB_VERSION, self.D, mode)
        return head + b"".join(a.astype("<f8").tobytes() for a in self.arrays())

    @classmethod
    def from_bytes(cls, data: bytes) -> "FusionWeights":
        magic, version, D, mode = struct.unpack_from("<4sHHB", data)
        if magic != _BLOB_MAGIC or version != _BLOB_VERSION:
            raise ValueError("not a fusion weight blob of a supported version")
        ref = cls.identity(D)
        off, arrays = struct.calcsize("<4sHHB"), []
        for a in ref.arrays():
            arr = np.frombuffer(data, dtype="<f8", count=a.size, offset=off).reshape(a.shape)
            arrays.append(arr.astype(float))
            off += 8 * a.size
        if off != len(data):
            raise ValueError("trailing bytes in fusion weight blob")
        return cls(D, *arrays, mode="identity" if mode == 0 else "seeded")


@dataclass(frozen=True, eq=False)
class FusedMap:
    grid: GridSpec
    values: np.ndarray


def _stack(maps) -> np.ndarray:
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one feature map")
    grid = maps[0].grid
    for m in maps[1:]:
        if m.grid != grid:
            raise DimensionError("feature maps live on different grids")
    return np.stack([m.values for m in maps])


def _max_avg(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mx = stack.max(axis=0)
    # mean as max minus mean gap, summed in sorted order: exact for identical
    # inputs and bit-identical under permutation of the agents
    gaps = np.sort(mx[None] - stack, axis=0)
    avg = mx - gaps.sum(axis=0) / stack.shape[0]
    return mx, avg


def maxout_avgout(maps) -> tuple[np.ndarray, np.ndarray]:
    return _max_avg(_stack(maps))


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded, stride-1 3x3 convolution of an (H, W, Cin) array."""
    H, W, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(b, (H, W, w.shape[-1])).copy()
    for i in range(3):
        for j in range(3):
            out += xp[i:i + H, j:j + W] @ w[i, j]
    return out


def _fuse_arrays(stack: np.ndarray, w: FusionWeights) -> tuple[np.ndarray, np.ndarray]:
    """Returns (fused, plain average) for a stacked (N, H, W, D) input."""
    mx, avg = _max_avg(stack)
    hidden = mish(conv3x3(np.concatenate([mx, avg], axis=-1), w.conv1_w, w.conv1_b))
    ws = _sigmoid(conv3x3(hidden, w.conv2_w, w.conv2_b))  # (H, W, 1)
    fused = avg + ws * (mx - avg)
    pooled = fused.mean(axis=(0, 1))
    gates = 2.0 * _sigmoid(pooled @ w.lin_w + w.lin_b)
    return fused * gates, avg


def hybrid_fuse(ego: DenseFeatureMap, others, w: FusionWeights) -> FusedMap:
    maps = [ego, *others]
    stack = _stack(maps)
    if stack.shape[-1] != w.D:
        raise DimensionError(f"maps have D={stack.shape[-1]}, weights expect {w.D}")
    fused, _ = _fuse_arrays(stack, w)
    return FusedMap(ego.grid, fused)


def avg_pool2(x: np.ndarray) -> np.ndarray:
    return 0.25 * ((x[..., 0::2, 0::2, :] + x[..., 0::2, 1::2, :])
                   + (x[..., 1::2, 0::2, :] + x[..., 1::2, 1::2, :]))


def upsample2(x: np.ndarray, times: int) -> np.ndarray:
    f = 2 ** times
    return np.repeat(np.repeat(x, f, axis=-3), f, axis=-2)


def multi_scale_fuse(ego: DenseFeatureMap, others, weights, scales: int = 1) -> FusedMap:
    """Fuse on a 2x2 average-pool pyramid and recombine at full resolution.

    Scale 0 is plain :func:`hybrid_fuse`. Each coarser scale contributes the
    difference between its fused map and its plain average, upsampled
    (nearest) and added to the full-resolution result; the S results are
    averaged.
    """
    if scales < 1:
        raise ValueError("scales must be >= 1")
    if isinstance(weights, FusionWeights):
        weights = [weights] * scales
    weights = list(weights)
    if len(weights) != scales:
        raise ValueError("need one weight set per scale")
    stack = _stack([ego, *others])
    H, W = stack.shape[1:3]
    f = 2 ** (scales - 1)
    if H % f or W % f:
        raise DimensionError(f"grid {H}x{W} not divisible by {f} for {scales} scales")
    base, _ = _fuse_arrays(stack, weights[0])
    if scales == 1:
        return FusedMap(ego.grid, base)
    residual_sum = np.zeros_like(base)
    level = stack
    for s in range(1, scales):
        level = avg_pool2(level)
        fused_s, avg_s = _fuse_arrays(level, weights[s])
        residual_sum = residual_sum + upsample2(fused_s - avg_s, s)
    return FusedMap(ego.grid, base + residual_sum / scales)


# -- decode -------------------------------------------------------------------

def nms(candidates, nms_iou: float = 0.15) -> list[int]:
    """Greedy rotated NMS over ``(box, score)`` pairs; returns kept indices.

    Order: descending score, then ascending x, then ascending y.
    """
    if not (0.0 < nms_iou < 1.0):
        raise ValueError("nms_iou must lie in (0, 1)")
    order = sorted(range(len(candidates)),
                   key=lambda i: (-candidates[i][1], candidates[i][0].x, candidates[i][0].y, i))
    keep: list[int] = []
    for i in order:
        box = candidates[i][0]
        if all(rotated_iou(box, candidates[k][0]) <= nms_iou for k in keep):
            keep.append(i)
    return keep


def decode_boxes(ego_rois, compensated, nms_iou: float = 0.15):
    """Trust-weighted NMS over ego ROIs and ``(roi, modulus)`` collaborator ROIs.

    Returns a list of ``(RoiBox, score)`` in NMS order.
    """
    cands = [(r, r.confidence) for r in ego_rois]
    cands += [(r, r.confidence * m) for r, m in compensated]
    return [cands[i] for i in nms(cands, nms_iou)]
