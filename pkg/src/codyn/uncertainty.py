"""Rescaling of raw uncertainties onto comparable scales.

Classification uncertainty goes through a deviation ratio against
calibration statistics of positive samples; regression uncertainty is
scaled by the box diagonal and Z-scored.

The ``sigma`` terms are standard deviations, not variances.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .message import RawUncertainty


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationStats:
    mu_u: float
    sigma_u: float
    mu_s: float
    sigma_s: float
    mu_z: float
    sigma_z: float

    def __post_init__(self):
        vals = asdict(self).values()
        if not all(map(math.isfinite, vals)):
            raise CalibrationError("calibration statistics must be finite")
        if min(self.sigma_u, self.sigma_s, self.sigma_z) < 0:
            raise CalibrationError("standard deviations must be nonnegative")


@dataclass(frozen=True)
class UncertaintyCalibration:
    """Separate statistics for the aleatoric and epistemic channels."""

    ale: CalibrationStats
    epi: CalibrationStats

    def to_json(self) -> str:
        return json.dumps({"version": 1, "ale": asdict(self.ale), "epi": asdict(self.epi)},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "UncertaintyCalibration":
        data = json.loads(text)
        if data.get("version") != 1:
            raise CalibrationError(f"unsupported calibration version {data.get('version')}")
        return cls(CalibrationStats(**data["ale"]), CalibrationStats(**data["epi"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "UncertaintyCalibration":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class RescaledUncertainty:
    u_cls_ale: float
    u_cls_epi: float
    u_reg_ale: float
    u_reg_epi: float
    degenerate: bool = False  # set when a Z-score fell back to 0 because sigma_z == 0


def calibrate(samples) -> CalibrationStats:
    """Population statistics from (u_cls, confidence, u_reg, diagonal) tuples."""
    arr = np.asarray(list(samples), dtype=float).reshape(-1, 4)
    if len(arr) < 2:
        raise CalibrationError("need at least 2 calibration samples")
    # sorting makes the statistics bit-identical under any sample permutation
    u = np.sort(arr[:, 0])
    s = np.sort(arr[:, 1])
    z = np.sort(arr[:, 2] * arr[:, 3])
    return CalibrationStats(
        mu_u=float(u.mean()), sigma_u=float(u.std()),
        mu_s=float(s.mean()), sigma_s=float(s.std()),
        mu_z=float(z.mean()), sigma_z=float(z.std()),
    )


def rescale_cls(u_raw: float, s_c: float, stats: CalibrationStats) -> float:
    """Classification deviation ratio, in (0, 1]; 1 for confident, low-uncertainty samples."""
    mu_u, sd_u, mu_s, sd_s = stats.mu_u, stats.sigma_u, stats.mu_s, stats.sigma_s
    if mu_u <= 0 or mu_s <= 0:
        raise CalibrationError("deviation ratio needs positive calibration means")
    unc_term = mu_u / (mu_u + max(u_raw - mu_u - sd_u, 0.0))
    conf_term = mu_s / (mu_s + max(-(s_c - mu_s - sd_s), 0.0))
    return unc_term * conf_term


def rescale_reg(u_raw_reg: float, box_diagonal: float, stats: CalibrationStats) -> tuple[float, bool]:
    """Diagonal-scaled, Z-scored regression uncertainty.

    Returns ``(value, degenerate)``; ``degenerate`` is True when sigma_z is 0
    and the value is reported as 0.
    """
    if box_diagonal <= 0:
        raise ValueError("box diagonal must be positive")
    if stats.sigma_z == 0:
        return 0.0, True
    return (u_raw_reg * box_diagonal - stats.mu_z) / stats.sigma_z, False


def rescale_set(raw, rois, calib: UncertaintyCalibration) -> list[RescaledUncertainty]:
    raw, rois = list(raw), list(rois)
    if len(raw) != len(rois):
        raise ValueError("uncertainties and rois must be parallel")
    out = []
    for u, roi in zip(raw, rois):
        ra, da = rescale_reg(u.u_ale_reg, roi.diagonal, calib.ale)
        re, de = rescale_reg(u.u_epi_reg, roi.diagonal, calib.epi)
        out.append(RescaledUncertainty(
            u_cls_ale=rescale_cls(u.u_ale_cls, roi.confidence, calib.ale),
            u_cls_epi=rescale_cls(u.u_epi_cls, roi.confidence, calib.epi),
            u_reg_ale=ra,
            u_reg_epi=re,
            degenerate=da or de,
        ))
    return out


def calibration_samples(dets) -> tuple[list, list]:
    """Split detections into aleatoric and epistemic calibration samples."""
    ale, epi = [], []
    for roi, u in dets:
        ale.append((u.u_ale_cls, roi.confidence, u.u_ale_reg, roi.diagonal))
        epi.append((u.u_epi_cls, roi.confidence, u.u_epi_reg, roi.diagonal))
    return ale, epi


def calibrate_channels(dets) -> UncertaintyCalibration:
    """``dets`` is an iterable of (RoiBox, RawUncertainty) true positives."""
    ale, epi = calibration_samples(dets)
    return UncertaintyCalibration(calibrate(ale), calibrate(epi))

