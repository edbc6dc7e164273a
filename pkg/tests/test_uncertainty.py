import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codyn.bev import RoiBox
from codyn.message import RawUncertainty
from codyn.uncertainty import (
    CalibrationError, CalibrationStats, UncertaintyCalibration, calibrate, rescale_cls,
    rescale_reg, rescale_set,
)
from oracles import deviation_ratio


def stats(mu_u=0.2, sigma_u=0.1, mu_s=0.6, sigma_s=0.1, mu_z=1.0, sigma_z=0.5):
    return CalibrationStats(mu_u, sigma_u, mu_s, sigma_s, mu_z, sigma_z)


class TestCalibrate:
    def test_identical_samples(self):
        c = calibrate([(0.3, 0.8, 0.1, 5.0)] * 4)
        assert (c.sigma_u, c.sigma_s, c.sigma_z) == (0.0, 0.0, 0.0)

    def test_two_samples_population_std(self):
        c = calibrate([(0.1, 0.5, 0.0, 1.0), (0.3, 0.5, 0.0, 1.0)])
        assert c.mu_u == pytest.approx(0.2, abs=1e-15)
        assert c.sigma_u == pytest.approx(0.1, abs=1e-15)

    def test_regression_is_diagonal_scaled(self):
        c = calibrate([(0.1, 0.5, 0.5, 2.0), (0.1, 0.5, 0.5, 4.0)])
        assert (c.mu_z, c.sigma_z) == pytest.approx((1.5, 0.5))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        s = rng.random((50, 4)) + 0.1
        assert calibrate(s) == calibrate(s[rng.permutation(50)])

    def test_too_few(self):
        with pytest.raises(CalibrationError):
            calibrate([(0.1, 0.5, 0.1, 1.0)])


class TestRescaleCls:
    def test_boundary_regime_is_one(self):
        assert rescale_cls(0.3, 0.7, stats()) == 1.0
        assert rescale_cls(0.0, 1.0, stats()) == 1.0

    def test_uncertainty_arm(self):
        assert rescale_cls(0.5, 0.7, stats()) == pytest.approx(0.5, abs=1e-15)

    def test_confidence_arm(self):
        assert rescale_cls(0.1, 0.4, stats()) == pytest.approx(2 / 3, abs=1e-15)

    def test_nonpositive_mean_rejected(self):
        with pytest.raises(CalibrationError):
            rescale_cls(0.1, 0.5, stats(mu_u=0.0))
        with pytest.raises(CalibrationError):
            rescale_cls(0.1, 0.5, stats(mu_s=-0.1))

    def test_grid_against_oracle(self):
        st_ = stats()
        for u in np.linspace(0, 2, 60):
            for s in np.linspace(0, 1, 60):
                assert abs(rescale_cls(u, s, st_) - deviation_ratio(u, s, st_)) <= 1e-12

    def test_monotone_sweeps(self):
        st_ = stats()
        us = np.linspace(0, 3, 400)
        ss = np.linspace(0, 1, 400)
        along_u = [rescale_cls(u, 0.5, st_) for u in us]
        along_s = [rescale_cls(0.5, s, st_) for s in ss]
        assert all(b <= a for a, b in zip(along_u, along_u[1:]))
        assert all(b >= a for a, b in zip(along_s, along_s[1:]))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1e6), st.floats(-10, 10), st.floats(1e-3, 5), st.floats(0, 5),
           st.floats(1e-3, 5), st.floats(0, 5))
    def test_range(self, u, s, mu_u, sd_u, mu_s, sd_s):
        v = rescale_cls(u, s, CalibrationStats(mu_u, sd_u, mu_s, sd_s, 0.0, 1.0))
        assert 0.0 < v <= 1.0


class TestRescaleReg:
    def test_center(self):
        assert rescale_reg(0.5, 2.0, stats()) == (0.0, False)

    def test_arithmetic(self):
        assert rescale_reg(1.0, 2.0, stats()) == (2.0, False)

    def test_degenerate(self):
        assert rescale_reg(1.0, 2.0, stats(sigma_z=0.0)) == (0.0, True)

    def test_nonpositive_diagonal(self):
        with pytest.raises(ValueError):
            rescale_reg(1.0, 0.0, stats())

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 20))
    def test_affine_positive_slope(self, a, b, diag):
        st_ = stats()
        va, vb = rescale_reg(a, diag, st_)[0], rescale_reg(b, diag, st_)[0]
        assert (vb - va) == pytest.approx((b - a) * diag / st_.sigma_z, abs=1e-9)

    def test_scale_consistency(self):
        rng = np.random.default_rng(3)
        samples = np.column_stack([rng.random(40), rng.random(40), rng.random(40),
                                   rng.uniform(2, 6, 40)])
        scaled = samples.copy()
        scaled[:, 2] *= 7.5
        a, b = calibrate(samples), calibrate(scaled)
        for u in rng.random(20):
            assert rescale_reg(u * 7.5, 4.0, b)[0] == pytest.approx(rescale_reg(u, 4.0, a)[0],
                                                                     abs=1e-9)


class TestRescaleSet:
    calib = UncertaintyCalibration(stats(), stats(mu_u=0.05, sigma_u=0.02, mu_z=0.1, sigma_z=0.05))

    def test_empty(self):
        assert rescale_set([], [], self.calib) == []

    def test_boundary_singleton(self):
        roi = RoiBox(0.9, 0, 0, 4, 2, 0)
        out = rescale_set([RawUncertainty(0.0, 0.1, 0.0, 0.1)], [roi], self.calib)
        assert (out[0].u_cls_ale, out[0].u_cls_epi) == (1.0, 1.0)

    def test_elementwise(self):
        rng = np.random.default_rng(5)
        rois = [RoiBox(float(rng.random()), 0, 0, *rng.uniform(1, 5, 2), 0) for _ in range(20)]
        raw = [RawUncertainty(*rng.random(4)) for _ in range(20)]
        out = rescale_set(raw, rois, self.calib)
        for o, u, r in zip(out, raw, rois):
            assert o.u_cls_ale == deviation_ratio(u.u_ale_cls, r.confidence, self.calib.ale)
            assert o.u_cls_epi == deviation_ratio(u.u_epi_cls, r.confidence, self.calib.epi)
            d = math.hypot(r.dx, r.dy)
            assert o.u_reg_ale == pytest.approx((u.u_ale_reg * d - 1.0) / 0.5, abs=1e-12)
            assert o.u_reg_epi == pytest.approx((u.u_epi_reg * d - 0.1) / 0.05, abs=1e-12)

    def test_parallel_required(self):
        with pytest.raises(ValueError):
            rescale_set([RawUncertainty(0, 0, 0, 0)], [], self.calib)


def test_calibration_file_round_trip(tmp_path):
    calib = UncertaintyCalibration(stats(), stats(mu_u=0.3))
    calib.save(tmp_path / "c.json")
    assert UncertaintyCalibration.load(tmp_path / "c.json") == calib


def test_calibration_version_checked():
    with pytest.raises(CalibrationError):
        UncertaintyCalibration.from_json('{"version": 2, "ale": {}, "epi": {}}')
