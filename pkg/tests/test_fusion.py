import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codyn.bev import DenseFeatureMap, DimensionError, GridSpec, RoiBox, rotated_iou
from codyn.fusion import (
    FusionWeights, decode_boxes, hybrid_fuse, maxout_avgout, mish, multi_scale_fuse, nms,
)

GRID = GridSpec(0.0, 6.4, 0.0, 4.8, 0.4, 8)  # 12 x 16


def dmap(values):
    return DenseFeatureMap(GRID, np.asarray(values, dtype=float))


def rand_map(rng, lo=-1.0, hi=1.0):
    return dmap(rng.uniform(lo, hi, size=(GRID.H, GRID.W, GRID.channels)))


def mish_oracle(x):
    mpmath.mp.dps = 50
    x = mpmath.mpf(x)
    return float(x * mpmath.tanh(mpmath.log1p(mpmath.exp(x))))


class TestMish:
    def test_zero(self):
        assert mish(0.0) == 0.0

    @pytest.mark.parametrize("x", [10.0, -20.0, 1.0, -1.0, 0.3, 50.0, -50.0, -700.0, 700.0])
    def test_against_mpmath(self, x):
        assert mish(x) == pytest.approx(mish_oracle(x), rel=1e-12, abs=1e-300)

    def test_reference_values(self):
        # 10 * tanh(10.0000454) = 10 * (1 - 2e-20 * e^...) ~ 9.99999996
        assert mish(10.0) == pytest.approx(9.9999999588, abs=1e-9)
        assert mish(-20.0) == pytest.approx(-4.1e-8, rel=0.02)

    def test_vectorized_finite(self):
        out = mish(np.linspace(-1000, 1000, 101))
        assert np.all(np.isfinite(out))


class TestMaxAvg:
    def test_single(self):
        m = rand_map(np.random.default_rng(0))
        mx, avg = maxout_avgout([m])
        assert np.array_equal(mx, m.values) and np.array_equal(avg, m.values)

    def test_identical(self):
        m = rand_map(np.random.default_rng(1))
        mx, avg = maxout_avgout([m] * 5)
        assert np.array_equal(mx, m.values) and np.array_equal(avg, m.values)

    def test_constants(self):
        one = dmap(np.ones((GRID.H, GRID.W, 8)))
        mx, avg = maxout_avgout([one, dmap(3 * one.values)])
        assert np.all(mx == 3.0) and np.all(avg == 2.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            maxout_avgout([])
        other = DenseFeatureMap(GridSpec(0.0, 6.4, 0.0, 4.8, 0.4, 4), np.zeros((12, 16, 4)))
        with pytest.raises(DimensionError):
            maxout_avgout([dmap(np.zeros((12, 16, 8))), other])


class TestHybrid:
    def test_identity_theorem(self):
        m = rand_map(np.random.default_rng(2))
        for n in range(1, 5):
            out = hybrid_fuse(m, [m] * (n - 1), FusionWeights.identity(8))
            assert np.array_equal(out.values, m.values)

    def test_with_zero_map(self):
        m = rand_map(np.random.default_rng(3))
        zero = dmap(np.zeros_like(m.values))
        out = hybrid_fuse(m, [zero], FusionWeights.identity(8)).values
        mx = np.maximum(m.values, 0.0)
        avg = m.values / 2
        assert np.allclose(out, 0.5 * mx + 0.5 * avg, atol=1e-15)

    def test_seeded_deterministic(self):
        rng = np.random.default_rng(4)
        maps = [rand_map(rng) for _ in range(3)]
        a = hybrid_fuse(maps[0], maps[1:], FusionWeights.seeded(8, 11)).values
        b = hybrid_fuse(maps[0], maps[1:], FusionWeights.seeded(8, 11)).values
        assert np.array_equal(a, b)
        assert not np.array_equal(a, hybrid_fuse(maps[0], maps[1:], FusionWeights.identity(8)).values)

    @pytest.mark.parametrize("seed", range(3))
    def test_permutation_bit_identical(self, seed):
        rng = np.random.default_rng(seed)
        ego, others = rand_map(rng), [rand_map(rng) for _ in range(4)]
        w = FusionWeights.seeded(8, seed)
        ref = hybrid_fuse(ego, others, w).values
        for perm in itertools.permutations(range(4)):
            assert np.array_equal(hybrid_fuse(ego, [others[i] for i in perm], w).values, ref)

    def test_odd_channels_rejected(self):
        with pytest.raises(DimensionError):
            FusionWeights.identity(3)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            hybrid_fuse(dmap(np.zeros((12, 16, 8))), [], FusionWeights.identity(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 1))
    def test_monotone_suppression(self, seed, lam):
        rng = np.random.default_rng(seed)
        ego, other = rand_map(rng, 0, 1), rand_map(rng, 0, 1)
        mx0, avg0 = maxout_avgout([ego, other])
        mx1, avg1 = maxout_avgout([ego, dmap(other.values * lam)])
        assert np.all(mx1 <= mx0) and np.all(avg1 <= avg0 + 1e-15)


class TestMultiScale:
    def test_single_scale_is_hybrid(self):
        rng = np.random.default_rng(5)
        ego, others = rand_map(rng), [rand_map(rng)]
        w = FusionWeights.seeded(8, 1)
        assert np.array_equal(multi_scale_fuse(ego, others, w, 1).values,
                              hybrid_fuse(ego, others, w).values)

    @pytest.mark.parametrize("S", [1, 2, 3])
    def test_identity_theorem(self, S):
        m = rand_map(np.random.default_rng(6))
        out = multi_scale_fuse(m, [m, m], FusionWeights.identity(8), S)
        assert np.array_equal(out.values, m.values)

    def test_constant_maps(self):
        c = dmap(np.full((12, 16, 8), 0.7))
        out = multi_scale_fuse(c, [dmap(np.full((12, 16, 8), 0.3))], FusionWeights.identity(8), 3)
        assert np.allclose(out.values, out.values[0, 0], atol=0) or np.ptp(out.values) < 1e-15

    def test_checkerboard_two_scales(self):
        hh, ww = np.indices((12, 16))
        board = ((hh + ww) % 2).astype(float)[..., None].repeat(8, axis=-1)
        zero = dmap(np.zeros_like(board))
        out = multi_scale_fuse(dmap(board), [zero], FusionWeights.identity(8), 2).values
        # scale 0: 0.5*max + 0.5*avg = 0.75*board
        # scale 1: pooled board is 0.5, pooled zero is 0; residual 0.5*(0.5 - 0.25) = 0.125
        assert np.array_equal(out, 0.75 * board + 0.125 / 2)

    def test_divisibility(self):
        g = GridSpec(0.0, 2.0, 0.0, 2.0, 0.4, 8)  # 5 x 5
        m = DenseFeatureMap(g, np.zeros((5, 5, 8)))
        with pytest.raises(DimensionError):
            multi_scale_fuse(m, [], FusionWeights.identity(8), 2)


def test_weight_blob_round_trip():
    w = FusionWeights.seeded(8, 3)
    back = FusionWeights.from_bytes(w.to_bytes())
    assert back.mode == "seeded"
    assert all(np.array_equal(a, b) for a, b in zip(w.arrays(), back.arrays()))
    with pytest.raises(ValueError):
        FusionWeights.from_bytes(w.to_bytes() + b"\0")
    with pytest.raises(ValueError):
        FusionWeights.from_bytes(b"XXXX" + w.to_bytes()[4:])


def nms_oracle(cands, thr):
    """Textbook NMS: repeatedly keep the best remaining and drop everything overlapping it."""
    rest = sorted(range(len(cands)), key=lambda i: (-cands[i][1], cands[i][0].x, cands[i][0].y, i))
    keep = []
    while rest:
        i = rest.pop(0)
        keep.append(i)
        rest = [j for j in rest if rotated_iou(cands[i][0], cands[j][0]) <= thr]
    return keep


class TestDecode:
    def test_single(self):
        r = RoiBox(0.7, 1, 2, 4, 2, 0.1)
        assert decode_boxes([r], []) == [(r, 0.7)]

    def test_identical_boxes(self):
        a = RoiBox(0.9, 0, 0, 4, 2, 0)
        out = decode_boxes([a], [(a.replace(confidence=0.8), 1.0)])
        assert out == [(a, 0.9)]

    def test_modulus_scales_score(self):
        a = RoiBox(0.6, 0, 0, 4, 2, 0)
        b = RoiBox(0.9, 0.2, 0, 4, 2, 0)
        out = decode_boxes([a], [(b, 0.5)])
        assert out == [(a, 0.6)]

    def test_handcrafted_five(self):
        cands = [
            (RoiBox(1, 0.0, 0.0, 4, 2, 0.0), 0.9),
            (RoiBox(1, 0.5, 0.0, 4, 2, 0.0), 0.8),   # IoU 0.78 with #0
            (RoiBox(1, 3.5, 0.0, 4, 2, 0.0), 0.7),   # IoU 0.067 with #0, 0.14 with #1
            (RoiBox(1, 10.0, 0.0, 4, 2, 0.5), 0.6),
            (RoiBox(1, 10.2, 0.3, 4, 2, 0.4), 0.95),
        ]
        assert nms(cands, 0.15) == nms_oracle(cands, 0.15) == [4, 0, 2]

    def test_random_against_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(1, 9))
            cands = [(RoiBox(1, *rng.uniform(-4, 4, 2), *rng.uniform(1, 4, 2), rng.uniform(-3, 3)),
                      float(rng.random())) for _ in range(n)]
            kept = nms(cands, 0.15)
            assert kept == nms_oracle(cands, 0.15)
            for a, b in itertools.combinations(kept, 2):
                assert rotated_iou(cands[a][0], cands[b][0]) <= 0.15

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            nms([], 0.0)
