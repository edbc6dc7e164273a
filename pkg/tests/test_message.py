import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codyn.bev import GridSpec, RoiBox, SparseFeatureMap
from codyn.message import (
    HEADER_SIZE, EncodingError, FormatError, RawUncertainty, decode, encode, message_bytes,
    message_size, pack_message, read_message, write_message,
)

GRID = GridSpec(-20.0, 20.0, -10.0, 10.0, 0.4, 8)


def random_message(rng, grid=GRID, max_rois=6, max_cells=40):
    R = int(rng.integers(0, max_rois + 1))
    rois = [RoiBox(float(rng.random()), *rng.uniform(-20, 20, 2), *rng.uniform(0.5, 5, 2),
                   float(rng.uniform(-np.pi, np.pi))) for _ in range(R)]
    uncs = [RawUncertainty(*rng.random(4)) for _ in range(R)]
    C = int(rng.integers(0, max_cells + 1))
    flat = rng.choice(grid.H * grid.W, size=C, replace=False)
    idx = np.stack([flat // grid.W, flat % grid.W], axis=1)
    feats = SparseFeatureMap(grid, idx, rng.normal(size=(C, grid.channels)))
    return pack_message(int(rng.integers(0, 65536)), int(rng.integers(0, 2**32)), rois, uncs, feats)


def test_header_is_22_bytes():
    assert HEADER_SIZE == 22


def test_empty_message_size():
    msg, data = pack_message(0, 0, [], [], SparseFeatureMap(GRID))
    assert len(data) == 22 == message_bytes(msg)


def test_one_roi_no_cells():
    _, data = pack_message(3, 1234, [RoiBox(0.5, 1, 2, 4, 2, 0.1)],
                           [RawUncertainty(0.1, 0.2, 0.3, 0.4)], SparseFeatureMap(GRID))
    assert len(data) == 62


def test_closed_form():
    assert message_size(10, 0, 8) == 422


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        msg, data = random_message(rng)
        back = decode(data, GRID)
        assert back == msg
        assert len(data) == message_size(len(msg.rois), len(msg.features), 8)


def test_yaw_at_pi_survives_float32():
    msg, data = pack_message(1, 5, [RoiBox(0.9, 1, 1, 4, 2, np.pi)],
                             [RawUncertainty(0, 0, 0, 0)], SparseFeatureMap(GRID))
    assert decode(data, GRID) == msg
    assert encode(decode(data, GRID)) == data


def test_bad_magic():
    _, data = pack_message(0, 0, [], [], SparseFeatureMap(GRID))
    with pytest.raises(FormatError, match="bad magic"):
        decode(b"XXXX" + data[4:], GRID)


def test_bad_version():
    _, data = pack_message(0, 0, [], [], SparseFeatureMap(GRID))
    with pytest.raises(FormatError, match="version"):
        decode(data[:4] + (9).to_bytes(2, "little") + data[6:], GRID)


def test_truncated():
    rng = np.random.default_rng(1)
    _, data = random_message(rng, max_rois=3)
    with pytest.raises(FormatError):
        decode(data[:-1] if len(data) > 22 else data[:10], GRID)


def test_parallel_lengths_required():
    with pytest.raises(ValueError):
        pack_message(0, 0, [RoiBox(0.5, 0, 0, 1, 1, 0)], [], SparseFeatureMap(GRID))


def test_timestamp_overflow():
    with pytest.raises(EncodingError):
        pack_message(0, 2**32, [], [], SparseFeatureMap(GRID))


def test_sender_overflow():
    with pytest.raises(EncodingError):
        pack_message(70000, 0, [], [], SparseFeatureMap(GRID))


def test_file_round_trip(tmp_path):
    msg, _ = random_message(np.random.default_rng(2))
    path = tmp_path / "m.cdtm"
    n = write_message(path, msg)
    assert n == message_bytes(msg)
    assert read_message(path, GRID) == msg


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    msg, data = random_message(np.random.default_rng(seed), max_rois=4, max_cells=10)
    assert decode(data, GRID) == msg
