"""What each variant sends over the air, and what it buys."""
import numpy as np

from codyn.config import ScenarioConfig
from codyn.message import message_size
from codyn.pipeline import build_stream, calibration_for, run_pipeline

cfg = ScenarioConfig().with_cell(300.0, 0.0, 0.0)
stream = build_stream(cfg, 0)
msgs = stream.collabs[0].messages
R = np.array([len(m.rois) for m in msgs])
C = np.array([len(m.features) for m in msgs])
print(f"{len(msgs)} messages; ROIs/msg {R.mean():.1f}; feature cells/msg {C.mean():.0f}")
print("header + ROIs + cells =", message_size(int(R[0]), int(C[0]), 8), "bytes for the first message")

# a dense map of the same grid would cost this much per message
print("dense equivalent:", message_size(0, cfg.grid.H * cfg.grid.W, 8), "bytes")

# %%
calib = calibration_for(cfg)
for v in ("single", "late-fusion", "full"):
    res = run_pipeline(v, stream, calib)
    print(f"{v:>12}: AP@0.7 {res.ap(0.7):.4f} at {res.mean_message_bytes:8.0f} bytes/message")
