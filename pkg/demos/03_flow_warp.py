"""Matching, linear extrapolation and the DFTM-weighted backward warp."""
import numpy as np

from codyn.bev import GridSpec, RoiBox
from codyn.detector import embed_features
from codyn.flow import build_flow_map, match_rois, warp_with_dftm

grid = GridSpec(-16.0, 16.0, -4.0, 4.0, 0.4, 8)

# two frames of one collaborator, 200 ms apart; car A drives +x at 10 m/s, car B is parked
prev = [RoiBox(0.9, -8.0, 0.0, 4.5, 2.0, 0.0), RoiBox(0.8, 6.0, 2.0, 4.5, 2.0, 0.0)]
curr = [RoiBox(0.9, -6.0, 0.0, 4.5, 2.0, 0.0), RoiBox(0.8, 6.0, 2.0, 4.5, 2.0, 0.0)]
pairs, unmatched = match_rois(prev, curr, 6.0)
print("pairs", [(p.prev_index, p.curr_index, round(p.distance, 2)) for p in pairs])

# %% the ego frame arrives 300 ms after the latest message
res = build_flow_map(pairs, [curr[j] for j in unmatched], grid, 0.0, 200.0, 500.0)
for m in res.motions:
    print("velocity", m.velocity, "-> displacement", m.displacement)

# the stored displacement says where each destination cell gathers from
d = res.flow.d
print("distinct flow vectors:", sorted({(int(a), int(b)) for a, b in d.reshape(-1, 2)}))

# %% warp the collaborator's features, half-trusting the parked car
feats = embed_features(curr, grid, 8, ids=[0, 1])
# results follow match order, so pick each modulus from the ROI's estimated motion
moduli = [0.5 if m.velocity == (0.0, 0.0) else 1.0 for m in res.motions]
warped = warp_with_dftm(feats, res.flow, moduli, res.cells)
occupancy = np.zeros(grid.shape, int)
occupancy[feats.indices[:, 0], feats.indices[:, 1]] += 1
occupancy[warped.indices[:, 0], warped.indices[:, 1]] += 2
print("1 = stale only, 2 = warped only, 3 = both")
for row in occupancy[::-1]:
    print("".join(".123"[v] for v in row))
