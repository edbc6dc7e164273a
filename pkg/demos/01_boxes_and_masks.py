"""Oriented boxes on a BEV grid: rasterization, masks, sparse maps and rotated IoU."""
import numpy as np

from codyn.bev import GridSpec, RoiBox, make_mask, rasterize_roi, rotated_iou, sparsify
from codyn.bev import DenseFeatureMap

grid = GridSpec(-10.0, 10.0, -6.0, 6.0, 0.4, 4)
print("grid", grid.shape, "cells of", grid.cell_size, "m")

# %% a car-sized box, slightly rotated
car = RoiBox(0.9, 1.0, 0.5, 4.5, 2.0, 0.3)
cells = rasterize_roi(car, grid)
print(len(cells), "cells have their center inside the box")

# %% masks are unions; duplicates change nothing
other = RoiBox(0.7, 3.0, 1.0, 4.0, 1.8, -0.2)
mask = make_mask([car, other, car], grid)
print("mask popcount", mask.popcount())

# draw it, rows flipped so +y points up
for row in mask.bits[::-1][6:24]:
    print("".join("#" if b else "." for b in row))

# %% keep only ROI features
rng = np.random.default_rng(0)
dense = DenseFeatureMap(grid, rng.normal(size=(grid.H, grid.W, grid.channels)))
sparse = sparsify(dense, mask)
print("sparse map keeps", len(sparse), "of", grid.H * grid.W, "cells")

# %% rotated IoU
print("IoU(car, other) =", round(rotated_iou(car, other), 4))
print("IoU of offset 2x2 squares =", rotated_iou(RoiBox(1, 0, 0, 2, 2, 0), RoiBox(1, 1, 0, 2, 2, 0)))
