"""RoI feature extraction: float-coordinate RoIAlign vs rounding RoIPool.

Walks the schematic case: a 10x10 RoI pooled to a 3x3 feature with 2x2
bilinear sample points per bin, then shows what rounding does to a RoI that
sits between integer coordinates, and that the backward pass conserves
gradient mass.
"""

import numpy as np

from dyntrack.roi import (bilinear_sample, map_box_to_roi, roialign_backward,
                          roialign_forward, roipool_forward)

rng = np.random.default_rng(1)

print("== image box to feature-map RoI (stride 16) ==")
print("box (0,0,16,16)  ->", map_box_to_roi((0, 0, 16, 16), 16, (20, 20)))
print("box (8,8,40,24)  ->", map_box_to_roi((8, 8, 40, 24), 16, (20, 20)))
print("a 2px-wide box is expanded to one feature cell:",
      map_box_to_roi((32, 32, 2, 30), 16, (20, 20)))

print("\n== bilinear interpolation at float points ==")
fm = np.array([[[0.0, 1.0], [2.0, 3.0]]])
print("2x2 map [[0,1],[2,3]], sample at (0.5, 0.5):",
      bilinear_sample(fm, 0.5, 0.5, channel=0), "(mean of the corners)")

print("\n== the 10x10 -> 3x3 max-RoIAlign ==")
fm = rng.standard_normal((1, 12, 12))
pooled, cache = roialign_forward(fm, np.array([[0.0, 0.0, 10.0, 10.0]]))
print("bin boundaries fall at multiples of 10/3; each output is the max of")
print("4 bilinear samples taken inside its bin:")
print(np.round(pooled[0, 0], 3))

print("\n== what rounding loses ==")
roi = np.array([[0.4, 0.4, 6.6, 6.6]])
aligned, _ = roialign_forward(fm, roi)
quantized, _ = roipool_forward(fm, roi)
shifted, _ = roipool_forward(fm, roi + 0.2)  # same box, nudged 0.2 cells
print("roipool treats (0.4, ... 6.6) exactly like (0, ... 7):")
exact, _ = roipool_forward(fm, np.array([[0.0, 0.0, 7.0, 7.0]]))
print("  identical after rounding:", np.array_equal(quantized, exact))
print("  roipool ignores a 0.2-cell shift:", np.array_equal(quantized, shifted))
al_shift, _ = roialign_forward(fm, roi + 0.2)
print("  roialign sees it:           ", not np.array_equal(aligned, al_shift))

print("\n== backward conserves gradient mass ==")
grad_out = rng.standard_normal(pooled.shape)
grad_fm = roialign_backward(grad_out, cache)
print(f"sum(grad_in) = {grad_fm.sum():+.9f}")
print(f"sum(grad_out) = {grad_out.sum():+.9f}")
print("each bin routes its gradient to the four integer neighbours of its")
print("winning sample point, with weights that sum to one")
