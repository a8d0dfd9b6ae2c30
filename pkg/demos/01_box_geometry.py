"""Rotated boxes, BEV / 3D IoU, and the rasterization cross-check."""
import math

import numpy as np

from relate3d.geometry import Box3D, bev_corners, iou_3d, iou_bev, transform_rotate_z
from relate3d.oracles import raster_iou_bev

# A car-sized box: x forward, y left, z up (z is the box center), heading in radians.
car = Box3D(x=10.0, y=2.0, z=0.8, h=1.6, w=1.8, l=4.2, theta=0.3)
print("footprint corners:\n", np.round(bev_corners(car), 3))

# Unit square against itself rotated by 45 degrees.
a = Box3D(0, 0, 0, 1, 1, 1, 0.0)
b = a.replace(theta=math.pi / 4)
# The overlap is a regular octagon of area 2 (sqrt 2 - 1).
octagon = 2 * (math.sqrt(2) - 1)
print("BEV IoU, square vs 45 deg:", round(iou_bev(a, b), 6), "closed form:", round(octagon / (2 - octagon), 6))
print("raster estimate (2000 x 2000):", round(raster_iou_bev(a, b), 6))

# Shifting one box up halves the height overlap.
print("3D IoU with half height overlap:", iou_3d(a, a.replace(z=0.5)))

# IoU does not change when both boxes rotate about the origin together.
rng = np.random.default_rng(0)
p = Box3D(0.3, -0.2, 0, 1.5, 1.2, 3.0, 0.4)
q = Box3D(1.0, 0.4, 0, 1.5, 1.6, 3.5, -0.9)
for phi in rng.uniform(-math.pi, math.pi, 3):
    print(f"rotate by {phi:+.2f}: IoU {iou_bev(transform_rotate_z(p, phi), transform_rotate_z(q, phi)):.12f}")
