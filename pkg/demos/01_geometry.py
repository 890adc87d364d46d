"""
Geometry kernels
================

Farthest point sampling, k nearest neighbours, Chamfer distance and the
box overlap measures that drive the localization loss.
"""
import numpy as np

from pointmode import geomcore as G

rng = np.random.default_rng(0)
pts = rng.normal(size=(200, 3))

# FPS picks points that are spread out; ties go to the lowest index
idx = G.fps(pts, 8, seed_index=0)
print("fps indices:", idx.tolist())

# nearest neighbours of the first sampled point (itself comes first)
nn = G.knn(pts, pts[idx[0]], 5)
print("5-nn of point", idx[0], "->", nn.tolist())

# Chamfer is symmetric and zero only for matching sets
a, b = pts[:50], pts[:50] + 0.01
print("chamfer(a, a) =", G.chamfer(a, a))
print("chamfer(a, a+0.01) = %.6f" % G.chamfer(a, b))

# unit boxes sliding apart along x: IoU hits 0, GIoU keeps going negative
unit = np.ones(3)
ref = G.Box3D(np.zeros(3), unit)
for dx in (0.0, 1.0, 2.0, 4.0):
    other = G.Box3D(np.array([dx, 0, 0]), unit)
    print("dx=%.1f  iou=%.4f  giou=%+.4f" % (dx, G.iou(ref, other), G.giou(ref, other)))
