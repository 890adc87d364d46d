"""
Scenes, blocks and object space
===============================

A synthetic room with known objects, random point blocks cut from it,
their ground-truth boxes, and the move into object coordinates.
"""
import numpy as np

from pointmode.blocks import BlockConfig, gt_boxes, sample_blocks, to_object_space
from pointmode.scenegen import SceneSpec, gen_scene

scene = gen_scene(SceneSpec(), seed=3)
print("scene: %d points, %d objects" % (len(scene.points), len(scene.objects)))
for o in scene.objects:
    print("  %-8s center %s" % (o.shape_class.name, np.round(o.gt_box.center, 2)))

# same seed, same scene, byte for byte
assert gen_scene(SceneSpec(), seed=3).checksum() == scene.checksum()

bs = sample_blocks(scene.points, BlockConfig(K_o=4, N_o=128), rng_seed=0)
for box, pts, c in zip(gt_boxes(bs), bs.points, bs.centers):
    ob = to_object_space(pts, c, rng_seed=1, rotate=True, strict=True)
    back = np.abs(ob.to_scene() - pts).max()
    print("block at %s  half %s  object-space max |x| %.3f  roundtrip %.1e"
          % (np.round(box.center, 2), np.round(box.half_extents, 2), np.abs(ob.points).max(), back))
