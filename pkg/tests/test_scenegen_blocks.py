import numpy as np
import pytest

from pointmode import geomcore as G
from pointmode.blocks import BlockConfig, gt_box_array, gt_boxes, sample_blocks, to_object_space
from pointmode.scenegen import (SceneGenerationError, SceneSpec, ShapeClass, gen_labeled_shapes, gen_scene,
                                gen_shape, make_splits, split_seeds)


# -- shapes ------------------------------------------------------------

@pytest.mark.parametrize("cls", list(ShapeClass))
def test_shapes_are_unit_scale_and_deterministic(cls):
    a = gen_shape(cls, 500, 3)
    assert a.shape == (500, 3)
    assert np.abs(a).max() <= 1.0 + 1e-12
    assert np.array_equal(a, gen_shape(cls, 500, 3))


def test_sphere_and_box_surfaces():
    s = gen_shape(ShapeClass.SPHERE_SURFACE, 300, 1)
    np.testing.assert_allclose(np.linalg.norm(s, axis=1), 1.0, atol=1e-6)
    b = gen_shape(ShapeClass.BOX_SURFACE, 300, 1)
    assert np.all(np.any(np.abs(np.abs(b) - 1.0) <= 1e-6, axis=1))


def test_cylinder_and_cone_surfaces():
    c = gen_shape(ShapeClass.CYLINDER_SURFACE, 400, 2)
    r = np.hypot(c[:, 0], c[:, 1])
    assert np.all((np.abs(r - 1) < 1e-9) | (np.abs(np.abs(c[:, 2]) - 1) < 1e-9))
    k = gen_shape(ShapeClass.CONE_SURFACE, 400, 2)
    r = np.hypot(k[:, 0], k[:, 1])
    assert np.all((np.abs(r - (1 - k[:, 2]) / 2) < 1e-9) | (np.abs(k[:, 2] + 1) < 1e-9))


def test_gen_shape_rejects_small_n():
    with pytest.raises(ValueError):
        gen_shape(ShapeClass.SPHERE_SURFACE, 7, 0)


# -- scenes ------------------------------------------------------------

def test_scene_basic_contract():
    spec = SceneSpec()
    sc = gen_scene(spec, 4)
    assert sc.points.shape == (spec.n_points, 3)
    assert 4 <= len(sc.objects) <= 8
    for obj in sc.objects:
        assert obj.gt_box.contains(sc.points[obj.indices]).all()
    assert np.array_equal(sc.points, gen_scene(spec, 4).points)


def test_scene_without_objects():
    sc = gen_scene(SceneSpec(object_count=0), 0)
    assert sc.objects == [] and sc.points.shape == (2048, 3)
    assert np.all(sc.points[:, 2] >= 0)


def test_objects_do_not_overlap():
    for seed in range(20):
        sc = gen_scene(SceneSpec(), seed)
        for i, a in enumerate(sc.objects):
            for b in sc.objects[i + 1:]:
                assert G.iou(a.gt_box, b.gt_box) == 0.0


def test_infeasible_scene_raises():
    with pytest.raises(SceneGenerationError):
        gen_scene(SceneSpec(n_points=40, object_count=8, clutter_ratio=0.5), 0)
    with pytest.raises(SceneGenerationError):
        gen_scene(SceneSpec(extent=(2.0, 2.0, 3.0), object_count=8, object_scale=(0.6, 0.7), max_retries=20), 0)


def test_splits():
    parts = split_seeds(range(100))
    assert [len(parts[k]) for k in ("train", "val", "test")] == [80, 10, 10]
    assert not set(parts["train"]) & set(parts["test"])
    spec = SceneSpec(n_points=256)
    a = make_splits(spec, parts)
    b = make_splits(spec, parts)
    assert [s.checksum() for s in a["test"]] == [s.checksum() for s in b["test"]]
    with pytest.raises(ValueError):
        make_splits(spec, {"train": range(0, 10), "test": range(5, 15)})


def test_labeled_shapes_balanced_and_normalized():
    pts, labels = gen_labeled_shapes(12, 64, seed=0)
    assert pts.shape == (12, 64, 3)
    assert np.bincount(labels).tolist() == [3, 3, 3, 3]
    assert np.abs(pts).max() <= 1.0


# -- blocks ------------------------------------------------------------

@pytest.fixture(scope="module")
def scene():
    return gen_scene(SceneSpec(), 1).points


def test_sample_blocks_contract(scene):
    cfg = BlockConfig(K_o=8, N_o=128)
    bs = sample_blocks(scene, cfg, 7)
    assert len(set(bs.center_indices.tolist())) == 8
    assert bs.member_indices.shape == (8, 128)
    for c, row in zip(bs.center_indices, bs.member_indices):
        assert np.linalg.norm(scene[row[0]] - scene[c]) == 0.0
        assert c in row
    again = sample_blocks(scene, cfg, 7)
    assert np.array_equal(bs.member_indices, again.member_indices)


def test_single_block_is_whole_scene():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    bs = sample_blocks(pts, BlockConfig(K_o=1, N_o=50), 0)
    assert sorted(bs.member_indices[0].tolist()) == list(range(50))


def test_sample_blocks_needs_enough_points():
    with pytest.raises(ValueError):
        sample_blocks(np.zeros((20, 3)), BlockConfig(K_o=2, N_o=32), 0)


def test_gt_boxes_examples(scene):
    pts = np.array([(0, 0, 0), (2, 4, 6)] * 4, dtype=float)
    bs = sample_blocks(pts, BlockConfig(K_o=1, N_o=8), 0)
    (box,) = gt_boxes(bs)
    np.testing.assert_allclose(box.center, [1, 2, 3])
    np.testing.assert_allclose(box.half_extents, [1, 2, 3])
    same = sample_blocks(np.ones((10, 3)), BlockConfig(K_o=1, N_o=8), 0)
    np.testing.assert_array_equal(gt_boxes(same)[0].half_extents, 0.0)
    bs = sample_blocks(scene, BlockConfig(), 3)
    shuffled = bs.member_indices[:, ::-1].copy()
    from pointmode.blocks import BlockSet
    np.testing.assert_allclose(gt_box_array(BlockSet(bs.center_indices, shuffled, scene)), gt_box_array(bs),
                               atol=1e-12)


def test_gt_box_locality(scene):
    bs = sample_blocks(scene, BlockConfig(), 3)
    boxes = gt_box_array(bs)
    for i, row in enumerate(bs.member_indices):
        np.testing.assert_array_equal(boxes[i], G.aabb_params(scene[row]).as_array())


def test_to_object_space_two_point_block():
    ob = to_object_space([(1, 1, 1), (3, 3, 3)], (2, 2, 2), rotate=False)
    np.testing.assert_array_equal(ob.points, [(-1, -1, -1), (1, 1, 1)])
    assert ob.scale == 1.0


def test_to_object_space_roundtrip_and_isometry(scene):
    bs = sample_blocks(scene, BlockConfig(), 5)
    for i in range(len(bs)):
        plain = to_object_space(bs.points[i], bs.centers[i], rotate=False)
        rot = to_object_space(bs.points[i], bs.centers[i], rng_seed=i, rotate=True)
        np.testing.assert_allclose(rot.to_scene(), bs.points[i], atol=1e-6)
        np.testing.assert_allclose(plain.to_scene(), bs.points[i], atol=1e-6)
        d0 = np.linalg.norm(plain.points[:, None] - plain.points[None], axis=-1)
        d1 = np.linalg.norm(rot.points[:, None] - rot.points[None], axis=-1)
        np.testing.assert_allclose(d0, d1, atol=1e-9)
        assert np.hypot(rot.points[:, 0], rot.points[:, 1]).max() <= np.sqrt(2) + 1e-12
        assert np.abs(rot.points[:, 2]).max() <= 1.0


def test_strict_mode_contains_rotated_blocks(scene):
    bs = sample_blocks(scene, BlockConfig(), 9)
    for i in range(len(bs)):
        ob = to_object_space(bs.points[i], bs.centers[i], rng_seed=100 + i, rotate=True, strict=True)
        assert np.abs(ob.points).max() <= 1.0


def test_decoupling_from_scene_position():
    shape = gen_shape(ShapeClass.CONE_SURFACE, 64, 0) * 0.4
    a = to_object_space(shape + (1.0, 2.0, 0.5), shape[3] + (1.0, 2.0, 0.5), rotate=False)
    b = to_object_space(shape + (6.5, -3.0, 2.0), shape[3] + (6.5, -3.0, 2.0), rotate=False)
    np.testing.assert_allclose(a.points, b.points, atol=1e-9)


def test_degenerate_block_uses_unit_scale():
    ob = to_object_space(np.full((10, 3), 2.5), (2.5, 2.5, 2.5), rotate=True, rng_seed=0)
    assert ob.scale == 1.0
    np.testing.assert_array_equal(ob.points, 0.0)
