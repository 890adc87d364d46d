"""Synthetic rooms with known object placements, and labeled shape samples.

Every output is a pure function of its spec and integer seed, so the boxes
recorded for each placed object serve as an exact localization oracle.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geomcore import Box3D, aabb_params, normalize_unit, rotate_about_up


class ShapeClass(IntEnum):
    BOX_SURFACE = 0
    SPHERE_SURFACE = 1
    CYLINDER_SURFACE = 2
    CONE_SURFACE = 3


class SceneGenerationError(RuntimeError):
    pass


def _box(rng, n):
    face = rng.integers(0, 6, size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis, sign = face // 2, np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign
    return pts


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _cylinder(rng, n):
    # side area 4*pi vs. two caps of pi each
    on_side = rng.uniform(size=n) < 4.0 / 6.0
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    r = np.where(on_side, 1.0, np.sqrt(rng.uniform(size=n)))
    z = np.where(on_side, rng.uniform(-1.0, 1.0, size=n), rng.choice([-1.0, 1.0], size=n))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _cone(rng, n):
    # apex at z=+1, unit base at z=-1; lateral area pi*sqrt(5) vs. base pi
    lateral = rng.uniform(size=n) < np.sqrt(5.0) / (np.sqrt(5.0) + 1.0)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    t = np.sqrt(rng.uniform(size=n))  # area density grows linearly away from the apex
    r = np.where(lateral, t, np.sqrt(rng.uniform(size=n)))
    z = np.where(lateral, 1.0 - 2.0 * t, -1.0)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


_SAMPLERS = {
    ShapeClass.BOX_SURFACE: _box,
    ShapeClass.SPHERE_SURFACE: _sphere,
    ShapeClass.CYLINDER_SURFACE: _cylinder,
    ShapeClass.CONE_SURFACE: _cone,
}


def gen_shape(shape_class, n: int, seed: int) -> np.ndarray:
    """``n`` points on the unit-scale surface of ``shape_class``, centered at the origin."""
    if n < 8:
        raise ValueError(f"gen_shape needs n >= 8, got {n}")
    return _SAMPLERS[ShapeClass(shape_class)](np.random.default_rng(seed), n)


@dataclass
class SceneSpec:
    n_points: int = 2048
    object_count: tuple[int, int] = (4, 8)
    extent: tuple[float, float, float] = (8.0, 8.0, 3.0)
    clutter_ratio: float = 0.35
    object_scale: tuple[float, float] = (0.35, 0.75)
    wall_fraction: float = 0.4
    wall_noise: float = 0.02
    max_retries: int = 200
    # draw object classes without repetition (needs object_count <= 4)
    distinct_classes: bool = False

    def __post_init__(self):
        if isinstance(self.object_count, int):
            self.object_count = (self.object_count, self.object_count)
        self.object_count = tuple(int(v) for v in self.object_count)
        self.extent = tuple(float(v) for v in self.extent)
        self.object_scale = tuple(float(v) for v in self.object_scale)
        lo, hi = self.object_count
        if not 0 <= lo <= hi:
            raise ValueError(f"bad object_count range {self.object_count}")
        if not 0.0 <= self.clutter_ratio <= 1.0:
            raise ValueError("clutter_ratio must lie in [0, 1]")
        if self.distinct_classes and hi > len(ShapeClass):
            raise ValueError(f"distinct_classes allows at most {len(ShapeClass)} objects")


@dataclass
class PlacedObject:
    shape_class: ShapeClass
    gt_box: Box3D
    indices: np.ndarray


@dataclass
class Scene:
    points: np.ndarray
    objects: list[PlacedObject] = field(default_factory=list)
    seed: int = 0

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.points, dtype="<f8").tobytes()).hexdigest()


def _background(rng, n, spec: SceneSpec) -> np.ndarray:
    x, y, z = spec.extent
    n_wall = int(round(spec.wall_fraction * n))
    floor = np.column_stack([rng.uniform(0, x, n - n_wall), rng.uniform(0, y, n - n_wall), np.zeros(n - n_wall)])
    # walls chosen in proportion to their length
    lengths = np.array([x, x, y, y])
    wall = rng.choice(4, size=n_wall, p=lengths / lengths.sum())
    along = rng.uniform(0, 1, n_wall)
    height = rng.uniform(0, z, n_wall)
    noise = rng.normal(0.0, spec.wall_noise, n_wall)
    px = np.select([wall == 0, wall == 1, wall == 2], [along * x, along * x, noise], x + noise)
    py = np.select([wall == 0, wall == 1, wall == 2], [noise, y + noise, along * y], along * y)
    return np.vstack([floor, np.column_stack([px, py, height])])


def gen_scene(spec: SceneSpec, seed: int) -> Scene:
    """Place scaled shapes on the floor of a walled room without overlap.

    Objects come first in ``points``; floor and wall points fill the rest.
    Each object's ``gt_box`` is the midpoint box of its own points.
    """
    rng = np.random.default_rng(seed)
    lo, hi = spec.object_count
    k = int(rng.integers(lo, hi + 1))
    n_bg = spec.n_points if k == 0 else int(round(spec.clutter_ratio * spec.n_points))
    n_obj = spec.n_points - n_bg
    if k and n_obj // k < 8:
        raise SceneGenerationError(f"{spec.n_points} points cannot host {k} objects of >= 8 points")
    counts = [n_obj // k + (1 if i < n_obj % k else 0) for i in range(k)]

    classes = rng.permutation(len(ShapeClass))[:k] if spec.distinct_classes else None
    x, y, _ = spec.extent
    placed: list[tuple[float, float, float]] = []
    chunks, objects, offset = [], [], 0
    for i in range(k):
        cls = ShapeClass(int(classes[i] if classes is not None else rng.integers(0, 4)))
        s = float(rng.uniform(*spec.object_scale))
        radius = s * np.sqrt(2.0)
        for _ in range(spec.max_retries):
            cx, cy = rng.uniform(radius, x - radius), rng.uniform(radius, y - radius)
            if all(np.hypot(cx - px, cy - py) > radius + pr + 0.05 for px, py, pr in placed):
                break
        else:
            raise SceneGenerationError(f"could not place object {i} after {spec.max_retries} tries (seed {seed})")
        placed.append((cx, cy, radius))
        local = gen_shape(cls, counts[i], int(rng.integers(0, 2**31 - 1))) * s
        pts = rotate_about_up(local, float(rng.uniform(0, 2 * np.pi))) + np.array([cx, cy, s])
        idx = np.arange(offset, offset + counts[i])
        objects.append(PlacedObject(cls, aabb_params(pts, "midpoint"), idx))
        chunks.append(pts)
        offset += counts[i]
    chunks.append(_background(rng, n_bg, spec))
    return Scene(np.vstack(chunks), objects, seed)


def split_seeds(seeds: range, fractions=(0.8, 0.1, 0.1)) -> dict[str, range]:
    """Cut a seed range into consecutive train/val/test sub-ranges."""
    n = len(seeds)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    s0 = seeds.start
    return {
        "train": range(s0, s0 + n_train),
        "val": range(s0 + n_train, s0 + n_train + n_val),
        "test": range(s0 + n_train + n_val, seeds.stop),
    }


def make_splits(spec: SceneSpec, seeds: dict[str, range]) -> dict[str, list[Scene]]:
    names = list(seeds)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if set(seeds[a]) & set(seeds[b]):
                raise ValueError(f"seed ranges for {a!r} and {b!r} overlap")
    return {name: [gen_scene(spec, s) for s in rng_] for name, rng_ in seeds.items()}


def gen_labeled_shapes(n_samples: int, n_points: int, seed: int, jitter: float = 0.01):
    """Balanced classification set: sample ``i`` has class ``i % 4``.

    Each sample gets a random yaw and Gaussian jitter, then is re-normalized
    into [-1, 1]. Returns ``(points[S, n_points, 3], labels[S])``.
    """
    children = np.random.SeedSequence(seed).spawn(n_samples)
    shapes, labels = [], []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        cls = i % len(ShapeClass)
        pts = gen_shape(cls, n_points, int(rng.integers(0, 2**31 - 1)))
        pts = rotate_about_up(pts, float(rng.uniform(0, 2 * np.pi))) + rng.normal(0, jitter, size=pts.shape)
        shapes.append(normalize_unit(pts)[0])
        labels.append(cls)
    return np.stack(shapes), np.array(labels, dtype=np.int64)
