"""Random point blocks: selection, ground-truth boxes, scene -> object space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geomcore import Box3D, aabb_params, as_points, knn_many, normalize_unit, rotate_about_up


@dataclass
class BlockConfig:
    K_o: int = 8
    N_o: int = 128
    center_mode: str = "mean"
    rotate: bool = True
    # normalize by max(xy radius, |z|) so rotated blocks stay inside [-1, 1]
    strict: bool = False

    def __post_init__(self):
        if self.K_o < 1:
            raise ValueError(f"K_o must be >= 1, got {self.K_o}")
        if self.N_o < 8:
            raise ValueError(f"N_o must be >= 8, got {self.N_o}")
        if self.center_mode not in ("mean", "midpoint"):
            raise ValueError(f"unknown center_mode {self.center_mode!r}")


@dataclass
class BlockSet:
    center_indices: np.ndarray   # (K_o,)
    member_indices: np.ndarray   # (K_o, N_o), each row sorted by distance to its center
    scene_points: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.scene_points[self.member_indices]

    @property
    def centers(self) -> np.ndarray:
        return self.scene_points[self.center_indices]

    def __len__(self) -> int:
        return len(self.center_indices)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_blocks(scene_points, cfg: BlockConfig, rng_seed) -> BlockSet:
    """Draw ``K_o`` distinct centers uniformly and take each one's ``N_o`` nearest points."""
    pts = as_points(scene_points)
    if pts.shape[0] < max(cfg.K_o, cfg.N_o):
        raise ValueError(f"scene has {pts.shape[0]} points; blocks need at least {max(cfg.K_o, cfg.N_o)}")
    centers = _rng(rng_seed).choice(pts.shape[0], size=cfg.K_o, replace=False)
    return BlockSet(centers, knn_many(pts, pts[centers], cfg.N_o), pts)


def gt_boxes(bs: BlockSet, center_mode: str = "mean") -> list[Box3D]:
    return [aabb_params(bs.scene_points[row], center_mode) for row in bs.member_indices]


def gt_box_array(bs: BlockSet, center_mode: str = "mean") -> np.ndarray:
    """``(K_o, 6)`` array of ``[center, half_extents]`` rows."""
    return np.stack([b.as_array() for b in gt_boxes(bs, center_mode)])


@dataclass
class ObjectBlock:
    points: np.ndarray
    center: np.ndarray
    scale: float
    rotation_angle: float

    def to_scene(self, points=None) -> np.ndarray:
        """Undo rotation, scale and centering."""
        p = self.points if points is None else np.asarray(points, dtype=np.float64)
        return rotate_about_up(p, -self.rotation_angle) * self.scale + self.center


def to_object_space(block_points, center, rng_seed=None, rotate: bool = True, strict: bool = False) -> ObjectBlock:
    """Subtract ``center``, scale into [-1, 1], then optionally rotate about z.

    With ``strict`` the scale bounds the xy radius, so the rotated block is
    still inside the unit cube.
    """
    pts = as_points(block_points)
    c = np.asarray(center, dtype=np.float64).reshape(3)
    unit, tf = normalize_unit(pts - c, center=np.zeros(3), radial=strict)
    angle = float(_rng(rng_seed).uniform(0.0, 2 * np.pi)) if rotate else 0.0
    if rotate:
        unit = rotate_about_up(unit, angle)
    return ObjectBlock(unit, c, tf.scale, angle)
