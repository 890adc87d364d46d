"""Deterministic geometric primitives: sampling, neighbours, boxes, distances.

Point sets are plain ``(N, 3)`` float arrays. All functions are pure.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Corner order: product of (-1, +1) over (x, y, z), x varying slowest.
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


def as_points(points) -> np.ndarray:
    """Validate and return an ``(N, 3)`` float array."""
    pts = np.asarray(points, dtype=np.float64) if not isinstance(points, np.ndarray) else points
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("point set is empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point set contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned box given by its center and (nonnegative) half-extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(h < 0):
            raise ValueError(f"half-extents must be nonnegative, got {h}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)

    @property
    def corners(self) -> np.ndarray:
        return self.center + CORNER_SIGNS * self.half_extents

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extents

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def as_array(self) -> np.ndarray:
        """``[cx, cy, cz, hx, hy, hz]``."""
        return np.concatenate([self.center, self.half_extents])

    @classmethod
    def from_array(cls, arr) -> "Box3D":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[:3], arr[3:6])

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)

    def translated(self, t) -> "Box3D":
        return Box3D(self.center + np.asarray(t, dtype=np.float64), self.half_extents)


def fps(points, m: int, seed_index: int = 0) -> np.ndarray:
    """Farthest point sampling.

    Each new index maximizes the minimum squared distance to those already
    chosen; ties go to the lowest index. Returns ``m`` distinct indices
    starting with ``seed_index``.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"fps: need 1 <= m <= N, got m={m}, N={n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"fps: seed_index {seed_index} out of range for N={n}")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    mind = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    mind[seed_index] = -np.inf
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        d = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        mind[nxt] = -np.inf
    return chosen


def knn(points, query, k: int) -> np.ndarray:
    """Indices of the ``k`` points nearest to ``query``, ordered by (distance, index)."""
    pts = as_points(points)
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"knn: need 1 <= k <= N, got k={k}, N={pts.shape[0]}")
    d = np.sum((pts - np.asarray(query, dtype=np.float64).reshape(3)) ** 2, axis=1)
    return np.argsort(d, kind="stable")[:k]


def knn_many(points, queries, k: int) -> np.ndarray:
    """Row-wise :func:`knn` for a ``(Q, 3)`` batch of queries -> ``(Q, k)``."""
    pts = as_points(points)
    qs = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"knn: need 1 <= k <= N, got k={k}, N={pts.shape[0]}")
    d = np.sum((qs[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def aabb_params(points, center_mode: str = "mean") -> Box3D:
    """Box of a point set: half-extents are ``(max - min) / 2``.

    ``center_mode="mean"`` centers the box on the per-axis mean; such a box
    need not enclose every point. ``"midpoint"`` uses ``(min + max) / 2``.
    """
    pts = as_points(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if center_mode == "mean":
        center = pts.mean(axis=0)
    elif center_mode == "midpoint":
        center = 0.5 * (lo + hi)
    else:
        raise ValueError(f"unknown center_mode {center_mode!r}")
    return Box3D(center, 0.5 * (hi - lo))


def chamfer(a, b) -> float:
    """Symmetric squared-L2 Chamfer distance with mean reduction on each side."""
    pa, pb = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if pa.size == 0 or pb.size == 0:
        raise ValueError("chamfer: both point sets must be non-empty")
    d = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=-1)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def _overlap_volumes(a: Box3D, b: Box3D) -> tuple[float, float, float]:
    # all volumes from (hi - lo) so identical boxes give inter == union exactly
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    inter = float(np.prod(np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)))
    union = float(np.prod(ahi - alo)) + float(np.prod(bhi - blo)) - inter
    enclose = float(np.prod(np.maximum(ahi, bhi) - np.minimum(alo, blo)))
    return inter, union, enclose


def iou(a: Box3D, b: Box3D) -> float:
    inter, union, _ = _overlap_volumes(a, b)
    if union <= 0.0:
        return 1.0 if _coincident(a, b) else 0.0
    return inter / union


def _coincident(a: Box3D, b: Box3D) -> bool:
    return bool(np.array_equal(a.center, b.center) and np.array_equal(a.half_extents, b.half_extents))


def giou(a: Box3D, b: Box3D) -> float:
    """Generalized IoU of two axis-aligned boxes.

    Degenerate rules: zero union volume gives 1 for coincident boxes and IoU 0
    otherwise, and the enclosure then counts as fully empty, so two distinct
    flat boxes score -1.
    """
    inter, union, enclose = _overlap_volumes(a, b)
    if union <= 0.0:
        # IoU is 0 and the enclosure is entirely empty space
        return 1.0 if _coincident(a, b) else -1.0
    return inter / union - (enclose - union) / enclose


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_about_up(points, angle: float) -> np.ndarray:
    """Rotate counter-clockwise about the z axis."""
    pts = np.asarray(points, dtype=np.float64)
    if not np.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    return pts @ rotation_z(angle).T


@dataclass(frozen=True)
class NormTransform:
    centroid: np.ndarray
    scale: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.centroid


def normalize_unit(points, center=None, radial: bool = False) -> tuple[np.ndarray, NormTransform]:
    """Translate to ``center`` (default: the mean) and scale isotropically into [-1, 1].

    The scale is the max absolute coordinate after centering. With
    ``radial=True`` it is ``max(xy radius, |z|)`` instead, which keeps the
    set inside [-1, 1] under any rotation about z. An all-identical set uses
    scale 1.
    """
    pts = as_points(points)
    c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64).reshape(3)
    rel = pts - c
    if radial:
        scale = max(float(np.sqrt((rel[:, :2] ** 2).sum(axis=1)).max()), float(np.abs(rel[:, 2]).max()))
    else:
        scale = float(np.abs(rel).max())
    if scale <= 0.0:
        scale = 1.0
    tf = NormTransform(c, scale)
    return rel / scale, tf
