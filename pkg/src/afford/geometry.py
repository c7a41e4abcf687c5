"""Core 3D types: point clouds, rigid poses, and the exact nearest-neighbour index.

Points are (N, 3) float64 arrays in meters. All containers are immutable after
construction so they can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, InvalidPose, NonFiniteData, NonPositiveLeaf

# Relative slack used to flag potential nearest-neighbour ties. Anything this
# close to the best distance gets re-compared with deterministic arithmetic.
_TIE_RTOL = 1e-9


def _as_points(a, name: str = "points") -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if a.ndim == 1 and a.size == 3:
        a = a.reshape(1, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {a.shape}")
    return a


def squared_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from one query point to every row of `points`."""
    diff = points - q
    return (diff * diff).sum(axis=1)


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with optional unit normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts is self.points:
            pts = pts.copy()  # never freeze an array the caller still owns
        if not np.isfinite(pts).all():
            raise NonFiniteData("point coordinates contain NaN or Inf")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if nrm is self.normals:
                nrm = nrm.copy()
            if nrm.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"normal count {nrm.shape[0]} != point count {pts.shape[0]}"
                )
            if not np.isfinite(nrm).all():
                raise NonFiniteData("normals contain NaN or Inf")
            lengths = np.linalg.norm(nrm, axis=1)
            if not np.allclose(lengths, 1.0, atol=1e-6, rtol=0.0):
                raise ValueError("normals must have unit length within 1e-6")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.points.shape[0] == 0

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box as (min, max) corners."""
        if self.is_empty:
            raise EmptyCloud("bounding box of empty cloud")
        return self.points.min(axis=0), self.points.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class RigidPose:
    """Proper rigid transform p -> R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise InvalidPose(f"rotation must be 3x3, got {r.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise InvalidPose("pose contains NaN or Inf")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise InvalidPose("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise InvalidPose("rotation determinant must be +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidPose":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        return cls(yaw_matrix(yaw), np.asarray(translation, dtype=np.float64))

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T.copy()
        return RigidPose(rt, -(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about +Z. Returns the exact identity for yaw == 0."""
    if yaw == 0.0:
        return np.eye(3)
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform(cloud: PointCloud, pose: RigidPose) -> PointCloud:
    """Apply a rigid pose to a cloud. Normals are rotated only."""
    pts = pose.apply(cloud.points)
    nrm = None if cloud.normals is None else cloud.normals @ pose.rotation.T
    return PointCloud(pts, nrm)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Reduce a cloud to one centroid per occupied voxel of side `leaf`.

    Output points are ordered by lexicographic voxel coordinate, which makes
    the result deterministic for a given input. Normals are dropped.
    """
    if not (leaf > 0.0):
        raise NonPositiveLeaf(f"leaf must be > 0, got {leaf}")
    if cloud.is_empty:
        return PointCloud(np.empty((0, 3)))
    keys = np.floor(cloud.points / leaf).astype(np.int64)
    # lexsort keys: last key is primary, so feed (z, y, x)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sorted_keys = keys[order]
    sorted_pts = cloud.points[order]
    boundary = np.ones(len(sorted_keys), dtype=bool)
    boundary[1:] = (sorted_keys[1:] != sorted_keys[:-1]).any(axis=1)
    starts = np.flatnonzero(boundary)
    sums = np.add.reduceat(sorted_pts, starts, axis=0)
    counts = np.diff(np.append(starts, len(sorted_pts)))
    return PointCloud(sums / counts[:, None])


class SceneIndex:
    """Immutable exact nearest-neighbour index over one cloud.

    Queries return the true nearest member; equidistant candidates are broken
    by the lowest index in the source cloud, so results match an exhaustive
    linear scan bit for bit. Safe for concurrent read-only use.
    """

    def __init__(self, cloud: PointCloud):
        if cloud.is_empty:
            raise EmptyCloud("cannot index an empty cloud")
        self._cloud = cloud
        self._points = cloud.points
        self._tree = cKDTree(self._points)

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def cloud(self) -> PointCloud:
        return self._cloud

    @property
    def points(self) -> np.ndarray:
        return self._points

    def nearest(self, q) -> tuple[np.ndarray, float]:
        """Nearest member of the source cloud and its Euclidean distance."""
        q = np.asarray(q, dtype=np.float64).reshape(3)
        idx, dist = self.nearest_many(q[None, :])
        return self._points[idx[0]].copy(), float(dist[0])

    def nearest_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized exact nearest neighbours.

        Returns (indices, distances). Distances are recomputed from the winning
        point with plain numpy arithmetic so they agree exactly with a linear
        scan oracle.
        """
        q = _as_points(queries, "queries")
        if len(self) == 1:
            idx = np.zeros(len(q), dtype=np.int64)
        else:
            d, i = self._tree.query(q, k=2)
            idx = i[:, 0].astype(np.int64)
            tied = d[:, 1] <= d[:, 0] * (1.0 + _TIE_RTOL)
            if tied.any():
                idx[tied] = self._resolve_ties(q[tied], d[tied, 0])
        diff = q - self._points[idx]
        return idx, np.sqrt((diff * diff).sum(axis=1))

    def nearest_many_bounded(
        self, queries: np.ndarray, bound: float, workers: int = 1
    ) -> tuple[np.ndarray, np.ndarray]:
        """Like nearest_many but ignores neighbours beyond `bound`.

        Misses are reported with index -1 and distance +inf. Intended for
        match scoring, where anything beyond the match radius is irrelevant.
        """
        q = _as_points(queries, "queries")
        k = 2 if len(self) > 1 else 1
        d, i = self._tree.query(q, k=k, distance_upper_bound=bound, workers=workers)
        if k == 1:
            d = d[:, None]
            i = i[:, None]
        hit = np.isfinite(d[:, 0])
        idx = np.where(hit, i[:, 0], -1).astype(np.int64)
        if k == 2:
            tied = hit & np.isfinite(d[:, 1]) & (d[:, 1] <= d[:, 0] * (1.0 + _TIE_RTOL))
            if tied.any():
                idx[tied] = self._resolve_ties(q[tied], d[tied, 0])
        dist = np.full(len(q), np.inf)
        if hit.any():
            diff = q[hit] - self._points[idx[hit]]
            dist[hit] = np.sqrt((diff * diff).sum(axis=1))
        return idx, dist

    def distances(self, queries: np.ndarray, workers: int = 1) -> np.ndarray:
        """Distance-only nearest-neighbour lookup (ties irrelevant; fast path)."""
        q = _as_points(queries, "queries")
        d, _ = self._tree.query(q, k=1, workers=workers)
        return d

    def _resolve_ties(self, q: np.ndarray, d_best: np.ndarray) -> np.ndarray:
        """Pick the lowest source index among co-minimal neighbours.

        Candidate distances are recomputed with the same arithmetic the linear
        scan oracle uses, so the winner is identical to that oracle.
        """
        n = len(self)
        k = min(4, n)
        radius = d_best * (1.0 + _TIE_RTOL)
        while True:
            d, i = self._tree.query(q, k=k)
            if k == 1:
                d = d[:, None]
                i = i[:, None]
            if k >= n or not (d[:, -1] <= radius).any():
                break
            k = min(k * 2, n)
        cand = self._points[np.minimum(i, n - 1)]
        diff = cand - q[:, None, :]
        sq = (diff * diff).sum(axis=2)
        sq[i >= n] = np.inf  # padding rows from small trees
        best = sq.min(axis=1, keepdims=True)
        masked = np.where(sq == best, i, n)
        return masked.min(axis=1).astype(np.int64)


def build_index(cloud: PointCloud) -> SceneIndex:
    return SceneIndex(cloud)


def nearest(index: SceneIndex, q) -> tuple[np.ndarray, float]:
    return index.nearest(q)
