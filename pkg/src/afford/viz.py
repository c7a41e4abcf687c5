"""Colored PLY exports for eyeballing bisector samples and detections."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .detection import Detection
from .errors import AffordError
from .geometry import PointCloud, RigidPose, transform, yaw_matrix
from .ply import load_ply, save_ply
from .tensor import AffordanceDescriptor

SCENE_GRAY = (180, 180, 180)


def scalar_colors(values: np.ndarray) -> np.ndarray:
    """Blue-to-red ramp over the value range; constant input maps to the middle."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    t = np.full(v.shape, 0.5) if hi <= lo else (v - lo) / (hi - lo)
    colors = np.empty((len(v), 3), dtype=np.uint8)
    colors[:, 0] = np.round(255 * t)
    colors[:, 1] = 60
    colors[:, 2] = np.round(255 * (1.0 - t))
    return colors


def score_color(score: float) -> np.ndarray:
    """Red (0) to green (1)."""
    g = int(round(255 * min(max(score, 0.0), 1.0)))
    return np.array([255 - g, g, 40], dtype=np.uint8)


def query_template(query: PointCloud, pose: RigidPose, anchor) -> np.ndarray:
    """Query points posed as at training, expressed relative to the anchor.

    Instancing a detection then reduces to location + R(yaw) @ template.
    """
    return transform(query, pose).points - np.asarray(anchor, dtype=float).reshape(3)


def export_detections_ply(
    path,
    scene: PointCloud,
    detections: Sequence[Detection],
    templates: Mapping[str, np.ndarray],
    format: str = "binary",
) -> None:
    """Scene in gray plus one template instance per detection, colored by score.

    templates maps descriptor name to an (M, 3) anchor-relative point set;
    descriptor keypoint offsets work when the original query cloud is not
    at hand.
    """
    parts = [scene.points]
    colors = [np.tile(np.array(SCENE_GRAY, dtype=np.uint8), (len(scene), 1))]
    for det in detections:
        tpl = np.asarray(templates[det.descriptor_name], dtype=float)
        r = yaw_matrix(det.yaw)
        inst = det.location + tpl @ r.T
        parts.append(inst)
        colors.append(np.tile(score_color(det.score), (len(inst), 1)))
    save_ply(
        PointCloud(np.concatenate(parts)),
        path,
        format=format,
        colors=np.concatenate(colors),
    )


def template_for(descriptor: AffordanceDescriptor) -> np.ndarray:
    """Best available instancing template for a descriptor.

    Prefers the original query cloud named in the training provenance (posed
    as at training); falls back to the keypoint offsets when that file is
    not reachable.
    """
    prov = descriptor.provenance or {}
    query_file = prov.get("query_file") or ""
    pose_doc = prov.get("pose")
    if query_file and isinstance(pose_doc, dict) and Path(query_file).exists():
        try:
            query = load_ply(query_file)
            pose = RigidPose(
                np.asarray(pose_doc["rotation"], dtype=float),
                np.asarray(pose_doc["translation"], dtype=float),
            )
            return query_template(query, pose, descriptor.anchor)
        except (AffordError, KeyError, TypeError, ValueError):
            pass
    return descriptor.offsets


def export_ibs_ply(path, points: np.ndarray, d_query: np.ndarray,
                   format: str = "binary") -> None:
    """Bisector samples colored by their distance to the query object."""
    save_ply(
        PointCloud(points),
        path,
        format=format,
        colors=scalar_colors(d_query),
    )
