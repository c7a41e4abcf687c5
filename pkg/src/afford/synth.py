"""Deterministic synthetic geometry: primitive clouds, a labeled desk scene,
and query/scene/pose triples for three interaction archetypes.

Every label is assigned from the generator's own equations, never estimated
from the output cloud, so fixtures double as ground-truth oracles. All grids
hit their nominal extremes exactly (coordinates are built as length * i/n so
endpoints and midpoints land on exact values), which the archetype gap
constructions rely on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InvalidDims, UnknownArchetype
from .geometry import PointCloud, RigidPose

LABELS = ("flat-support", "vertical", "edge", "clutter")
FLAT, VERTICAL, EDGE, CLUTTER = range(4)

ARCHETYPES = ("place", "hang", "fill")


@dataclass(frozen=True)
class LabeledScene:
    """A scene cloud with a per-point region tag and generation metadata."""

    cloud: PointCloud
    labels: np.ndarray  # uint8 codes into LABELS
    metadata: dict

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.shape != (len(self.cloud),):
            raise ValueError(
                f"label count {labels.shape} != point count {len(self.cloud)}"
            )
        if labels.size and labels.max() >= len(LABELS):
            raise ValueError("label code out of range")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def mask(self, tag: str) -> np.ndarray:
        return self.labels == LABELS.index(tag)

    def count(self, tag: str) -> int:
        return int(self.mask(tag).sum())


def _axis(length: float, density: float) -> np.ndarray:
    """Grid coordinates spanning [-length/2, length/2] with exact endpoints."""
    n = max(1, round(length * density))
    return length * (np.arange(n + 1) / n) - length / 2


def _circle_count(radius: float, density: float) -> int:
    # multiple of 4 so the four cardinal directions are sampled exactly
    return 4 * max(2, round(0.5 * np.pi * radius * density))


def _sphere(r: float, density: float) -> np.ndarray:
    bands = max(3, round(np.pi * r * density))
    parts = [np.array([[0.0, 0.0, -r]])]
    for j in range(1, bands):
        theta = -0.5 * np.pi + np.pi * j / bands
        rc = r * np.cos(theta)
        z = r * np.sin(theta)
        m = max(6, round(2.0 * np.pi * rc * density))
        phi = 2.0 * np.pi * np.arange(m) / m
        parts.append(
            np.column_stack([rc * np.cos(phi), rc * np.sin(phi), np.full(m, z)])
        )
    parts.append(np.array([[0.0, 0.0, r]]))
    return np.concatenate(parts)


def _plane(lx: float, ly: float, density: float, z: float = 0.0) -> np.ndarray:
    xs = _axis(lx, density)
    ys = _axis(ly, density)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


def _box(
    lx: float, ly: float, lz: float, density: float,
    open_top: bool = False, sides_only: bool = False,
) -> np.ndarray:
    nx = max(1, round(lx * density))
    ny = max(1, round(ly * density))
    nz = max(1, round(lz * density))
    xs = lx * (np.arange(nx + 1) / nx) - lx / 2
    ys = ly * (np.arange(ny + 1) / ny) - ly / 2
    zs = lz * (np.arange(nz + 1) / nz) - lz / 2
    ix, iy, iz = np.meshgrid(
        np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij"
    )
    on = (ix == 0) | (ix == nx) | (iy == 0) | (iy == ny)
    if not sides_only:
        on = on | (iz == 0)
        if not open_top:
            on = on | (iz == nz)
    sel = on.ravel()
    return np.column_stack(
        [xs[ix.ravel()[sel]], ys[iy.ravel()[sel]], zs[iz.ravel()[sel]]]
    )


def _tube(r: float, h: float, density: float) -> np.ndarray:
    """Open cylinder lateral surface, axis +Z, centered at the origin."""
    m = _circle_count(r, density)
    nz = max(1, round(h * density))
    phi = 2.0 * np.pi * np.arange(m) / m
    ring = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    zs = h * (np.arange(nz + 1) / nz) - h / 2
    pts = np.empty(((nz + 1) * m, 3))
    for i, z in enumerate(zs):
        pts[i * m:(i + 1) * m, :2] = ring
        pts[i * m:(i + 1) * m, 2] = z
    return pts


def _rod(r: float, length: float, height: float, density: float) -> np.ndarray:
    """Horizontal cylinder along +X at the given axis height."""
    m = _circle_count(r, density)
    nx = max(1, round(length * density))
    phi = 2.0 * np.pi * np.arange(m) / m
    ys = r * np.cos(phi)
    zs = height + r * np.sin(phi)
    xs = length * (np.arange(nx + 1) / nx) - length / 2
    pts = np.empty(((nx + 1) * m, 3))
    for i, x in enumerate(xs):
        pts[i * m:(i + 1) * m, 0] = x
        pts[i * m:(i + 1) * m, 1] = ys
        pts[i * m:(i + 1) * m, 2] = zs
    return pts


def _torus(ring_r: float, tube_r: float, density: float) -> np.ndarray:
    """Torus with axis +X, centered at the origin (a hangable ring)."""
    na = _circle_count(ring_r, density)
    nb = _circle_count(tube_r, density)
    alpha = 2.0 * np.pi * np.arange(na) / na
    beta = 2.0 * np.pi * np.arange(nb) / nb
    ga, gb = np.meshgrid(alpha, beta, indexing="ij")
    radial = ring_r + tube_r * np.cos(gb)
    return np.column_stack(
        [
            (tube_r * np.sin(gb)).ravel(),
            (radial * np.cos(ga)).ravel(),
            (radial * np.sin(ga)).ravel(),
        ]
    )


def make_primitive(
    kind: str, dims: Union[float, Sequence[float]], density: float, seed: int = 0
) -> PointCloud:
    """Deterministic surface sampling of one primitive, centered at the origin.

    dims: sphere -> radius; box -> (lx, ly, lz); plane-grid -> (lx, ly);
    cylinder -> (radius, height). The seed is accepted for interface
    uniformity; primitive grids use no randomness.
    """
    if not (density > 0):
        raise InvalidDims(f"density must be > 0, got {density}")
    d = np.atleast_1d(np.asarray(dims, dtype=float))
    if not (np.isfinite(d).all() and (d > 0).all()):
        raise InvalidDims(f"dims must be positive and finite, got {dims!r}")
    if kind == "sphere":
        if d.size != 1:
            raise InvalidDims("sphere needs a single radius")
        return PointCloud(_sphere(float(d[0]), density))
    if kind == "box":
        if d.size != 3:
            raise InvalidDims("box needs (lx, ly, lz)")
        return PointCloud(_box(d[0], d[1], d[2], density))
    if kind == "plane-grid":
        if d.size != 2:
            raise InvalidDims("plane-grid needs (lx, ly)")
        return PointCloud(_plane(d[0], d[1], density))
    if kind == "cylinder":
        if d.size != 2:
            raise InvalidDims("cylinder needs (radius, height)")
        return PointCloud(_tube(d[0], d[1], density))
    raise InvalidDims(f"unknown primitive kind {kind!r}")


@dataclass(frozen=True)
class TableParams:
    width: float = 1.0          # tabletop x extent
    depth: float = 0.6          # tabletop y extent
    height: float = 0.7         # tabletop z
    density: float = 100.0      # points per meter
    edge_band: float = 0.005    # rim band labeled "edge"
    leg_size: float = 0.04
    leg_inset: float = 0.06
    wall_width: float = 1.2
    wall_height: float = 1.0
    wall_gap: float = 0.05      # wall stands this far behind the tabletop
    n_clutter: int = 3
    clutter_min: float = 0.02   # clutter stays below the support size a
    clutter_max: float = 0.04   # 10 cm sphere needs, so it never out-scores it

    def __post_init__(self):
        for label in ("width", "depth", "height", "density", "leg_size",
                      "wall_width", "wall_height"):
            if not (getattr(self, label) > 0):
                raise InvalidDims(f"{label} must be > 0, got {getattr(self, label)}")
        if self.n_clutter < 0:
            raise InvalidDims(f"n_clutter must be >= 0, got {self.n_clutter}")
        if not (0 < self.clutter_min <= self.clutter_max):
            raise InvalidDims("clutter sizes must satisfy 0 < min <= max")


def make_table_scene(params: Optional[TableParams] = None, seed: int = 0) -> LabeledScene:
    """Desk-scale scene: tabletop (flat-support) with a rim band (edge),
    legs and a back wall (vertical), and seeded clutter boxes on top."""
    p = params if params is not None else TableParams()
    parts: list[np.ndarray] = []
    labels: list[np.ndarray] = []

    top = _plane(p.width, p.depth, p.density, z=p.height)
    rim = np.minimum(p.width / 2 - np.abs(top[:, 0]), p.depth / 2 - np.abs(top[:, 1]))
    top_labels = np.where(rim <= p.edge_band, EDGE, FLAT).astype(np.uint8)
    parts.append(top)
    labels.append(top_labels)

    leg_h = p.height
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            leg = _box(p.leg_size, p.leg_size, leg_h, p.density, sides_only=True)
            leg[:, 0] += sx * (p.width / 2 - p.leg_inset)
            leg[:, 1] += sy * (p.depth / 2 - p.leg_inset)
            leg[:, 2] += leg_h / 2
            parts.append(leg)
            labels.append(np.full(len(leg), VERTICAL, dtype=np.uint8))

    xs = _axis(p.wall_width, p.density)
    zs = p.wall_height * (np.arange(max(1, round(p.wall_height * p.density)) + 1)
                          / max(1, round(p.wall_height * p.density)))
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    wall = np.column_stack(
        [gx.ravel(), np.full(gx.size, p.depth / 2 + p.wall_gap), gz.ravel()]
    )
    parts.append(wall)
    labels.append(np.full(len(wall), VERTICAL, dtype=np.uint8))

    rng = np.random.default_rng(seed)
    margin = 0.15
    for _ in range(p.n_clutter):
        s = float(rng.uniform(p.clutter_min, p.clutter_max))
        cx = float(rng.uniform(-(p.width / 2 - margin), p.width / 2 - margin))
        cy = float(rng.uniform(-(p.depth / 2 - margin), p.depth / 2 - margin))
        block = _box(s, s, s, p.density)
        block[:, 0] += cx
        block[:, 1] += cy
        block[:, 2] += p.height + s / 2
        parts.append(block)
        labels.append(np.full(len(block), CLUTTER, dtype=np.uint8))

    cloud = PointCloud(np.concatenate(parts))
    metadata = {"seed": int(seed), "params": asdict(p), "n_points": len(cloud)}
    return LabeledScene(cloud, np.concatenate(labels), metadata)


# archetype constants, shared with the tests that assert on their geometry
PLACE_SPHERE_R = 0.1
PLACE_PLANE_SIDE = 0.5
HANG_ROD_R = 0.02
HANG_ROD_LEN = 0.6
HANG_ROD_HEIGHT = 0.5
HANG_RING_R = 0.06
HANG_TUBE_R = 0.01
FILL_CUP_R = 0.04
FILL_CUP_H = 0.1
FILL_BOX_SIDE = 0.08
CONTACT_GAP = 0.001


def make_training_pair(
    affordance: str, seed: int = 0
) -> tuple[PointCloud, PointCloud, RigidPose]:
    """Query cloud in its own frame, scene cloud, and the pose that brings
    the query 1 mm from contact.

    place: sphere over a plane patch. hang: ring around a horizontal rod.
    fill: open box over an open cup. The seed is accepted for interface
    uniformity; the constructions are pure grids.
    """
    if affordance == "place":
        query = PointCloud(_sphere(PLACE_SPHERE_R, 200.0))
        scene = PointCloud(_plane(PLACE_PLANE_SIDE, PLACE_PLANE_SIDE, 200.0))
        pose = RigidPose.from_translation([0.0, 0.0, PLACE_SPHERE_R + CONTACT_GAP])
        return query, scene, pose
    if affordance == "hang":
        query = PointCloud(_torus(HANG_RING_R, HANG_TUBE_R, 400.0))
        scene = PointCloud(_rod(HANG_ROD_R, HANG_ROD_LEN, HANG_ROD_HEIGHT, 400.0))
        # ring hangs off the top of the rod: its inner surface clears the rod
        # crown by the contact gap
        zc = (HANG_ROD_HEIGHT + HANG_ROD_R + CONTACT_GAP
              - (HANG_RING_R - HANG_TUBE_R))
        pose = RigidPose.from_translation([0.0, 0.0, zc])
        return query, scene, pose
    if affordance == "fill":
        query = PointCloud(
            _box(FILL_BOX_SIDE, FILL_BOX_SIDE, FILL_BOX_SIDE, 400.0, open_top=True)
        )
        lateral = _tube(FILL_CUP_R, FILL_CUP_H, 400.0)
        lateral[:, 2] += FILL_CUP_H / 2
        disk = _plane(2 * FILL_CUP_R, 2 * FILL_CUP_R, 400.0)
        inside = (disk[:, 0] ** 2 + disk[:, 1] ** 2) < FILL_CUP_R ** 2
        scene = PointCloud(np.concatenate([lateral, disk[inside]]))
        pose = RigidPose.from_translation(
            [0.0, 0.0, FILL_CUP_H + CONTACT_GAP + FILL_BOX_SIDE / 2]
        )
        return query, scene, pose
    raise UnknownArchetype(
        f"unknown affordance {affordance!r}; expected one of {ARCHETYPES}"
    )
