"""Point-sampled bisector between a query object and a scene.

The bisector is located as the zero set of f(p) = d(p, query) - d(p, scene)
on the edges of a regular grid spanning the query's expanded bounding box,
then each crossing is refined by bisection. f is a difference of two
1-Lipschitz fields, so a sign change on an edge brackets a true crossing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import AllPruned, DegenerateInteraction, EmptyCloud
from .geometry import PointCloud, SceneIndex


@dataclass(frozen=True)
class IbsParams:
    """Numerical parameters for bisector sampling and pruning.

    eps_ibs of None means 1e-4 times the sampling-domain diagonal, resolved
    at run time.
    """

    grid_resolution: int = 64
    bbox_expand: float = 2.0
    eps_ibs: Optional[float] = None
    bisection_iters: int = 30
    prune_delta: float = 0.5

    def __post_init__(self):
        if self.grid_resolution < 8:
            raise ValueError(f"grid_resolution must be >= 8, got {self.grid_resolution}")
        if self.bbox_expand < 1.0:
            raise ValueError(f"bbox_expand must be >= 1, got {self.bbox_expand}")
        if self.eps_ibs is not None and not (self.eps_ibs > 0):
            raise ValueError(f"eps_ibs must be > 0, got {self.eps_ibs}")
        if self.bisection_iters < 1:
            raise ValueError(f"bisection_iters must be >= 1, got {self.bisection_iters}")
        if not (self.prune_delta > 0):
            raise ValueError(f"prune_delta must be > 0, got {self.prune_delta}")


@dataclass(frozen=True)
class IbsSamples:
    """Bisector sample points with their distances to each cloud."""

    points: np.ndarray    # (M, 3)
    d_query: np.ndarray   # (M,)
    d_scene: np.ndarray   # (M,)
    eps_ibs: float

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, mask: np.ndarray) -> "IbsSamples":
        return IbsSamples(self.points[mask], self.d_query[mask],
                          self.d_scene[mask], self.eps_ibs)


def sampling_domain(
    query: PointCloud, scene: PointCloud, params: IbsParams
) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned sampling box: the query bbox expanded about its center.

    Axes whose query extent is smaller than the query-to-scene gap are widened
    to that gap before expansion, so degenerate (e.g. single-point) queries
    still produce a box that reaches the bisector.
    """
    qlo, qhi = query.bbox()
    center = 0.5 * (qlo + qhi)
    half = 0.5 * (qhi - qlo)
    gap = float(SceneIndex(scene).distances(query.points).min())
    half = np.maximum(half, gap)
    if not (half > 0).all():
        raise DegenerateInteraction("sampling domain has zero extent; clouds coincide")
    half = half * params.bbox_expand
    return center - half, center + half


def _edge_axis(
    f: np.ndarray, nodes: tuple[np.ndarray, np.ndarray, np.ndarray], axis: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Start point, end point, f(start), f(end) for every grid edge along `axis`,
    flattened in lexicographic (ix, iy, iz) edge order."""
    sl_a = [slice(None)] * 3
    sl_b = [slice(None)] * 3
    sl_a[axis] = slice(None, -1)
    sl_b[axis] = slice(1, None)
    fa = f[tuple(sl_a)].ravel()
    fb = f[tuple(sl_b)].ravel()

    shape = list(f.shape)
    shape[axis] -= 1
    idx = np.indices(shape).reshape(3, -1)
    xs, ys, zs = nodes
    a = np.stack([xs[idx[0]], ys[idx[1]], zs[idx[2]]], axis=1)
    idx_b = idx.copy()
    idx_b[axis] += 1
    b = np.stack([xs[idx_b[0]], ys[idx_b[1]], zs[idx_b[2]]], axis=1)
    return a, b, fa, fb


def sample_ibs(query: PointCloud, scene: PointCloud, params: IbsParams) -> IbsSamples:
    """Sample the equidistant surface between two clouds.

    Returns samples in deterministic order (grid-edge lexicographic, duplicate
    points within eps_ibs collapsed). Raises DegenerateInteraction when no
    sign change of f exists on the grid.
    """
    if query.is_empty or scene.is_empty:
        raise EmptyCloud("both clouds must be nonempty")
    lo, hi = sampling_domain(query, scene, params)
    eps = params.eps_ibs if params.eps_ibs is not None else 1e-4 * float(np.linalg.norm(hi - lo))

    res = params.grid_resolution
    cell = (hi - lo) / res
    axes = tuple(lo[a] + np.arange(res + 1) * cell[a] for a in range(3))
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    q_index = SceneIndex(query)
    s_index = SceneIndex(scene)
    f = (q_index.distances(nodes) - s_index.distances(nodes)).reshape(gx.shape)

    out_pts, out_dq, out_ds = [], [], []
    found_any = False
    for axis in range(3):
        a, b, fa, fb = _edge_axis(f, axes, axis)
        n_edges = len(fa)
        pts = np.zeros((n_edges, 3))
        valid = np.zeros(n_edges, dtype=bool)

        zero_a = fa == 0.0
        zero_b = (fb == 0.0) & ~zero_a
        cross = ((fa > 0) & (fb < 0)) | ((fa < 0) & (fb > 0))
        pts[zero_a] = a[zero_a]
        pts[zero_b] = b[zero_b]
        valid |= zero_a | zero_b

        if cross.any():
            refined = _bisect(a[cross], b[cross], fa[cross], q_index, s_index,
                              params.bisection_iters)
            pts[cross] = refined
            valid |= cross

        if valid.any():
            found_any = True
            p = pts[valid]
            out_pts.append(p)
            out_dq.append(q_index.distances(p))
            out_ds.append(s_index.distances(p))

    if not found_any:
        raise DegenerateInteraction("no bisector crossing found on the sampling grid")

    points = np.concatenate(out_pts)
    d_query = np.concatenate(out_dq)
    d_scene = np.concatenate(out_ds)
    keep = _collapse_duplicates(points, eps)
    return IbsSamples(points[keep], d_query[keep], d_scene[keep], eps)


def _bisect(
    a: np.ndarray, b: np.ndarray, fa: np.ndarray,
    q_index: SceneIndex, s_index: SceneIndex, iters: int,
) -> np.ndarray:
    """Shrink sign-change brackets [a, b] onto the zero of f."""
    a = a.copy()
    b = b.copy()
    fa = fa.copy()
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = q_index.distances(m) - s_index.distances(m)
        hit = fm == 0.0
        same = (fm > 0) == (fa > 0)
        move_a = same & ~hit
        move_b = ~same & ~hit
        a[move_a] = m[move_a]
        fa[move_a] = fm[move_a]
        b[move_b] = m[move_b]
        if hit.any():
            a[hit] = m[hit]
            b[hit] = m[hit]
    return 0.5 * (a + b)


def _collapse_duplicates(points: np.ndarray, eps: float) -> np.ndarray:
    """Greedy order-preserving dedupe: drop any point within eps of an
    earlier kept point. Returns a boolean keep mask."""
    kept = np.ones(len(points), dtype=bool)
    if len(points) < 2:
        return kept
    pairs = cKDTree(points).query_pairs(r=eps, output_type="ndarray")
    if len(pairs) == 0:
        return kept
    order = np.argsort(pairs[:, 1], kind="stable")
    for i, j in pairs[order]:
        if kept[i]:
            kept[j] = False
    return kept


def prune_ibs(samples: IbsSamples, query: PointCloud, params: IbsParams) -> IbsSamples:
    """Keep samples within prune_delta times the query bbox diagonal of the query."""
    threshold = params.prune_delta * query.diagonal()
    keep = samples.d_query <= threshold
    if not keep.any():
        raise AllPruned(
            f"no sample within {threshold:.6g} m of the query; "
            "prune_delta is too small for this interaction"
        )
    return samples.subset(keep)
