"""Interaction descriptor training.

Bisector samples are augmented with provenance vectors (pointing at the
nearest member of each cloud), then distilled into a sparse set of weighted
keypoints anchored at the closest scene contact. The result is the trained,
serializable output of a single example pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AllPruned,
    DegenerateInteraction,
    EmptyInput,
    EmptyTensor,
    InvalidCount,
    IoFailure,
    MalformedDescriptor,
    VersionMismatch,
)
from .geometry import PointCloud, RigidPose, SceneIndex, transform
from .ibs import IbsParams, IbsSamples, prune_ibs, sample_ibs
from .jsonio import write_canonical

FORMAT_VERSION = 1
STRATEGIES = ("uniform", "weighted-random", "top-weight")
DEFAULT_N_KEYPOINTS = 512
DEFAULT_THETA_MAX = 0.2618  # rad
DEFAULT_RHO_MAX = 0.3
# additive floor on |pv_scene| in the weight law, as a fraction of query_diag
LAMBDA_FRACTION = 1e-3


@dataclass(frozen=True)
class InteractionTensor:
    """Bisector points with vectors to the nearest member of each cloud."""

    points: np.ndarray     # (M, 3)
    pv_scene: np.ndarray   # (M, 3), nearest scene point - p
    pv_query: np.ndarray   # (M, 3), nearest query point - p

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, mask: np.ndarray) -> "InteractionTensor":
        return InteractionTensor(self.points[mask], self.pv_scene[mask],
                                 self.pv_query[mask])


@dataclass(frozen=True)
class Keypoint:
    offset: np.ndarray  # (3,), position relative to the descriptor anchor
    vector: np.ndarray  # (3,), scene-side provenance vector
    weight: float


def compute_provenance(
    samples: IbsSamples, query: PointCloud, scene: PointCloud
) -> InteractionTensor:
    """Attach nearest-member vectors to every bisector sample.

    Ties in the nearest lookup resolve to the lowest point index, the same
    rule as SceneIndex.nearest_many.
    """
    if len(samples) == 0:
        raise EmptyInput("no bisector samples to annotate")
    p = samples.points
    idx_s, _ = SceneIndex(scene).nearest_many(p)
    idx_q, _ = SceneIndex(query).nearest_many(p)
    return InteractionTensor(
        points=p,
        pv_scene=scene.points[idx_s] - p,
        pv_query=query.points[idx_q] - p,
    )


def derive_anchor(tensor: InteractionTensor) -> np.ndarray:
    """Scene endpoint of the entry with the shortest scene-side vector.

    This is the closest contact between the two clouds as seen by the
    tensor; ties resolve to the first entry.
    """
    if len(tensor) == 0:
        raise EmptyInput("cannot derive an anchor from an empty tensor")
    mag2 = (tensor.pv_scene * tensor.pv_scene).sum(axis=1)
    i = int(np.argmin(mag2))
    return tensor.points[i] + tensor.pv_scene[i]


# weights snap to multiples of this grid step after normalization
_WEIGHT_GRID = 2.0 ** 40


def normalize_weights_exact(raw: np.ndarray) -> np.ndarray:
    """Scale positive weights so that np.sum of the result is exactly 1.0.

    Plain division leaves the sum a few ulps off, and nudging one entry
    cannot always fix that: pairwise summation can step right over 1.0.
    Instead each weight is snapped to the nearest multiple of 2**-40.
    Multiples of that grid below 2**13 add with no rounding at all, so every
    partial sum is exact under any summation order; the leftover (itself an
    exact grid multiple) goes to the largest entry. Entries below half a
    grid step can come out as exact zeros.
    """
    w = np.asarray(raw, dtype=float)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if not (w > 0).all():
        raise ValueError("weights must be strictly positive")
    w = np.round(w / w.sum() * _WEIGHT_GRID) / _WEIGHT_GRID
    j = int(np.argmax(w))
    w[j] += 1.0 - np.sum(w)
    if np.sum(w) != 1.0 or w[j] <= 0.0:
        raise ArithmeticError("weight normalization did not reach an exact unit sum")
    return w


def _pps_indices(p: np.ndarray, n: int, u: float) -> np.ndarray:
    """Systematic proportional-to-size draw of n distinct indices.

    One uniform u places n equally spaced probes on the cumulative weight
    axis, so entry i is included with probability exactly n * p_i whenever
    that is below 1. Entries at or above 1 are taken outright and the pass
    repeats over the remainder.
    """
    remaining = np.arange(len(p))
    p_rem = np.asarray(p, dtype=float)
    certain: list[np.ndarray] = []
    k = n
    while k > 0 and len(remaining) > 0:
        q = k * p_rem / p_rem.sum()
        sat = q >= 1.0
        if not sat.any():
            break
        certain.append(remaining[sat])
        remaining = remaining[~sat]
        p_rem = p_rem[~sat]
        k -= int(sat.sum())
    if k > 0 and len(remaining) > 0:
        cum = np.cumsum(p_rem / p_rem.sum())
        cum[-1] = 1.0  # guard against cumulative rounding
        targets = (u + np.arange(k)) / k
        pick = np.searchsorted(cum, targets, side="left")
        rest = remaining[np.minimum(pick, len(remaining) - 1)]
    else:
        rest = np.empty(0, dtype=np.int64)
    parts = certain + [rest]
    return np.sort(np.concatenate(parts))


def selection_weights(tensor: InteractionTensor, query_diag: float) -> np.ndarray:
    """Raw inverse-magnitude weights 1 / (|pv_scene| + lambda)."""
    lam = LAMBDA_FRACTION * float(query_diag)
    mag = np.sqrt((tensor.pv_scene * tensor.pv_scene).sum(axis=1))
    return 1.0 / (mag + lam)


def select_entries(
    tensor: InteractionTensor, n: int, strategy: str, seed: int, query_diag: float
) -> tuple[np.ndarray, np.ndarray]:
    """Choose min(n, |tensor|) entry indices per strategy plus their
    exact-unit-sum weights.

    When n covers the whole tensor every strategy returns all entries in
    tensor order.
    """
    m = len(tensor)
    if m == 0:
        raise EmptyTensor("cannot sample keypoints from an empty tensor")
    if n < 1:
        raise InvalidCount(f"keypoint count must be >= 1, got {n}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")

    raw = selection_weights(tensor, query_diag)
    if n >= m:
        idx = np.arange(m)
    elif strategy == "uniform":
        rng = np.random.default_rng(seed)
        idx = rng.choice(m, size=n, replace=False)
    elif strategy == "weighted-random":
        rng = np.random.default_rng(seed)
        idx = _pps_indices(raw / raw.sum(), n, float(rng.random()))
    else:  # top-weight
        idx = np.argsort(-raw, kind="stable")[:n]
    return idx, normalize_weights_exact(raw[idx])


def sample_keypoints(
    tensor: InteractionTensor,
    anchor: np.ndarray,
    n: int,
    strategy: str = "weighted-random",
    seed: int = 0,
    query_diag: float = 1.0,
) -> list[Keypoint]:
    """Distill the tensor into a sparse weighted keypoint list.

    offset = p - anchor, vector = pv_scene; weights follow the inverse
    magnitude law and sum to 1 over the selection.
    """
    idx, weights = select_entries(tensor, n, strategy, seed, query_diag)
    anchor = np.asarray(anchor, dtype=float).reshape(3)
    offsets = tensor.points[idx] - anchor
    vectors = tensor.pv_scene[idx]
    return [
        Keypoint(offset=offsets[i], vector=vectors[i], weight=float(weights[i]))
        for i in range(len(idx))
    ]


@dataclass(frozen=True)
class AffordanceDescriptor:
    """Trained affordance: sparse keypoints, anchor, and match thresholds."""

    name: str
    anchor: np.ndarray      # (3,)
    query_diag: float
    theta_max: float
    rho_max: float
    offsets: np.ndarray     # (N, 3)
    vectors: np.ndarray     # (N, 3)
    weights: np.ndarray     # (N,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise MalformedDescriptor("descriptor name must be a nonempty string")
        anchor = np.array(self.anchor, dtype=float).reshape(3)
        offsets = np.array(self.offsets, dtype=float)
        vectors = np.array(self.vectors, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if offsets.ndim != 2 or offsets.shape[1] != 3 or offsets.shape[0] < 1:
            raise MalformedDescriptor(f"offsets must be (N, 3) with N >= 1, got {offsets.shape}")
        n = offsets.shape[0]
        if vectors.shape != (n, 3) or weights.shape != (n,):
            raise MalformedDescriptor("keypoint arrays disagree in length")
        for label, arr in (("anchor", anchor), ("offsets", offsets),
                           ("vectors", vectors), ("weights", weights)):
            if not np.isfinite(arr).all():
                raise MalformedDescriptor(f"{label} contains non-finite values")
        if not (self.query_diag > 0):
            raise MalformedDescriptor(f"query_diag must be > 0, got {self.query_diag}")
        if not (self.theta_max > 0) or not (self.rho_max > 0):
            raise MalformedDescriptor("thresholds must be positive")
        if (weights < 0).any():
            raise MalformedDescriptor("weights must be >= 0")
        total = float(np.sum(weights))
        if abs(total - 1.0) > 1e-9:
            raise MalformedDescriptor(f"weights must sum to 1 +- 1e-9, got {total!r}")
        if ((vectors * vectors).sum(axis=1) == 0.0).any():
            raise MalformedDescriptor("every keypoint vector must have nonzero length")
        for label, arr in (("anchor", anchor), ("offsets", offsets),
                           ("vectors", vectors), ("weights", weights)):
            arr.flags.writeable = False
            object.__setattr__(self, label, arr)
        object.__setattr__(self, "query_diag", float(self.query_diag))
        object.__setattr__(self, "theta_max", float(self.theta_max))
        object.__setattr__(self, "rho_max", float(self.rho_max))

    @property
    def n_keypoints(self) -> int:
        return self.offsets.shape[0]

    @property
    def keypoints(self) -> list[Keypoint]:
        return [
            Keypoint(self.offsets[i], self.vectors[i], float(self.weights[i]))
            for i in range(self.n_keypoints)
        ]


def train_report(
    query: PointCloud,
    scene: PointCloud,
    pose: RigidPose,
    name: str,
    ibs_params: Optional[IbsParams] = None,
    n_keypoints: int = DEFAULT_N_KEYPOINTS,
    strategy: str = "weighted-random",
    seed: int = 0,
    theta_max: float = DEFAULT_THETA_MAX,
    rho_max: float = DEFAULT_RHO_MAX,
    query_file: str = "",
    scene_file: str = "",
) -> tuple[AffordanceDescriptor, dict]:
    """One-shot training: pose the query, sample and prune the bisector,
    attach provenance, pick keypoints. Returns (descriptor, stage stats).

    An interaction whose bisector cannot be sampled, or survives pruning
    nowhere, raises DegenerateInteraction.
    """
    params = ibs_params if ibs_params is not None else IbsParams()
    posed = transform(query, pose)
    samples = sample_ibs(posed, scene, params)
    try:
        kept = prune_ibs(samples, posed, params)
    except AllPruned as e:
        raise DegenerateInteraction(str(e)) from e
    tensor = compute_provenance(kept, posed, scene)

    # zero-length scene vectors carry no direction to match against
    nonzero = (tensor.pv_scene * tensor.pv_scene).sum(axis=1) > 0.0
    if not nonzero.all():
        tensor = tensor.subset(nonzero)
    if len(tensor) == 0:
        raise DegenerateInteraction("all bisector samples coincide with scene points")

    query_diag = posed.diagonal()
    anchor = derive_anchor(tensor)
    idx, weights = select_entries(tensor, n_keypoints, strategy, seed, query_diag)
    provenance = {
        "seed": int(seed),
        "params": {
            "grid_resolution": params.grid_resolution,
            "bbox_expand": params.bbox_expand,
            "eps_ibs": params.eps_ibs,
            "bisection_iters": params.bisection_iters,
            "prune_delta": params.prune_delta,
            "n_keypoints": int(n_keypoints),
            "strategy": strategy,
        },
        "query_file": query_file,
        "scene_file": scene_file,
        "pose": {
            "rotation": pose.rotation.tolist(),
            "translation": pose.translation.tolist(),
        },
    }
    descriptor = AffordanceDescriptor(
        name=name,
        anchor=anchor,
        query_diag=query_diag,
        theta_max=theta_max,
        rho_max=rho_max,
        offsets=tensor.points[idx] - anchor,
        vectors=tensor.pv_scene[idx],
        weights=weights,
        provenance=provenance,
    )
    stats = {
        "ibs_samples": len(samples),
        "pruned_kept": len(kept),
        "tensor_entries": len(tensor),
        "keypoints": descriptor.n_keypoints,
        "eps_ibs": samples.eps_ibs,
    }
    return descriptor, stats


def train_affordance(
    query: PointCloud,
    scene: PointCloud,
    pose: RigidPose,
    name: str,
    **kwargs,
) -> AffordanceDescriptor:
    """train_report without the stats; see there for the pipeline."""
    descriptor, _ = train_report(query, scene, pose, name, **kwargs)
    return descriptor


def descriptor_document(d: AffordanceDescriptor) -> dict:
    """The descriptor as a JSON-ready dict with a fixed field order."""
    return {
        "format_version": FORMAT_VERSION,
        "name": d.name,
        "anchor": d.anchor,
        "query_diag": d.query_diag,
        "thresholds": {"theta_max": d.theta_max, "rho_max": d.rho_max},
        "keypoints": [
            {"offset": d.offsets[i], "vector": d.vectors[i], "weight": d.weights[i]}
            for i in range(d.n_keypoints)
        ],
        "provenance": d.provenance,
    }


def save_descriptor(d: AffordanceDescriptor, path) -> None:
    try:
        write_canonical(descriptor_document(d), path)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def _vec3(value, label: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise MalformedDescriptor(f"{label} must be a 3-vector, got shape {arr.shape}")
    return arr


def descriptor_from_document(doc, source: str = "descriptor") -> AffordanceDescriptor:
    """Validate a parsed descriptor JSON document."""
    if not isinstance(doc, dict):
        raise MalformedDescriptor(f"{source}: descriptor must be a JSON object")
    version = doc.get("format_version")
    if version is None:
        raise MalformedDescriptor(f"{source}: missing format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{source}: format_version {version!r} unsupported (expected {FORMAT_VERSION})"
        )
    try:
        kps = doc["keypoints"]
        if not isinstance(kps, list) or not kps:
            raise MalformedDescriptor(f"{source}: keypoints must be a nonempty list")
        offsets = np.array([_vec3(k["offset"], "offset") for k in kps])
        vectors = np.array([_vec3(k["vector"], "vector") for k in kps])
        weights = np.array([float(k["weight"]) for k in kps])
        thresholds = doc["thresholds"]
        return AffordanceDescriptor(
            name=doc["name"],
            anchor=_vec3(doc["anchor"], "anchor"),
            query_diag=float(doc["query_diag"]),
            theta_max=float(thresholds["theta_max"]),
            rho_max=float(thresholds["rho_max"]),
            offsets=offsets,
            vectors=vectors,
            weights=weights,
            provenance=doc.get("provenance", {}),
        )
    except MalformedDescriptor:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedDescriptor(f"{source}: {e}") from e


def load_descriptor(path) -> AffordanceDescriptor:
    """Read and fully validate a descriptor file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise MalformedDescriptor(f"{path}: not valid JSON: {e}") from e
    return descriptor_from_document(doc, source=str(path))
