"""JSON configuration for the pipeline.

Three parameter sections (ibs, keypoints, detection) plus optional default
paths. Unknown keys are rejected so typos fail loudly instead of silently
running with defaults. Precedence is flag > config file > built-in default,
applied per field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .detection import DetectionParams
from .errors import ConfigError, IoFailure
from .ibs import IbsParams
from .tensor import (
    DEFAULT_N_KEYPOINTS,
    DEFAULT_RHO_MAX,
    DEFAULT_THETA_MAX,
    STRATEGIES,
)

_IBS_KEYS = {"grid_resolution", "bbox_expand", "eps_ibs", "bisection_iters",
             "prune_delta"}
_KP_KEYS = {"count", "strategy", "seed", "theta_max", "rho_max"}
_DET_KEYS = {"n_test_points", "n_orientations", "score_threshold", "seed"}
_PATH_KEYS = {"query", "scene", "pose", "desc", "desc_dir", "out", "viz"}
_SECTIONS = {"ibs", "keypoints", "detection", "paths"}


@dataclass(frozen=True)
class Config:
    ibs: IbsParams = field(default_factory=IbsParams)
    n_keypoints: int = DEFAULT_N_KEYPOINTS
    strategy: str = "weighted-random"
    train_seed: int = 0
    theta_max: float = DEFAULT_THETA_MAX
    rho_max: float = DEFAULT_RHO_MAX
    detection: DetectionParams = field(default_factory=DetectionParams)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if not isinstance(self.n_keypoints, int) or self.n_keypoints < 1:
            raise ConfigError(f"keypoint count must be an integer >= 1, got {self.n_keypoints!r}")
        if not (self.theta_max > 0) or not (self.rho_max > 0):
            raise ConfigError("theta_max and rho_max must be positive")


def _check_keys(section: dict, allowed: set, label: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {label} section")


def _int_field(section: dict, key: str, label: str) -> None:
    v = section.get(key)
    if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"{label}.{key} must be an integer, got {v!r}")


def build_config(doc: dict, source: str = "config") -> Config:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    _check_keys(doc, _SECTIONS, source)

    ibs_doc = dict(doc.get("ibs", {}))
    _check_keys(ibs_doc, _IBS_KEYS, "ibs")
    for key in ("grid_resolution", "bisection_iters"):
        _int_field(ibs_doc, key, "ibs")
    try:
        ibs = IbsParams(**ibs_doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"ibs section: {e}") from e

    kp_doc = dict(doc.get("keypoints", {}))
    _check_keys(kp_doc, _KP_KEYS, "keypoints")
    for key in ("count", "seed"):
        _int_field(kp_doc, key, "keypoints")

    det_doc = dict(doc.get("detection", {}))
    _check_keys(det_doc, _DET_KEYS, "detection")
    for key in ("n_test_points", "n_orientations", "seed"):
        _int_field(det_doc, key, "detection")
    try:
        detection = DetectionParams(**det_doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"detection section: {e}") from e

    paths = dict(doc.get("paths", {}))
    _check_keys(paths, _PATH_KEYS, "paths")
    for key, value in paths.items():
        if not isinstance(value, str):
            raise ConfigError(f"paths.{key} must be a string, got {value!r}")

    return Config(
        ibs=ibs,
        n_keypoints=kp_doc.get("count", DEFAULT_N_KEYPOINTS),
        strategy=kp_doc.get("strategy", "weighted-random"),
        train_seed=kp_doc.get("seed", 0),
        theta_max=kp_doc.get("theta_max", DEFAULT_THETA_MAX),
        rho_max=kp_doc.get("rho_max", DEFAULT_RHO_MAX),
        detection=detection,
        paths=paths,
    )


def load_config(path) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return build_config(doc, source=str(path))


def override_detection(config: Config, *, n_test_points: Optional[int] = None,
                       n_orientations: Optional[int] = None,
                       score_threshold: Optional[float] = None,
                       seed: Optional[int] = None) -> Config:
    """Apply command-line overrides on top of the configured detection params."""
    fields = {}
    if n_test_points is not None:
        fields["n_test_points"] = n_test_points
    if n_orientations is not None:
        fields["n_orientations"] = n_orientations
    if score_threshold is not None:
        fields["score_threshold"] = score_threshold
    if seed is not None:
        fields["seed"] = seed
    if not fields:
        return config
    return replace(config, detection=replace(config.detection, **fields))
