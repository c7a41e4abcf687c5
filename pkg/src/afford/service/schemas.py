"""Request and response bodies for the HTTP service.

File paths in requests are resolved on the host the service runs on; the
bundled CLI runs the service in-process, so they are ordinary local paths.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel


class PoseInput(BaseModel):
    rotation: list[list[float]]   # 3x3, row major
    translation: list[float]      # 3


class TrainRequest(BaseModel):
    query_ply: str
    scene_ply: str
    pose: PoseInput
    name: str = "affordance"
    seed: Optional[int] = None
    config: Optional[dict] = None
    out: Optional[str] = None     # server-side descriptor path, if wanted


class TrainResponse(BaseModel):
    descriptor: dict
    summary: dict


class DetectRequest(BaseModel):
    scene_ply: str
    descriptor: Optional[dict] = None   # inline descriptor document ...
    desc_path: Optional[str] = None     # ... or a server-side file
    n_test_points: Optional[int] = None
    n_orientations: Optional[int] = None
    score_threshold: Optional[float] = None
    seed: Optional[int] = None
    config: Optional[dict] = None
    out: Optional[str] = None
    viz: Optional[str] = None           # server-side visualization PLY


class DetectResponse(BaseModel):
    report: dict


class BatchRequest(BaseModel):
    desc_dir: str
    scene_ply: str
    n_test_points: Optional[int] = None
    n_orientations: Optional[int] = None
    score_threshold: Optional[float] = None
    seed: Optional[int] = None
    config: Optional[dict] = None
    out: Optional[str] = None


class SynthRequest(BaseModel):
    kind: str                     # "table" or an archetype: place | hang | fill
    out: str
    seed: int = 0
    density: Optional[float] = None


class SynthResponse(BaseModel):
    files: list[str]
    n_points: int
    label_counts: Optional[dict] = None


class IbsRequest(BaseModel):
    query_ply: str
    scene_ply: str
    out: str
    config: Optional[dict] = None


class IbsResponse(BaseModel):
    out: str
    n_samples: int
    eps_ibs: float


class ErrorBody(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
