"""FastAPI application over the training and detection pipeline.

Handlers are synchronous on purpose: the work is CPU-bound numpy, which
FastAPI already offloads to its thread pool. Domain errors surface as
structured JSON (error.code, error.message) with 400, except degenerate
interactions which get 422 so clients can tell "bad request" from "valid
request, hopeless geometry".
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from ..config import Config, build_config, override_detection
from ..detection import detections_document, run_batch
from ..errors import AffordError, DegenerateInteraction, NoDescriptors, UnknownArchetype
from ..geometry import RigidPose
from ..ibs import sample_ibs
from ..jsonio import to_plain, write_canonical
from ..ply import load_ply, save_ply
from ..synth import ARCHETYPES, LABELS, TableParams, make_table_scene, make_training_pair
from ..tensor import (
    descriptor_document,
    descriptor_from_document,
    load_descriptor,
    train_report,
)
from ..viz import export_detections_ply, export_ibs_ply, template_for
from .schemas import (
    BatchRequest,
    DetectRequest,
    DetectResponse,
    IbsRequest,
    IbsResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)


def _kebab(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "-", name).lower()


def _config_for(doc) -> Config:
    return build_config(doc, "config") if doc is not None else Config()


def labels_sidecar_path(scene_path: str) -> Path:
    return Path(scene_path).with_suffix(".labels.json")


def create_app() -> FastAPI:
    app = FastAPI(title="afford", version="0.1.0")

    @app.exception_handler(AffordError)
    async def on_domain_error(request, exc: AffordError):
        status = 422 if isinstance(exc, DegenerateInteraction) else 400
        return JSONResponse(
            status_code=status,
            content={"error": {"code": _kebab(type(exc).__name__), "message": str(exc)}},
        )

    @app.exception_handler(ValueError)
    async def on_value_error(request, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "invalid-value", "message": str(exc)}},
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        cfg = _config_for(req.config)
        query = load_ply(req.query_ply)
        scene = load_ply(req.scene_ply)
        pose = RigidPose(
            np.asarray(req.pose.rotation, dtype=float),
            np.asarray(req.pose.translation, dtype=float),
        )
        seed = req.seed if req.seed is not None else cfg.train_seed
        descriptor, stats = train_report(
            query, scene, pose,
            name=req.name,
            ibs_params=cfg.ibs,
            n_keypoints=cfg.n_keypoints,
            strategy=cfg.strategy,
            seed=seed,
            theta_max=cfg.theta_max,
            rho_max=cfg.rho_max,
            query_file=req.query_ply,
            scene_file=req.scene_ply,
        )
        doc = to_plain(descriptor_document(descriptor))
        if req.out:
            write_canonical(doc, req.out)
        summary = {
            "name": descriptor.name,
            "keypoints": descriptor.n_keypoints,
            "anchor": descriptor.anchor.tolist(),
            "query_diag": descriptor.query_diag,
            "stats": to_plain(stats),
        }
        return TrainResponse(descriptor=doc, summary=summary)

    @app.post("/detect", response_model=DetectResponse)
    def detect(req: DetectRequest) -> DetectResponse:
        if (req.descriptor is None) == (req.desc_path is None):
            raise ValueError("provide exactly one of descriptor, desc_path")
        cfg = override_detection(
            _config_for(req.config),
            n_test_points=req.n_test_points,
            n_orientations=req.n_orientations,
            score_threshold=req.score_threshold,
            seed=req.seed,
        )
        if req.descriptor is not None:
            descriptor = descriptor_from_document(req.descriptor, "request descriptor")
        else:
            descriptor = load_descriptor(req.desc_path)
        scene = load_ply(req.scene_ply)
        detections, timing = run_batch([descriptor], scene, cfg.detection)
        report = to_plain(
            detections_document(detections, req.scene_ply, cfg.detection, timing)
        )
        if req.out:
            write_canonical(report, req.out)
        if req.viz:
            export_detections_ply(
                req.viz, scene, detections,
                {descriptor.name: template_for(descriptor)},
            )
        return DetectResponse(report=report)

    @app.post("/batch", response_model=DetectResponse)
    def batch(req: BatchRequest) -> DetectResponse:
        cfg = override_detection(
            _config_for(req.config),
            n_test_points=req.n_test_points,
            n_orientations=req.n_orientations,
            score_threshold=req.score_threshold,
            seed=req.seed,
        )
        files = sorted(Path(req.desc_dir).glob("*.json"))
        if not files:
            raise NoDescriptors(f"no descriptor files in {req.desc_dir!r}")
        descriptors = [load_descriptor(f) for f in files]
        scene = load_ply(req.scene_ply)
        detections, timing = run_batch(descriptors, scene, cfg.detection)
        report = to_plain(
            detections_document(detections, req.scene_ply, cfg.detection, timing)
        )
        if req.out:
            write_canonical(report, req.out)
        return DetectResponse(report=report)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        if req.kind == "table":
            params = (
                TableParams() if req.density is None
                else TableParams(density=req.density)
            )
            labeled = make_table_scene(params, req.seed)
            save_ply(labeled.cloud, req.out)
            sidecar = labels_sidecar_path(req.out)
            write_canonical(
                {
                    "label_names": list(LABELS),
                    "labels": [int(c) for c in labeled.labels],
                    "metadata": to_plain(labeled.metadata),
                },
                sidecar,
            )
            return SynthResponse(
                files=[req.out, str(sidecar)],
                n_points=len(labeled.cloud),
                label_counts={tag: labeled.count(tag) for tag in LABELS},
            )
        if req.kind in ARCHETYPES:
            query, scene, pose = make_training_pair(req.kind, req.seed)
            prefix = req.out[:-4] if req.out.endswith(".ply") else req.out
            query_path = f"{prefix}_query.ply"
            scene_path = f"{prefix}_scene.ply"
            pose_path = f"{prefix}_pose.json"
            save_ply(query, query_path)
            save_ply(scene, scene_path)
            write_canonical(
                {"rotation": pose.rotation, "translation": pose.translation},
                pose_path,
            )
            return SynthResponse(
                files=[query_path, scene_path, pose_path],
                n_points=len(query) + len(scene),
            )
        raise UnknownArchetype(
            f"unknown synth kind {req.kind!r}; expected 'table' or one of {ARCHETYPES}"
        )

    @app.post("/ibs", response_model=IbsResponse)
    def ibs(req: IbsRequest) -> IbsResponse:
        cfg = _config_for(req.config)
        query = load_ply(req.query_ply)
        scene = load_ply(req.scene_ply)
        samples = sample_ibs(query, scene, cfg.ibs)
        export_ibs_ply(req.out, samples.points, samples.d_query)
        return IbsResponse(out=req.out, n_samples=len(samples), eps_ibs=samples.eps_ibs)

    return app


app = create_app()
