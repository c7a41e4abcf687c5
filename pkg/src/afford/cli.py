"""Command-line interface, a thin client over the HTTP service.

Each command builds one request, posts it, and prints a single JSON summary
line to standard output. By default the service runs in-process over an
ASGI transport, so no server needs to be started; --server points the same
client at a live instance instead (input and output paths are then resolved
on the host the service runs on).

Exit codes: 0 success, 2 bad input or any other error, 3 degenerate
interaction (the query never gets close enough to the scene to train from).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Optional

import httpx

from .jsonio import dumps_canonical

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_DEGENERATE = 3


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_BAD_INPUT):
        super().__init__(message)
        self.exit_code = exit_code


def _read_json(path, label: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise CliError(f"cannot read {label} {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CliError(f"{label} {path} is not valid JSON: {e}") from e


async def _post(client: httpx.AsyncClient, route: str, payload: dict) -> dict:
    try:
        resp = await client.post(route, json=payload)
    except httpx.HTTPError as e:
        raise CliError(f"request failed: {e}") from e
    if resp.status_code >= 400:
        try:
            err = resp.json()["error"]
            code, message = err["code"], err["message"]
        except (ValueError, KeyError, TypeError):
            raise CliError(f"server returned {resp.status_code}: {resp.text[:300]}")
        exit_code = (
            EXIT_DEGENERATE if code == "degenerate-interaction" else EXIT_BAD_INPUT
        )
        raise CliError(f"{code}: {message}", exit_code)
    return resp.json()


def _detection_overrides(args) -> dict:
    payload = {}
    if args.points is not None:
        payload["n_test_points"] = args.points
    if args.orientations is not None:
        payload["n_orientations"] = args.orientations
    if args.threshold is not None:
        payload["score_threshold"] = args.threshold
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.config:
        payload["config"] = _read_json(args.config, "config file")
    return payload


async def _cmd_train(args, client) -> dict:
    payload = {
        "query_ply": args.query,
        "scene_ply": args.scene,
        "pose": _read_json(args.pose, "pose file"),
        "name": args.name if args.name else Path(args.out).stem,
        "out": args.out,
    }
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.config:
        payload["config"] = _read_json(args.config, "config file")
    resp = await _post(client, "/train", payload)
    summary = dict(resp["summary"])
    summary["out"] = args.out
    return summary


def _report_summary(report: dict, out: str) -> dict:
    return {
        "scene_file": report["scene_file"],
        "detections": len(report["results"]),
        "out": out,
        "timing": report["timing"],
    }


async def _cmd_detect(args, client) -> dict:
    payload = {"scene_ply": args.scene, "desc_path": args.desc, "out": args.out}
    if args.viz:
        payload["viz"] = args.viz
    payload.update(_detection_overrides(args))
    resp = await _post(client, "/detect", payload)
    return _report_summary(resp["report"], args.out)


async def _cmd_batch(args, client) -> dict:
    payload = {"scene_ply": args.scene, "desc_dir": args.desc_dir, "out": args.out}
    payload.update(_detection_overrides(args))
    resp = await _post(client, "/batch", payload)
    summary = _report_summary(resp["report"], args.out)
    summary["descriptors"] = len(
        {row["descriptor"] for row in resp["report"]["results"]}
    )
    return summary


async def _cmd_synth(args, client) -> dict:
    payload = {"kind": args.kind, "out": args.out, "seed": args.seed}
    if args.density is not None:
        payload["density"] = args.density
    resp = await _post(client, "/synth", payload)
    return {k: v for k, v in resp.items() if v is not None}


async def _cmd_ibs(args, client) -> dict:
    payload = {"query_ply": args.query, "scene_ply": args.scene, "out": args.out}
    if args.config:
        payload["config"] = _read_json(args.config, "config file")
    return await _post(client, "/ibs", payload)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afford",
        description="One-shot geometric affordance training and detection "
                    "on point clouds.",
    )
    parser.add_argument(
        "--server",
        default=None,
        metavar="URL",
        help="talk to a running service at URL instead of in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser(
        "train", help="train a descriptor from one interacting example pair"
    )
    train.add_argument("--query", required=True, help="query object PLY")
    train.add_argument("--scene", required=True, help="scene PLY")
    train.add_argument("--pose", required=True,
                       help="JSON file with rotation (3x3) and translation (3)")
    train.add_argument("--out", required=True, help="descriptor JSON to write")
    train.add_argument("--config", help="pipeline config JSON")
    train.add_argument("--seed", type=int, help="keypoint sampling seed")
    train.add_argument("--name", help="descriptor name (default: --out stem)")
    train.set_defaults(run=_cmd_train)

    def detection_flags(p):
        p.add_argument("--points", type=int, help="number of scene test points")
        p.add_argument("--orientations", type=int, help="number of yaw steps")
        p.add_argument("--threshold", type=float, help="minimum score to report")
        p.add_argument("--seed", type=int, help="test point sampling seed")
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--out", required=True, help="detections JSON to write")

    detect = sub.add_parser("detect", help="detect one affordance in a scene")
    detect.add_argument("--desc", required=True, help="descriptor JSON")
    detect.add_argument("--scene", required=True, help="scene PLY")
    detection_flags(detect)
    detect.add_argument("--viz", help="also write a visualization PLY here")
    detect.set_defaults(run=_cmd_detect)

    batch = sub.add_parser(
        "batch", help="detect every descriptor in a directory at once"
    )
    batch.add_argument("--desc-dir", required=True,
                       help="directory of descriptor *.json files")
    batch.add_argument("--scene", required=True, help="scene PLY")
    detection_flags(batch)
    batch.set_defaults(run=_cmd_batch)

    synth = sub.add_parser(
        "synth", help="generate a synthetic scene or training pair"
    )
    synth.add_argument("--kind", required=True,
                       choices=("table", "place", "hang", "fill"))
    synth.add_argument("--out", required=True,
                       help="output PLY (archetypes derive sibling files from it)")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--density", type=float,
                       help="table points per meter (default 100)")
    synth.set_defaults(run=_cmd_synth)

    ibs = sub.add_parser(
        "ibs", help="dump the bisector surface between two clouds as a PLY"
    )
    ibs.add_argument("--query", required=True, help="query object PLY")
    ibs.add_argument("--scene", required=True, help="scene PLY")
    ibs.add_argument("--out", required=True, help="PLY to write")
    ibs.add_argument("--config", help="pipeline config JSON")
    ibs.set_defaults(run=_cmd_ibs)

    serve = sub.add_parser("serve", help="run the HTTP service in the foreground")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(run=None)

    return parser


async def _run(args) -> dict:
    if args.server:
        transport = None
        base_url = args.server
    else:
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        base_url = "http://afford"
    async with httpx.AsyncClient(
        transport=transport, base_url=base_url, timeout=None
    ) as client:
        return await args.run(args, client)


def _serve(args) -> None:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        _serve(args)
        return EXIT_OK
    try:
        summary = asyncio.run(_run(args))
    except CliError as e:
        print(f"afford: {e}", file=sys.stderr)
        return e.exit_code
    sys.stdout.write(dumps_canonical(summary) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
