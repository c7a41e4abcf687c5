"""HTTP service contract: request plumbing, error envelopes, file side effects.

Numerical behaviour is pinned down by the module tests; here the checks are
that each route feeds the pipeline faithfully, that server-side outputs are
canonical JSON, and that domain errors surface as the documented envelope.
"""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from afford.geometry import PointCloud, RigidPose
from afford.jsonio import dumps_canonical, to_plain
from afford.ply import load_ply, save_ply
from afford.service.app import create_app, labels_sidecar_path
from afford.synth import LABELS
from afford.tensor import descriptor_document, load_descriptor


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def _error(resp):
    body = resp.json()
    assert set(body) == {"error"}
    assert set(body["error"]) == {"code", "message"}
    return body["error"]


def _train_payload(artifacts, **extra):
    payload = {
        "query_ply": str(artifacts / "place_query.ply"),
        "scene_ply": str(artifacts / "place_scene.ply"),
        "pose": json.loads((artifacts / "place_pose.json").read_text()),
        "name": "place-fixture",
    }
    payload.update(extra)
    return payload


class TestHealth:
    def test_ok(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok"}


class TestTrain:
    def test_reproduces_fixture_descriptor(self, client, artifacts, place):
        """Training over HTTP from round-tripped files matches the in-process
        fixture bit for bit, apart from the file paths recorded in provenance."""
        resp = client.post("/train", json=_train_payload(artifacts))
        assert resp.status_code == 200
        body = resp.json()
        assert set(body) == {"descriptor", "summary"}

        doc = body["descriptor"]
        want = to_plain(descriptor_document(place.descriptor))
        assert doc["keypoints"] == want["keypoints"]
        assert doc["anchor"] == want["anchor"]
        assert doc["query_diag"] == want["query_diag"]
        assert doc["thresholds"] == want["thresholds"]
        assert doc["provenance"]["seed"] == 0
        assert doc["provenance"]["query_file"].endswith("place_query.ply")

        summary = body["summary"]
        assert set(summary) == {"name", "keypoints", "anchor", "query_diag", "stats"}
        assert summary["name"] == "place-fixture"
        assert summary["keypoints"] == place.descriptor.n_keypoints
        assert summary["stats"] == to_plain(place.stats)

    def test_out_written_canonical(self, client, artifacts, tmp_path):
        out = tmp_path / "desc.json"
        resp = client.post("/train", json=_train_payload(artifacts, out=str(out)))
        assert resp.status_code == 200
        assert out.read_bytes() == (
            dumps_canonical(resp.json()["descriptor"]) + "\n"
        ).encode()
        assert load_descriptor(out).name == "place-fixture"

    def test_seed_precedence(self, client, artifacts):
        """Request seed beats the config seed, which beats the default."""
        cfg = {"keypoints": {"seed": 9}}
        from_cfg = client.post(
            "/train", json=_train_payload(artifacts, config=cfg)
        ).json()["descriptor"]
        from_req = client.post(
            "/train", json=_train_payload(artifacts, config=cfg, seed=5)
        ).json()["descriptor"]
        assert from_cfg["provenance"]["seed"] == 9
        assert from_req["provenance"]["seed"] == 5
        assert from_cfg["keypoints"] != from_req["keypoints"]

    def test_degenerate_maps_to_422(self, client, tmp_path):
        # a wide query with the scene just past one end and no bbox margin
        # puts the bisector outside the sampling box entirely
        save_ply(PointCloud(np.array([[-1.0, 0, 0], [1.0, 0, 0]])),
                 tmp_path / "query.ply")
        save_ply(PointCloud(np.array([[1.05, 0, 0]])), tmp_path / "scene.ply")
        resp = client.post("/train", json={
            "query_ply": str(tmp_path / "query.ply"),
            "scene_ply": str(tmp_path / "scene.ply"),
            "pose": {"rotation": np.eye(3).tolist(), "translation": [0, 0, 0]},
            "config": {"ibs": {"bbox_expand": 1.0, "grid_resolution": 16}},
        })
        assert resp.status_code == 422
        assert _error(resp)["code"] == "degenerate-interaction"

    def test_bad_ply_maps_to_400(self, client, artifacts, tmp_path):
        bad = tmp_path / "bad.ply"
        bad.write_text("this is not a ply file\n")
        resp = client.post(
            "/train", json=_train_payload(artifacts, query_ply=str(bad))
        )
        assert resp.status_code == 400
        assert _error(resp)["code"] == "malformed-file"

    def test_missing_file_maps_to_400(self, client, artifacts, tmp_path):
        resp = client.post(
            "/train",
            json=_train_payload(artifacts, scene_ply=str(tmp_path / "gone.ply")),
        )
        assert resp.status_code == 400
        assert _error(resp)["code"] == "io-failure"

    def test_bad_config_rejected(self, client, artifacts):
        resp = client.post(
            "/train", json=_train_payload(artifacts, config={"typo": {}})
        )
        assert resp.status_code == 400
        err = _error(resp)
        assert err["code"] == "config-error"
        assert "typo" in err["message"]

    def test_invalid_pose_rejected(self, client, artifacts):
        payload = _train_payload(artifacts)
        payload["pose"] = {
            "rotation": (2 * np.eye(3)).tolist(), "translation": [0, 0, 0]
        }
        resp = client.post("/train", json=payload)
        assert resp.status_code == 400
        assert _error(resp)["code"] == "invalid-pose"


class TestDetect:
    @staticmethod
    def _payload(artifacts, **extra):
        payload = {
            "scene_ply": str(artifacts / "place_scene.ply"),
            "desc_path": str(artifacts / "place.json"),
        }
        payload.update(extra)
        return payload

    def test_inline_and_path_descriptors_agree(self, client, artifacts):
        by_path = client.post("/detect", json=self._payload(artifacts))
        inline = client.post("/detect", json=self._payload(
            artifacts,
            desc_path=None,
            descriptor=json.loads((artifacts / "place.json").read_text()),
        ))
        assert by_path.status_code == 200 and inline.status_code == 200
        a, b = by_path.json()["report"], inline.json()["report"]
        # timing is wall clock and may differ between the two runs
        assert {k: v for k, v in a.items() if k != "timing"} == \
               {k: v for k, v in b.items() if k != "timing"}
        assert set(a) == {"scene_file", "params", "results", "timing"}

    def test_requires_exactly_one_descriptor_source(self, client, artifacts):
        for extra in (
            {"desc_path": None},
            {"descriptor": json.loads((artifacts / "place.json").read_text())},
        ):
            resp = client.post("/detect", json=self._payload(artifacts, **extra))
            assert resp.status_code == 400
            err = _error(resp)
            assert err["code"] == "invalid-value"
            assert "exactly one" in err["message"]

    def test_overrides_beat_config(self, client, artifacts):
        resp = client.post("/detect", json=self._payload(
            artifacts,
            config={"detection": {"n_test_points": 99, "seed": 99}},
            n_test_points=7,
            n_orientations=5,
            score_threshold=0.25,
            seed=3,
        ))
        assert resp.status_code == 200
        assert resp.json()["report"]["params"] == {
            "n_test_points": 7,
            "n_orientations": 5,
            "score_threshold": 0.25,
            "seed": 3,
        }

    def test_out_written_canonical(self, client, artifacts, tmp_path):
        out = tmp_path / "report.json"
        resp = client.post(
            "/detect", json=self._payload(artifacts, out=str(out), n_test_points=5)
        )
        assert resp.status_code == 200
        assert out.read_bytes() == (
            dumps_canonical(resp.json()["report"]) + "\n"
        ).encode()

    def test_viz_instances_every_detection(self, client, artifacts, tmp_path):
        """With threshold zero every test point emits, and the viz cloud is
        the scene plus one keypoint-offset template per emission."""
        viz = tmp_path / "viz.ply"
        resp = client.post("/detect", json=self._payload(
            artifacts,
            viz=str(viz),
            n_test_points=25,
            n_orientations=4,
            score_threshold=0.0,
        ))
        assert resp.status_code == 200
        results = resp.json()["report"]["results"]
        assert len(results) == 25
        scene = load_ply(artifacts / "place_scene.ply")
        template_len = load_descriptor(artifacts / "place.json").n_keypoints
        assert len(load_ply(viz)) == len(scene) + 25 * template_len

    def test_table_scene_end_to_end(self, client, artifacts):
        resp = client.post("/detect", json=self._payload(
            artifacts,
            scene_ply=str(artifacts / "table.ply"),
            n_test_points=30,
            seed=7,
        ))
        assert resp.status_code == 200
        results = resp.json()["report"]["results"]
        assert results
        assert all(row["score"] >= 0.5 for row in results)
        assert all(row["descriptor"] == "place-fixture" for row in results)

    def test_threshold_one_on_noise_is_empty_not_error(
        self, client, artifacts, tmp_path
    ):
        rng = np.random.default_rng(11)
        save_ply(PointCloud(rng.uniform(-0.5, 0.5, (200, 3))),
                 tmp_path / "noise.ply")
        resp = client.post("/detect", json=self._payload(
            artifacts, scene_ply=str(tmp_path / "noise.ply"), score_threshold=1.0
        ))
        assert resp.status_code == 200
        assert resp.json()["report"]["results"] == []


class TestBatch:
    def test_single_descriptor_matches_detect(self, client, artifacts, tmp_path):
        desc_dir = tmp_path / "descs"
        desc_dir.mkdir()
        (desc_dir / "place.json").write_bytes(
            (artifacts / "place.json").read_bytes()
        )
        scene = str(artifacts / "place_scene.ply")
        batch = client.post("/batch", json={
            "desc_dir": str(desc_dir), "scene_ply": scene, "n_test_points": 8,
        })
        single = client.post("/detect", json={
            "desc_path": str(artifacts / "place.json"),
            "scene_ply": scene,
            "n_test_points": 8,
        })
        assert batch.status_code == 200
        assert batch.json()["report"]["results"] == \
               single.json()["report"]["results"]

    def test_empty_dir_rejected(self, client, artifacts, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        resp = client.post("/batch", json={
            "desc_dir": str(empty),
            "scene_ply": str(artifacts / "place_scene.ply"),
        })
        assert resp.status_code == 400
        err = _error(resp)
        assert err["code"] == "no-descriptors"
        assert str(empty) in err["message"]

    def test_malformed_descriptor_names_file(self, client, artifacts, tmp_path):
        desc_dir = tmp_path / "descs"
        desc_dir.mkdir()
        (desc_dir / "junk.json").write_text('{"name": "x"}\n')
        resp = client.post("/batch", json={
            "desc_dir": str(desc_dir),
            "scene_ply": str(artifacts / "place_scene.ply"),
        })
        assert resp.status_code == 400
        err = _error(resp)
        assert err["code"] == "malformed-descriptor"
        assert "junk.json" in err["message"]


class TestSynth:
    def test_table_files_and_sidecar(self, client, tmp_path):
        out = tmp_path / "scene.ply"
        resp = client.post(
            "/synth", json={"kind": "table", "out": str(out), "seed": 4}
        )
        assert resp.status_code == 200
        body = resp.json()
        sidecar = labels_sidecar_path(str(out))
        assert body["files"] == [str(out), str(sidecar)]
        assert len(load_ply(out)) == body["n_points"]

        doc = json.loads(sidecar.read_text())
        assert list(doc) == ["label_names", "labels", "metadata"]
        assert doc["label_names"] == list(LABELS)
        assert len(doc["labels"]) == body["n_points"]
        assert doc["metadata"]["seed"] == 4
        for index, tag in enumerate(LABELS):
            assert body["label_counts"][tag] == doc["labels"].count(index)

    def test_archetype_triplet(self, client, tmp_path):
        out = tmp_path / "pair.ply"
        resp = client.post(
            "/synth", json={"kind": "place", "out": str(out), "seed": 0}
        )
        assert resp.status_code == 200
        body = resp.json()
        stem = str(tmp_path / "pair")
        assert body["files"] == [
            f"{stem}_query.ply", f"{stem}_scene.ply", f"{stem}_pose.json"
        ]
        assert body["label_counts"] is None
        query = load_ply(body["files"][0])
        scene = load_ply(body["files"][1])
        assert len(query) + len(scene) == body["n_points"]
        pose_doc = json.loads((tmp_path / "pair_pose.json").read_text())
        pose = RigidPose(
            np.asarray(pose_doc["rotation"]), np.asarray(pose_doc["translation"])
        )
        assert pose.translation.tolist() == [0.0, 0.0, 0.101]

    def test_unknown_kind_rejected(self, client, tmp_path):
        resp = client.post(
            "/synth", json={"kind": "mug", "out": str(tmp_path / "x.ply")}
        )
        assert resp.status_code == 400
        err = _error(resp)
        assert err["code"] == "unknown-archetype"
        assert "mug" in err["message"]

    def test_bad_density_rejected(self, client, tmp_path):
        resp = client.post("/synth", json={
            "kind": "table", "out": str(tmp_path / "x.ply"), "density": 0.0
        })
        assert resp.status_code == 400
        assert _error(resp)["code"] == "invalid-dims"


class TestIbs:
    def test_midplane_export(self, client, tmp_path):
        save_ply(PointCloud(np.array([[0.0, 0, 0]])), tmp_path / "a.ply")
        save_ply(PointCloud(np.array([[0.0, 0, 2.0]])), tmp_path / "b.ply")
        out = tmp_path / "ibs.ply"
        resp = client.post("/ibs", json={
            "query_ply": str(tmp_path / "a.ply"),
            "scene_ply": str(tmp_path / "b.ply"),
            "out": str(out),
        })
        assert resp.status_code == 200
        body = resp.json()
        assert body["out"] == str(out)
        assert body["eps_ibs"] > 0
        cloud = load_ply(out)
        assert len(cloud) == body["n_samples"] > 0
        assert np.abs(cloud.points[:, 2] - 1.0).max() < 1e-6

    def test_config_controls_resolution(self, client, tmp_path):
        save_ply(PointCloud(np.array([[0.0, 0, 0]])), tmp_path / "a.ply")
        save_ply(PointCloud(np.array([[0.0, 0, 2.0]])), tmp_path / "b.ply")
        counts = {}
        for res in (16, 64):
            resp = client.post("/ibs", json={
                "query_ply": str(tmp_path / "a.ply"),
                "scene_ply": str(tmp_path / "b.ply"),
                "out": str(tmp_path / f"ibs{res}.ply"),
                "config": {"ibs": {"grid_resolution": res}},
            })
            assert resp.status_code == 200
            counts[res] = resp.json()["n_samples"]
        assert counts[16] < counts[64]
