"""Command-line client: exit codes, stdout summaries, and written artifacts.

Commands run in-process through main(argv), which exercises the same ASGI
service the HTTP tests hit; one subprocess smoke test covers the installed
entry point.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from afford.cli import EXIT_BAD_INPUT, EXIT_DEGENERATE, EXIT_OK, main
from afford.geometry import PointCloud
from afford.jsonio import write_canonical
from afford.ply import load_ply, save_ply
from afford.tensor import load_descriptor


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def train_argv(artifacts, out, *extra):
    return (
        "train",
        "--query", str(artifacts / "place_query.ply"),
        "--scene", str(artifacts / "place_scene.ply"),
        "--pose", str(artifacts / "place_pose.json"),
        "--out", str(out),
        *extra,
    )


class TestTrain:
    def test_writes_descriptor_and_summary(self, capsys, artifacts, tmp_path):
        out = tmp_path / "mydesc.json"
        code, stdout, _ = run_cli(capsys, *train_argv(artifacts, out))
        assert code == EXIT_OK
        summary = json.loads(stdout)
        assert list(summary) == [
            "name", "keypoints", "anchor", "query_diag", "stats", "out"
        ]
        # --name defaults to the output stem
        assert summary["name"] == "mydesc"
        assert summary["out"] == str(out)
        assert load_descriptor(out).name == "mydesc"

    def test_rerun_is_byte_identical(self, capsys, artifacts, tmp_path):
        out = tmp_path / "desc.json"
        _, first_stdout, _ = run_cli(capsys, *train_argv(artifacts, out))
        first_bytes = out.read_bytes()
        _, second_stdout, _ = run_cli(capsys, *train_argv(artifacts, out))
        assert out.read_bytes() == first_bytes
        assert second_stdout == first_stdout

    def test_degenerate_interaction_exit_code(self, capsys, tmp_path):
        save_ply(PointCloud(np.array([[-1.0, 0, 0], [1.0, 0, 0]])),
                 tmp_path / "q.ply")
        save_ply(PointCloud(np.array([[1.05, 0, 0]])), tmp_path / "s.ply")
        write_canonical(
            {"rotation": np.eye(3), "translation": np.zeros(3)},
            tmp_path / "pose.json",
        )
        write_canonical(
            {"ibs": {"bbox_expand": 1.0, "grid_resolution": 16}},
            tmp_path / "cfg.json",
        )
        code, stdout, stderr = run_cli(
            capsys,
            "train",
            "--query", str(tmp_path / "q.ply"),
            "--scene", str(tmp_path / "s.ply"),
            "--pose", str(tmp_path / "pose.json"),
            "--out", str(tmp_path / "desc.json"),
            "--config", str(tmp_path / "cfg.json"),
        )
        assert code == EXIT_DEGENERATE
        assert stdout == ""
        assert stderr.startswith("afford: degenerate-interaction:")
        assert not (tmp_path / "desc.json").exists()

    def test_unreadable_pose_file_names_it(self, capsys, artifacts, tmp_path):
        bad = tmp_path / "pose.json"
        bad.write_text("{broken")
        code, _, stderr = run_cli(
            capsys,
            "train",
            "--query", str(artifacts / "place_query.ply"),
            "--scene", str(artifacts / "place_scene.ply"),
            "--pose", str(bad),
            "--out", str(tmp_path / "d.json"),
        )
        assert code == EXIT_BAD_INPUT
        assert "pose file" in stderr and str(bad) in stderr

    def test_server_error_exit_code(self, capsys, artifacts, tmp_path):
        bad = tmp_path / "bad.ply"
        bad.write_text("junk\n")
        code, _, stderr = run_cli(
            capsys,
            "train",
            "--query", str(bad),
            "--scene", str(artifacts / "place_scene.ply"),
            "--pose", str(artifacts / "place_pose.json"),
            "--out", str(tmp_path / "d.json"),
        )
        assert code == EXIT_BAD_INPUT
        assert "malformed-file" in stderr


class TestDetect:
    def detect_argv(self, artifacts, out, *extra):
        return (
            "detect",
            "--desc", str(artifacts / "place.json"),
            "--scene", str(artifacts / "place_scene.ply"),
            "--out", str(out),
            *extra,
        )

    def test_summary_counts_match_report(self, capsys, artifacts, tmp_path):
        out = tmp_path / "report.json"
        code, stdout, _ = run_cli(capsys, *self.detect_argv(artifacts, out))
        assert code == EXIT_OK
        summary = json.loads(stdout)
        report = json.loads(out.read_text())
        assert list(summary) == ["scene_file", "detections", "out", "timing"]
        assert summary["detections"] == len(report["results"])
        assert summary["scene_file"] == str(artifacts / "place_scene.ply")

    def test_flag_beats_config_beats_default(self, capsys, artifacts, tmp_path):
        cfg = tmp_path / "cfg.json"
        write_canonical(
            {"detection": {"n_test_points": 6, "seed": 3}}, cfg
        )
        out = tmp_path / "report.json"
        code, _, _ = run_cli(capsys, *self.detect_argv(
            artifacts, out, "--config", str(cfg), "--points", "4"
        ))
        assert code == EXIT_OK
        params = json.loads(out.read_text())["params"]
        assert params == {
            "n_test_points": 4,     # flag wins
            "n_orientations": 8,    # built-in default
            "score_threshold": 0.5,
            "seed": 3,              # config wins over default
        }

    def test_empty_results_still_succeed(self, capsys, artifacts, tmp_path):
        rng = np.random.default_rng(11)
        noise = tmp_path / "noise.ply"
        save_ply(PointCloud(rng.uniform(-0.5, 0.5, (200, 3))), noise)
        out = tmp_path / "report.json"
        code, stdout, _ = run_cli(
            capsys,
            "detect",
            "--desc", str(artifacts / "place.json"),
            "--scene", str(noise),
            "--out", str(out),
            "--threshold", "1.0",
        )
        assert code == EXIT_OK
        assert json.loads(stdout)["detections"] == 0
        assert json.loads(out.read_text())["results"] == []

    def test_viz_written(self, capsys, artifacts, tmp_path):
        viz = tmp_path / "viz.ply"
        code, _, _ = run_cli(capsys, *self.detect_argv(
            artifacts, tmp_path / "r.json",
            "--viz", str(viz), "--points", "3", "--threshold", "0.0",
        ))
        assert code == EXIT_OK
        scene_len = len(load_ply(artifacts / "place_scene.ply"))
        template_len = load_descriptor(artifacts / "place.json").n_keypoints
        assert len(load_ply(viz)) == scene_len + 3 * template_len

    def test_missing_descriptor_file(self, capsys, artifacts, tmp_path):
        code, _, stderr = run_cli(
            capsys,
            "detect",
            "--desc", str(tmp_path / "gone.json"),
            "--scene", str(artifacts / "place_scene.ply"),
            "--out", str(tmp_path / "r.json"),
        )
        assert code == EXIT_BAD_INPUT
        assert "io-failure" in stderr


class TestBatch:
    def test_matches_single_detect(self, capsys, artifacts, tmp_path):
        desc_dir = tmp_path / "descs"
        desc_dir.mkdir()
        (desc_dir / "place.json").write_bytes(
            (artifacts / "place.json").read_bytes()
        )
        batch_out = tmp_path / "batch.json"
        code, stdout, _ = run_cli(
            capsys,
            "batch",
            "--desc-dir", str(desc_dir),
            "--scene", str(artifacts / "place_scene.ply"),
            "--out", str(batch_out),
        )
        assert code == EXIT_OK
        assert json.loads(stdout)["descriptors"] == 1

        single_out = tmp_path / "single.json"
        run_cli(
            capsys,
            "detect",
            "--desc", str(desc_dir / "place.json"),
            "--scene", str(artifacts / "place_scene.ply"),
            "--out", str(single_out),
        )
        batch_report = json.loads(batch_out.read_text())
        single_report = json.loads(single_out.read_text())
        assert batch_report["results"] == single_report["results"]

    def test_empty_directory(self, capsys, artifacts, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        code, _, stderr = run_cli(
            capsys,
            "batch",
            "--desc-dir", str(empty),
            "--scene", str(artifacts / "place_scene.ply"),
            "--out", str(tmp_path / "r.json"),
        )
        assert code == EXIT_BAD_INPUT
        assert "no-descriptors" in stderr


class TestSynth:
    def test_table_deterministic_with_sidecar(self, capsys, tmp_path):
        outs = []
        for name in ("one.ply", "two.ply"):
            out = tmp_path / name
            code, stdout, _ = run_cli(
                capsys, "synth", "--kind", "table", "--seed", "3",
                "--out", str(out),
            )
            assert code == EXIT_OK
            summary = json.loads(stdout)
            assert summary["files"] == [str(out), str(out.with_suffix(".labels.json"))]
            outs.append(out)
        assert outs[0].read_bytes() == outs[1].read_bytes()
        assert outs[0].with_suffix(".labels.json").read_bytes() == \
               outs[1].with_suffix(".labels.json").read_bytes()

    def test_density_flag(self, capsys, tmp_path):
        out = tmp_path / "small.ply"
        code, stdout, _ = run_cli(
            capsys, "synth", "--kind", "table", "--density", "50",
            "--out", str(out),
        )
        assert code == EXIT_OK
        big = tmp_path / "big.ply"
        run_cli(capsys, "synth", "--kind", "table", "--out", str(big))
        assert json.loads(
            out.with_suffix(".labels.json").read_text()
        )["metadata"]["params"]["density"] == 50.0
        assert len(load_ply(out)) < len(load_ply(big))

    def test_archetype_pair_trains(self, capsys, tmp_path):
        """A generated pair feeds straight back into train."""
        code, _, _ = run_cli(
            capsys, "synth", "--kind", "fill", "--out", str(tmp_path / "f.ply")
        )
        assert code == EXIT_OK
        code, stdout, _ = run_cli(
            capsys,
            "train",
            "--query", str(tmp_path / "f_query.ply"),
            "--scene", str(tmp_path / "f_scene.ply"),
            "--pose", str(tmp_path / "f_pose.json"),
            "--out", str(tmp_path / "f.json"),
        )
        assert code == EXIT_OK
        assert json.loads(stdout)["keypoints"] >= 1

    def test_unknown_kind_rejected_by_parser(self, capsys, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--kind", "mug", "--out", str(tmp_path / "x.ply")])
        assert exc.value.code == 2


class TestIbs:
    def test_midplane_dump(self, capsys, tmp_path):
        save_ply(PointCloud(np.array([[0.0, 0, 0]])), tmp_path / "a.ply")
        save_ply(PointCloud(np.array([[0.0, 0, 2.0]])), tmp_path / "b.ply")
        out = tmp_path / "ibs.ply"
        code, stdout, _ = run_cli(
            capsys,
            "ibs",
            "--query", str(tmp_path / "a.ply"),
            "--scene", str(tmp_path / "b.ply"),
            "--out", str(out),
        )
        assert code == EXIT_OK
        summary = json.loads(stdout)
        cloud = load_ply(out)
        assert summary["n_samples"] == len(cloud) > 0
        assert np.abs(cloud.points[:, 2] - 1.0).max() < 1e-6


class TestParsing:
    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["detect", "--scene", "s.ply", "--out", "r.json"])
        assert exc.value.code == 2

    def test_command_required(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2


class TestInstalledScript:
    def test_synth_smoke(self, tmp_path):
        out = tmp_path / "pair.ply"
        proc = subprocess.run(
            ["afford", "synth", "--kind", "place", "--out", str(out)],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        summary = json.loads(proc.stdout)
        assert summary["n_points"] > 0
        assert (tmp_path / "pair_query.ply").exists()
        assert (tmp_path / "pair_scene.ply").exists()
        assert (tmp_path / "pair_pose.json").exists()
