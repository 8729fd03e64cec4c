"""CLI subcommand round trips via click's test runner."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import make_view, random_pose, random_rotation

from scenemem import io as smio
from scenemem.cli import main
from scenemem.memory import MemoryBank, bank_insert, save_bank_manifest
from scenemem.pointcloud import PointCloud


@pytest.fixture
def runner():
    return CliRunner()


def test_backproject_command(tmp_path, runner, rng):
    view = make_view(8, 8, pose=random_pose(rng))
    smio.write_pfm(tmp_path / "d.pfm", rng.uniform(1, 3, size=(8, 8)))
    smio.write_cameras(tmp_path / "cam.json", [view])
    result = runner.invoke(
        main,
        [
            "backproject",
            "--depth", str(tmp_path / "d.pfm"),
            "--camera", str(tmp_path / "cam.json"),
            "--out", str(tmp_path / "cloud.ply"),
        ],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["points"] == 64
    assert len(smio.read_ply(tmp_path / "cloud.ply")) == 64


def test_backproject_raw_grid_input(tmp_path, runner, rng):
    view = make_view(6, 4)
    smio.write_raw_grid(tmp_path / "d.raw", rng.uniform(1, 2, size=(4, 6)))
    smio.write_cameras(tmp_path / "cam.json", [view])
    result = runner.invoke(
        main,
        [
            "backproject",
            "--depth", str(tmp_path / "d.raw"),
            "--camera", str(tmp_path / "cam.json"),
            "--out", str(tmp_path / "cloud.ply"),
        ],
    )
    assert result.exit_code == 0, result.output


def test_align_umeyama_command(tmp_path, runner, rng):
    src = rng.normal(size=(50, 3))
    R = random_rotation(rng)
    dst = 1.5 * src @ R.T + np.array([1.0, 2.0, 3.0])
    smio.write_ply(tmp_path / "src.ply", PointCloud(src))
    smio.write_ply(tmp_path / "dst.ply", PointCloud(dst))
    result = runner.invoke(
        main,
        [
            "align",
            "--source", str(tmp_path / "src.ply"),
            "--target", str(tmp_path / "dst.ply"),
            "--out", str(tmp_path / "t.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    T = smio.read_transform(tmp_path / "t.json")
    assert T.scale == pytest.approx(1.5, abs=1e-9)


def test_align_icp_command(tmp_path, runner, rng):
    pts = rng.normal(size=(200, 3))
    pts = 2.0 * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    smio.write_ply(tmp_path / "src.ply", PointCloud(0.8 * pts))
    smio.write_ply(tmp_path / "dst.ply", PointCloud(pts))
    result = runner.invoke(
        main,
        [
            "align", "--mode", "icp",
            "--source", str(tmp_path / "src.ply"),
            "--target", str(tmp_path / "dst.ply"),
            "--out", str(tmp_path / "t.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["scale"] == pytest.approx(1.25, abs=1e-3)


def test_align_degenerate_fails_nonzero(tmp_path, runner):
    line = np.stack([np.linspace(0, 1, 5)] * 3, axis=-1)
    smio.write_ply(tmp_path / "a.ply", PointCloud(line))
    result = runner.invoke(
        main,
        [
            "align",
            "--source", str(tmp_path / "a.ply"),
            "--target", str(tmp_path / "a.ply"),
            "--out", str(tmp_path / "t.json"),
        ],
    )
    assert result.exit_code != 0
    assert "[align]" in result.output


def test_retrieve_command(tmp_path, runner, rng):
    views = [make_view(16, 12, fx=14.0, pose=random_pose(rng, trans_scale=1.0), frame_id=i) for i in range(8)]
    smio.write_cameras(tmp_path / "targets.json", views)
    bank = bank_insert(MemoryBank(downsample_stride=1), [(None, v) for v in views], "generated")
    save_bank_manifest(bank, tmp_path / "bank.json")
    result = runner.invoke(
        main,
        [
            "retrieve",
            "--targets", str(tmp_path / "targets.json"),
            "--bank", str(tmp_path / "bank.json"),
            "--near", "0.5", "--far", "3.0",
            "--out", str(tmp_path / "plan.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["F"] == 2
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert len(plan["pairs"]) == 2


def test_overlap_command(tmp_path, runner):
    view = make_view(16, 12, fx=14.0)
    smio.write_cameras(tmp_path / "a.json", [view])
    smio.write_cameras(tmp_path / "b.json", [view])
    result = runner.invoke(
        main,
        [
            "overlap",
            "--camera-a", str(tmp_path / "a.json"),
            "--camera-b", str(tmp_path / "b.json"),
            "--near", "0.5", "--far", "3.0",
        ],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["overlap"] == 1.0


def test_traj_command(tmp_path, runner):
    result = runner.invoke(
        main,
        [
            "traj", "--kind", "orbit", "--frames", "9",
            "--median-depth", "2.0",
            "--out", str(tmp_path / "cams.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    cams = smio.read_cameras(tmp_path / "cams.json")
    assert len(cams) == 9


def test_pano_split_command(tmp_path, runner, rng):
    smio.write_png(tmp_path / "pano.png", rng.random((64, 128, 3)))
    result = runner.invoke(
        main,
        [
            "pano-split",
            "--pano", str(tmp_path / "pano.png"),
            "--out-dir", str(tmp_path / "views"),
            "--width", "16", "--height", "12",
        ],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["views"] == 27
    assert len(smio.read_cameras(tmp_path / "views" / "cams.json")) == 27
    assert (tmp_path / "views" / "view_0000.png").exists()


def test_eval_pcd_command(tmp_path, runner, rng):
    cloud = PointCloud(rng.normal(size=(100, 3)))
    smio.write_ply(tmp_path / "pred.ply", cloud)
    smio.write_ply(tmp_path / "gt.ply", cloud)
    result = runner.invoke(
        main,
        [
            "eval-pcd",
            "--pred", str(tmp_path / "pred.ply"),
            "--gt", str(tmp_path / "gt.ply"),
            "--thresholds", "0.02,0.05,0.1",
            "--out", str(tmp_path / "m.json"),
            "--markdown", str(tmp_path / "m.md"),
        ],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["auc"] == pytest.approx(1.0)
    assert all(row["f1"] == 1.0 for row in payload["per_threshold"])
    assert (tmp_path / "m.md").read_text().startswith("| threshold")


def test_eval_cam_command(tmp_path, runner, rng):
    views = [make_view(8, 8, pose=random_pose(rng), frame_id=i) for i in range(10)]
    smio.write_cameras(tmp_path / "cams.json", views)
    result = runner.invoke(
        main,
        [
            "eval-cam",
            "--pred", str(tmp_path / "cams.json"),
            "--gt", str(tmp_path / "cams.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["rot_err_deg"] < 1e-9
    assert payload["ate"] < 1e-9


def test_dmd_toy_command(tmp_path, runner):
    (tmp_path / "dmd.toml").write_text(
        """
[train]
iters = 30
batch = 64
seed = 3

[target]
mean = [1.0]
std = [0.8]
"""
    )
    result = runner.invoke(
        main,
        [
            "dmd-toy",
            "--config", str(tmp_path / "dmd.toml"),
            "--out-dir", str(tmp_path / "dmd_out"),
        ],
    )
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "dmd_out" / "summary.json").read_text())
    assert summary["fake_updates"] == 5 * summary["gen_updates"]
    assert (tmp_path / "dmd_out" / "training_log.csv").exists()


def test_pipeline_command(tmp_path, runner):
    (tmp_path / "cfg.toml").write_text(
        f"""
[scene]
kind = "room"

[pipeline]
order = ["orbit", "up"]
n_frames = 9
frame_width = 48
frame_height = 36
voxel = 0.03
retrieval_samples = 2048

[output]
dir = "{tmp_path / 'out'}"
"""
    )
    result = runner.invoke(main, ["pipeline", "--config", str(tmp_path / "cfg.toml")])
    assert result.exit_code == 0, result.output
    metrics = json.loads(result.output)
    assert metrics["pcd"]["f1"] == 1.0
    assert (tmp_path / "out" / "report.json").exists()


def test_pipeline_command_fails_with_stage_tag(tmp_path, runner):
    (tmp_path / "bad.toml").write_text(
        f"""
[scene]
kind = "unknown_scene"

[output]
dir = "{tmp_path / 'out'}"
"""
    )
    result = runner.invoke(main, ["pipeline", "--config", str(tmp_path / "bad.toml")])
    assert result.exit_code != 0


def test_pano_pipeline_command(tmp_path, runner):
    (tmp_path / "cfg.toml").write_text(
        f"""
[scene]
kind = "room"

[pipeline]
order = ["orbit", "up"]
n_frames = 9
frame_width = 48
frame_height = 36
voxel = 0.03
retrieval_samples = 2048
pano_height = 64

[output]
dir = "{tmp_path / 'out'}"
"""
    )
    result = runner.invoke(main, ["pano-pipeline", "--config", str(tmp_path / "cfg.toml")])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["panorama"]["bank_panorama_entries"] == 27
