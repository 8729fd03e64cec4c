"""Command-line interface.

Artifacts flow through the formats the library defines: PLY point clouds,
PFM / raw-float32 depth maps, camera and transform JSON, PNG images, TOML
configs. Every subcommand exits 0 on success and nonzero with a
stage-tagged message on failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import io as smio
from .errors import SceneMemError, StageError
from .evaluation import cam_metrics, metrics_markdown, pcd_auc, pcd_sweep
from .geometry import pano_to_perspective
from .memory import load_bank_manifest
from .pointcloud import icp_scale_refine, umeyama
from .retrieval import (
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    Frustum,
    frustum_overlap,
    plan_retrieval,
    write_plan,
)
from .trajectory import TrajectorySpec, synthesize


@click.group()
def main():
    """Geometry-aware memory engine and reconstruction benchmark tools."""


def _fail(stage: str, exc: Exception) -> None:
    click.echo(f"error [{stage}] {exc}", err=True)
    sys.exit(1)


@main.command()
@click.option("--depth", "depth_path", required=True, type=click.Path(exists=True))
@click.option("--camera", "camera_path", required=True, type=click.Path(exists=True))
@click.option("--colors", "colors_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def backproject(depth_path, camera_path, colors_path, out_path):
    """Lift a depth map (PFM or raw float32 + sidecar) into a PLY point cloud."""
    from .geometry import backproject as op

    try:
        depth = smio.load_depth(depth_path)
        view = smio.read_cameras(camera_path)[0]
        colors = smio.read_png(colors_path) if colors_path else None
        cloud = op(depth, view, colors=colors)
        smio.write_ply(out_path, cloud)
        click.echo(json.dumps({"points": len(cloud)}))
    except SceneMemError as exc:
        _fail("backproject", exc)


@main.command()
@click.option("--source", "source_path", required=True, type=click.Path(exists=True))
@click.option("--target", "target_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["umeyama", "icp"]), default="umeyama")
@click.option("--with-scale/--no-scale", default=True)
@click.option("--init", "init_path", type=click.Path(exists=True))
@click.option("--max-iters", default=50)
@click.option("--tol", default=1e-9)
@click.option("--trim", default=0.0, help="ICP trimming fraction in [0, 1)")
@click.option("--out", "out_path", required=True, type=click.Path())
def align(source_path, target_path, mode, with_scale, init_path, max_iters, tol, trim, out_path):
    """Align two PLY clouds; umeyama expects index-aligned correspondences."""
    try:
        src = smio.read_ply(source_path)
        dst = smio.read_ply(target_path)
        if mode == "umeyama":
            transform = umeyama(src.positions, dst.positions, with_scale=with_scale)
            residual = None
            iterations = None
        else:
            init = smio.read_transform(init_path) if init_path else None
            result = icp_scale_refine(
                src, dst, init=init, max_iters=max_iters, tol=tol,
                with_scale=with_scale, trim_fraction=trim,
            )
            transform = result.transform
            residual = result.residuals[-1] if result.residuals else 0.0
            iterations = result.iterations
        smio.write_transform(out_path, transform)
        payload = {"scale": transform.scale}
        if residual is not None:
            payload["residual"] = residual
            payload["iterations"] = iterations
        click.echo(json.dumps(payload))
    except SceneMemError as exc:
        _fail("align", exc)


@main.command()
@click.option("--targets", "targets_path", required=True, type=click.Path(exists=True))
@click.option("--bank", "bank_path", required=True, type=click.Path(exists=True))
@click.option("--near", required=True, type=float)
@click.option("--far", required=True, type=float)
@click.option("--samples", default=DEFAULT_SAMPLES)
@click.option("--seed", default=DEFAULT_SEED)
@click.option("--out", "out_path", required=True, type=click.Path())
def retrieve(targets_path, bank_path, near, far, samples, seed, out_path):
    """Plan reference retrieval: targets cams.json vs a bank manifest."""
    try:
        targets = smio.read_cameras(targets_path)
        bank = load_bank_manifest(bank_path)
        plan = plan_retrieval(targets, bank, near, far, samples=samples, seed=seed)
        write_plan(out_path, plan)
        click.echo(json.dumps({"F": plan.F, "score": float(sum(plan.overlaps))}))
    except SceneMemError as exc:
        _fail("retrieve", exc)


@main.command()
@click.option("--camera-a", "cam_a", required=True, type=click.Path(exists=True))
@click.option("--camera-b", "cam_b", required=True, type=click.Path(exists=True))
@click.option("--near", required=True, type=float)
@click.option("--far", required=True, type=float)
@click.option("--samples", default=DEFAULT_SAMPLES)
@click.option("--seed", default=DEFAULT_SEED)
def overlap(cam_a, cam_b, near, far, samples, seed):
    """Volumetric frustum overlap vol(a^b)/vol(a) between two cameras."""
    try:
        a = smio.read_cameras(cam_a)[0]
        b = smio.read_cameras(cam_b)[0]
        value = frustum_overlap(
            Frustum(a, near, far), Frustum(b, near, far), samples=samples, seed=seed
        )
        click.echo(json.dumps({"overlap": value}))
    except SceneMemError as exc:
        _fail("overlap", exc)


@main.command()
@click.option("--kind", type=click.Choice(["up", "left", "right", "orbit"]), required=True)
@click.option("--frames", default=81)
@click.option("--median-depth", required=True, type=float)
@click.option("--start", "start_path", type=click.Path(exists=True),
              help="camera JSON for the start view; identity pose if omitted")
@click.option("--angle", type=float, help="override the default rotation angle")
@click.option("--angle-scale", default=1.0)
@click.option("--width", default=64)
@click.option("--height", default=48)
@click.option("--fov-h", default=70.0)
@click.option("--fov-v", default=55.0)
@click.option("--out", "out_path", required=True, type=click.Path())
def traj(kind, frames, median_depth, start_path, angle, angle_scale, width, height, fov_h, fov_v, out_path):
    """Synthesize a camera trajectory and write it as a camera JSON list."""
    from .geometry import CameraPose, CameraView, Intrinsics
    from .trajectory import DEFAULT_ANGLES_DEG

    try:
        if start_path:
            start = smio.read_cameras(start_path)[0]
        else:
            intr = Intrinsics.from_fov(fov_h, fov_v, width, height)
            start = CameraView(intr, CameraPose.identity())
        spec = TrajectorySpec(
            kind,
            angle if angle is not None else DEFAULT_ANGLES_DEG[kind],
            n_frames=frames,
            angle_scale=angle_scale,
        )
        views = synthesize(spec, start, median_depth)
        smio.write_cameras(out_path, views)
        click.echo(json.dumps({"kind": kind, "frames": len(views)}))
    except SceneMemError as exc:
        _fail("traj", exc)


@main.command("pano-split")
@click.option("--pano", "pano_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--fov-h", default=120.0)
@click.option("--fov-v", default=90.0)
@click.option("--width", default=160)
@click.option("--height", default=120)
def pano_split(pano_path, out_dir, fov_h, fov_v, width, height):
    """Split an equirectangular PNG into the default 27 perspective views."""
    try:
        pano = smio.read_png(pano_path)
        views = pano_to_perspective(
            pano, fov_v_deg=fov_v, fov_h_deg=fov_h, out_size=(width, height)
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cams = []
        for i, (image, view) in enumerate(views):
            smio.write_png(out / f"view_{i:04d}.png", image)
            cams.append(view)
        smio.write_cameras(out / "cams.json", cams)
        click.echo(json.dumps({"views": len(views)}))
    except SceneMemError as exc:
        _fail("pano-split", exc)


@main.command("eval-pcd")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--thresholds", required=True, help="comma-separated ascending distances")
@click.option("--out", "out_path", type=click.Path())
@click.option("--markdown", "markdown_path", type=click.Path())
def eval_pcd(pred_path, gt_path, thresholds, out_path, markdown_path):
    """Precision/recall/F1 at each threshold, plus AUC when >= 2 thresholds."""
    try:
        pred = smio.read_ply(pred_path)
        gt = smio.read_ply(gt_path)
        ts = [float(t) for t in thresholds.split(",") if t]
        sweep = pcd_sweep(pred, gt, ts)
        auc = pcd_auc(pred, gt, ts) if len(ts) >= 2 else None
        payload = {
            "per_threshold": [
                {"threshold": m.threshold, "precision": m.precision,
                 "recall": m.recall, "f1": m.f1}
                for m in sweep
            ],
        }
        if auc is not None:
            payload["auc"] = auc
        text = json.dumps(payload, indent=2)
        if out_path:
            Path(out_path).write_text(text + "\n")
        if markdown_path:
            Path(markdown_path).write_text(metrics_markdown(sweep, auc, None))
        click.echo(text)
    except SceneMemError as exc:
        _fail("eval-pcd", exc)


@main.command("eval-cam")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def eval_cam(pred_path, gt_path, out_path):
    """RotErr (degrees) / TransErr / ATE after similarity alignment."""
    try:
        pred = [v.pose for v in smio.read_cameras(pred_path)]
        gt = [v.pose for v in smio.read_cameras(gt_path)]
        m = cam_metrics(pred, gt)
        payload = {"rot_err_deg": m.rot_err_deg, "trans_err": m.trans_err, "ate": m.ate}
        text = json.dumps(payload, indent=2)
        if out_path:
            Path(out_path).write_text(text + "\n")
        click.echo(text)
    except SceneMemError as exc:
        _fail("eval-cam", exc)


@main.command("dmd-toy")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="dmd_out", type=click.Path())
def dmd_toy(config_path, out_dir):
    """Distill a 4-step generator against an analytic Gaussian target."""
    import torch

    from .dmd import (
        AffineGenerator,
        DiffusionSchedule,
        GaussianScore,
        GaussianScoreModel,
        TrainConfig,
        dmd_train,
    )

    try:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        doc = tomllib.loads(Path(config_path).read_text())
        train = doc.get("train", {})
        target = doc.get("target", {})
        config = TrainConfig(
            iters=int(train.get("iters", 2000)),
            batch=int(train.get("batch", 256)),
            fake_per_gen=int(train.get("fake_per_gen", 5)),
            lr_gen=float(train.get("lr_gen", 0.02)),
            lr_fake=float(train.get("lr_fake", 0.05)),
            seed=int(train.get("seed", 0)),
        )
        mean = target.get("mean", [3.0])
        std = target.get("std", [0.5])
        schedule = DiffusionSchedule()
        real = GaussianScore(mean, std, schedule)
        fake = GaussianScoreModel.from_real(real)
        gen = AffineGenerator(real.dim)
        log = dmd_train(gen, fake, real, schedule, config)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log.write_csv(out / "training_log.csv")
        z = torch.randn(
            100_000, real.dim, generator=torch.Generator().manual_seed(config.seed),
            dtype=torch.float64,
        )
        with torch.no_grad():
            samples = gen.sample(z)
        summary = {
            "sample_mean": [float(v) for v in samples.mean(dim=0)],
            "sample_std": [float(v) for v in samples.std(dim=0)],
            "gen_updates": log.gen_updates,
            "fake_updates": log.fake_updates,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        click.echo(json.dumps(summary))
    except SceneMemError as exc:
        _fail("dmd-toy", exc)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def pipeline(config_path):
    """Run the full generate -> cache -> retrieve -> evaluate loop."""
    from .pipeline import PipelineConfig, run_pipeline

    try:
        cfg = PipelineConfig.from_toml(config_path)
        report = run_pipeline(cfg)
        click.echo(json.dumps(report["metrics"]))
    except StageError as exc:
        _fail(exc.stage, exc)
    except SceneMemError as exc:
        _fail("pipeline", exc)


@main.command("pano-pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--pano", "pano_path", type=click.Path(exists=True),
              help="equirectangular PNG; scene-rendered if omitted")
@click.option("--pano-depth", "pano_depth_path", type=click.Path(exists=True),
              help="range PFM matching the panorama")
def pano_pipeline(config_path, pano_path, pano_depth_path):
    """Panorama-seeded pipeline: 27-view split + pano depth cache."""
    from .pipeline import PipelineConfig, run_panorama

    try:
        cfg = PipelineConfig.from_toml(config_path)
        pano_image = pano_range = None
        if pano_path:
            if not pano_depth_path:
                raise StageError("pano-setup", "panorama input requires --pano-depth")
            pano_image = smio.read_png(pano_path)
            pano_range = smio.read_pfm(pano_depth_path)
        report = run_panorama(cfg, pano_image=pano_image, pano_range=pano_range)
        click.echo(json.dumps(report["metrics"]))
    except StageError as exc:
        _fail(exc.stage, exc)
    except SceneMemError as exc:
        _fail("pano-pipeline", exc)


if __name__ == "__main__":
    main()
