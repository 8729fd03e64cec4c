"""End-to-end orchestration: generate -> cache -> retrieve -> evaluate.

The neural pieces live behind two ports. The generator port turns a
trajectory plus memory conditions into frames and depth maps (oracle: an
analytic scene ray-caster; replay: pre-generated files on disk). The
reconstructor port turns frames back into a point cloud and poses (oracle:
back-projection of the supplied depths; noisy-oracle: the same with
configurable depth/pose noise). Everything between the ports is the real
system under test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as smio
from .errors import InputError, StageError
from .evaluation import cam_metrics, metrics_markdown, pcd_auc, pcd_f1, pcd_sweep
from .geometry import (
    CameraPose,
    CameraView,
    DepthMap,
    Intrinsics,
    backproject,
    lonlat_to_direction,
    pano_to_perspective,
    rotation_about_axis,
)
from .memory import (
    Cache3D,
    GGMCondition,
    MemoryBank,
    assemble_ggm,
    bank_insert,
    cache_update,
    save_bank_manifest,
    save_cache,
)
from .pointcloud import (
    PointCloud,
    concatenate,
    icp_scale_refine,
    umeyama,
    voxel_downsample,
)
from .retrieval import (
    RetrievalPlan,
    default_near_far,
    plan_retrieval,
    uniform_target_indices,
    write_plan,
)
from .scene import SCENE_BUILDERS, SyntheticScene, build_scene
from .stereo import make_pointmap_pair, render_cache_hits
from .trajectory import TrajectorySpec, replace_view_id, synthesize

DEFAULT_ORDER_KINDS = ("orbit", "up", "right", "left")


# --- ports -----------------------------------------------------------------------


@dataclass
class GenerationRequest:
    start_image: np.ndarray
    start_view: CameraView
    trajectory: list[CameraView]
    ggm: GGMCondition
    plan: RetrievalPlan
    reference_images: dict[int, np.ndarray | None]
    pointmaps: dict[int, tuple]


@dataclass
class GenerationResult:
    frames: list[np.ndarray]
    depths: list[DepthMap]

    def __post_init__(self):
        if len(self.frames) != len(self.depths):
            raise InputError("generator must return one depth per frame")


class OracleGenerator:
    """Renders the analytic scene along the requested trajectory."""

    def __init__(self, scene: SyntheticScene):
        self.scene = scene

    def generate(self, request: GenerationRequest) -> GenerationResult:
        frames, depths = [], []
        for view in request.trajectory:
            rgb, depth = self.scene.render(view)
            frames.append(rgb)
            depths.append(depth)
        return GenerationResult(frames, depths)


class ReplayGenerator:
    """Reads frame_%04d.png / depth_%04d.pfm / cams.json from a directory.

    Files are addressed by index, so on-disk ordering cannot change the
    result.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not (self.directory / "cams.json").exists():
            raise InputError(f"replay directory {self.directory} missing cams.json")

    def generate(self, request: GenerationRequest) -> GenerationResult:
        frames, depths = [], []
        for i in range(len(request.trajectory)):
            frame_path = self.directory / f"frame_{i:04d}.png"
            depth_path = self.directory / f"depth_{i:04d}.pfm"
            if not frame_path.exists() or not depth_path.exists():
                raise InputError(f"replay bundle is missing frame {i}")
            frames.append(smio.read_png(frame_path))
            depths.append(DepthMap.from_values(smio.read_pfm(depth_path)))
        return GenerationResult(frames, depths)


def write_replay_bundle(
    directory: str | Path,
    frames: list[np.ndarray],
    depths: list[DepthMap],
    views: list[CameraView],
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, (frame, depth) in enumerate(zip(frames, depths)):
        smio.write_png(directory / f"frame_{i:04d}.png", frame)
        values = np.where(depth.valid_mask, depth.values, 0.0)
        smio.write_pfm(directory / f"depth_{i:04d}.pfm", values)
    smio.write_cameras(directory / "cams.json", views)


@dataclass
class ReconstructionResult:
    cloud: PointCloud
    poses: list[CameraPose]
    frame_points: list[tuple[np.ndarray, np.ndarray]]  # per frame: (H x W x 3, valid)

    @property
    def first_frame_points(self) -> np.ndarray:
        return self.frame_points[0][0]

    @property
    def first_frame_valid(self) -> np.ndarray:
        return self.frame_points[0][1]


class OracleReconstructor:
    """Back-projects the supplied depth maps through the supplied views."""

    def reconstruct(
        self,
        frames: list[np.ndarray],
        depths: list[DepthMap],
        views: list[CameraView],
    ) -> ReconstructionResult:
        clouds = []
        grids = []
        for frame, depth, view in zip(frames, depths, views):
            cloud = backproject(depth, view, colors=frame)
            clouds.append(cloud)
            K = view.intrinsics
            grid = np.zeros((K.height, K.width, 3))
            grid[depth.valid_mask] = cloud.positions
            grids.append((grid, depth.valid_mask.copy()))
        merged = PointCloud.empty()
        for cloud in clouds:
            merged = concatenate(merged, cloud)
        return ReconstructionResult(merged, [v.pose for v in views], grids)


class NoisyOracleReconstructor:
    """Oracle reconstruction with multiplicative depth noise and pose jitter.

    Noise draws come from one generator owned by the instance, so a fresh
    pipeline run with the same seed reproduces the same perturbations.
    """

    def __init__(
        self,
        depth_noise_frac: float = 0.01,
        pose_rot_noise_deg: float = 0.0,
        pose_trans_noise: float = 0.0,
        seed: int = 0,
    ):
        self.depth_noise_frac = depth_noise_frac
        self.pose_rot_noise_deg = pose_rot_noise_deg
        self.pose_trans_noise = pose_trans_noise
        self._rng = np.random.default_rng(seed)

    def _perturb_view(self, view: CameraView) -> CameraView:
        pose = view.pose
        if self.pose_rot_noise_deg > 0:
            axis = self._rng.normal(size=3)
            angle = math.radians(self._rng.normal(scale=self.pose_rot_noise_deg))
            pose = CameraPose(rotation_about_axis(axis, angle) @ pose.rotation, pose.translation)
        if self.pose_trans_noise > 0:
            pose = CameraPose(
                pose.rotation,
                pose.translation + self._rng.normal(scale=self.pose_trans_noise, size=3),
            )
        return CameraView(view.intrinsics, pose, frame_id=view.frame_id)

    def reconstruct(
        self,
        frames: list[np.ndarray],
        depths: list[DepthMap],
        views: list[CameraView],
    ) -> ReconstructionResult:
        noisy_views = [self._perturb_view(v) for v in views]
        noisy_depths = []
        for depth in depths:
            noise = self._rng.normal(scale=self.depth_noise_frac, size=depth.values.shape)
            noisy_depths.append(DepthMap(depth.values * (1.0 + noise), depth.valid_mask))
        return OracleReconstructor().reconstruct(frames, noisy_depths, noisy_views)


# --- configuration ------------------------------------------------------------------


@dataclass
class PipelineConfig:
    output_dir: Path
    scene_kind: str = "room"
    scene_seed: int = 0
    order_kinds: tuple[str, ...] = DEFAULT_ORDER_KINDS
    n_frames: int = 17
    frame_width: int = 64
    frame_height: int = 48
    fov_h_deg: float = 70.0
    fov_v_deg: float = 55.0
    bank_stride: int = 8
    voxel: float = 0.02
    retrieval_samples: int = 4096
    seed: int = 7
    angle_scale: float = 1.0
    generator: str = "oracle"
    reconstructor: str = "oracle"
    depth_noise_frac: float = 0.0
    pose_rot_noise_deg: float = 0.0
    pose_trans_noise: float = 0.0
    replay_dir: Path | None = None
    f1_threshold: float | None = None  # default: 2 x voxel
    eval_thresholds: tuple[float, ...] = ()  # default: voxel ladder
    pano_height: int = 96
    icp_max_points: int = 8000

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        if self.scene_kind not in SCENE_BUILDERS:
            raise InputError(f"unknown scene kind {self.scene_kind!r}")
        if self.generator not in ("oracle", "replay"):
            raise InputError(f"unknown generator {self.generator!r}")
        if self.reconstructor not in ("oracle", "noisy"):
            raise InputError(f"unknown reconstructor {self.reconstructor!r}")
        if self.generator == "replay":
            if self.replay_dir is None:
                raise InputError("replay generator requires replay_dir")
            self.replay_dir = Path(self.replay_dir)
            if not (self.replay_dir / "cams.json").exists():
                raise InputError(f"replay_dir {self.replay_dir} missing cams.json")
        if self.n_frames < 4:
            raise InputError("need at least 4 frames per trajectory for retrieval")

    @property
    def resolved_f1_threshold(self) -> float:
        return self.f1_threshold if self.f1_threshold is not None else 2.0 * self.voxel

    @property
    def resolved_eval_thresholds(self) -> tuple[float, ...]:
        if self.eval_thresholds:
            return self.eval_thresholds
        v = self.voxel
        return (0.5 * v, v, 2.0 * v, 4.0 * v, 8.0 * v)

    @staticmethod
    def from_toml(path: str | Path) -> "PipelineConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib

        doc = tomllib.loads(Path(path).read_text())
        scene = doc.get("scene", {})
        pipe = doc.get("pipeline", {})
        ports = doc.get("ports", {})
        ev = doc.get("eval", {})
        out = doc.get("output", {})
        if "dir" not in out:
            raise InputError("config must set [output] dir")
        return PipelineConfig(
            output_dir=Path(out["dir"]),
            scene_kind=scene.get("kind", "room"),
            scene_seed=int(scene.get("seed", 0)),
            order_kinds=tuple(pipe.get("order", list(DEFAULT_ORDER_KINDS))),
            n_frames=int(pipe.get("n_frames", 17)),
            frame_width=int(pipe.get("frame_width", 64)),
            frame_height=int(pipe.get("frame_height", 48)),
            fov_h_deg=float(pipe.get("fov_h_deg", 70.0)),
            fov_v_deg=float(pipe.get("fov_v_deg", 55.0)),
            bank_stride=int(pipe.get("bank_stride", 8)),
            voxel=float(pipe.get("voxel", 0.02)),
            retrieval_samples=int(pipe.get("retrieval_samples", 4096)),
            seed=int(pipe.get("seed", 7)),
            angle_scale=float(pipe.get("angle_scale", 1.0)),
            generator=ports.get("generator", "oracle"),
            reconstructor=ports.get("reconstructor", "oracle"),
            depth_noise_frac=float(ports.get("depth_noise_frac", 0.0)),
            pose_rot_noise_deg=float(ports.get("pose_rot_noise_deg", 0.0)),
            pose_trans_noise=float(ports.get("pose_trans_noise", 0.0)),
            replay_dir=ports.get("replay_dir"),
            f1_threshold=ev.get("f1_threshold"),
            eval_thresholds=tuple(ev.get("thresholds", ())),
            pano_height=int(pipe.get("pano_height", 96)),
        )


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    return value


def _write_report(path: Path, report: dict) -> None:
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")


# --- pipeline ------------------------------------------------------------------------


def _make_ports(cfg: PipelineConfig, scene: SyntheticScene):
    if cfg.generator == "oracle":
        generator = OracleGenerator(scene)
    else:
        generator = ReplayGenerator(cfg.replay_dir)
    if cfg.reconstructor == "oracle":
        reconstructor = OracleReconstructor()
    else:
        reconstructor = NoisyOracleReconstructor(
            depth_noise_frac=cfg.depth_noise_frac,
            pose_rot_noise_deg=cfg.pose_rot_noise_deg,
            pose_trans_noise=cfg.pose_trans_noise,
            seed=cfg.seed,
        )
    return generator, reconstructor


def _overlap_pairs(
    cache: Cache3D,
    recon: ReconstructionResult,
    views: list[CameraView],
    max_pairs: int = 4000,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Pixel-index correspondence between new frames and cache renders.

    Pairs are gathered at uniformly spaced frames of the new trajectory (a
    single start frame under-constrains the similarity on sparse scenes:
    rotation error then scales with the scene's lever arm). Pairs farther
    apart than two voxels are rejected: the z-buffer can hand a pixel a
    cache point from a different surface at occlusion boundaries, and such
    mismatches bias the Umeyama fit, while same-surface pairs differ only by
    merge quantization (under a voxel diagonal).
    """
    frame_ids = sorted(set(uniform_target_indices(len(views)))) if len(views) >= 4 else [0]
    src_parts, dst_parts = [], []
    for idx in frame_ids:
        cache_xyz, cache_valid = render_cache_hits(views[idx], cache)
        grid, valid = recon.frame_points[idx]
        both = cache_valid & valid
        if not both.any():
            continue
        src = grid[both]
        dst = cache_xyz[both]
        close = np.linalg.norm(src - dst, axis=1) <= 2.0 * cache.voxel
        src_parts.append(src[close])
        dst_parts.append(dst[close])
    if not src_parts:
        return None
    src = np.vstack(src_parts)
    dst = np.vstack(dst_parts)
    if src.shape[0] < 3:
        return None
    if src.shape[0] > max_pairs:
        step = src.shape[0] // max_pairs + 1
        src, dst = src[::step], dst[::step]
    return src, dst


@dataclass
class _RunState:
    scene: SyntheticScene
    start_view: CameraView
    start_image: np.ndarray
    reference_cloud: PointCloud
    median_depth: float
    bank: MemoryBank
    cache: Cache3D
    pred_poses: list = field(default_factory=list)
    gt_views: list = field(default_factory=list)
    traj_reports: list = field(default_factory=list)
    anchor_points: np.ndarray | None = None
    anchor_valid: np.ndarray | None = None
    next_frame_id: int = 0
    # Analytic geometry seeded into the cache outside the trajectory loop
    # (the panorama); it belongs to the evaluation ground truth as well.
    extra_gt_cloud: PointCloud | None = None


def _setup(cfg: PipelineConfig) -> _RunState:
    scene = build_scene(cfg.scene_kind, cfg.scene_seed)
    intr = Intrinsics.from_fov(cfg.fov_h_deg, cfg.fov_v_deg, cfg.frame_width, cfg.frame_height)
    start_view = CameraView(intr, CameraPose.identity(), frame_id=0)
    start_image, start_depth = scene.render(start_view)
    if start_depth.valid_count() == 0:
        raise InputError("start view sees no geometry")
    reference_cloud = backproject(start_depth, start_view, colors=start_image)
    bank = bank_insert(
        MemoryBank(downsample_stride=cfg.bank_stride),
        [(start_image, start_view)],
        "initial",
    )
    return _RunState(
        scene=scene,
        start_view=start_view,
        start_image=start_image,
        reference_cloud=reference_cloud,
        median_depth=scene.median_depth(start_view),
        bank=bank,
        cache=Cache3D.empty(voxel=cfg.voxel),
    )


def _run_trajectory(
    cfg: PipelineConfig,
    state: _RunState,
    kind: str,
    generator,
    reconstructor,
    traj_dir: Path,
) -> None:
    spec = TrajectorySpec.default(kind, n_frames=cfg.n_frames)
    if cfg.angle_scale != 1.0:
        spec = TrajectorySpec(
            kind, spec.angle_deg, n_frames=spec.n_frames, angle_scale=cfg.angle_scale
        )
    views = synthesize(spec, state.start_view, state.median_depth)
    views = [replace_view_id(v, state.next_frame_id + i) for i, v in enumerate(views)]
    state.next_frame_id += len(views)

    ggm = assemble_ggm(state.reference_cloud, state.cache)
    if state.cache.is_empty:
        near, far = 0.1 * state.median_depth, 3.0 * state.median_depth
    else:
        near, far = default_near_far(state.cache.global_cloud.positions, state.start_view)
    plan = plan_retrieval(
        views, state.bank, near, far, samples=cfg.retrieval_samples, seed=cfg.seed
    )

    reference_images: dict[int, np.ndarray | None] = {}
    pointmaps: dict[int, tuple] = {}
    for (target_idx, bank_idx), overlap in zip(plan.pairs, plan.overlaps):
        if bank_idx is None:
            reference_images[target_idx] = None
            continue
        entry = state.bank.entries[bank_idx]
        reference_images[target_idx] = entry.image
        if not state.cache.is_empty:
            pointmaps[target_idx] = make_pointmap_pair(
                views[target_idx], entry.view, state.cache
            )
    if pointmaps:
        first_key = sorted(pointmaps)[0]
        smio.write_png(traj_dir / "pointmap_target.png", pointmaps[first_key][0].rgb)
        smio.write_png(traj_dir / "pointmap_reference.png", pointmaps[first_key][1].rgb)

    request = GenerationRequest(
        start_image=state.start_image,
        start_view=state.start_view,
        trajectory=views,
        ggm=ggm,
        plan=plan,
        reference_images=reference_images,
        pointmaps=pointmaps,
    )
    result = generator.generate(request)
    if len(result.frames) != len(views):
        raise InputError(
            f"generator returned {len(result.frames)} frames for {len(views)} poses"
        )
    state.bank = bank_insert(state.bank, list(zip(result.frames, views)), "generated")

    recon = reconstructor.reconstruct(result.frames, result.depths, views)
    if state.cache.is_empty:
        state.cache = cache_update(state.cache, recon.cloud, None, views=tuple(views))
        state.anchor_points = recon.first_frame_points
        state.anchor_valid = recon.first_frame_valid
    else:
        pairs = _overlap_pairs(state.cache, recon, views)
        state.cache = cache_update(state.cache, recon.cloud, pairs, views=tuple(views))

    state.pred_poses.extend(recon.poses)
    state.gt_views.extend(views)

    write_plan(traj_dir / "plan.json", plan)
    smio.write_cameras(traj_dir / "cams.json", views)
    state.traj_reports.append(
        {
            "kind": kind,
            "n_frames": len(views),
            "overlap_score": float(sum(plan.overlaps)),
            "pairs_with_reference": sum(1 for _, b in plan.pairs if b is not None),
            "bank_size_after": len(state.bank),
            "cache_generation": state.cache.generation,
            "cache_points": len(state.cache.global_cloud),
        }
    )


def _evaluate(cfg: PipelineConfig, state: _RunState) -> dict:
    # Independent ground truth: ray-cast depth at every trajectory view,
    # plus any analytic geometry that seeded the cache (panorama surface).
    gt_all = PointCloud.empty("gt")
    for view in state.gt_views:
        _, depth = state.scene.render(view)
        gt_all = concatenate(gt_all, backproject(depth, view, frame_label="gt"))
    if state.extra_gt_cloud is not None:
        gt_all = concatenate(gt_all, state.extra_gt_cloud.with_frame("gt"))
    gt_cloud = voxel_downsample(gt_all, cfg.voxel)

    pred_cloud = state.cache.global_cloud

    # Anchor alignment on the first frame, then ICP scale refinement.
    _, anchor_depth = state.scene.render(state.gt_views[0])
    anchor_cloud_grid = np.zeros((cfg.frame_height, cfg.frame_width, 3))
    anchor_cloud_grid[anchor_depth.valid_mask] = backproject(
        anchor_depth, state.gt_views[0]
    ).positions
    both = anchor_depth.valid_mask & state.anchor_valid
    if both.sum() < 3:
        raise InputError("no anchor correspondence between prediction and ground truth")
    anchor_T = umeyama(state.anchor_points[both], anchor_cloud_grid[both], with_scale=True)

    pred_anchor = anchor_T.apply_cloud(pred_cloud, frame_label="gt")
    if len(pred_anchor) > cfg.icp_max_points:
        step = len(pred_anchor) // cfg.icp_max_points + 1
        icp_source = PointCloud(pred_anchor.positions[::step], frame_label="gt")
    else:
        icp_source = pred_anchor
    icp = icp_scale_refine(
        icp_source, gt_cloud, max_iters=30, tol=1e-10, trim_fraction=0.1
    )
    final_T = icp.transform.compose(anchor_T)
    pred_final = final_T.apply_cloud(pred_cloud, frame_label="gt")

    threshold = cfg.resolved_f1_threshold
    headline = pcd_f1(pred_final, gt_cloud, threshold)
    thresholds = sorted(set(cfg.resolved_eval_thresholds))
    sweep = pcd_sweep(pred_final, gt_cloud, thresholds)
    auc = pcd_auc(pred_final, gt_cloud, thresholds)
    cam = cam_metrics(state.pred_poses, [v.pose for v in state.gt_views])

    return {
        "alignment": {
            "anchor": smio.transform_to_dict(anchor_T),
            "icp": smio.transform_to_dict(icp.transform),
            "icp_iterations": icp.iterations,
            "icp_final_residual": icp.residuals[-1] if icp.residuals else 0.0,
        },
        "pred_cloud": pred_final,
        "gt_cloud": gt_cloud,
        "metrics": {
            "pcd": {
                "threshold": headline.threshold,
                "precision": headline.precision,
                "recall": headline.recall,
                "f1": headline.f1,
            },
            "sweep": [
                {
                    "threshold": m.threshold,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                }
                for m in sweep
            ],
            "auc": auc,
            "cam": {
                "rot_err_deg": cam.rot_err_deg,
                "trans_err": cam.trans_err,
                "ate": cam.ate,
            },
        },
        "sweep_objects": sweep,
        "cam_objects": cam,
    }


def run_pipeline(cfg: PipelineConfig, state: _RunState | None = None) -> dict:
    """Run trajectories in order, then align and score the merged cloud.

    Fails fast with a stage-tagged StageError; artifacts written before the
    failure stay on disk for debugging. Returns the report dict (also
    written to ``report.json``).
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    if state is None:
        try:
            state = _setup(cfg)
        except Exception as exc:
            raise StageError("setup", str(exc)) from exc

    generator, reconstructor = _make_ports(cfg, state.scene)

    for kind in cfg.order_kinds:
        traj_dir = out / f"traj_{kind}"
        traj_dir.mkdir(parents=True, exist_ok=True)
        try:
            _run_trajectory(cfg, state, kind, generator, reconstructor, traj_dir)
        except Exception as exc:
            raise StageError(f"trajectory-{kind}", str(exc)) from exc

    try:
        evaluation = _evaluate(cfg, state)
    except Exception as exc:
        raise StageError("evaluate", str(exc)) from exc

    try:
        save_cache(state.cache, out / "cache")
        save_bank_manifest(state.bank, out / "bank.json")
        smio.write_ply(out / "merged.ply", evaluation["pred_cloud"])
        smio.write_ply(out / "gt.ply", evaluation["gt_cloud"])
        (out / "metrics.md").write_text(
            metrics_markdown(
                evaluation["sweep_objects"],
                evaluation["metrics"]["auc"],
                evaluation["cam_objects"],
            )
        )
        report = {
            "config": {
                "scene_kind": cfg.scene_kind,
                "scene_seed": cfg.scene_seed,
                "order": list(cfg.order_kinds),
                "n_frames": cfg.n_frames,
                "voxel": cfg.voxel,
                "bank_stride": cfg.bank_stride,
                "seed": cfg.seed,
                "generator": cfg.generator,
                "reconstructor": cfg.reconstructor,
                "depth_noise_frac": cfg.depth_noise_frac,
            },
            "trajectories": state.traj_reports,
            "cache_generation": state.cache.generation,
            "bank_size": len(state.bank),
            "alignment": evaluation["alignment"],
            "metrics": evaluation["metrics"],
        }
        _write_report(out / "report.json", report)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("report", str(exc)) from exc
    return report


def run_panorama(
    cfg: PipelineConfig,
    pano_image: np.ndarray | None = None,
    pano_range: np.ndarray | None = None,
    pano_valid: np.ndarray | None = None,
) -> dict:
    """Panorama-seeded pipeline: split into 27 views, seed bank and cache
    from pano depth, then run the trajectory loop.

    When no panorama is supplied, the scene oracle renders one from the
    start position (range = distance along the unit ray). Passing an image
    without its depth is an error.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    try:
        state = _setup(cfg)
        if pano_image is None:
            pano_image, pano_range, pano_valid = state.scene.render_pano(
                state.start_view.pose.center, cfg.pano_height
            )
        if pano_range is None:
            raise InputError("panorama depth (range) is required")
        pano_image = np.asarray(pano_image, dtype=np.float64)
        if pano_image.shape[1] != 2 * pano_image.shape[0]:
            raise InputError("panorama must have width = 2 x height")
        if pano_valid is None:
            pano_valid = np.isfinite(pano_range) & (np.asarray(pano_range) > 0)
    except Exception as exc:
        raise StageError("pano-setup", str(exc)) from exc

    try:
        # Seed the cache from the pano depth: world point = center + range * dir.
        H, W = pano_range.shape
        pu = (np.arange(W) + 0.5) / W
        pv = (np.arange(H) + 0.5) / H
        lon = (pu - 0.5) * 2 * math.pi
        lat = (0.5 - pv) * math.pi
        lon_g, lat_g = np.meshgrid(lon, lat)
        dirs = lonlat_to_direction(lon_g, lat_g)
        points = (
            state.start_view.pose.center[None, :]
            + np.asarray(pano_range)[pano_valid][:, None] * dirs[pano_valid]
        )
        colors = pano_image[pano_valid] if pano_image.ndim == 3 else None
        pano_cloud = PointCloud(points, colors=colors, frame_label="cache")
        state.cache = cache_update(state.cache, pano_cloud)
        state.extra_gt_cloud = PointCloud(points, frame_label="gt")

        splits = pano_to_perspective(
            pano_image,
            out_size=(cfg.frame_width, cfg.frame_height),
            center=state.start_view.pose.center,
        )
        pano_frames = [
            (img, replace_view_id(view, i)) for i, (img, view) in enumerate(splits)
        ]
        state.bank = bank_insert(state.bank, pano_frames, "panorama")
        smio.write_png(out / "pano.png", pano_image)
        pano_entries = sum(1 for e in state.bank.entries if e.source_tag == "panorama")
        pano_cache_points = len(state.cache.global_cloud)
    except Exception as exc:
        raise StageError("pano-seed", str(exc)) from exc

    # The cache already holds the pano geometry, so the first trajectory
    # aligns to it rather than adopting a new frame; the evaluation anchor is
    # the start view's back-projected depth (same frame the oracle
    # reconstructor works in).
    report = run_pipeline(cfg, state=_pano_state_with_anchor(cfg, state))
    report["panorama"] = {
        "bank_panorama_entries": pano_entries,
        "pano_cache_points_initial": pano_cache_points,
    }
    _write_report(out / "report.json", report)
    return report


def _pano_state_with_anchor(cfg: PipelineConfig, state: _RunState) -> _RunState:
    # With a seeded cache the first trajectory reconstruction no longer
    # adopts the cache frame, so capture its first-frame grid as the anchor
    # by back-projecting the start view's reference depth (identical frame:
    # the oracle reconstructor works in world coordinates).
    _, start_depth = state.scene.render(state.start_view)
    grid = np.zeros((cfg.frame_height, cfg.frame_width, 3))
    grid[start_depth.valid_mask] = backproject(start_depth, state.start_view).positions
    state.anchor_points = grid
    state.anchor_valid = start_depth.valid_mask
    return state
