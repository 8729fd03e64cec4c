"""Generate the shared fixture corpus under fixtures/.

Inputs are seeded and small; expected outputs are computed by the core
library and frozen as JSON. The Python suite re-checks the core against the
corpus; the bindings' tests check parity through the CLI against the same
files.
"""

import json
from pathlib import Path

import numpy as np

from scenemem import io as smio
from scenemem.evaluation import cam_metrics, pcd_auc, pcd_sweep
from scenemem.geometry import CameraPose, CameraView, DepthMap, Intrinsics, backproject
from scenemem.memory import MemoryBank, bank_insert
from scenemem.pointcloud import PointCloud, icp_scale_refine, umeyama
from scenemem.retrieval import DEFAULT_SAMPLES, DEFAULT_SEED, Frustum, frustum_overlap, plan_retrieval
from scenemem.trajectory import TrajectorySpec, synthesize

OUT = Path(__file__).resolve().parent.parent / "fixtures"


def rotation_from_quaternion(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_view(rng, width=16, height=12, fx=14.0, fy=13.0, frame_id=0):
    R = rotation_from_quaternion(rng.normal(size=4))
    t = rng.normal(scale=1.5, size=3)
    intr = Intrinsics(fx, fy, width / 2.0, height / 2.0, width, height)
    return CameraView(intr, CameraPose(R, t), frame_id=frame_id)


def dump(name, payload):
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote fixtures/{name}.json")


def main():
    rng = np.random.default_rng(424242)

    # backproject: two posed 8x8 depth maps. Depth crosses the boundary as
    # PFM float32, so keep the fixture values exactly float32-representable.
    cases = []
    for i in range(2):
        view = random_view(rng, width=8, height=8, fx=7.0, fy=6.5, frame_id=i)
        values = rng.uniform(0.5, 4.0, size=(8, 8)).astype(np.float32).astype(np.float64)
        cloud = backproject(DepthMap.from_values(values), view)
        cases.append(
            {
                "camera": smio.camera_to_dict(view),
                "depth": {"values": values.tolist(), "width": 8, "height": 8},
                "expected_positions": cloud.positions.tolist(),
            }
        )
    dump("backproject", {"cases": cases})

    # umeyama: known similarity, plus a rigid-only case.
    src = rng.normal(size=(60, 3))
    R = rotation_from_quaternion(rng.normal(size=4))
    tgt = 1.8 * src @ R.T + np.array([0.4, -0.7, 1.1])
    T = umeyama(src, tgt, with_scale=True)
    T_rigid = umeyama(src, src @ R.T + 0.5, with_scale=False)
    dump(
        "umeyama",
        {
            "cases": [
                {
                    "source": src.tolist(),
                    "target": tgt.tolist(),
                    "with_scale": True,
                    "expected": smio.transform_to_dict(T),
                },
                {
                    "source": src.tolist(),
                    "target": (src @ R.T + 0.5).tolist(),
                    "with_scale": False,
                    "expected": smio.transform_to_dict(T_rigid),
                },
            ]
        },
    )

    # icp: sphere-shell scale perturbation.
    pts = rng.normal(size=(200, 3))
    pts = 2.0 * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    pred = 0.8 * pts
    result = icp_scale_refine(PointCloud(pred), PointCloud(pts), max_iters=50, tol=1e-9)
    dump(
        "icp",
        {
            "pred": pred.tolist(),
            "gt": pts.tolist(),
            "max_iters": 50,
            "tol": 1e-9,
            "expected": smio.transform_to_dict(result.transform),
            "expected_residual": result.residuals[-1],
            "expected_iterations": result.iterations,
        },
    )

    # frustum overlap: identical, shifted, disjoint.
    base = random_view(rng, frame_id=0)
    shifted = CameraView(
        base.intrinsics,
        CameraPose(base.pose.rotation, base.pose.translation + 0.6 * base.pose.forward),
        frame_id=1,
    )
    far_away = CameraView(
        base.intrinsics, CameraPose(base.pose.rotation, base.pose.translation + 50.0), frame_id=2
    )
    overlap_cases = []
    for a, b in ((base, base), (base, shifted), (base, far_away)):
        value = frustum_overlap(
            Frustum(a, 0.5, 3.0), Frustum(b, 0.5, 3.0),
            samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED,
        )
        overlap_cases.append(
            {
                "camera_a": smio.camera_to_dict(a),
                "camera_b": smio.camera_to_dict(b),
                "near": 0.5,
                "far": 3.0,
                "samples": DEFAULT_SAMPLES,
                "seed": DEFAULT_SEED,
                "expected": value,
            }
        )
    dump("overlap", {"cases": overlap_cases})

    # retrieval plan: 12 targets vs a 10-entry bank.
    targets = [random_view(rng, frame_id=i) for i in range(12)]
    bank_views = [random_view(rng, frame_id=i) for i in range(10)]
    bank = bank_insert(
        MemoryBank(downsample_stride=1), [(None, v) for v in bank_views], "generated"
    )
    plan = plan_retrieval(targets, bank, 0.5, 3.0, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED)
    dump(
        "retrieve",
        {
            "targets": [smio.camera_to_dict(v) for v in targets],
            "bank": {
                "downsample_stride": 1,
                "entries": [
                    {"tag": "generated", "frame_id": v.frame_id,
                     "camera": smio.camera_to_dict(v), "image_path": None}
                    for v in bank_views
                ],
            },
            "near": 0.5,
            "far": 3.0,
            "samples": DEFAULT_SAMPLES,
            "seed": DEFAULT_SEED,
            "expected": plan.to_dict(),
        },
    )

    # pcd metrics: 150-point clouds, three thresholds.
    pred_cloud = rng.normal(size=(150, 3))
    gt_cloud = rng.normal(size=(150, 3))
    thresholds = [0.1, 0.3, 0.8]
    sweep = pcd_sweep(PointCloud(pred_cloud), PointCloud(gt_cloud), thresholds)
    auc = pcd_auc(PointCloud(pred_cloud), PointCloud(gt_cloud), thresholds)
    dump(
        "pcd_metrics",
        {
            "pred": pred_cloud.tolist(),
            "gt": gt_cloud.tolist(),
            "thresholds": thresholds,
            "expected": {
                "per_threshold": [
                    {"threshold": m.threshold, "precision": m.precision,
                     "recall": m.recall, "f1": m.f1}
                    for m in sweep
                ],
                "auc": auc,
            },
        },
    )

    # camera metrics: perturbed trajectory.
    gt_views = [random_view(rng, frame_id=i) for i in range(15)]
    pred_views = []
    for v in gt_views:
        wobble = rotation_from_quaternion(np.array([1.0, *rng.normal(scale=0.01, size=3)]))
        pred_views.append(
            CameraView(
                v.intrinsics,
                CameraPose(wobble @ v.pose.rotation, v.pose.translation + rng.normal(scale=0.02, size=3)),
                frame_id=v.frame_id,
            )
        )
    m = cam_metrics([v.pose for v in pred_views], [v.pose for v in gt_views])
    dump(
        "cam_metrics",
        {
            "pred": [smio.camera_to_dict(v) for v in pred_views],
            "gt": [smio.camera_to_dict(v) for v in gt_views],
            "expected": {"rot_err_deg": m.rot_err_deg, "trans_err": m.trans_err, "ate": m.ate},
        },
    )

    # trajectory synthesis: one case per kind.
    start = CameraView(Intrinsics.from_fov(70.0, 55.0, 32, 24), CameraPose.identity())
    traj_cases = []
    for kind, frames in (("orbit", 9), ("up", 5), ("left", 5), ("right", 5)):
        views = synthesize(TrajectorySpec.default(kind, n_frames=frames), start, 2.0)
        traj_cases.append(
            {
                "kind": kind,
                "frames": frames,
                "median_depth": 2.0,
                "start": smio.camera_to_dict(start),
                "expected": [smio.camera_to_dict(v) for v in views],
            }
        )
    dump("trajectory", {"cases": traj_cases})


if __name__ == "__main__":
    main()
