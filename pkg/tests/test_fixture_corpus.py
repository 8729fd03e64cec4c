"""Pin the core against the shared fixture corpus in fixtures/.

The bindings' parity tests consume the same files through the CLI; this
module guarantees the corpus stays in sync with the library.
"""

import json
from pathlib import Path

import numpy as np

from scenemem import io as smio
from scenemem.evaluation import cam_metrics, pcd_auc, pcd_sweep
from scenemem.geometry import DepthMap, backproject
from scenemem.memory import BankEntry, MemoryBank
from scenemem.pointcloud import PointCloud, icp_scale_refine, umeyama
from scenemem.retrieval import Frustum, frustum_overlap, plan_retrieval
from scenemem.trajectory import TrajectorySpec, synthesize

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load(name):
    return json.loads((FIXTURES / f"{name}.json").read_text())


def test_backproject_corpus():
    doc = load("backproject")
    for case in doc["cases"]:
        view = smio.camera_from_dict(case["camera"])
        depth = DepthMap.from_values(np.asarray(case["depth"]["values"]))
        cloud = backproject(depth, view)
        np.testing.assert_array_equal(cloud.positions, np.asarray(case["expected_positions"]))


def test_umeyama_corpus():
    doc = load("umeyama")
    for case in doc["cases"]:
        T = umeyama(
            np.asarray(case["source"]), np.asarray(case["target"]),
            with_scale=case["with_scale"],
        )
        expected = smio.transform_from_dict(case["expected"])
        assert T.scale == expected.scale
        np.testing.assert_array_equal(T.rotation, expected.rotation)
        np.testing.assert_array_equal(T.translation, expected.translation)


def test_icp_corpus():
    doc = load("icp")
    result = icp_scale_refine(
        PointCloud(np.asarray(doc["pred"])),
        PointCloud(np.asarray(doc["gt"])),
        max_iters=doc["max_iters"],
        tol=doc["tol"],
    )
    expected = smio.transform_from_dict(doc["expected"])
    assert result.transform.scale == expected.scale
    np.testing.assert_array_equal(result.transform.rotation, expected.rotation)
    assert result.iterations == doc["expected_iterations"]


def test_overlap_corpus():
    doc = load("overlap")
    for case in doc["cases"]:
        value = frustum_overlap(
            Frustum(smio.camera_from_dict(case["camera_a"]), case["near"], case["far"]),
            Frustum(smio.camera_from_dict(case["camera_b"]), case["near"], case["far"]),
            samples=case["samples"],
            seed=case["seed"],
        )
        assert value == case["expected"]


def test_retrieve_corpus():
    doc = load("retrieve")
    targets = [smio.camera_from_dict(d) for d in doc["targets"]]
    entries = tuple(
        BankEntry(view=smio.camera_from_dict(e["camera"]), source_tag=e["tag"])
        for e in doc["bank"]["entries"]
    )
    bank = MemoryBank(entries=entries, downsample_stride=doc["bank"]["downsample_stride"])
    plan = plan_retrieval(
        targets, bank, doc["near"], doc["far"], samples=doc["samples"], seed=doc["seed"]
    )
    assert plan.to_dict() == doc["expected"]


def test_pcd_metrics_corpus():
    doc = load("pcd_metrics")
    pred = PointCloud(np.asarray(doc["pred"]))
    gt = PointCloud(np.asarray(doc["gt"]))
    sweep = pcd_sweep(pred, gt, doc["thresholds"])
    for m, expected in zip(sweep, doc["expected"]["per_threshold"]):
        assert m.precision == expected["precision"]
        assert m.recall == expected["recall"]
        assert m.f1 == expected["f1"]
    assert pcd_auc(pred, gt, doc["thresholds"]) == doc["expected"]["auc"]


def test_cam_metrics_corpus():
    doc = load("cam_metrics")
    pred = [smio.camera_from_dict(d).pose for d in doc["pred"]]
    gt = [smio.camera_from_dict(d).pose for d in doc["gt"]]
    m = cam_metrics(pred, gt)
    assert m.rot_err_deg == doc["expected"]["rot_err_deg"]
    assert m.trans_err == doc["expected"]["trans_err"]
    assert m.ate == doc["expected"]["ate"]


def test_trajectory_corpus():
    doc = load("trajectory")
    for case in doc["cases"]:
        start = smio.camera_from_dict(case["start"])
        views = synthesize(
            TrajectorySpec.default(case["kind"], n_frames=case["frames"]),
            start,
            case["median_depth"],
        )
        assert len(views) == len(case["expected"])
        for v, expected in zip(views, case["expected"]):
            back = smio.camera_from_dict(expected)
            np.testing.assert_array_equal(v.pose.rotation, back.pose.rotation)
            np.testing.assert_array_equal(v.pose.translation, back.pose.translation)
