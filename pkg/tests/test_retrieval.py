"""Frustum overlap Monte Carlo vs analytic volumes; retrieval plan argmax."""

import numpy as np
import pytest

from conftest import random_rotation

from scenemem.errors import InputError
from scenemem.geometry import CameraPose, CameraView, Intrinsics
from scenemem.memory import MemoryBank, bank_insert
from scenemem.retrieval import (
    Frustum,
    RetrievalPlan,
    contains,
    default_near_far,
    frustum_overlap,
    plan_retrieval,
    read_plan,
    sample_frustum_points,
    trajectory_overlap_score,
    uniform_target_indices,
    write_plan,
)


def view_at(position, rotation=None, width=32, height=24, fx=24.0, fy=24.0, frame_id=0):
    pose = CameraPose(np.eye(3) if rotation is None else rotation, np.asarray(position, float))
    intr = Intrinsics(fx, fy, width / 2.0, height / 2.0, width, height)
    return CameraView(intr, pose, frame_id=frame_id)


def bank_from_views(views, stride=1):
    return bank_insert(
        MemoryBank(downsample_stride=stride), [(None, v) for v in views], "generated"
    )


class TestFrustumOverlap:
    def test_self_overlap_is_exactly_one(self):
        f = Frustum(view_at([0, 0, 0]), 0.5, 3.0)
        assert frustum_overlap(f, f) == 1.0

    def test_opposite_facing_is_zero(self):
        a = Frustum(view_at([0, 0, 0]), 0.5, 3.0)
        flip = np.diag([1.0, -1.0, -1.0])  # 180 deg about x: looks down -z
        b = Frustum(view_at([0, 0, 0], rotation=flip), 0.5, 3.0)
        assert frustum_overlap(a, b) == 0.0

    def test_axial_shift_matches_truncated_pyramid_volume(self):
        # b = a pushed half a frustum depth along the view axis. The
        # intersection is b's own pyramid truncated at a's far plane:
        # vol = ((f - s)^3 - n^3) / (f^3 - n^3) of a's volume.
        near, far = 0.5, 2.5
        shift = (far - near) / 2.0
        a = Frustum(view_at([0, 0, 0]), near, far)
        b = Frustum(view_at([0, 0, shift]), near, far)
        expected = ((far - shift) ** 3 - near**3) / (far**3 - near**3)
        got = frustum_overlap(a, b, samples=16384)
        assert got == pytest.approx(expected, abs=0.02)

    def test_symmetry_within_tolerance(self, rng):
        a = Frustum(view_at([0, 0, 0]), 0.5, 3.0)
        b = Frustum(
            view_at([0.4, 0.1, 0.2], rotation=np.eye(3)), 0.5, 3.0
        )
        ab = frustum_overlap(a, b)
        ba = frustum_overlap(b, a)
        assert abs(ab - ba) < 0.03  # same near/far and FoV: symmetric volume

    def test_deterministic_for_fixed_seed(self):
        a = Frustum(view_at([0, 0, 0]), 0.5, 3.0)
        b = Frustum(view_at([0.3, 0, 0.5]), 0.5, 3.0)
        assert frustum_overlap(a, b, seed=5) == frustum_overlap(a, b, seed=5)

    def test_rigid_invariance(self, rng):
        a = Frustum(view_at([0, 0, 0]), 0.5, 3.0)
        b = Frustum(view_at([0.5, 0.2, 0.8]), 0.5, 3.0)
        base = frustum_overlap(a, b)
        R = random_rotation(rng)
        t = rng.normal(size=3)

        def moved(f):
            pose = CameraPose(R @ f.view.pose.rotation, R @ f.view.pose.translation + t)
            return Frustum(CameraView(f.view.intrinsics, pose), f.near, f.far)

        assert frustum_overlap(moved(a), moved(b)) == pytest.approx(base, abs=1e-12)

    def test_degenerate_frustum_rejected(self):
        with pytest.raises(InputError):
            Frustum(view_at([0, 0, 0]), 2.0, 1.0)
        with pytest.raises(InputError):
            frustum_overlap(
                Frustum(view_at([0, 0, 0]), 0.5, 3.0),
                Frustum(view_at([0, 0, 0]), 0.5, 3.0),
                samples=100,
            )

    def test_samples_lie_inside_own_frustum(self, rng):
        f = Frustum(view_at([1.0, -2.0, 0.5], rotation=random_rotation(rng)), 0.3, 4.0)
        pts = sample_frustum_points(f, 4096, seed=11)
        assert contains(f, pts).all()


class TestPlanRetrieval:
    def test_f_is_floor_n_over_4(self):
        assert len(uniform_target_indices(80)) == 20
        for n in range(4, 201):
            idx = uniform_target_indices(n)
            assert len(idx) == n // 4
            assert all(b > a for a, b in zip(idx, idx[1:]))
            steps = np.diff(idx)
            assert steps.size == 0 or (steps == steps[0]).all()

    def test_small_n_rejected(self):
        with pytest.raises(InputError):
            uniform_target_indices(3)

    def test_exact_copies_selected_with_full_overlap(self, rng):
        # Bank holds a copy of each target at well-separated positions: each
        # pair must pick its own copy at overlap exactly 1.
        targets = [
            view_at([6.0 * i, 0, 0], rotation=random_rotation(rng), frame_id=i)
            for i in range(8)
        ]
        bank = bank_from_views(targets)
        plan = plan_retrieval(targets, bank, near=0.5, far=2.0)
        assert plan.F == 2
        for (t_idx, b_idx), overlap in zip(plan.pairs, plan.overlaps):
            assert b_idx == t_idx
            assert overlap == 1.0

    def test_empty_bank_yields_none_pairs(self):
        targets = [view_at([i, 0, 0], frame_id=i) for i in range(8)]
        plan = plan_retrieval(targets, MemoryBank(), near=0.5, far=2.0)
        assert all(b is None for _, b in plan.pairs)
        assert all(o == 0.0 for o in plan.overlaps)

    def test_matches_exhaustive_argmax_oracle(self, rng):
        # Brute force: recompute every (target, entry) overlap independently
        # with the per-target seed and take the argmax.
        from scenemem.retrieval import DEFAULT_SAMPLES, DEFAULT_SEED

        targets = [
            view_at(rng.normal(scale=2.0, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(12)
        ]
        bank_views = [
            view_at(rng.normal(scale=2.0, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(24)
        ]
        bank = bank_from_views(bank_views)
        near, far = 0.5, 4.0
        plan = plan_retrieval(targets, bank, near, far)
        for (t_idx, b_idx), overlap in zip(plan.pairs, plan.overlaps):
            scores = [
                frustum_overlap(
                    Frustum(targets[t_idx], near, far),
                    Frustum(v, near, far),
                    samples=DEFAULT_SAMPLES,
                    seed=DEFAULT_SEED + t_idx,
                )
                for v in bank_views
            ]
            best = int(np.argmax(scores))
            if max(scores) < 0.05:
                assert b_idx is None
            else:
                assert b_idx == best
                assert overlap == pytest.approx(scores[best], abs=1e-12)

    def test_floor_threshold_drops_reference(self):
        targets = [view_at([0, 0, 100.0 * (i + 1)], frame_id=i) for i in range(4)]
        bank = bank_from_views([view_at([0, 0, -500.0])])
        plan = plan_retrieval(targets, bank, near=0.5, far=2.0)
        assert all(b is None for _, b in plan.pairs)

    def test_rigid_invariance_of_plan(self, rng):
        targets = [
            view_at(rng.normal(scale=1.5, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(8)
        ]
        bank_views = [
            view_at(rng.normal(scale=1.5, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(10)
        ]
        plan = plan_retrieval(targets, bank_from_views(bank_views), 0.5, 3.0)
        R = random_rotation(rng)
        t = rng.normal(size=3)

        def move(v):
            return CameraView(
                v.intrinsics,
                CameraPose(R @ v.pose.rotation, R @ v.pose.translation + t),
                frame_id=v.frame_id,
            )

        moved_plan = plan_retrieval(
            [move(v) for v in targets], bank_from_views([move(v) for v in bank_views]), 0.5, 3.0
        )
        assert moved_plan.pairs == plan.pairs
        np.testing.assert_allclose(moved_plan.overlaps, plan.overlaps, atol=1e-12)

    def test_bank_growth_never_decreases_selected_overlap(self, rng):
        targets = [
            view_at(rng.normal(scale=1.0, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(8)
        ]
        small_views = [
            view_at(rng.normal(scale=1.0, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(5)
        ]
        extra_views = [
            view_at(rng.normal(scale=1.0, size=3), rotation=random_rotation(rng), frame_id=5 + i)
            for i in range(5)
        ]
        small = plan_retrieval(targets, bank_from_views(small_views), 0.5, 3.0)
        big = plan_retrieval(targets, bank_from_views(small_views + extra_views), 0.5, 3.0)
        for s, b in zip(small.overlaps, big.overlaps):
            assert b >= s


class TestTrajectoryScore:
    def test_empty_bank_scores_zero(self):
        traj = [view_at([i, 0, 0], frame_id=i) for i in range(8)]
        assert trajectory_overlap_score(traj, MemoryBank(), 0.5, 2.0) == 0.0

    def test_bank_equal_to_trajectory_scores_f(self):
        traj = [view_at([8.0 * i, 0, 0], frame_id=i) for i in range(8)]
        bank = bank_from_views(traj)
        score = trajectory_overlap_score(traj, bank, 0.5, 2.0)
        assert score == pytest.approx(2.0)  # F = 2 pairs, each overlap 1.0

    def test_superset_bank_scores_at_least_as_much(self, rng):
        traj = [
            view_at(rng.normal(scale=1.0, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(8)
        ]
        pano_views = [
            view_at(rng.normal(scale=1.0, size=3), rotation=random_rotation(rng), frame_id=i)
            for i in range(6)
        ]
        richer_views = pano_views + [
            view_at(rng.normal(scale=1.0, size=3), rotation=random_rotation(rng), frame_id=6 + i)
            for i in range(6)
        ]
        s_small = trajectory_overlap_score(traj, bank_from_views(pano_views), 0.5, 3.0)
        s_big = trajectory_overlap_score(traj, bank_from_views(richer_views), 0.5, 3.0)
        assert s_big >= s_small

    def test_empty_trajectory_rejected(self):
        with pytest.raises(InputError):
            trajectory_overlap_score([], MemoryBank(), 0.5, 2.0)


def test_plan_json_roundtrip(tmp_path):
    plan = RetrievalPlan(((0, 2), (4, None)), (0.75, 0.0), 2)
    write_plan(tmp_path / "plan.json", plan)
    back = read_plan(tmp_path / "plan.json")
    assert back == plan


def test_default_near_far_tracks_median_depth(rng):
    view = view_at([0, 0, 0])
    pts = np.zeros((100, 3))
    pts[:, 2] = rng.uniform(1.0, 3.0, size=100)
    near, far = default_near_far(pts, view)
    median = np.median(pts[:, 2])
    assert near == pytest.approx(0.1 * median)
    assert far == pytest.approx(3.0 * median)
