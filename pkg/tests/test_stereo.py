"""Pointmap rendering, stitching layout, constrained attention, pair sampling."""

import numpy as np
import pytest

from conftest import make_view, random_pose

from scenemem.errors import InputError
from scenemem.geometry import CameraPose, CameraView, Intrinsics, look_at_pose
from scenemem.memory import Cache3D
from scenemem.pointcloud import PointCloud
from scenemem.stereo import (
    AttentionWeights,
    FeatureGrid,
    make_pointmap,
    make_pointmap_pair,
    render_cache_hits,
    ssm_attention,
    ssm_attention_naive,
    ssm_pair_sampler,
    stitch,
)


def cache_of(points, voxel=0.05):
    return Cache3D(PointCloud(np.asarray(points, dtype=float)), voxel=voxel)


class TestPointmap:
    def test_single_axis_point_hits_principal_pixel(self):
        intr = Intrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
        view = CameraView(intr, CameraPose.identity())
        pm = make_pointmap(view, cache_of([[0.0, 0.0, 2.0]]))
        assert pm.valid_mask.sum() == 1
        assert pm.valid_mask[3, 3]

    def test_identical_views_give_identical_pointmaps(self, rng):
        view = make_view(16, 16, pose=random_pose(rng))
        cache = cache_of(rng.normal(size=(200, 3)))
        pm_t, pm_r = make_pointmap_pair(view, view, cache)
        np.testing.assert_array_equal(pm_t.rgb, pm_r.rgb)
        np.testing.assert_array_equal(pm_t.valid_mask, pm_r.valid_mask)

    def test_empty_cache_gives_all_invalid(self):
        view = make_view(8, 8)
        pm = make_pointmap(view, Cache3D.empty())
        assert not pm.valid_mask.any()
        assert (pm.rgb == 0).all()

    def test_cube_corners_share_colors_across_views(self):
        # Two cameras looking at a cube of 8 corner points: any pixel in
        # either view that observes corner c gets the same RGB (analytic cube
        # projection oracle via the stored world hit).
        corners = np.array(
            [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float
        )
        cache = cache_of(corners)
        intr = Intrinsics(30.0, 30.0, 16.0, 16.0, 32, 32)
        v1 = CameraView(intr, look_at_pose([0.0, 0.0, -6.0], [0, 0, 0], [0, 1, 0]))
        v2 = CameraView(intr, look_at_pose([4.0, 3.0, -5.0], [0, 0, 0], [0, 1, 0]))
        pm1, pm2 = make_pointmap_pair(v1, v2, cache)
        xyz1, valid1 = render_cache_hits(v1, cache)
        xyz2, valid2 = render_cache_hits(v2, cache)
        matched = 0
        for corner in corners:
            hit1 = valid1 & (np.abs(xyz1 - corner).sum(axis=-1) < 1e-12)
            hit2 = valid2 & (np.abs(xyz2 - corner).sum(axis=-1) < 1e-12)
            if hit1.any() and hit2.any():
                c1 = pm1.rgb[hit1][0]
                c2 = pm2.rgb[hit2][0]
                np.testing.assert_allclose(c1, c2, atol=1.0 / 255.0)
                matched += 1
        assert matched >= 4  # most corners visible in both views

    def test_zbuffer_keeps_nearest(self):
        intr = Intrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
        view = CameraView(intr, CameraPose.identity())
        cache = cache_of([[0.0, 0.0, 5.0], [0.0, 0.0, 2.0]])
        xyz, valid = render_cache_hits(view, cache)
        assert valid[3, 3]
        assert xyz[3, 3, 2] == 2.0

    def test_normalization_tightness(self, rng):
        # Channels span [0, 1] with min 0 and max 1 attained over the joint
        # valid set of the pair.
        view1 = make_view(24, 24, fx=20.0, pose=random_pose(rng))
        view2 = make_view(24, 24, fx=20.0, pose=random_pose(rng))
        pts = view1.pose.camera_to_world(
            np.column_stack(
                [rng.uniform(-1, 1, 400), rng.uniform(-1, 1, 400), rng.uniform(1, 4, 400)]
            )
        )
        pm1, pm2 = make_pointmap_pair(view1, view2, cache_of(pts))
        joint = np.vstack([pm1.rgb[pm1.valid_mask], pm2.rgb[pm2.valid_mask]])
        assert joint.size > 0
        assert joint.min() >= 0.0 and joint.max() <= 1.0
        np.testing.assert_allclose(joint.min(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(joint.max(axis=0), 1.0, atol=1e-12)


class TestStitch:
    def test_zero_reference_passthrough(self, rng):
        z_tar = FeatureGrid(rng.normal(size=(2, 3, 4, 5)), role="target")
        pm_tar = FeatureGrid(np.zeros((2, 3, 4, 5)), role="pointmap_target")
        pair = stitch(z_tar, None, pm_tar, None)
        np.testing.assert_array_equal(pair.ssm_input[:, :, :4, :], z_tar.data)
        np.testing.assert_array_equal(pair.ssm_input[:, :, 4:, :], 0.0)

    def test_cell_layout_with_distinct_constants(self):
        # H=2, W=3, C=1 grids of distinct constants: verify every cell of the
        # output with index arithmetic.
        shape = (1, 2, 3, 1)
        z_tar = FeatureGrid(np.full(shape, 1.0), role="target")
        z_ref = FeatureGrid(np.full(shape, 2.0), role="reference")
        pm_tar = FeatureGrid(np.full(shape, 4.0), role="pointmap_target")
        pm_ref = FeatureGrid(np.full(shape, 8.0), role="pointmap_reference")
        pair = stitch(z_tar, z_ref, pm_tar, pm_ref)
        assert pair.stitched.shape == (1, 2, 6, 1)
        for h in range(2):
            for w in range(6):
                expected_stitch = 1.0 if w < 3 else 2.0
                expected_pm = 4.0 if w < 3 else 8.0
                assert pair.stitched[0, h, w, 0] == expected_stitch
                assert pair.pointmap_latent[0, h, w, 0] == expected_pm
                assert pair.ssm_input[0, h, w, 0] == expected_stitch + expected_pm

    def test_output_width_doubles(self, rng):
        g = FeatureGrid(rng.normal(size=(2, 4, 7, 3)))
        pair = stitch(g, g, g, g)
        assert pair.stitched.shape[2] == 14

    def test_left_half_equals_target_exactly(self, rng):
        z_tar = FeatureGrid(rng.normal(size=(2, 4, 4, 3)))
        z_ref = FeatureGrid(rng.normal(size=(2, 4, 4, 3)), role="reference")
        pair = stitch(z_tar, z_ref, FeatureGrid(np.zeros((2, 4, 4, 3))), None)
        np.testing.assert_array_equal(pair.stitched[:, :, :4, :], z_tar.data)

    def test_dimension_mismatch_rejected(self, rng):
        a = FeatureGrid(rng.normal(size=(1, 2, 2, 2)))
        b = FeatureGrid(rng.normal(size=(1, 2, 3, 2)))
        with pytest.raises(InputError):
            stitch(a, b, a, a)

    def test_ssm_input_is_elementwise_sum(self, rng):
        z = FeatureGrid(rng.normal(size=(1, 2, 2, 2)))
        pm = FeatureGrid(rng.normal(size=(1, 2, 2, 2)), role="pointmap_target")
        pair = stitch(z, z, pm, pm)
        np.testing.assert_array_equal(
            pair.ssm_input, pair.stitched + pair.pointmap_latent
        )


def random_pair(rng, F=2, H=2, W=2, C=4):
    def grid(role):
        return FeatureGrid(rng.normal(size=(F, H, W, C)), role=role)

    return stitch(
        grid("target"), grid("reference"), grid("pointmap_target"), grid("pointmap_reference")
    )


class TestSSMAttention:
    def test_receptive_field_isolation_bit_identical(self, rng):
        weights = AttentionWeights.random(4, rng)
        pair1 = random_pair(rng)
        pair2 = random_pair(rng)
        base = ssm_attention([pair1, pair2], weights)
        perturbed_pair2 = random_pair(rng)  # totally different content
        out = ssm_attention([pair1, perturbed_pair2], weights)
        np.testing.assert_array_equal(base[0], out[0])  # pair 1 bit-identical

    def test_finite_difference_cross_pair_sensitivity_is_zero(self, rng):
        weights = AttentionWeights.random(4, rng)
        pair1 = random_pair(rng)
        pair2 = random_pair(rng)
        h = 1e-4
        bump = np.zeros_like(pair2.ssm_input)
        bump[0, 0, 0, 0] = h
        from scenemem.stereo import StitchedPair

        plus = StitchedPair(pair2.stitched, pair2.pointmap_latent, pair2.ssm_input + bump)
        minus = StitchedPair(pair2.stitched, pair2.pointmap_latent, pair2.ssm_input - bump)
        out_plus = ssm_attention([pair1, plus], weights)
        out_minus = ssm_attention([pair1, minus], weights)
        fd = (out_plus[0] - out_minus[0]) / (2 * h)
        assert np.abs(fd).max() < 1e-9

    def test_uniform_attention_averages_all_tokens(self, rng):
        # wq = 0 makes every score equal; with identity values each output
        # token is the mean over the frame's 2HW tokens.
        C = 3
        weights = AttentionWeights(np.zeros((C, C)), np.eye(C), np.eye(C))
        pair = random_pair(rng, F=2, H=2, W=3, C=C)
        out = ssm_attention([pair], weights)
        for f in range(2):
            expected = pair.ssm_input[f].reshape(-1, C).mean(axis=0)
            np.testing.assert_allclose(out[0, f], np.broadcast_to(expected, out[0, f].shape), atol=1e-12)

    def test_matches_naive_dense_oracle(self, rng):
        weights = AttentionWeights.random(4, rng)
        pairs = [random_pair(rng, F=2, H=2, W=2, C=4) for _ in range(3)]
        fast = ssm_attention(pairs, weights)
        slow = ssm_attention_naive(pairs, weights)
        np.testing.assert_allclose(fast, slow, atol=1e-6)

    @pytest.mark.parametrize("F,H,W,C", [(1, 2, 2, 2), (2, 4, 4, 8), (4, 8, 8, 16)])
    def test_oracle_agreement_across_shapes(self, rng, F, H, W, C):
        weights = AttentionWeights.random(C, rng)
        pairs = [random_pair(rng, F=F, H=H, W=W, C=C)]
        np.testing.assert_allclose(
            ssm_attention(pairs, weights), ssm_attention_naive(pairs, weights), atol=1e-6
        )

    def test_cross_half_attention_is_nondegenerate(self, rng):
        # Changing a reference-half token must change target-half outputs.
        weights = AttentionWeights.random(4, rng)
        pair = random_pair(rng)
        base = ssm_attention([pair], weights)
        bumped_input = pair.ssm_input.copy()
        bumped_input[0, 1, 3, 2] += 1.0  # w index 3 >= W=2: reference half
        from scenemem.stereo import StitchedPair

        bumped = StitchedPair(pair.stitched, pair.pointmap_latent, bumped_input)
        out = ssm_attention([bumped], weights)
        assert np.abs(out[0, 0] - base[0, 0]).max() > 1e-9

    def test_returns_target_half_shape(self, rng):
        pair = random_pair(rng, F=3, H=4, W=5, C=2)
        out = ssm_attention([pair], AttentionWeights.random(2, rng))
        assert out.shape == (1, 3, 4, 5, 2)


class TestPairSampler:
    def test_seeded_statistics(self):
        pairs = ssm_pair_sampler([(100, 100)] * 1000, rng_seed=99)
        assert len(pairs) == 1000
        omitted = [p for p in pairs if p.whole_reference_dropped]
        rate = len(omitted) / len(pairs)
        assert 0.08 <= rate <= 0.12
        # Per-frame drop rate among non-omitted pairs.
        kept = [p for p in pairs if not p.whole_reference_dropped]
        L = len(kept[0].target_frames)
        drops = [1.0 - len(p.reference_frames) / L for p in kept]
        assert 0.27 <= np.mean(drops) <= 0.33

    def test_overlap_fractions_in_range(self):
        pairs = ssm_pair_sampler([(40, 80)] * 500, rng_seed=3)
        for p in pairs:
            assert 0.30 <= p.overlap_fraction <= 0.90

    def test_windows_have_equal_length(self):
        for p in ssm_pair_sampler([(60, 60)] * 50, rng_seed=1):
            if not p.whole_reference_dropped:
                assert len(p.target_frames) >= 2

    def test_benchmark_mode_uses_40_percent_drop(self):
        pairs = ssm_pair_sampler([(100, 100)] * 2000, rng_seed=5, mode="benchmark")
        kept = [
            p
            for p in pairs
            if not p.whole_reference_dropped and len(p.reference_frames) < len(p.target_frames)
        ]
        L = len(pairs[0].target_frames)
        # Exclude the no-drop branch; remaining pairs drop at ~0.4.
        drops = [1.0 - len(p.reference_frames) / L for p in kept]
        assert 0.36 <= np.mean(drops) <= 0.44

    def test_too_short_clips_skipped(self):
        assert ssm_pair_sampler([(2, 2)], rng_seed=0) == []

    def test_references_are_shuffled_set(self):
        pairs = ssm_pair_sampler([(200, 200)] * 20, rng_seed=8)
        unordered = [
            p for p in pairs if list(p.reference_frames) != sorted(p.reference_frames)
        ]
        assert unordered  # at least one pair arrives out of temporal order

    def test_deterministic(self):
        a = ssm_pair_sampler([(50, 50)] * 10, rng_seed=4)
        b = ssm_pair_sampler([(50, 50)] * 10, rng_seed=4)
        assert a == b

    def test_bad_mode_rejected(self):
        with pytest.raises(InputError):
            ssm_pair_sampler([(10, 10)], rng_seed=0, mode="party")
