"""Stereo memory at toy scale: pointmap rendering, target/reference
stitching, and per-pair constrained attention.

Each target-reference pair is stitched side by side (target left, reference
right) and attention runs over independent sequences of length H * 2W — one
per (batch, frame) — so a pair's output can never depend on another pair's
content. Only the target half is returned, which is what feeds back into the
main network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import CameraView, project
from .memory import Cache3D

GRID_ROLES = ("target", "reference", "pointmap_target", "pointmap_reference")


@dataclass(frozen=True)
class FeatureGrid:
    """F x H x W x C real feature tensor with a declared role."""

    data: np.ndarray
    role: str = "target"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise InputError(f"feature grid must be F x H x W x C, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("feature grid contains non-finite values")
        if self.role not in GRID_ROLES:
            raise InputError(f"unknown grid role {self.role!r}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @staticmethod
    def zeros_like(other: "FeatureGrid", role: str) -> "FeatureGrid":
        return FeatureGrid(np.zeros(other.shape), role=role)


@dataclass(frozen=True)
class StitchedPair:
    """Horizontally stitched features: target left half, reference right half."""

    stitched: np.ndarray  # F x H x 2W x C
    pointmap_latent: np.ndarray  # F x H x 2W x C
    ssm_input: np.ndarray  # elementwise sum of the two


def stitch(
    z_tar: FeatureGrid,
    z_ref: FeatureGrid | None,
    pm_tar: FeatureGrid,
    pm_ref: FeatureGrid | None,
) -> StitchedPair:
    """Stitch target and reference grids along width and add pointmap latents.

    Absent references (dropped-reference regime) are replaced by zero grids.
    All grids must share the F x H x W x C shape.
    """
    if z_ref is None:
        z_ref = FeatureGrid.zeros_like(z_tar, "reference")
    if pm_ref is None:
        pm_ref = FeatureGrid.zeros_like(pm_tar, "pointmap_reference")
    shape = z_tar.shape
    for grid in (z_ref, pm_tar, pm_ref):
        if grid.shape != shape:
            raise InputError(f"grid shape {grid.shape} does not match target {shape}")
    stitched = np.concatenate([z_tar.data, z_ref.data], axis=2)
    pointmap = np.concatenate([pm_tar.data, pm_ref.data], axis=2)
    return StitchedPair(stitched, pointmap, stitched + pointmap)


@dataclass(frozen=True)
class AttentionWeights:
    """Single-head projection matrices, each C x C."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise InputError(f"{name} must be square C x C, got {w.shape}")
            object.__setattr__(self, name, w)

    @staticmethod
    def random(channels: int, rng: np.random.Generator) -> "AttentionWeights":
        scale = 1.0 / np.sqrt(channels)
        return AttentionWeights(
            rng.normal(scale=scale, size=(channels, channels)),
            rng.normal(scale=scale, size=(channels, channels)),
            rng.normal(scale=scale, size=(channels, channels)),
        )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ssm_attention(
    pairs: list[StitchedPair], weights: AttentionWeights
) -> np.ndarray:
    """Constrained attention over stitched pairs; returns the target halves.

    Inputs are rearranged to [B*F, H*2W, C] and softmax attention runs
    within each sequence only, so each target-reference pair attends
    exclusively to its own tokens. Output shape: B x F x H x W x C (left
    halves only).
    """
    if not pairs:
        raise InputError("need at least one stitched pair")
    shape = pairs[0].ssm_input.shape
    for p in pairs:
        if p.ssm_input.shape != shape:
            raise InputError("all stitched pairs must share a shape")
    F, H, W2, C = shape
    batch = np.stack([p.ssm_input for p in pairs])  # B x F x H x 2W x C
    tokens = batch.reshape(len(pairs) * F, H * W2, C)  # [BF, H*2W, C]
    q = tokens @ weights.wq
    k = tokens @ weights.wk
    v = tokens @ weights.wv
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(C)
    out = _softmax(scores) @ v
    out = out.reshape(len(pairs), F, H, W2, C)
    return out[:, :, :, : W2 // 2, :]


def ssm_attention_naive(
    pairs: list[StitchedPair], weights: AttentionWeights
) -> np.ndarray:
    """O(L^2) per-pair reference implementation, one python loop per sequence."""
    outputs = []
    for pair in pairs:
        F, H, W2, C = pair.ssm_input.shape
        per_frame = []
        for f in range(F):
            seq = pair.ssm_input[f].reshape(H * W2, C)
            q = seq @ weights.wq
            k = seq @ weights.wk
            v = seq @ weights.wv
            L = seq.shape[0]
            out = np.zeros_like(seq)
            for i in range(L):
                scores = (q[i] @ k.T) / np.sqrt(C)
                scores -= scores.max()
                w = np.exp(scores)
                w /= w.sum()
                out[i] = w @ v
            per_frame.append(out.reshape(H, W2, C))
        outputs.append(np.stack(per_frame))
    stacked = np.stack(outputs)
    return stacked[:, :, :, : stacked.shape[3] // 2, :]


# --- pointmaps --------------------------------------------------------------------


@dataclass(frozen=True)
class PointMapImage:
    """RGB encoding of visible cache-point world coordinates.

    Channels are world x/y/z min-max normalized over the pair's joint valid
    points; misses are invalid and black.
    """

    rgb: np.ndarray  # H x W x 3 in [0, 1]
    valid_mask: np.ndarray  # H x W


def render_cache_hits(
    view: CameraView, cache: Cache3D
) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffer the cache into a view: per-pixel world xyz of the nearest point.

    Returns (xyz: H x W x 3, valid: H x W). One-pixel splats; empty cache
    yields an all-invalid buffer.
    """
    K = view.intrinsics
    xyz = np.zeros((K.height, K.width, 3))
    valid = np.zeros((K.height, K.width), dtype=bool)
    if cache.is_empty:
        return xyz, valid
    pts = cache.global_cloud.positions
    uv, z = project(pts, view)
    in_front = z > 0
    u = np.floor(uv[:, 0]).astype(np.int64)
    v = np.floor(uv[:, 1]).astype(np.int64)
    inside = in_front & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    if not inside.any():
        return xyz, valid
    u, v, z, pts = u[inside], v[inside], z[inside], pts[inside]
    flat = v * K.width + u
    # Nearest point per pixel: sort by (pixel, depth), keep the first of each run.
    order = np.lexsort((z, flat))
    flat_sorted = flat[order]
    first = np.ones(flat_sorted.size, dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = order[first]
    vv, uu = flat[winners] // K.width, flat[winners] % K.width
    xyz[vv, uu] = pts[winners]
    valid[vv, uu] = True
    return xyz, valid


def _normalize_xyz(
    xyz: np.ndarray, valid: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    span = hi - lo
    span = np.where(span > 1e-300, span, 1.0)
    rgb = (xyz - lo) / span
    rgb = np.clip(rgb, 0.0, 1.0)
    rgb[~valid] = 0.0
    return rgb


def make_pointmap_pair(
    target_view: CameraView, reference_view: CameraView, cache: Cache3D
) -> tuple[PointMapImage, PointMapImage]:
    """Pointmaps for a target-reference pair with joint min-max normalization.

    Joint normalization (over the union of both views' hit points) is what
    makes the maps a correspondence cue: pixels in either view that observe
    the same world point get the same color.
    """
    xyz_t, valid_t = render_cache_hits(target_view, cache)
    xyz_r, valid_r = render_cache_hits(reference_view, cache)
    joint = np.vstack([xyz_t[valid_t], xyz_r[valid_r]])
    if joint.shape[0] == 0:
        lo = np.zeros(3)
        hi = np.ones(3)
    else:
        lo = joint.min(axis=0)
        hi = joint.max(axis=0)
    return (
        PointMapImage(_normalize_xyz(xyz_t, valid_t, lo, hi), valid_t),
        PointMapImage(_normalize_xyz(xyz_r, valid_r, lo, hi), valid_r),
    )


def make_pointmap(view: CameraView, cache: Cache3D) -> PointMapImage:
    """Single-view pointmap (normalization over this view's own hits)."""
    xyz, valid = render_cache_hits(view, cache)
    hits = xyz[valid]
    if hits.shape[0] == 0:
        return PointMapImage(np.zeros_like(xyz), valid)
    lo, hi = hits.min(axis=0), hits.max(axis=0)
    return PointMapImage(_normalize_xyz(xyz, valid, lo, hi), valid)


# --- training pair sampling --------------------------------------------------------


@dataclass(frozen=True)
class ClipPair:
    """One emitted training pair: a target window and its reference set."""

    target_frames: tuple[int, ...]  # frame indices into the target clip
    reference_frames: tuple[int, ...]  # surviving, shuffled reference indices
    overlap_fraction: float
    whole_reference_dropped: bool


WHOLE_OMISSION_PROB = 0.10
PER_FRAME_DROP_TRAIN = 0.30
PER_FRAME_DROP_BENCHMARK = 0.40
OVERLAP_RANGE = (0.30, 0.90)


def ssm_pair_sampler(
    clip_pairs: list[tuple[int, int]],
    rng_seed: int,
    mode: str = "train",
) -> list[ClipPair]:
    """Emit reference/target window pairs with controlled temporal overlap.

    For each (n_frames_a, n_frames_b) clip pair, a target window over clip A
    and an equal-length reference window over clip B are chosen so their
    measured temporal overlap lands in [0.30, 0.90]. The whole reference set
    is omitted with probability 0.10; otherwise each reference frame is
    dropped independently (0.30 in ``train`` mode, 0.40 in ``benchmark``
    mode) and the survivors are shuffled into an unordered set. Pairs with
    no feasible overlap window are skipped.
    """
    if mode not in ("train", "benchmark"):
        raise InputError(f"unknown sampler mode {mode!r}")
    drop_prob = PER_FRAME_DROP_TRAIN if mode == "train" else PER_FRAME_DROP_BENCHMARK
    rng = np.random.default_rng(rng_seed)
    lo, hi = OVERLAP_RANGE
    out: list[ClipPair] = []
    for n_a, n_b in clip_pairs:
        total = min(n_a, n_b)
        # Both windows get the same length L; shifting the reference window by
        # k frames gives measured overlap (L - k) / L. The largest shift is
        # (1 - lo) * L, so L = total / (2 - lo) always fits in both clips.
        L = int(total / (2.0 - lo))
        k_min = int(np.ceil((1.0 - hi) * L))
        k_max = int(np.floor((1.0 - lo) * L))
        if L < 2 or k_min > k_max:
            continue  # no valid overlap window for this pair
        desired = rng.uniform(lo, hi)
        k = int(round((1.0 - desired) * L))
        k = min(max(k, k_min), k_max)
        target = tuple(range(L))
        reference_window = tuple(range(k, k + L))
        overlap = (L - k) / L
        branch = rng.random()
        if branch < WHOLE_OMISSION_PROB:
            out.append(ClipPair(target, (), overlap, True))
            continue
        if mode == "benchmark" and branch < 2 * WHOLE_OMISSION_PROB:
            keep = np.ones(len(reference_window), dtype=bool)  # 10%: drop nothing
        else:
            keep = rng.random(len(reference_window)) >= drop_prob
        survivors = np.array(reference_window)[keep]
        rng.shuffle(survivors)
        out.append(ClipPair(target, tuple(int(i) for i in survivors), overlap, False))
    return out
