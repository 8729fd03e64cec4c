"""2D memory bank, incremental 3D cache, and global-geometric condition assembly.

The bank stores temporally downsampled frames with poses; the cache holds the
globally merged point cloud. Both mutate by returning new values
(copy-on-update), so concurrent readers never observe partial state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io as smio
from .errors import AlignmentError, DegenerateInputError, DuplicateEntryError, InputError
from .geometry import CameraView, DepthMap, backproject
from .pointcloud import (
    PointCloud,
    SimilarityTransform,
    NNIndex,
    concatenate,
    merge,
    umeyama,
    voxel_downsample,
)

SOURCE_TAGS = ("initial", "panorama", "generated")
# Tags whose frames bypass the temporal stride.
ALWAYS_KEPT_TAGS = ("initial", "panorama")

DEFAULT_STRIDE = 8


@dataclass(frozen=True)
class BankEntry:
    view: CameraView
    source_tag: str
    image: np.ndarray | None = None
    image_path: str | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.source_tag, self.view.frame_id)


@dataclass(frozen=True)
class MemoryBank:
    entries: tuple[BankEntry, ...] = ()
    downsample_stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        if self.downsample_stride < 1:
            raise InputError(f"stride must be >= 1, got {self.downsample_stride}")
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise DuplicateEntryError("bank entries must be unique by (tag, frame_id)")

    def __len__(self) -> int:
        return len(self.entries)

    def views(self) -> list[CameraView]:
        return [e.view for e in self.entries]


def bank_insert(
    bank: MemoryBank,
    frames: list[tuple[np.ndarray | None, CameraView]],
    source_tag: str,
) -> MemoryBank:
    """Append every stride-th frame; initial/panorama frames bypass the stride.

    Args:
        bank: current bank (unmodified).
        frames: (image or None, posed view) pairs in temporal order.
        source_tag: one of ``initial``, ``panorama``, ``generated``.

    Raises:
        DuplicateEntryError: a (tag, frame_id) already present in the bank.
    """
    if source_tag not in SOURCE_TAGS:
        raise InputError(f"unknown source_tag {source_tag!r}, expected one of {SOURCE_TAGS}")
    if not frames:
        return bank
    if source_tag in ALWAYS_KEPT_TAGS:
        kept = list(frames)
    else:
        kept = frames[:: bank.downsample_stride]
    existing = {e.key for e in bank.entries}
    new_entries = []
    for image, view in kept:
        key = (source_tag, view.frame_id)
        if key in existing:
            raise DuplicateEntryError(f"duplicate bank entry {key}")
        existing.add(key)
        new_entries.append(BankEntry(view=view, source_tag=source_tag, image=image))
    return replace(bank, entries=bank.entries + tuple(new_entries))


@dataclass(frozen=True)
class Cache3D:
    """Incrementally merged global point cloud in a fixed reference frame."""

    global_cloud: PointCloud
    contributing_views: tuple[CameraView, ...] = ()
    generation: int = 0
    voxel: float = 0.01

    @staticmethod
    def empty(frame_label: str = "cache", voxel: float = 0.01) -> "Cache3D":
        return Cache3D(PointCloud.empty(frame_label), voxel=voxel)

    @property
    def is_empty(self) -> bool:
        return self.global_cloud.is_empty


def cache_update(
    cache: Cache3D,
    new_cloud: PointCloud,
    overlap_src: tuple[np.ndarray, np.ndarray] | None = None,
    views: tuple[CameraView, ...] = (),
) -> Cache3D:
    """Align ``new_cloud`` into the cache frame and merge it.

    ``overlap_src`` carries index-aligned point pairs (new-frame points,
    cache-frame points) from overlapping views; they feed the Umeyama
    alignment. The first update on an empty cache adopts the new cloud's
    frame directly.

    Raises:
        AlignmentError: fewer than 3 overlap pairs, or degenerate geometry;
            the cache is returned unchanged in spirit (the exception carries
            no partial state).
    """
    if cache.is_empty:
        downsampled = voxel_downsample(
            new_cloud.with_frame(cache.global_cloud.frame_label), cache.voxel
        )
        return Cache3D(
            downsampled,
            contributing_views=cache.contributing_views + tuple(views),
            generation=cache.generation + 1,
            voxel=cache.voxel,
        )
    if overlap_src is None:
        raise AlignmentError("non-empty cache requires overlap pairs for alignment")
    src, dst = overlap_src
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise AlignmentError(f"overlap pairs must be matching M x 3, got {src.shape}/{dst.shape}")
    if src.shape[0] < 3:
        raise AlignmentError(f"need >= 3 overlap pairs, got {src.shape[0]}")
    try:
        transform = umeyama(src, dst, with_scale=True)
    except DegenerateInputError as exc:
        raise AlignmentError(f"overlap alignment degenerate: {exc}") from exc
    merged = merge(cache.global_cloud, new_cloud, transform, voxel=cache.voxel)
    return Cache3D(
        merged,
        contributing_views=cache.contributing_views + tuple(views),
        generation=cache.generation + 1,
        voxel=cache.voxel,
    )


@dataclass(frozen=True)
class GGMCondition:
    """Reference points plus cache-derived auxiliary points, concatenated."""

    reference_points: PointCloud
    auxiliary_points: PointCloud
    combined: PointCloud


def assemble_ggm(
    reference: PointCloud,
    cache: Cache3D,
    align: SimilarityTransform | None = None,
) -> GGMCondition:
    """Build the combined condition cloud [reference; auxiliary].

    The cache cloud is mapped through ``align`` (cache frame -> reference
    frame), deduplicated against the reference (points within one merge-voxel
    radius of a reference point are dropped), and appended after the
    reference, which is always kept verbatim as a prefix.
    """
    transform = align or SimilarityTransform.identity()
    if cache.is_empty:
        empty = PointCloud.empty(reference.frame_label)
        return GGMCondition(reference, empty, reference)
    moved = transform.apply_cloud(cache.global_cloud, frame_label=reference.frame_label)
    if reference.is_empty:
        return GGMCondition(reference, moved, moved)
    index = NNIndex(reference.positions)
    dist = index.distances(moved.positions)
    keep = dist > cache.voxel
    auxiliary = PointCloud(
        moved.positions[keep],
        colors=None if moved.colors is None else moved.colors[keep],
        frame_label=reference.frame_label,
    )
    return GGMCondition(reference, auxiliary, concatenate(reference, auxiliary))


# --- training-time augmentation -------------------------------------------------


def random_pixel_drop(
    valid_mask: np.ndarray,
    drop_fraction: float,
    rng: np.random.Generator,
    count: int | None = None,
) -> np.ndarray:
    """Nullify an exact round(drop_fraction * n_valid) subset of valid pixels.

    ``count`` overrides the fraction-derived count when the caller needs to
    clamp it (rounding at a range boundary must not escape the range).
    """
    mask = np.asarray(valid_mask, dtype=bool)
    valid_idx = np.flatnonzero(mask)
    n_drop = count if count is not None else int(round(drop_fraction * valid_idx.size))
    if n_drop <= 0:
        return mask.copy()
    dropped = rng.choice(valid_idx, size=min(n_drop, valid_idx.size), replace=False)
    out = mask.copy().reshape(-1)
    out[dropped] = False
    return out.reshape(mask.shape)


def rectangle_occlusion(
    shape: tuple[int, int], area_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Boolean keep-mask with a uniformly placed rectangle of ~area_fraction zeroed.

    The rectangle height is drawn uniformly over the feasible integer range
    and the width derived from the target area, so the occluded count
    deviates from area_fraction * H * W only by rounding (at most height / 2
    pixels) and never leaves the [0.20, 0.70] occlusion band.
    """
    H, W = shape
    total = H * W
    target = area_fraction * total
    lo_frac, hi_frac = OCCLUSION_FRACTION_RANGE
    rh = int(rng.integers(max(1, math.ceil(target / W)), H + 1))
    rw = int(round(target / rh))
    rw = min(max(rw, 1), W)
    rw = min(max(rw, math.ceil(lo_frac * total / rh)), max(1, math.floor(hi_frac * total / rh)))
    rw = min(rw, W)
    top = rng.integers(0, H - rh + 1)
    left = rng.integers(0, W - rw + 1)
    keep = np.ones(shape, dtype=bool)
    keep[top : top + rh, left : left + rw] = False
    return keep


MASK_FRACTION_RANGE = (0.30, 0.70)
OCCLUSION_FRACTION_RANGE = (0.20, 0.70)
MAX_AUGMENT_FRAMES = 4


@dataclass(frozen=True)
class AugmentDraw:
    kind: str  # "random" or "rectangle"
    fraction: float
    keep_mask: np.ndarray


def sample_augmentation(
    valid_mask: np.ndarray, rng: np.random.Generator
) -> AugmentDraw:
    """Draw one augmentation uniformly: random pixel drop or rectangle occlusion."""
    if rng.random() < 0.5:
        p = rng.uniform(*MASK_FRACTION_RANGE)
        n_valid = int(np.asarray(valid_mask, bool).sum())
        lo, hi = MASK_FRACTION_RANGE
        count = int(round(p * n_valid))
        count = min(max(count, math.ceil(lo * n_valid)), math.floor(hi * n_valid))
        return AugmentDraw(
            "random", p, random_pixel_drop(valid_mask, p, rng, count=count)
        )
    a = rng.uniform(*OCCLUSION_FRACTION_RANGE)
    keep = rectangle_occlusion(valid_mask.shape, a, rng) & np.asarray(valid_mask, bool)
    return AugmentDraw("rectangle", a, keep)


def ggm_train_augment(
    aux_frames: list[tuple[DepthMap, CameraView]],
    rng_seed: int,
    frame_label: str = "world",
) -> PointCloud:
    """Masked back-projection of 1-4 auxiliary depth frames.

    Each frame gets exactly one augmentation, chosen uniformly: random
    masking that drops a fraction p ~ U(0.30, 0.70) of its valid pixels, or
    an axis-aligned rectangle occluding a fraction a ~ U(0.20, 0.70) of the
    map area. Surviving pixels are back-projected through the frame's pose
    into the shared reference frame. Deterministic for a fixed seed.
    """
    if not aux_frames:
        raise InputError("ggm_train_augment requires at least one auxiliary frame")
    if len(aux_frames) > MAX_AUGMENT_FRAMES:
        raise InputError(
            f"at most {MAX_AUGMENT_FRAMES} auxiliary frames supported, got {len(aux_frames)}"
        )
    rng = np.random.default_rng(rng_seed)
    clouds = []
    for depth, view in aux_frames:
        draw = sample_augmentation(depth.valid_mask, rng)
        masked = DepthMap(depth.values, depth.valid_mask & draw.keep_mask)
        clouds.append(backproject(masked, view, frame_label=frame_label))
    out = PointCloud.empty(frame_label)
    for cloud in clouds:
        out = concatenate(out, cloud)
    return out


# --- persistence ------------------------------------------------------------------


def save_cache(cache: Cache3D, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    smio.write_ply(directory / "cache.ply", cache.global_cloud)
    manifest = {
        "generation": cache.generation,
        "voxel": cache.voxel,
        "frame_label": cache.global_cloud.frame_label,
        "contributing_views": [smio.camera_to_dict(v) for v in cache.contributing_views],
    }
    (directory / "cache.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_cache(directory: str | Path) -> Cache3D:
    directory = Path(directory)
    manifest = json.loads((directory / "cache.json").read_text())
    cloud = smio.read_ply(directory / "cache.ply", frame_label=manifest["frame_label"])
    return Cache3D(
        cloud,
        contributing_views=tuple(
            smio.camera_from_dict(d) for d in manifest["contributing_views"]
        ),
        generation=manifest["generation"],
        voxel=manifest["voxel"],
    )


def save_bank_manifest(bank: MemoryBank, path: str | Path) -> None:
    doc = {
        "downsample_stride": bank.downsample_stride,
        "entries": [
            {
                "tag": e.source_tag,
                "frame_id": e.view.frame_id,
                "camera": smio.camera_to_dict(e.view),
                "image_path": e.image_path,
            }
            for e in bank.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_bank_manifest(path: str | Path) -> MemoryBank:
    doc = json.loads(Path(path).read_text())
    entries = tuple(
        BankEntry(
            view=smio.camera_from_dict(d["camera"]),
            source_tag=d["tag"],
            image_path=d.get("image_path"),
        )
        for d in doc["entries"]
    )
    return MemoryBank(entries=entries, downsample_stride=doc["downsample_stride"])
