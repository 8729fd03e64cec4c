"""Reference-view retrieval by volumetric frustum overlap.

Overlap is estimated by Monte Carlo: points are sampled uniformly inside the
target frustum (in its camera frame, so the estimate is exactly invariant
under global rigid motions of the scene) and tested for containment in the
candidate frustum. The score is vol(a intersect b) / vol(a): the fraction of
the target view volume the candidate explains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import CameraView
from .memory import MemoryBank

DEFAULT_SAMPLES = 8192
DEFAULT_SEED = 20_177
# Below this overlap no reference is attached (dropped-reference regime).
OVERLAP_FLOOR = 0.05


@dataclass(frozen=True)
class Frustum:
    view: CameraView
    near: float
    far: float

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise InputError(f"need 0 < near < far, got near={self.near} far={self.far}")


def sample_frustum_points(frustum: Frustum, samples: int, seed: int) -> np.ndarray:
    """Uniform-in-volume samples inside a frustum, stratified along depth.

    Pixel coordinates are drawn uniformly over the image rectangle and depth
    via the inverse CDF of the z^2 volume density, with one jittered stratum
    per sample, which gives points uniform in the frustum volume.
    """
    if samples < 1:
        raise InputError("need at least one sample")
    rng = np.random.default_rng(seed)
    K = frustum.view.intrinsics
    strata = (np.arange(samples) + rng.random(samples)) / samples
    n3, f3 = frustum.near**3, frustum.far**3
    z = np.cbrt(n3 + strata * (f3 - n3))
    u = rng.uniform(0.0, K.width, samples)
    v = rng.uniform(0.0, K.height, samples)
    x = (u - K.cx) / K.fx * z
    y = (v - K.cy) / K.fy * z
    cam_pts = np.stack([x, y, z], axis=-1)
    return frustum.view.pose.camera_to_world(cam_pts)


def contains(frustum: Frustum, points: np.ndarray) -> np.ndarray:
    """Boolean mask of world points lying inside the frustum."""
    cam = frustum.view.pose.world_to_camera(points)
    z = cam[:, 2]
    K = frustum.view.intrinsics
    inside = (z >= frustum.near) & (z <= frustum.far)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    inside &= (u >= 0) & (u <= K.width) & (v >= 0) & (v <= K.height)
    return inside


def frustum_overlap(
    a: Frustum,
    b: Frustum,
    samples: int = DEFAULT_SAMPLES,
    seed: int = DEFAULT_SEED,
) -> float:
    """Monte-Carlo estimate of vol(a intersect b) / vol(a) in [0, 1]."""
    if samples < 1000:
        raise InputError(f"need >= 1000 samples for a stable estimate, got {samples}")
    pts = sample_frustum_points(a, samples, seed)
    return float(contains(b, pts).mean())


@dataclass(frozen=True)
class RetrievalPlan:
    """F = floor(N/4) uniformly spaced targets, each with its best bank entry."""

    pairs: tuple[tuple[int, int | None], ...]
    overlaps: tuple[float, ...]
    F: int

    def to_dict(self) -> dict:
        return {
            "F": self.F,
            "pairs": [
                {"target": t, "bank_entry": b, "overlap": o}
                for (t, b), o in zip(self.pairs, self.overlaps)
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "RetrievalPlan":
        pairs = tuple((p["target"], p["bank_entry"]) for p in doc["pairs"])
        overlaps = tuple(float(p["overlap"]) for p in doc["pairs"])
        return RetrievalPlan(pairs, overlaps, int(doc["F"]))


def write_plan(path: str | Path, plan: RetrievalPlan) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2) + "\n")


def read_plan(path: str | Path) -> RetrievalPlan:
    return RetrievalPlan.from_dict(json.loads(Path(path).read_text()))


def uniform_target_indices(n_targets: int) -> list[int]:
    """floor(N/4) strictly increasing indices with a constant stride."""
    if n_targets < 4:
        raise InputError(f"need at least 4 target poses, got {n_targets}")
    F = n_targets // 4
    stride = n_targets // F
    return [i * stride for i in range(F)]


def plan_retrieval(
    targets: list[CameraView],
    bank: MemoryBank,
    near: float,
    far: float,
    samples: int = DEFAULT_SAMPLES,
    seed: int = DEFAULT_SEED,
    overlap_floor: float = OVERLAP_FLOOR,
) -> RetrievalPlan:
    """Pick the best-overlapping bank entry for each of F = floor(N/4) targets.

    Each selected target draws one sample set inside its own frustum and
    tests every bank entry against it, so the argmax is stable under bank
    growth (overlaps per pair never decrease when entries are added) and
    ties break toward the lowest bank index. Targets whose best overlap is
    below ``overlap_floor`` get no reference; an empty bank yields a plan of
    all-``None`` pairs.
    """
    indices = uniform_target_indices(len(targets))
    bank_frusta = [Frustum(e.view, near, far) for e in bank.entries]
    pairs: list[tuple[int, int | None]] = []
    overlaps: list[float] = []
    for target_idx in indices:
        frustum = Frustum(targets[target_idx], near, far)
        if not bank_frusta:
            pairs.append((target_idx, None))
            overlaps.append(0.0)
            continue
        pts = sample_frustum_points(frustum, samples, seed + target_idx)
        scores = np.array([contains(bf, pts).mean() for bf in bank_frusta])
        best = int(np.argmax(scores))  # argmax returns the first max: lowest index
        if scores[best] < overlap_floor:
            pairs.append((target_idx, None))
            overlaps.append(0.0)
        else:
            pairs.append((target_idx, best))
            overlaps.append(float(scores[best]))
    return RetrievalPlan(tuple(pairs), tuple(overlaps), len(indices))


def trajectory_overlap_score(
    traj: list[CameraView],
    bank: MemoryBank,
    near: float,
    far: float,
    samples: int = DEFAULT_SAMPLES,
    seed: int = DEFAULT_SEED,
) -> float:
    """Sum of retrieved overlap values over the trajectory's planned pairs."""
    if not traj:
        raise InputError("trajectory must be non-empty")
    plan = plan_retrieval(traj, bank, near, far, samples=samples, seed=seed)
    return float(sum(plan.overlaps))


def default_near_far(cache_positions: np.ndarray, view: CameraView) -> tuple[float, float]:
    """0.1x and 3x the median camera-frame depth of the cache in this view."""
    if cache_positions.shape[0] == 0:
        return 0.1, 3.0
    z = view.pose.world_to_camera(cache_positions)[:, 2]
    z = z[z > 0]
    median = float(np.median(z)) if z.size else 1.0
    if median <= 0:
        median = 1.0
    return 0.1 * median, 3.0 * median
