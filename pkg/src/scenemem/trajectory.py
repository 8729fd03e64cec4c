"""Parametric camera trajectories: up/left/right arcs and the orbit path.

Rotational trajectories swing the camera on an arc about a center placed at
the scene's median depth along the start view axis, always looking at that
center; the orbit traces a circle of radius 0.3 x median depth in the plane
perpendicular to the start view axis, passing through the start position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputError
from .geometry import CameraPose, CameraView, look_at_pose, rotation_about_axis
from .memory import MemoryBank, bank_insert
from .retrieval import DEFAULT_SEED, trajectory_overlap_score

TRAJECTORY_KINDS = ("up", "left", "right", "orbit")

# Supplement defaults: up 45 deg, left/right 90 deg, orbit full circle with
# radius 0.3 x median depth.
DEFAULT_ANGLES_DEG = {"up": 45.0, "left": 90.0, "right": 90.0, "orbit": 360.0}
ORBIT_RADIUS_RULE = 0.3
DEFAULT_FRAMES = 81


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str
    angle_deg: float
    n_frames: int = DEFAULT_FRAMES
    center_depth_rule: float = 1.0  # center distance = rule x median depth
    radius_rule: float = ORBIT_RADIUS_RULE  # orbit only
    angle_scale: float = 1.0  # reduced-angle mode for face-forward scenes

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise InputError(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 2:
            raise InputError(f"need at least 2 frames, got {self.n_frames}")
        if not (0.0 < self.angle_deg <= 360.0):
            raise InputError(f"angle must be in (0, 360], got {self.angle_deg}")

    @staticmethod
    def default(kind: str, n_frames: int = DEFAULT_FRAMES) -> "TrajectorySpec":
        return TrajectorySpec(kind, DEFAULT_ANGLES_DEG[kind], n_frames=n_frames)


@dataclass(frozen=True)
class TrajectoryOrder:
    specs: tuple[TrajectorySpec, ...]

    def __post_init__(self):
        kinds = [s.kind for s in self.specs]
        if len(set(kinds)) != len(kinds):
            raise InputError("each trajectory kind may appear at most once in an order")

    def kinds(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self.specs)


def default_order(n_frames: int = DEFAULT_FRAMES) -> TrajectoryOrder:
    """Default sequence orbit -> up -> right -> left."""
    return TrajectoryOrder(
        tuple(
            TrajectorySpec.default(kind, n_frames=n_frames)
            for kind in ("orbit", "up", "right", "left")
        )
    )


def synthesize(
    spec: TrajectorySpec, start: CameraView, median_depth: float
) -> list[CameraView]:
    """Camera views along a trajectory; the first pose equals ``start``.

    up/left/right: the start pose is rotated rigidly about an axis through
    the rotation center (median depth ahead of the start camera) — about the
    camera's horizontal axis for "up", the vertical axis for left/right — so
    every pose keeps looking at the center and consecutive angular steps are
    constant. orbit: positions trace a circle of radius ``radius_rule x
    median_depth`` in the lateral plane through the start position, each
    pose looking at the center.
    """
    if median_depth <= 0:
        raise InputError(f"median_depth must be positive, got {median_depth}")
    pose0 = start.pose
    center = pose0.center + spec.center_depth_rule * median_depth * pose0.forward
    angle = math.radians(spec.angle_deg * spec.angle_scale)
    # A full circle repeats its endpoint; step over n open intervals there.
    closed = math.isclose(spec.angle_deg * spec.angle_scale, 360.0)
    steps = spec.n_frames if closed else spec.n_frames - 1
    thetas = [angle * i / steps for i in range(spec.n_frames)]

    views: list[CameraView] = []
    if spec.kind == "orbit":
        radius = spec.radius_rule * median_depth
        e1 = pose0.right
        e2 = -pose0.down  # initial motion is upward on screen
        circle_center = pose0.center + radius * e1
        for i, theta in enumerate(thetas):
            position = (
                circle_center
                - radius * math.cos(theta) * e1
                + radius * math.sin(theta) * e2
            )
            if i == 0:
                pose = pose0
            else:
                pose = look_at_pose(position, center, pose0.down)
            views.append(CameraView(start.intrinsics, pose, frame_id=i))
        return views

    if spec.kind == "up":
        axis = -pose0.right  # positive angle arcs the camera upward
    elif spec.kind == "left":
        axis = pose0.down  # yaw left: swing around the vertical axis
    else:  # right
        axis = -pose0.down
    for i, theta in enumerate(thetas):
        R_step = rotation_about_axis(axis, theta)
        rotation = R_step @ pose0.rotation
        position = center + R_step @ (pose0.center - center)
        views.append(
            CameraView(start.intrinsics, CameraPose(rotation, position), frame_id=i)
        )
    return views


@dataclass(frozen=True)
class ScoredOrder:
    order: TrajectoryOrder
    score: float
    per_trajectory: tuple[float, ...]


def rank_orders(
    orders: list[TrajectoryOrder],
    initial_bank: MemoryBank,
    start: CameraView,
    median_depth: float,
    near: float,
    far: float,
    samples: int = 4096,
    seed: int = DEFAULT_SEED,
) -> list[ScoredOrder]:
    """Score trajectory orders by simulated incremental memory growth.

    For each order, trajectories run in sequence: a trajectory is scored by
    ``trajectory_overlap_score`` against the current bank, then its frames
    are appended (so later trajectories see a richer memory). Orders are
    returned sorted by descending total score; ties keep input order.
    """
    if not orders:
        raise InputError("need at least one order to rank")
    scored: list[ScoredOrder] = []
    for order in orders:
        bank = initial_bank
        per_traj: list[float] = []
        for spec in order.specs:
            views = synthesize(spec, start, median_depth)
            per_traj.append(
                trajectory_overlap_score(
                    views, bank, near, far, samples=samples, seed=seed
                )
            )
            base_id = _next_frame_id(bank)
            frames = [
                (None, replace_view_id(v, base_id + j)) for j, v in enumerate(views)
            ]
            bank = bank_insert(bank, frames, "generated")
        scored.append(ScoredOrder(order, float(sum(per_traj)), tuple(per_traj)))
    return sorted(scored, key=lambda s: -s.score)


def _next_frame_id(bank: MemoryBank) -> int:
    generated = [e.view.frame_id for e in bank.entries if e.source_tag == "generated"]
    return (max(generated) + 1) if generated else 0


def replace_view_id(view: CameraView, frame_id: int) -> CameraView:
    return CameraView(view.intrinsics, view.pose, frame_id=frame_id)
