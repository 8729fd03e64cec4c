"""Camera models, depth maps, back-projection, Plücker rays, panorama splits.

Conventions used everywhere in this package:
  - Right-handed camera frame: +x right, +y down, +z forward (view axis).
  - Poses are camera-to-world: X_world = R @ X_cam + t; t is the camera
    center in world coordinates.
  - Continuous image coordinates span [0, width] x [0, height]; the center
    of integer pixel (u, v) is (u + 0.5, v + 0.5). Back-projection lifts
    pixel centers; projection returns continuous coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .pointcloud import PointCloud

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @staticmethod
    def from_fov(
        fov_h_deg: float, fov_v_deg: float, width: int, height: int
    ) -> "Intrinsics":
        if not (0 < fov_v_deg < 180) or not (0 < fov_h_deg < 360):
            raise InputError(f"FoV out of range: {fov_h_deg} x {fov_v_deg}")
        fx = width / (2.0 * math.tan(math.radians(fov_h_deg) / 2.0))
        fy = height / (2.0 * math.tan(math.radians(fov_v_deg) / 2.0))
        return Intrinsics(fx, fy, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid pose."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise InputError(f"rotation must be 3x3, got {R.shape}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-8:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-8:
            raise InputError(f"rotation determinant {np.linalg.det(R)} != +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    @property
    def right(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def down(self) -> np.ndarray:
        return self.rotation[:, 1]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraView:
    intrinsics: Intrinsics
    pose: CameraPose
    frame_id: int = 0

    def __post_init__(self):
        if self.frame_id < 0:
            raise InputError(f"frame_id must be >= 0, got {self.frame_id}")


@dataclass(frozen=True)
class DepthMap:
    """H x W depth grid; invalid entries are excluded from all downstream ops."""

    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.valid_mask, dtype=bool)
        if vals.ndim != 2 or mask.shape != vals.shape:
            raise InputError(
                f"depth {vals.shape} and mask {mask.shape} must be matching 2-D grids"
            )
        # Non-finite or non-positive depths are masked out, never clamped.
        mask = mask & np.isfinite(vals) & (vals > 0)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid_mask", mask)

    @staticmethod
    def from_values(values: np.ndarray) -> "DepthMap":
        vals = np.asarray(values, dtype=np.float64)
        return DepthMap(vals, np.ones_like(vals, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_count(self) -> int:
        return int(self.valid_mask.sum())


def pixel_centers(intrinsics: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Continuous coordinates of all pixel centers, as (u + 0.5, v + 0.5) grids."""
    u = np.arange(intrinsics.width, dtype=np.float64) + 0.5
    v = np.arange(intrinsics.height, dtype=np.float64) + 0.5
    return np.meshgrid(u, v)


def camera_ray_directions(intrinsics: Intrinsics) -> np.ndarray:
    """K^-1 applied to every pixel center; H x W x 3 with z = 1 (not normalized)."""
    uu, vv = pixel_centers(intrinsics)
    x = (uu - intrinsics.cx) / intrinsics.fx
    y = (vv - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def backproject(
    depth: DepthMap,
    view: CameraView,
    colors: np.ndarray | None = None,
    frame_label: str = "world",
) -> PointCloud:
    """Lift valid depth pixels to world points: R @ (D * K^-1 @ x_hat) + t.

    Args:
        depth: H x W depth map; only valid pixels produce points.
        view: camera intrinsics + camera-to-world pose.
        colors: optional H x W x 3 image in [0, 1], carried per point.

    Returns:
        PointCloud with one point per valid pixel, row-major pixel order.
    """
    K = view.intrinsics
    if depth.shape != (K.height, K.width):
        raise InputError(
            f"depth {depth.shape} does not match intrinsics {K.height}x{K.width}"
        )
    if colors is not None and colors.shape[:2] != depth.shape:
        raise InputError(f"colors {colors.shape} do not match depth {depth.shape}")
    mask = depth.valid_mask
    if not mask.any():
        return PointCloud.empty(frame_label)
    rays = camera_ray_directions(K)[mask]
    cam_pts = rays * depth.values[mask][:, None]
    world = view.pose.camera_to_world(cam_pts)
    col = np.asarray(colors, dtype=np.float64)[mask] if colors is not None else None
    return PointCloud(world, colors=col, frame_label=frame_label)


def project(
    points: np.ndarray, view: CameraView
) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into continuous image coordinates.

    Returns:
        (uv, z): M x 2 continuous coordinates and M camera-frame depths.
        Points behind the camera have z <= 0; the caller filters them.
    """
    cam = view.pose.world_to_camera(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = view.intrinsics.fx * cam[:, 0] / z + view.intrinsics.cx
        v = view.intrinsics.fy * cam[:, 1] / z + view.intrinsics.cy
    return np.stack([u, v], axis=-1), z


def plucker_rays(view: CameraView) -> np.ndarray:
    """Per-pixel Plücker rays as an H x W x 6 grid [direction, moment].

    direction = normalize(R @ K^-1 @ x_hat); moment = center x direction.
    """
    rays = camera_ray_directions(view.intrinsics)
    world_dirs = rays @ view.pose.rotation.T
    norms = np.linalg.norm(world_dirs, axis=-1, keepdims=True)
    directions = world_dirs / norms
    moments = np.cross(
        np.broadcast_to(view.pose.center, directions.shape), directions
    )
    return np.concatenate([directions, moments], axis=-1)


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n == 0:
        raise InputError("rotation axis must be non-zero")
    a = a / n
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * K + (1 - math.cos(angle_rad)) * (K @ K)


def look_at_pose(
    position: np.ndarray, target: np.ndarray, down_hint: np.ndarray
) -> CameraPose:
    """Pose at ``position`` with +z toward ``target``; +y roughly ``down_hint``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise InputError("look-at target coincides with camera position")
    z = forward / norm
    hint = np.asarray(down_hint, dtype=np.float64)
    x = np.cross(hint, z)
    if np.linalg.norm(x) < 1e-12:
        raise InputError("down_hint is parallel to the view direction")
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return CameraPose(np.stack([x, y, z], axis=1), position)


# --- equirectangular panoramas ------------------------------------------------
#
# Pano pixel (pu, pv) with pu in [0, W), pv in [0, H) maps to longitude
# lon = ((pu + 0.5)/W - 0.5) * 2*pi and latitude lat = (0.5 - (pv + 0.5)/H) * pi,
# so the top row looks up. Direction: x = cos(lat) sin(lon), y = -sin(lat),
# z = cos(lat) cos(lon)  (lon = 0 is the world +z axis; y points down).


def direction_to_lonlat(directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(directions, dtype=np.float64)
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arcsin(np.clip(-d[..., 1] / np.linalg.norm(d, axis=-1), -1.0, 1.0))
    return lon, lat


def lonlat_to_direction(lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    cos_lat = np.cos(lat)
    return np.stack(
        [cos_lat * np.sin(lon), -np.sin(lat), cos_lat * np.cos(lon)], axis=-1
    )


def sample_equirect(pano: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Bilinearly sample an equirectangular image along world directions.

    Wraps horizontally; clamps vertically at the poles.
    """
    pano = np.asarray(pano, dtype=np.float64)
    H, W = pano.shape[:2]
    lon, lat = direction_to_lonlat(directions)
    pu = (lon / (2.0 * math.pi) + 0.5) * W - 0.5
    pv = (0.5 - lat / math.pi) * H - 0.5
    u0 = np.floor(pu).astype(np.int64)
    v0 = np.floor(pv).astype(np.int64)
    fu = pu - u0
    fv = pv - v0
    u1 = (u0 + 1) % W
    u0 = u0 % W
    v1 = np.clip(v0 + 1, 0, H - 1)
    v0 = np.clip(v0, 0, H - 1)
    w00 = (1 - fu) * (1 - fv)
    w10 = fu * (1 - fv)
    w01 = (1 - fu) * fv
    w11 = fu * fv
    if pano.ndim == 3:
        w00, w10, w01, w11 = (w[..., None] for w in (w00, w10, w01, w11))
    return (
        w00 * pano[v0, u0] + w10 * pano[v0, u1] + w01 * pano[v1, u0] + w11 * pano[v1, u1]
    )


def pano_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Rotation of a pano-split view: yaw about the vertical axis (positive
    turns right), then pitch about the camera x axis (positive looks up)."""
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    # Vertical axis is -y (y points down); yaw > 0 should rotate +z toward +x.
    R_yaw = rotation_about_axis(np.array([0.0, -1.0, 0.0]), yaw)
    R_pitch = rotation_about_axis(np.array([1.0, 0.0, 0.0]), -pitch)
    return R_yaw @ R_pitch


def default_pano_split() -> list[tuple[float, float]]:
    """27 (yaw, pitch) pairs: 9 yaws every 40 degrees x 3 pitches {-30, 0, 30}."""
    return [
        (yaw, pitch)
        for pitch in (-30.0, 0.0, 30.0)
        for yaw in (np.arange(9) * 40.0).tolist()
    ]


def pano_to_perspective(
    pano: np.ndarray,
    fov_v_deg: float = 90.0,
    fov_h_deg: float = 120.0,
    yaw_pitch_list: list[tuple[float, float]] | None = None,
    out_size: tuple[int, int] = (160, 120),
    center: np.ndarray | None = None,
    frame_id_start: int = 0,
) -> list[tuple[np.ndarray, CameraView]]:
    """Split an equirectangular panorama into perspective views.

    Args:
        pano: H x W [x C] equirectangular image with W = 2 H.
        fov_v_deg, fov_h_deg: vertical / horizontal field of view.
        yaw_pitch_list: view directions in degrees; defaults to the 27-view
            split (9 yaws x 3 pitches).
        out_size: (width, height) of each perspective image.
        center: world position of the panorama center (poses are pure
            rotations about it); defaults to the origin.

    Returns:
        List of (image, CameraView) pairs, one per (yaw, pitch).
    """
    pano = np.asarray(pano, dtype=np.float64)
    if pano.ndim not in (2, 3) or pano.shape[1] != 2 * pano.shape[0]:
        raise InputError(
            f"panorama must be equirectangular with width = 2 x height, got {pano.shape[:2]}"
        )
    width, height = out_size
    intr = Intrinsics.from_fov(fov_h_deg, fov_v_deg, width, height)
    rays = camera_ray_directions(intr)
    t = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
    views: list[tuple[np.ndarray, CameraView]] = []
    pairs = yaw_pitch_list if yaw_pitch_list is not None else default_pano_split()
    for i, (yaw, pitch) in enumerate(pairs):
        R = pano_rotation(yaw, pitch)
        world_dirs = rays @ R.T
        image = sample_equirect(pano, world_dirs)
        view = CameraView(intr, CameraPose(R, t), frame_id=frame_id_start + i)
        views.append((image, view))
    return views
