"""Analytic synthetic scenes with exact depth and color per ray.

Primitives are spheres, axis-aligned boxes (a camera inside a box sees its
interior, which makes a closed textured room), and finite rectangles. Rays
are traced with unnormalized directions whose camera-frame z component is 1,
so the hit parameter equals the camera-z depth that back-projection expects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import (
    CameraView,
    DepthMap,
    camera_ray_directions,
    lonlat_to_direction,
)

_EPS = 1e-9


def checker(points: np.ndarray, scale: float, c1, c2) -> np.ndarray:
    parity = np.floor(points / scale).sum(axis=1).astype(np.int64) % 2
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    return np.where(parity[:, None] == 0, c1[None, :], c2[None, :])


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    color_a: tuple = (0.9, 0.3, 0.2)
    color_b: tuple = (0.95, 0.85, 0.2)
    checker_scale: float = 0.4

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origins - np.asarray(self.center)[None, :]
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * np.sum(oc * dirs, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius**2
        disc = b * b - 4 * a * c
        s = np.full(origins.shape[0], np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        s1 = (-b - sq) / (2 * a)
        s2 = (-b + sq) / (2 * a)
        near = np.where(s1 > _EPS, s1, s2)
        s = np.where(ok & (near > _EPS), near, np.inf)
        return s

    def color_at(self, points: np.ndarray) -> np.ndarray:
        return checker(points, self.checker_scale, self.color_a, self.color_b)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    color_a: tuple = (0.2, 0.45, 0.8)
    color_b: tuple = (0.85, 0.85, 0.9)
    checker_scale: float = 0.8

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=np.float64)[None, :]
        hi = np.asarray(self.hi, dtype=np.float64)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (lo - origins) / dirs
            t_hi = (hi - origins) / dirs
        t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=1)
        t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=1)
        hit = t_far >= np.maximum(t_near, 0.0)
        # Entry face from outside, exit face when the ray starts inside.
        s = np.where(t_near > _EPS, t_near, t_far)
        return np.where(hit & (s > _EPS), s, np.inf)

    def color_at(self, points: np.ndarray) -> np.ndarray:
        return checker(points, self.checker_scale, self.color_a, self.color_b)


@dataclass(frozen=True)
class Rect:
    """Finite rectangle: center, two half-axes (not necessarily unit)."""

    center: np.ndarray
    half_u: np.ndarray
    half_v: np.ndarray
    color_a: tuple = (0.3, 0.65, 0.3)
    color_b: tuple = (0.9, 0.9, 0.85)
    checker_scale: float = 0.6

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        center = np.asarray(self.center, dtype=np.float64)
        hu = np.asarray(self.half_u, dtype=np.float64)
        hv = np.asarray(self.half_v, dtype=np.float64)
        normal = np.cross(hu, hv)
        normal = normal / np.linalg.norm(normal)
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((center - origins) @ normal) / denom
        p = origins + s[:, None] * dirs
        rel = p - center[None, :]
        a = rel @ hu / np.dot(hu, hu)
        b = rel @ hv / np.dot(hv, hv)
        ok = (np.abs(denom) > _EPS) & (s > _EPS) & (np.abs(a) <= 1) & (np.abs(b) <= 1)
        return np.where(ok, s, np.inf)

    def color_at(self, points: np.ndarray) -> np.ndarray:
        return checker(points, self.checker_scale, self.color_a, self.color_b)


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    primitives: tuple = ()
    background: tuple = (0.0, 0.0, 0.0)

    def trace(
        self, origins: np.ndarray, dirs: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Closest-hit parameters, colors, and a hit mask for a ray batch."""
        n = origins.shape[0]
        best = np.full(n, np.inf)
        winner = np.full(n, -1, dtype=np.int64)
        for i, prim in enumerate(self.primitives):
            s = prim.intersect(origins, dirs)
            closer = s < best
            best = np.where(closer, s, best)
            winner = np.where(closer, i, winner)
        hit = np.isfinite(best)
        colors = np.tile(np.asarray(self.background, dtype=np.float64), (n, 1))
        points = origins + np.where(hit, best, 0.0)[:, None] * dirs
        for i, prim in enumerate(self.primitives):
            sel = hit & (winner == i)
            if sel.any():
                colors[sel] = prim.color_at(points[sel])
        return best, colors, hit

    def render(self, view: CameraView) -> tuple[np.ndarray, DepthMap]:
        """Exact image and camera-z depth map for a pinhole view."""
        K = view.intrinsics
        dirs_cam = camera_ray_directions(K).reshape(-1, 3)
        dirs = dirs_cam @ view.pose.rotation.T
        origins = np.broadcast_to(view.pose.center, dirs.shape)
        depth, colors, hit = self.trace(origins, dirs)
        rgb = colors.reshape(K.height, K.width, 3)
        values = np.where(hit, depth, 0.0).reshape(K.height, K.width)
        return rgb, DepthMap(values, hit.reshape(K.height, K.width))

    def render_pano(
        self, center: np.ndarray, height: int
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Equirectangular image, per-pixel range (distance along the unit
        ray), and validity mask, from a point inside the scene."""
        width = 2 * height
        pu = (np.arange(width) + 0.5) / width
        pv = (np.arange(height) + 0.5) / height
        lon = (pu - 0.5) * 2 * math.pi
        lat = (0.5 - pv) * math.pi
        lon_g, lat_g = np.meshgrid(lon, lat)
        dirs = lonlat_to_direction(lon_g, lat_g).reshape(-1, 3)
        origins = np.broadcast_to(np.asarray(center, dtype=np.float64), dirs.shape)
        rng, colors, hit = self.trace(origins, dirs)
        image = colors.reshape(height, width, 3)
        ranges = np.where(hit, rng, 0.0).reshape(height, width)
        return image, ranges, hit.reshape(height, width)

    def median_depth(self, view: CameraView) -> float:
        _, depth = self.render(view)
        valid = depth.values[depth.valid_mask]
        if valid.size == 0:
            raise InputError(f"view sees no geometry in scene {self.name!r}")
        return float(np.median(valid))


def room_scene(seed: int = 0) -> SyntheticScene:
    """Closed checkered room with interior props; every ray hits something."""
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-0.2, 0.2, size=3)
    prims = (
        Box(np.array([-3.0, -2.5, -3.0]), np.array([3.0, 2.5, 3.0])),
        Sphere(np.array([1.2, 0.8, 1.5]) + jitter * 0.5, 0.6),
        Box(
            np.array([-2.0, 0.5, 0.8]) + jitter,
            np.array([-1.2, 1.3, 1.6]) + jitter,
            color_a=(0.8, 0.4, 0.1),
            color_b=(0.3, 0.2, 0.1),
            checker_scale=0.3,
        ),
    )
    return SyntheticScene("room", prims)


def cube_field_scene(seed: int = 1) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    prims = [
        Rect(
            np.array([0.0, 1.5, 2.0]),
            np.array([6.0, 0.0, 0.0]),
            np.array([0.0, 0.0, 6.0]),
        )
    ]
    for i in range(4):
        base = np.array([rng.uniform(-2.5, 2.5), 1.5, rng.uniform(1.0, 4.5)])
        size = rng.uniform(0.4, 0.9)
        prims.append(
            Box(
                base - np.array([size / 2, size, size / 2]),
                base + np.array([size / 2, 0.0, size / 2]),
                color_a=(0.2 + 0.15 * i, 0.5, 0.9 - 0.15 * i),
                checker_scale=0.25,
            )
        )
    return SyntheticScene("cube_field", tuple(prims))


def sphere_garden_scene(seed: int = 2) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    prims = [
        Rect(
            np.array([0.0, 1.2, 2.5]),
            np.array([7.0, 0.0, 0.0]),
            np.array([0.0, 0.0, 7.0]),
        )
    ]
    for i in range(3):
        center = np.array([rng.uniform(-2.0, 2.0), 0.6, rng.uniform(1.5, 4.0)])
        prims.append(
            Sphere(center, rng.uniform(0.4, 0.7), color_a=(0.9, 0.2 + 0.2 * i, 0.3))
        )
    return SyntheticScene("sphere_garden", tuple(prims))


SCENE_BUILDERS = {
    "room": room_scene,
    "cube_field": cube_field_scene,
    "sphere_garden": sphere_garden_scene,
}


def build_scene(kind: str, seed: int = 0) -> SyntheticScene:
    if kind not in SCENE_BUILDERS:
        raise InputError(f"unknown scene kind {kind!r}, expected one of {sorted(SCENE_BUILDERS)}")
    return SCENE_BUILDERS[kind](seed)
