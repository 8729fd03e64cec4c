"""Point clouds, similarity alignment (Umeyama), ICP scale refinement, merging.

All positions are float64 N x 3 arrays in a named world frame. Transforms are
similarity transforms x -> scale * R @ x + t with det(R) = +1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, InputError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set with optional per-point colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray | None = None
    frame_label: str = "world"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InputError(f"positions must be N x 3, got shape {pos.shape}")
        if pos.size and not np.all(np.isfinite(pos)):
            raise InputError("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64)
            if col.shape != (pos.shape[0], 3):
                raise InputError(
                    f"colors must match positions: {col.shape} vs {pos.shape}"
                )
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def with_frame(self, frame_label: str) -> "PointCloud":
        return replace(self, frame_label=frame_label)

    @staticmethod
    def empty(frame_label: str = "world") -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), frame_label=frame_label)

    def bbox_diagonal(self) -> float:
        if self.is_empty:
            return 0.0
        extent = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(extent))


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.scale <= 0:
            raise InputError(f"scale must be positive, got {self.scale}")
        if R.shape != (3, 3):
            raise InputError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-8):
            raise InputError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise InputError("rotation has negative determinant")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def apply_cloud(self, cloud: PointCloud, frame_label: str | None = None) -> PointCloud:
        return PointCloud(
            self.apply(cloud.positions),
            colors=cloud.colors,
            frame_label=frame_label or cloud.frame_label,
        )

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * self.rotation @ inner.translation + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        Rinv = self.rotation.T
        return SimilarityTransform(
            1.0 / self.scale, Rinv, -Rinv @ self.translation / self.scale
        )


class NNIndex:
    """Exact nearest-neighbor index over a fixed point set.

    Thin wrapper over a kd-tree; on exact distance ties the lowest point
    index wins so queries are deterministic regardless of tree layout.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"index points must be N x 3, got {pts.shape}")
        if pts.shape[0] == 0:
            raise InputError("cannot index an empty point set")
        self._points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return self._points.shape[0]

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest neighbor per query point.

        Returns:
            (distances, indices), both length M, with tie-broken indices.
        """
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        dist, idx = self._tree.query(q)
        # Resolve exact ties toward the lowest index. query() already returns
        # a true NN; only co-minimal points need the second pass.
        ties = self._tree.query_ball_point(q, dist + 1e-300, return_sorted=True)
        for row, candidates in enumerate(ties):
            if len(candidates) > 1:
                d2 = np.linalg.norm(self._points[candidates] - q[row], axis=1)
                best = d2 <= dist[row]
                if best.any():
                    idx[row] = candidates[int(np.argmax(best))]
        return dist, idx

    def distances(self, queries: np.ndarray) -> np.ndarray:
        """Nearest-neighbor distances only (no tie resolution needed)."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        dist, _ = self._tree.query(q)
        return dist


def umeyama(
    source: np.ndarray,
    target: np.ndarray,
    with_scale: bool = True,
) -> SimilarityTransform:
    """Closed-form least-squares similarity between corresponding point sets.

    Minimizes sum ||s * R @ p_i + t - q_i||^2 over (s, R, t) using the SVD
    construction with determinant sign correction; ``with_scale=False`` fixes
    s = 1 (rigid alignment).

    Args:
        source: N x 3 points p_i.
        target: N x 3 corresponding points q_i (index-aligned).
        with_scale: Solve for a uniform scale as well.

    Raises:
        DegenerateInputError: fewer than 3 pairs, or covariance rank < 2
            (points collinear or coincident).
    """
    p = np.asarray(source, dtype=np.float64)
    q = np.asarray(target, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise InputError(f"correspondences must be matching N x 3, got {p.shape} / {q.shape}")
    n = p.shape[0]
    if n < 3:
        raise DegenerateInputError(f"need at least 3 correspondences, got {n}")

    mu_p = p.mean(axis=0)
    mu_q = q.mean(axis=0)
    dp = p - mu_p
    dq = q - mu_q
    cov = dq.T @ dp / n
    var_p = float(np.square(dp).sum() / n)

    U, d, Vt = np.linalg.svd(cov)
    rank = int(np.sum(d > max(d[0], 1e-300) * 1e-12))
    if rank < 2:
        raise DegenerateInputError("covariance rank < 2: points are collinear or coincident")
    s_diag = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        s_diag[2] = -1.0
    R = U @ np.diag(s_diag) @ Vt

    if with_scale:
        if var_p <= 0:
            raise DegenerateInputError("source points are coincident")
        scale = float((d * s_diag).sum() / var_p)
        if scale <= 0:
            raise DegenerateInputError("optimal scale is non-positive")
    else:
        scale = 1.0
    t = mu_q - scale * R @ mu_p
    return SimilarityTransform(scale, R, t)


def alignment_rms(
    source: np.ndarray, target: np.ndarray, transform: SimilarityTransform
) -> float:
    res = transform.apply(source) - np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.square(res).sum(axis=1).mean()))


@dataclass(frozen=True)
class ICPResult:
    transform: SimilarityTransform
    residuals: tuple[float, ...]
    iterations: int


def icp_scale_refine(
    pred: PointCloud,
    gt: PointCloud,
    init: SimilarityTransform | None = None,
    max_iters: int = 50,
    tol: float = 1e-9,
    with_scale: bool = True,
    trim_fraction: float = 0.0,
) -> ICPResult:
    """Refine a similarity transform by iterative closest point.

    Alternates nearest-neighbor correspondence (pred -> gt) with the
    closed-form Umeyama update. With ``trim_fraction > 0`` the farthest
    pairs (e.g. 0.1 drops the worst decile, i.e. trims at the 90th
    percentile) are excluded each iteration, which guards against outlier
    points; the trimmed residual is still monotonically non-increasing.

    Stops when |delta residual| < tol or after max_iters.
    """
    if pred.is_empty or gt.is_empty:
        raise InputError("icp_scale_refine requires non-empty clouds")
    if not 0.0 <= trim_fraction < 1.0:
        raise InputError(f"trim_fraction must be in [0, 1), got {trim_fraction}")
    transform = init or SimilarityTransform.identity()
    index = NNIndex(gt.positions)
    src = pred.positions
    n_keep = max(3, int(round(src.shape[0] * (1.0 - trim_fraction))))

    residuals: list[float] = []
    for iteration in range(max_iters):
        moved = transform.apply(src)
        dist, nn = index.query(moved)
        if trim_fraction > 0.0 and n_keep < src.shape[0]:
            keep = np.argsort(dist, kind="stable")[:n_keep]
        else:
            keep = np.arange(src.shape[0])
        matched_src = src[keep]
        matched_tgt = gt.positions[nn[keep]]
        try:
            transform = umeyama(matched_src, matched_tgt, with_scale=with_scale)
        except DegenerateInputError:
            # Correspondences collapsed (e.g. everything matched one point);
            # keep the last valid transform.
            residuals.append(alignment_rms(matched_src, matched_tgt, transform))
            break
        residual = alignment_rms(matched_src, matched_tgt, transform)
        residuals.append(residual)
        if iteration > 0 and abs(residuals[-2] - residual) < tol:
            break
        if residual < tol:
            break
    return ICPResult(transform, tuple(residuals), len(residuals))


def align_by_anchor(
    pred: PointCloud,
    anchor: PointCloud,
    pixel_correspondence: np.ndarray,
    with_scale: bool = True,
) -> SimilarityTransform:
    """Umeyama over index-matched pairs between a predicted cloud and an anchor.

    ``pixel_correspondence`` is an M x 2 integer array of (pred_index,
    anchor_index) pairs; the returned transform maps ``pred`` into the
    anchor's frame.
    """
    pairs = np.asarray(pixel_correspondence, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InputError(f"pixel_correspondence must be M x 2, got {pairs.shape}")
    if pairs.shape[0] < 3:
        raise DegenerateInputError(
            f"need at least 3 correspondences, got {pairs.shape[0]}"
        )
    if pairs.size and (pairs[:, 0].max() >= len(pred) or pairs[:, 1].max() >= len(anchor)):
        raise InputError("correspondence index out of range")
    return umeyama(
        pred.positions[pairs[:, 0]], anchor.positions[pairs[:, 1]], with_scale=with_scale
    )


def default_voxel_size(cloud: PointCloud) -> float:
    """0.01 x bounding-box diagonal; falls back to 1e-3 for tiny clouds."""
    diag = cloud.bbox_diagonal()
    return 0.01 * diag if diag > 0 else 1e-3


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One representative point per occupied voxel (centroid, mean color).

    Output voxels are ordered by first occurrence in the input, so the
    result is deterministic for a fixed voxel size and input order.
    """
    if voxel <= 0:
        raise InputError(f"voxel must be positive, got {voxel}")
    if cloud.is_empty:
        return cloud
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    # Unique voxel per point, groups ordered by first occurrence.
    _, first_pos, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True
    )
    order = np.argsort(np.argsort(first_pos, kind="stable"), kind="stable")
    group = order[inverse]  # group id in first-occurrence order
    n_groups = first_pos.size
    counts = np.bincount(group, minlength=n_groups).astype(np.float64)
    positions = np.zeros((n_groups, 3))
    for axis in range(3):
        positions[:, axis] = np.bincount(
            group, weights=cloud.positions[:, axis], minlength=n_groups
        )
    positions /= counts[:, None]
    colors = None
    if cloud.colors is not None:
        colors = np.zeros((n_groups, 3))
        for axis in range(3):
            colors[:, axis] = np.bincount(
                group, weights=cloud.colors[:, axis], minlength=n_groups
            )
        colors /= counts[:, None]
    return PointCloud(positions, colors=colors, frame_label=cloud.frame_label)


def occupied_voxel_count(cloud: PointCloud, voxel: float) -> int:
    if cloud.is_empty:
        return 0
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    return int(np.unique(keys, axis=0).shape[0])


def concatenate(a: PointCloud, b: PointCloud) -> PointCloud:
    """Concatenate two clouds sharing a frame; colors kept only if both have them."""
    if a.is_empty:
        return b
    if b.is_empty:
        return a
    colors = None
    if a.colors is not None and b.colors is not None:
        colors = np.vstack([a.colors, b.colors])
    return PointCloud(
        np.vstack([a.positions, b.positions]), colors=colors, frame_label=a.frame_label
    )


def merge(
    a: PointCloud,
    b: PointCloud,
    transform_b_to_a: SimilarityTransform | None = None,
    voxel: float | None = None,
) -> PointCloud:
    """Merge ``b`` into ``a``'s frame and voxel-downsample the union.

    ``b`` is mapped through ``transform_b_to_a`` (identity if omitted),
    concatenated after ``a``, and reduced to one centroid per occupied voxel.
    """
    transform = transform_b_to_a or SimilarityTransform.identity()
    moved = transform.apply_cloud(b, frame_label=a.frame_label) if not b.is_empty else b
    combined = concatenate(a, moved)
    if combined.is_empty:
        return a
    v = voxel if voxel is not None else default_voxel_size(combined)
    return voxel_downsample(combined, v)
