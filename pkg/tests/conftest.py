import numpy as np
import pytest

from scenemem.geometry import CameraPose, CameraView, Intrinsics


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_pose(rng: np.random.Generator, trans_scale: float = 3.0) -> CameraPose:
    return CameraPose(random_rotation(rng), rng.normal(scale=trans_scale, size=3))


def make_view(
    width: int = 8,
    height: int = 8,
    fx: float = 10.0,
    fy: float = 10.0,
    pose: CameraPose | None = None,
    frame_id: int = 0,
) -> CameraView:
    intr = Intrinsics(fx, fy, width / 2.0, height / 2.0, width, height)
    return CameraView(intr, pose or CameraPose.identity(), frame_id=frame_id)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
