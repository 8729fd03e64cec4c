"""File formats: PFM depth maps, raw float32 grids, PLY point clouds,
camera JSON documents, similarity-transform JSON, PNG images."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import CameraView, CameraPose, DepthMap, Intrinsics
from .pointcloud import PointCloud, SimilarityTransform


# --- PFM (little-endian, grayscale) -------------------------------------------


def write_pfm(path: str | Path, values: np.ndarray) -> None:
    """Write a 2-D float grid as a little-endian grayscale PFM.

    Rows are stored bottom-to-top per the PFM convention; a negative scale
    marks little-endian byte order.
    """
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise InputError(f"PFM grid must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise InputError(f"not a PFM file: header {header!r}")
        channels = 1 if header == b"Pf" else 3
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(width * height * channels * 4), dtype=dtype)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_raw_grid(path: str | Path, values: np.ndarray) -> None:
    """Raw little-endian float32 grid with a JSON sidecar {width, height}."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise InputError(f"raw grid must be 2-D, got shape {arr.shape}")
    path = Path(path)
    path.write_bytes(arr.tobytes())
    sidecar = {"width": arr.shape[1], "height": arr.shape[0]}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def read_raw_grid(path: str | Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(meta["height"], meta["width"]).astype(np.float64)


def load_depth(path: str | Path) -> DepthMap:
    """Read a depth map by extension (.pfm or raw float32 + sidecar)."""
    path = Path(path)
    values = read_pfm(path) if path.suffix.lower() == ".pfm" else read_raw_grid(path)
    return DepthMap.from_values(values)


# --- feature grids (raw float32 + shape sidecar) -------------------------------


def write_grid_tensor(path: str | Path, data: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(data, dtype="<f4")
    path.write_bytes(arr.tobytes())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"shape": list(arr.shape)})
    )


def read_grid_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(meta["shape"]).astype(np.float64)


# --- PLY ------------------------------------------------------------------------


def write_ply(
    path: str | Path,
    cloud: PointCloud,
    binary: bool = True,
    double_precision: bool = True,
) -> None:
    """Write x,y,z[,red,green,blue] vertices as binary little-endian or ASCII."""
    n = len(cloud)
    has_colors = cloud.colors is not None
    coord_type = "double" if double_precision else "float"
    lines = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
        f"property {coord_type} x",
        f"property {coord_type} y",
        f"property {coord_type} z",
    ]
    if has_colors:
        lines += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
    lines.append("end_header")
    header = "\n".join(lines) + "\n"

    pos = cloud.positions.astype("<f8" if double_precision else "<f4")
    rgb = None
    if has_colors:
        rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)

    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            if has_colors:
                fmt = "<3d3B" if double_precision else "<3f3B"
                for p, c in zip(pos, rgb):
                    fh.write(struct.pack(fmt, *p, *c))
            else:
                fh.write(pos.tobytes())
        else:
            for i in range(n):
                coords = " ".join(repr(float(v)) for v in cloud.positions[i])
                if has_colors:
                    coords += " " + " ".join(str(int(v)) for v in rgb[i])
                fh.write((coords + "\n").encode("ascii"))


_PLY_SCALARS = {
    "float": ("<f4", 4),
    "float32": ("<f4", 4),
    "double": ("<f8", 8),
    "float64": ("<f8", 8),
    "uchar": ("u1", 1),
    "uint8": ("u1", 1),
    "char": ("i1", 1),
    "short": ("<i2", 2),
    "ushort": ("<u2", 2),
    "int": ("<i4", 4),
    "int32": ("<i4", 4),
    "uint": ("<u4", 4),
    "uint32": ("<u4", 4),
}


def read_ply(path: str | Path, frame_label: str = "world") -> PointCloud:
    """Read vertex x,y,z (+ optional red/green/blue) from ASCII or binary-LE PLY."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise InputError(f"not a PLY file: {path}")
        fmt = None
        n_vertex = 0
        properties: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise InputError("PLY header truncated")
            tokens = line.decode("ascii", "replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise InputError("list properties on vertices are unsupported")
                properties.append((tokens[2], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise InputError(f"unsupported PLY format {fmt}")
        names = [p[0] for p in properties]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise InputError(f"PLY vertex element missing property {axis}")
        has_colors = all(c in names for c in ("red", "green", "blue"))

        if fmt == "ascii":
            rows = np.loadtxt(fh, dtype=np.float64, max_rows=n_vertex, ndmin=2)
            if n_vertex and rows.shape != (n_vertex, len(properties)):
                raise InputError("PLY ASCII body does not match header")
            table = {name: rows[:, i] if n_vertex else np.zeros(0) for i, (name, _) in enumerate(properties)}
        else:
            dtype = np.dtype(
                [(name, _PLY_SCALARS[kind][0]) for name, kind in properties]
            )
            raw = fh.read(dtype.itemsize * n_vertex)
            records = np.frombuffer(raw, dtype=dtype, count=n_vertex)
            table = {name: records[name].astype(np.float64) for name, _ in properties}

    positions = np.stack([table["x"], table["y"], table["z"]], axis=-1)
    colors = None
    if has_colors and n_vertex:
        colors = np.stack([table["red"], table["green"], table["blue"]], axis=-1) / 255.0
    return PointCloud(positions.reshape(-1, 3), colors=colors, frame_label=frame_label)


# --- cameras --------------------------------------------------------------------


def camera_to_dict(view: CameraView) -> dict:
    K = view.intrinsics
    return {
        "fx": K.fx,
        "fy": K.fy,
        "cx": K.cx,
        "cy": K.cy,
        "width": K.width,
        "height": K.height,
        "R": [float(v) for v in view.pose.rotation.reshape(-1)],
        "t": [float(v) for v in view.pose.translation],
        "frame_id": view.frame_id,
    }


def camera_from_dict(doc: dict) -> CameraView:
    intr = Intrinsics(
        fx=float(doc["fx"]),
        fy=float(doc["fy"]),
        cx=float(doc["cx"]),
        cy=float(doc["cy"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
    )
    pose = CameraPose(
        np.asarray(doc["R"], dtype=np.float64).reshape(3, 3),
        np.asarray(doc["t"], dtype=np.float64),
    )
    return CameraView(intr, pose, frame_id=int(doc.get("frame_id", 0)))


def write_cameras(path: str | Path, views: list[CameraView]) -> None:
    Path(path).write_text(
        json.dumps([camera_to_dict(v) for v in views], indent=2) + "\n"
    )


def read_cameras(path: str | Path) -> list[CameraView]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = [doc]
    return [camera_from_dict(d) for d in doc]


# --- transforms -------------------------------------------------------------------


def transform_to_dict(transform: SimilarityTransform) -> dict:
    return {
        "scale": transform.scale,
        "R": [float(v) for v in transform.rotation.reshape(-1)],
        "t": [float(v) for v in transform.translation],
    }


def transform_from_dict(doc: dict) -> SimilarityTransform:
    return SimilarityTransform(
        float(doc["scale"]),
        np.asarray(doc["R"], dtype=np.float64).reshape(3, 3),
        np.asarray(doc["t"], dtype=np.float64),
    )


def write_transform(path: str | Path, transform: SimilarityTransform) -> None:
    Path(path).write_text(json.dumps(transform_to_dict(transform), indent=2) + "\n")


def read_transform(path: str | Path) -> SimilarityTransform:
    return transform_from_dict(json.loads(Path(path).read_text()))


# --- PNG --------------------------------------------------------------------------


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] (H x W or H x W x 3) as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(Path(path))


def read_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(Path(path)) as img:
        data = np.asarray(img)
    return data.astype(np.float64) / 255.0
