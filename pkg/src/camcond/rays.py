"""Per-frame ray-direction and ray-origin conditioning images."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraTrajectory, camera_center, pixel_grid_rays
from .errors import FormatError
from .io import atomic_write_bytes, atomic_write_json, encode_png, frame_name, parallel_map

OCTANT_MARGIN = 1e-3
CCRI_MAGIC = b"CCRI"


@dataclass(frozen=True)
class RayImagePair:
    """Encoded directions ``(d + 1) / 2`` and offset origins, both (H, W, 3) float32."""

    directions: np.ndarray
    origins: np.ndarray
    offset_applied: np.ndarray

    def decoded_directions(self) -> np.ndarray:
        d = 2.0 * self.directions.astype(np.float64) - 1.0
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def compute_octant_offset(trajectory: CameraTrajectory, margin: float = OCTANT_MARGIN) -> np.ndarray:
    """Per-axis shift moving every camera center to at least ``margin`` meters."""
    lo = trajectory.centers().min(axis=0)
    return np.maximum(0.0, margin - lo)


def render_frame_rays(pose, offset) -> RayImagePair:
    origin, dirs = pixel_grid_rays(pose)
    directions = ((dirs + 1.0) / 2.0).astype(np.float32)
    o = (camera_center(pose.extrinsics) + offset).astype(np.float32)
    origins = np.broadcast_to(o, directions.shape).copy()
    return RayImagePair(directions, origins, np.asarray(offset, dtype=np.float64))


def render_ray_images(trajectory: CameraTrajectory, threads: int = 1) -> list[RayImagePair]:
    # one offset for the whole sequence keeps relative camera positions intact
    offset = compute_octant_offset(trajectory)
    return parallel_map(lambda p: render_frame_rays(p, offset), trajectory.poses, threads)


# -- CCRI float image format -----------------------------------------------------


def encode_ccri(image: np.ndarray) -> bytes:
    arr = np.asarray(image, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    return CCRI_MAGIC + struct.pack("<III", w, h, c) + np.ascontiguousarray(arr).tobytes()


def decode_ccri(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != CCRI_MAGIC:
        raise FormatError("not a CCRI image (bad magic)")
    w, h, c = struct.unpack("<III", data[4:16])
    n = w * h * c * 4
    if len(data) != 16 + n:
        raise FormatError(f"CCRI payload size {len(data) - 16} != {n}")
    return np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c).copy()


def read_ccri(path) -> np.ndarray:
    try:
        return decode_ccri(Path(path).read_bytes())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None


def write_ray_images(pairs: list[RayImagePair], out_dir, fmt: str = "f32") -> list[str]:
    """Write one directions and one origins file per frame plus ``rays.json``.

    ``png8`` quantizes only the direction images; origins are in meters and are
    always written as f32.
    """
    out_dir = Path(out_dir)
    written = []
    for i, pair in enumerate(pairs):
        if fmt == "png8":
            q = np.clip(np.round(pair.directions.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
            name = frame_name("directions", i, ".png")
            atomic_write_bytes(out_dir / name, encode_png(q))
        else:
            name = frame_name("directions", i, ".ccri")
            atomic_write_bytes(out_dir / name, encode_ccri(pair.directions))
        written.append(name)
        oname = frame_name("origins", i, ".ccri")
        atomic_write_bytes(out_dir / oname, encode_ccri(pair.origins))
        written.append(oname)
    offset = pairs[0].offset_applied if pairs else np.zeros(3)
    atomic_write_json(
        out_dir / "rays.json",
        {
            "offset_applied": [float(v) for v in offset],
            "format": fmt,
            "frames": len(pairs),
            "files": written,
        },
    )
    return written
