"""Pinhole camera types and projection / unprojection math.

Conventions used throughout the package:

* Extrinsics map world to camera: ``x_cam = R @ x_world + t``; the camera
  looks along +z, so depth is the camera-space z coordinate.
* Pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)`` in continuous image
  coordinates. Functions taking or returning pixel coordinates use *index
  coordinates*, where the integer value addresses the pixel center, i.e.
  continuous ``u = px + 0.5``. The principal point therefore sits at index
  coordinate ``(cx - 0.5, cy - 0.5)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError, FormatError, PixelRangeError

ORTHO_TOL = 1e-6
BEHIND_EPS = 1e-9


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.width >= 1 and self.height >= 1):
            raise ContractError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ContractError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def downsampled(self, factor: int) -> "Intrinsics":
        """Intrinsics of the same camera at ``1/factor`` resolution."""
        if factor < 1 or self.width % factor or self.height % factor:
            raise ContractError(
                f"downsample factor {factor} must divide image size {self.width}x{self.height}"
            )
        return Intrinsics(
            self.fx / factor,
            self.fy / factor,
            self.cx / factor,
            self.cy / factor,
            self.width // factor,
            self.height // factor,
        )


@dataclass(frozen=True)
class Extrinsics:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        try:
            R = _frozen(self.rotation, (3, 3))
            t = _frozen(self.translation, (3,))
        except ValueError as exc:
            raise ContractError(f"bad extrinsics shape: {exc}") from None
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ContractError("extrinsics contain non-finite entries")
        if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHO_TOL:
            raise ContractError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ContractError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    def matrix_3x4(self) -> np.ndarray:
        """The ``[R | t]`` matrix, whose 12 entries feed the extrinsics condition."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


@dataclass(frozen=True)
class CameraPose:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    frame_index: int = 0

    def __post_init__(self):
        if int(self.frame_index) != self.frame_index or self.frame_index < 0:
            raise ContractError(f"frame_index must be a non-negative integer, got {self.frame_index}")

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height


@dataclass(frozen=True)
class CameraTrajectory:
    poses: tuple = field(default_factory=tuple)

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ContractError("trajectory must contain at least one pose")
        w, h = poses[0].width, poses[0].height
        for k, p in enumerate(poses):
            if p.frame_index != k:
                raise ContractError(f"pose {k} has frame_index {p.frame_index}; expected {k}")
            if (p.width, p.height) != (w, h):
                raise ContractError("all poses must share image dimensions")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> CameraPose:
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @property
    def width(self) -> int:
        return self.poses[0].width

    @property
    def height(self) -> int:
        return self.poses[0].height

    def centers(self) -> np.ndarray:
        return np.stack([camera_center(p.extrinsics) for p in self.poses])

    def subset(self, indices: Sequence[int]) -> "CameraTrajectory":
        """Re-indexed trajectory holding the poses at ``indices`` (e.g. a sampled clip)."""
        return CameraTrajectory(
            tuple(
                CameraPose(self.poses[i].intrinsics, self.poses[i].extrinsics, k)
                for k, i in enumerate(indices)
            )
        )


class Projection(NamedTuple):
    px: float
    py: float
    depth: float
    behind: bool
    in_frame: bool


def camera_center(extrinsics: Extrinsics) -> np.ndarray:
    return -extrinsics.rotation.T @ extrinsics.translation


def _check_pixel(pose: CameraPose, px, py):
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    if np.any(~(px >= 0)) or np.any(~(px < pose.width)) or np.any(~(py >= 0)) or np.any(
        ~(py < pose.height)
    ):
        raise PixelRangeError(f"pixel outside [0, {pose.width}) x [0, {pose.height})")
    return px, py


def camera_directions(intrinsics: Intrinsics, px, py) -> np.ndarray:
    """Unit camera-space directions through index coordinates ``(px, py)``."""
    x = (np.asarray(px, dtype=np.float64) + 0.5 - intrinsics.cx) / intrinsics.fx
    y = (np.asarray(py, dtype=np.float64) + 0.5 - intrinsics.cy) / intrinsics.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_to_ray(pose: CameraPose, px: float, py: float) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray ``(origin, unit direction)`` through a pixel."""
    px, py = _check_pixel(pose, px, py)
    d = pose.extrinsics.rotation.T @ camera_directions(pose.intrinsics, px, py)
    return camera_center(pose.extrinsics), d / np.linalg.norm(d)


def pixels_to_rays(pose: CameraPose, px, py) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`pixel_to_ray`; returns origin (3,) and directions (..., 3)."""
    px, py = _check_pixel(pose, px, py)
    d = camera_directions(pose.intrinsics, px, py) @ pose.extrinsics.rotation
    # R is only orthonormal to 1e-6; renormalize so |d| = 1 to machine precision
    return camera_center(pose.extrinsics), d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_grid_rays(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Rays through every pixel center; directions have shape (H, W, 3)."""
    jj, ii = np.meshgrid(np.arange(pose.height), np.arange(pose.width), indexing="ij")
    return pixels_to_rays(pose, ii, jj)


def project_point(pose: CameraPose, p) -> Projection:
    """Project one world point. Behind-camera points yield NaN pixel coordinates."""
    px, py, depth, behind, in_frame = project_points(pose, np.asarray(p, dtype=np.float64)[None])
    return Projection(float(px[0]), float(py[0]), float(depth[0]), bool(behind[0]), bool(in_frame[0]))


def project_points(pose: CameraPose, points: np.ndarray):
    """Vectorized projection of (N, 3) world points.

    Returns ``(px, py, depth, behind, in_frame)`` arrays. ``in_frame`` means the
    point is in front of the camera and its pixel lies in ``[-0.5, W-0.5) x
    [-0.5, H-0.5)``, i.e. it rounds to a valid pixel.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    K = pose.intrinsics
    cam = pts @ pose.extrinsics.rotation.T + pose.extrinsics.translation
    depth = cam[:, 2]
    behind = ~(depth > BEHIND_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        px = K.fx * cam[:, 0] / depth + K.cx - 0.5
        py = K.fy * cam[:, 1] / depth + K.cy - 0.5
    px[behind] = np.nan
    py[behind] = np.nan
    in_frame = (
        ~behind & (px >= -0.5) & (px < K.width - 0.5) & (py >= -0.5) & (py < K.height - 0.5)
    )
    return px, py, depth, behind, in_frame


def nearest_pixel(px, py) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel containing index coordinates ``(px, py)``."""
    return (
        np.floor(np.asarray(px) + 0.5).astype(np.int64),
        np.floor(np.asarray(py) + 0.5).astype(np.int64),
    )


# -- trajectory file format ----------------------------------------------------


def trajectory_to_dict(traj: CameraTrajectory) -> dict:
    frames = []
    for p in traj:
        K, E = p.intrinsics, p.extrinsics
        frames.append(
            {
                "index": p.frame_index,
                "fx": float(K.fx),
                "fy": float(K.fy),
                "cx": float(K.cx),
                "cy": float(K.cy),
                "rotation": [float(v) for v in E.rotation.ravel()],
                "translation": [float(v) for v in E.translation],
            }
        )
    return {"width": traj.width, "height": traj.height, "frames": frames}


def trajectory_from_dict(doc: dict) -> CameraTrajectory:
    try:
        width, height = int(doc["width"]), int(doc["height"])
        frames = sorted(doc["frames"], key=lambda f: int(f["index"]))
        poses = []
        for f in frames:
            rot = [float(v) for v in f["rotation"]]
            trans = [float(v) for v in f["translation"]]
            if len(rot) != 9 or len(trans) != 3:
                raise FormatError(f"frame {f['index']}: rotation needs 9 and translation 3 numbers")
            K = Intrinsics(float(f["fx"]), float(f["fy"]), float(f["cx"]), float(f["cy"]), width, height)
            poses.append(CameraPose(K, Extrinsics(np.reshape(rot, (3, 3)), trans), int(f["index"])))
        return CameraTrajectory(tuple(poses))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid trajectory document: {exc!r}") from None


def dumps_trajectory(traj: CameraTrajectory) -> str:
    # json emits shortest round-trip reprs, so doubles survive a write/read cycle exactly
    return json.dumps(trajectory_to_dict(traj), indent=1) + "\n"


def loads_trajectory(text: str) -> CameraTrajectory:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"trajectory is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError("trajectory JSON must be an object")
    return trajectory_from_dict(doc)


def load_trajectory(path) -> CameraTrajectory:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads_trajectory(fh.read())
    except OSError as exc:
        raise FormatError(f"cannot read trajectory {path}: {exc.strerror}") from None


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> Extrinsics:
    """World-to-camera extrinsics for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear toward the top of the
    image; with image y pointing down the default keeps world -y up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise ContractError("look_at: viewing direction parallel to up vector")
    x /= n
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Extrinsics(R, -R @ eye)


def angle_between(a, b) -> np.ndarray:
    """Angle in degrees between direction arrays (..., 3)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


__all__ = [
    "Intrinsics",
    "Extrinsics",
    "CameraPose",
    "CameraTrajectory",
    "Projection",
    "camera_center",
    "camera_directions",
    "pixel_to_ray",
    "pixels_to_rays",
    "pixel_grid_rays",
    "project_point",
    "project_points",
    "nearest_pixel",
    "look_at",
    "angle_between",
    "trajectory_to_dict",
    "trajectory_from_dict",
    "dumps_trajectory",
    "loads_trajectory",
    "load_trajectory",
]
