"""Analytic synthetic scenes with exact depth for oracle tests.

A scene is an axis-aligned room seen from inside plus a few axis-aligned
boxes. Surfaces are colored by a smooth solid texture (a sum of low-frequency
sinusoids of the world position), so a pixel's color depends only on the
surface point it sees. Depth maps are camera-space z of the analytic
ray/box intersection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import SfmPointSet
from .camera import CameraPose, CameraTrajectory, Extrinsics, Intrinsics, look_at, pixel_grid_rays
from .errors import ContractError
from .reprojection import DepthMap

PATH_KINDS = ("dolly", "orbit", "static")


@dataclass(frozen=True)
class SyntheticScene:
    room_lo: np.ndarray
    room_hi: np.ndarray
    boxes: tuple  # of (lo, hi) pairs
    tex_freq: np.ndarray  # (K, 3) spatial frequencies, rad/m
    tex_phase: np.ndarray  # (K, 3) per color channel phase
    tex_amp: np.ndarray  # (K, 3) per color channel amplitude

    def color(self, points: np.ndarray) -> np.ndarray:
        """Linear color in [0, 255] of world points (..., 3)."""
        arg = points @ self.tex_freq.T  # (..., K)
        c = 127.5 + np.sum(self.tex_amp * np.sin(arg[..., None] + self.tex_phase), axis=-2)
        return np.clip(c, 0.0, 255.0)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the first surface hit; rays start inside the room."""
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (self.room_lo - origin) / dirs
            tb = (self.room_hi - origin) / dirs
        t_room = np.min(np.where(dirs != 0, np.maximum(ta, tb), np.inf), axis=-1)
        t_hit = t_room
        for lo, hi in self.boxes:
            with np.errstate(divide="ignore", invalid="ignore"):
                a = (lo - origin) / dirs
                b = (hi - origin) / dirs
            inside = (origin > lo) & (origin < hi)
            tmin = np.where(dirs != 0, np.minimum(a, b), np.where(inside, -np.inf, np.inf))
            tmax = np.where(dirs != 0, np.maximum(a, b), np.where(inside, np.inf, -np.inf))
            tn, tf = tmin.max(axis=-1), tmax.min(axis=-1)
            hit = (tn > 0) & (tn < tf)
            t_hit = np.where(hit & (tn < t_hit), tn, t_hit)
        return t_hit

    def render(self, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
        """8-bit RGB image and exact camera-space depth (H, W)."""
        origin, dirs = pixel_grid_rays(pose)
        t = self.intersect(origin, dirs)
        points = origin + dirs * t[..., None]
        depth = t * (dirs @ pose.extrinsics.rotation[2])
        image = np.round(self.color(points)).astype(np.uint8)
        return image, depth


def random_scene(seed: int) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    room_lo = np.array([-3.0, -2.0, -1.5]) - rng.uniform(0, 0.5, 3)
    room_hi = np.array([3.0, 2.0, 9.0]) + rng.uniform(0, 0.5, 3)
    boxes = []
    for side in (-1, 1):
        # off-axis boxes leave the dolly/orbit corridor around the z axis free
        cx = side * rng.uniform(1.4, 2.2)
        cz = rng.uniform(3.0, 6.5)
        half = rng.uniform(0.3, 0.6, 3)
        lo = np.array([cx, 2.0, cz]) - half
        lo[1] = room_hi[1] - 2 * half[1] - rng.uniform(0.2, 1.5)
        boxes.append((lo, lo + 2 * half))
    k = 3
    freq_dir = rng.normal(size=(k, 3))
    freq_dir /= np.linalg.norm(freq_dir, axis=1, keepdims=True)
    freq = freq_dir * rng.uniform(0.4, 0.9, (k, 1))
    return SyntheticScene(
        room_lo,
        room_hi,
        tuple(boxes),
        freq,
        rng.uniform(0, 2 * np.pi, (k, 3)),
        rng.uniform(15, 30, (k, 3)),
    )


def default_intrinsics(width: int, height: int, hfov_deg: float = 60.0) -> Intrinsics:
    f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
    return Intrinsics(f, f, width / 2, height / 2, width, height)


def camera_path(kind: str, frames: int, intrinsics: Intrinsics, step: float = 0.06) -> CameraTrajectory:
    """Parametric camera paths inside the default room.

    ``dolly`` moves forward along +z by ``step`` meters per frame, ``orbit``
    circles the point (0, 0, 4) at 2.5 m radius, ``static`` repeats one pose.
    """
    if frames < 1:
        raise ContractError("need at least one frame")
    if kind not in PATH_KINDS:
        raise ContractError(f"unknown path kind {kind!r}; choose from {PATH_KINDS}")
    poses = []
    for i in range(frames):
        if kind == "dolly":
            E = Extrinsics(np.eye(3), -np.array([0.0, 0.0, step * i]))
        elif kind == "orbit":
            a = np.radians(-25.0 + 50.0 * i / max(frames - 1, 1))
            eye = np.array([2.5 * np.sin(a), -0.2, 4.0 - 2.5 * np.cos(a)])
            E = look_at(eye, (0.0, 0.0, 4.0))
        else:
            E = Extrinsics(np.eye(3), np.zeros(3))
        poses.append(CameraPose(intrinsics, E, i))
    return CameraTrajectory(tuple(poses))


def generate_scene(seed: int, path_kind: str, frames: int, width: int, height: int, step: float = 0.06):
    """Return ``(images, depths, trajectory, scene)`` for a seeded scene and path."""
    scene = random_scene(seed)
    traj = camera_path(path_kind, frames, default_intrinsics(width, height), step)
    images, depths = [], []
    for pose in traj:
        img, d = scene.render(pose)
        images.append(img)
        depths.append(d)
    return images, depths, traj, scene


def sample_sfm_points(depths, trajectory: CameraTrajectory, stride: int = 16, scale: float = 1.0) -> SfmPointSet:
    """Pseudo-SfM points: pixel centers unprojected with exact depth, times ``scale``.

    Each point's track is the frame it was sampled from, so its reprojection in
    that frame lands exactly on a pixel center.
    """
    pts, tracks = [], []
    for pose, depth in zip(trajectory, depths):
        dm = depth if isinstance(depth, DepthMap) else DepthMap(depth)
        origin, dirs = pixel_grid_rays(pose)
        vv, uu = np.mgrid[stride // 2 : pose.height : stride, stride // 2 : pose.width : stride]
        vv, uu = vv.ravel(), uu.ravel()
        ok = dm.valid[vv, uu]
        vv, uu = vv[ok], uu[ok]
        dz = dirs[vv, uu] @ pose.extrinsics.rotation[2]
        p = origin + dirs[vv, uu] * (dm.values[vv, uu] / dz)[:, None]
        pts.append(p * scale)
        tracks.extend([(pose.frame_index,)] * len(p))
    return SfmPointSet(np.concatenate(pts), tuple(tracks))
