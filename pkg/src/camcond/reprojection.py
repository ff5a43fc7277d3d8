"""Reproject the initial frame's visible surface into later cameras.

The frame-0 depth map is unprojected into a colored point cloud and splatted
into every camera of the trajectory with a 1x1-pixel z-buffer. Pixels that
receive no point keep a background color and are marked false in the
visibility mask; these masks also drive the masked evaluation metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraPose, CameraTrajectory, nearest_pixel, pixel_grid_rays, project_points
from .errors import ContractError
from .io import parallel_map

DEFAULT_BACKGROUND = (255, 0, 255)


@dataclass(frozen=True)
class DepthMap:
    """Metric camera-space depth (z), shape (H, W), with a validity mask."""

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        finite_pos = np.isfinite(values) & (values > 0)
        valid = finite_pos if self.valid is None else np.asarray(self.valid, dtype=bool) & finite_pos
        if valid.shape != values.shape:
            raise ContractError("depth validity mask shape differs from depth values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PointCloud:
    """World points (N, 3), their colors (N, 3) and source pixels (N, 2) as (u, v)."""

    points: np.ndarray
    colors: np.ndarray
    source_pixels: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ContractError("point cloud contains non-finite coordinates")
        colors = np.asarray(self.colors)
        if colors.ndim != 2:
            colors = colors.reshape(len(colors), int(np.prod(colors.shape[1:])))
        if len(colors) != len(pts):
            raise ContractError(f"{len(colors)} colors for {len(pts)} points")
        src = self.source_pixels
        src = np.zeros((len(pts), 2), np.int64) if src is None else np.asarray(src, np.int64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "source_pixels", src)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ReprojectedVideo:
    frames: list
    masks: list
    background_color: tuple

    def new_content_fraction(self) -> list[float]:
        return [float(1.0 - m.mean()) for m in self.masks]


def unproject_frame(image: np.ndarray, depth: DepthMap, pose0: CameraPose) -> PointCloud:
    """One point per valid-depth pixel, in row-major source-pixel order."""
    image = np.asarray(image)
    if image.shape[:2] != depth.shape or depth.shape != (pose0.height, pose0.width):
        raise ContractError(
            f"image {image.shape[:2]}, depth {depth.shape} and camera "
            f"{(pose0.height, pose0.width)} dimensions differ"
        )
    origin, dirs = pixel_grid_rays(pose0)
    # depth is camera z; scale each unit ray so its camera-space z equals the depth
    dz = dirs @ pose0.extrinsics.rotation[2]
    vv, uu = np.nonzero(depth.valid)
    pts = origin + dirs[vv, uu] * (depth.values[vv, uu] / dz[vv, uu])[:, None]
    return PointCloud(pts, image[vv, uu], np.stack([uu, vv], axis=1))


def _zbuffer_winners(pose: CameraPose, points: np.ndarray):
    """Return (linear pixel, winning point index) pairs of a 1x1 z-buffer."""
    px, py, depth, _, in_frame = project_points(pose, points)
    idx = np.nonzero(in_frame)[0]
    if idx.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    u, v = nearest_pixel(px[idx], py[idx])
    lin = v * pose.width + u
    # nearest depth wins; exact depth ties go to the lowest point index, which for
    # clouds from unproject_frame is the row-major source pixel order
    order = np.lexsort((idx, depth[idx], lin))
    lin_sorted = lin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    return lin_sorted[first], idx[order][first]


def render_pointcloud(cloud: PointCloud, pose: CameraPose, background=DEFAULT_BACKGROUND):
    h, w = pose.height, pose.width
    nch = cloud.colors.shape[1] if len(cloud) else len(background)
    dtype = cloud.colors.dtype if len(cloud) else np.uint8
    image = np.empty((h * w, nch), dtype=dtype)
    image[:] = np.asarray(background, dtype=dtype)
    mask = np.zeros(h * w, dtype=bool)
    if len(cloud):
        lin, winner = _zbuffer_winners(pose, cloud.points)
        image[lin] = cloud.colors[winner]
        mask[lin] = True
    return image.reshape(h, w, nch), mask.reshape(h, w)


def reproject_sequence(
    image: np.ndarray,
    depth: DepthMap,
    trajectory: CameraTrajectory,
    background=DEFAULT_BACKGROUND,
    threads: int = 1,
) -> ReprojectedVideo:
    cloud = unproject_frame(image, depth, trajectory[0])
    rendered = parallel_map(lambda p: render_pointcloud(cloud, p, background), trajectory.poses, threads)
    return ReprojectedVideo(
        [f for f, _ in rendered], [m for _, m in rendered], tuple(int(c) for c in background)
    )
