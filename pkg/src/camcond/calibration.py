"""Recover the per-scene SfM scale from metric monocular depth.

Each SfM point seen in a frame contributes one ratio
``sfm_camera_depth / metric_depth``. The robust scene scale is the mean of
those ratios after discarding ``floor(0.1 * n)`` values from each end of the
sorted list. SfM positions are then converted to meters by multiplying them
with ``1 / mean_ratio``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraPose, CameraTrajectory, Extrinsics, nearest_pixel, project_points
from .errors import CalibrationError, ContractError, FormatError
from .reprojection import DepthMap

TRIM_FRACTION = 0.10


@dataclass(frozen=True)
class SfmPointSet:
    """SfM points (N, 3); ``tracks[i]`` optionally lists the frames observing point ``i``."""

    points: np.ndarray
    tracks: tuple = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ContractError("SfM points must be finite")
        object.__setattr__(self, "points", pts)
        if self.tracks is not None:
            tracks = tuple(tuple(int(f) for f in t) for t in self.tracks)
            if len(tracks) != len(pts):
                raise ContractError("one track per SfM point required")
            object.__setattr__(self, "tracks", tracks)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CalibrationReport:
    mean_ratio: float
    factor: float
    ratio_count: int
    total_ratios: int
    trimmed_per_side: int
    trimmed_fraction: float = TRIM_FRACTION
    ratio_spread: float = 0.0
    per_frame_counts: list = field(default_factory=list)

    @property
    def scale(self) -> float:
        """SfM units per meter; the factor applied to positions is its inverse."""
        return self.mean_ratio

    def to_dict(self) -> dict:
        return {
            "scale": self.mean_ratio,
            "mean_ratio": self.mean_ratio,
            "factor": self.factor,
            "ratio_count": self.ratio_count,
            "total_ratios": self.total_ratios,
            "trimmed_per_side": self.trimmed_per_side,
            "trimmed_fraction": self.trimmed_fraction,
            "ratio_spread": self.ratio_spread,
            "per_frame_counts": list(self.per_frame_counts),
        }


def frame_depth_ratios(points: np.ndarray, depth: DepthMap, pose: CameraPose) -> np.ndarray:
    px, py, z, _, in_frame = project_points(pose, points)
    idx = np.nonzero(in_frame)[0]
    u, v = nearest_pixel(px[idx], py[idx])
    ok = depth.valid[v, u]
    metric = depth.values[v[ok], u[ok]]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = z[idx[ok]] / metric
    return r[np.isfinite(r) & (r > 0)]


def collect_depth_ratios(
    points: SfmPointSet,
    depths: Sequence[DepthMap],
    trajectory: CameraTrajectory,
    return_counts: bool = False,
):
    """All sfm/metric depth ratios, frame-major then point order."""
    if len(depths) != len(trajectory):
        raise ContractError(f"{len(depths)} depth maps for {len(trajectory)} frames")
    ratios, counts = [], []
    for k, (pose, depth) in enumerate(zip(trajectory, depths)):
        if depth.shape != (pose.height, pose.width):
            raise ContractError(f"depth map {k} has shape {depth.shape}")
        pts = points.points
        if points.tracks is not None:
            pts = pts[[k in t for t in points.tracks]]
        r = frame_depth_ratios(pts, depth, pose)
        ratios.append(r)
        counts.append(int(r.size))
    out = np.concatenate(ratios) if ratios else np.empty(0)
    return (out, counts) if return_counts else out


def estimate_scale(ratios, per_frame_counts=None, trim_fraction: float = TRIM_FRACTION) -> CalibrationReport:
    r = np.sort(np.asarray(ratios, dtype=np.float64).ravel())
    n = r.size
    cut = int(math.floor(trim_fraction * n))
    kept = r[cut : n - cut]
    if kept.size == 0:
        raise CalibrationError(
            f"no depth ratios left after trimming {cut} per side from {n}; "
            "check that SfM points project into frames with valid depth"
        )
    # correctly rounded sum, so the result is independent of summation order
    mean = math.fsum(kept) / kept.size
    if not (math.isfinite(mean) and mean > 0):
        raise CalibrationError(f"mean depth ratio {mean} is not a positive finite number")
    q1, q3 = np.percentile(kept, [25, 75])
    return CalibrationReport(
        mean_ratio=mean,
        factor=1.0 / mean,
        ratio_count=int(kept.size),
        total_ratios=int(n),
        trimmed_per_side=cut,
        trimmed_fraction=trim_fraction,
        ratio_spread=float(q3 - q1),
        per_frame_counts=list(per_frame_counts or []),
    )


def scale_trajectory(trajectory: CameraTrajectory, factor: float) -> CameraTrajectory:
    """Multiply every camera center by ``factor``, keeping rotations and intrinsics."""
    if not factor > 0:
        raise ContractError(f"scale factor must be positive, got {factor}")
    if factor == 1.0:
        return trajectory
    poses = []
    for p in trajectory:
        E = p.extrinsics
        # t' = -R (factor * c) with c = -R^T t reduces to factor * t
        poses.append(CameraPose(p.intrinsics, Extrinsics(E.rotation, factor * E.translation), p.frame_index))
    return CameraTrajectory(tuple(poses))


def apply_scale(trajectory: CameraTrajectory, report: CalibrationReport) -> CameraTrajectory:
    return scale_trajectory(trajectory, report.factor)


def calibrate(points: SfmPointSet, depths, trajectory: CameraTrajectory):
    ratios, counts = collect_depth_ratios(points, depths, trajectory, return_counts=True)
    report = estimate_scale(ratios, counts)
    return apply_scale(trajectory, report), report, ratios


# -- SfM point file ----------------------------------------------------------------


def sfm_points_from_json(doc) -> SfmPointSet:
    """Parse ``[[x, y, z], ...]`` or ``[{"xyz": [...], "frames": [...]}, ...]``."""
    if not isinstance(doc, list) or not doc:
        raise FormatError("SfM points file must be a non-empty JSON array")
    pts, tracks = [], []
    try:
        for item in doc:
            if isinstance(item, dict):
                pts.append([float(v) for v in item["xyz"]])
                obs = item.get("frames", item.get("observations"))
                tracks.append(None if obs is None else [int(o[0] if isinstance(o, list) else o) for o in obs])
            else:
                pts.append([float(v) for v in item])
                tracks.append(None)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad SfM point entry: {exc!r}") from None
    if any(len(p) != 3 for p in pts):
        raise FormatError("SfM points must be [x, y, z] triples")
    if all(t is None for t in tracks):
        return SfmPointSet(np.array(pts))
    if any(t is None for t in tracks):
        raise FormatError("either all SfM points carry observations or none do")
    return SfmPointSet(np.array(pts), tuple(tracks))


def sfm_points_to_json(points: SfmPointSet) -> list:
    if points.tracks is None:
        return [[float(v) for v in p] for p in points.points]
    return [
        {"xyz": [float(v) for v in p], "frames": list(t)} for p, t in zip(points.points, points.tracks)
    ]
