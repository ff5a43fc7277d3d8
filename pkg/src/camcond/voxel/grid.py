"""Voxel grid, incremental ray traversal and the sparse pixel/voxel incidence."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..camera import CameraPose, CameraTrajectory, pixel_grid_rays
from ..errors import ContractError, FormatError

# segments shorter than this fraction of the smallest voxel side are edge/corner
# grazes produced by simultaneous plane crossings and carry no interior
GRAZE_EPS = 1e-12
CCVI_MAGIC = b"CCVI"


@dataclass(frozen=True)
class VoxelGrid:
    resolution: tuple
    extent: np.ndarray
    center: np.ndarray
    feature_dim: int = 8

    def __post_init__(self):
        res = tuple(int(r) for r in np.broadcast_to(self.resolution, (3,)))
        ext = np.broadcast_to(np.asarray(self.extent, dtype=np.float64), (3,)).copy()
        ctr = np.asarray(self.center, dtype=np.float64).reshape(3).copy()
        if min(res) < 1:
            raise ContractError(f"grid resolution must be >= 1 per axis, got {res}")
        if not np.all(ext > 0):
            raise ContractError(f"grid extent must be positive, got {ext}")
        if self.feature_dim < 1:
            raise ContractError("feature_dim must be >= 1")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "center", ctr)

    @property
    def voxel_size(self) -> np.ndarray:
        return self.extent / np.asarray(self.resolution)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.extent / 2

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.extent / 2

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    def linear_index(self, ix, iy, iz):
        _, ny, nz = self.resolution
        return (np.asarray(ix) * ny + iy) * nz + iz

    def unravel(self, index):
        return np.unravel_index(index, self.resolution)


def build_grid(trajectory: CameraTrajectory, resolution=32, extent=8.0, feature_dim: int = 8) -> VoxelGrid:
    """Axis-aligned grid centered on the mean camera center."""
    return VoxelGrid(resolution, extent, trajectory.centers().mean(axis=0), feature_dim)


def _slab(origins, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - origins) / dirs
        tb = (hi - origins) / dirs
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    par = dirs == 0
    # half-open cells: a ray lying in a lower face belongs to the cells above it
    inside = (origins >= lo) & (origins < hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    return tmin.max(axis=1), tmax.min(axis=1)


def traverse_rays(origins, directions, grid: VoxelGrid):
    """Amanatides-Woo style stepping for many rays at once.

    Returns CSR arrays ``(ray_ptr, voxel, t_entry, t_exit)``: the segments of
    ray ``r`` are ``ray_ptr[r]:ray_ptr[r+1]``, ordered by increasing ``t``, and
    cover exactly the voxels whose interiors the ray crosses for ``t > 0``.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n_rays = len(o)
    lo, vs = grid.lower, grid.voxel_size
    res = np.asarray(grid.resolution)
    tnear, tfar = _slab(o, d, lo, grid.upper)
    t_cur = np.maximum(tnear, 0.0)
    active = np.nonzero(tfar > t_cur)[0]

    step = np.sign(d).astype(np.int64)
    pos = (o[active] + t_cur[active, None] * d[active] - lo) / vs
    # on a plane, start in the voxel the ray is moving into
    idx = np.where(step[active] < 0, np.ceil(pos) - 1, np.floor(pos)).astype(np.int64)
    idx = np.clip(idx, 0, res - 1)

    rays_a, o_a, d_a, s_a = active, o[active], d[active], step[active]
    t_a, tf_a = t_cur[active], tfar[active]
    with np.errstate(divide="ignore"):
        inv = 1.0 / d_a

    out_ray, out_vox, out_t0, out_t1 = [], [], [], []
    ny, nz = res[1], res[2]
    while rays_a.size:
        plane = lo + (idx + (s_a > 0)) * vs
        with np.errstate(invalid="ignore"):
            t_axis = np.where(s_a != 0, (plane - o_a) * inv, np.inf)
        axis = np.argmin(t_axis, axis=1)
        t_next = np.minimum(t_axis[np.arange(len(axis)), axis], tf_a)
        out_ray.append(rays_a)
        out_vox.append((idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2])
        out_t0.append(t_a)
        out_t1.append(t_next)

        rows = np.arange(len(axis))
        idx[rows, axis] += s_a[rows, axis]
        alive = (t_next < tf_a) & np.all((idx >= 0) & (idx < res), axis=1)
        rays_a, o_a, d_a, s_a, inv = rays_a[alive], o_a[alive], d_a[alive], s_a[alive], inv[alive]
        idx, tf_a, t_a = idx[alive], tf_a[alive], t_next[alive]

    if out_ray:
        ray = np.concatenate(out_ray)
        vox = np.concatenate(out_vox)
        t0 = np.concatenate(out_t0)
        t1 = np.concatenate(out_t1)
        keep = (t1 - t0) > GRAZE_EPS * float(vs.min())
        ray, vox, t0, t1 = ray[keep], vox[keep], t0[keep], t1[keep]
        order = np.argsort(ray, kind="stable")
        ray, vox, t0, t1 = ray[order], vox[order], t0[order], t1[order]
    else:
        ray = vox = np.empty(0, np.int64)
        t0 = t1 = np.empty(0)
    ptr = np.zeros(n_rays + 1, dtype=np.int64)
    np.cumsum(np.bincount(ray, minlength=n_rays), out=ptr[1:])
    return ptr, vox.astype(np.int64), t0, t1


def traverse(ray, grid: VoxelGrid) -> list[tuple[int, float, float]]:
    """Ordered ``(voxel index, t_entry, t_exit)`` list for one ``(origin, direction)`` ray."""
    origin, direction = ray
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ContractError("ray direction must be unit length")
    _, vox, t0, t1 = traverse_rays(np.asarray(origin)[None], direction[None], grid)
    return [(int(v), float(a), float(b)) for v, a, b in zip(vox, t0, t1)]


@dataclass(frozen=True)
class SparseIncidence:
    """Pixel/voxel incidence of all rays of a trajectory.

    Rays are numbered frame-major, then row-major over the downsampled image.
    The forward view is CSR over rays (segments in ascending ``t``); the
    transposed view is CSR over voxels listing ``(ray, segment)`` in ascending
    ray order.
    """

    grid: VoxelGrid
    frames: int
    width: int
    height: int
    ray_ptr: np.ndarray
    voxel: np.ndarray
    t_entry: np.ndarray
    t_exit: np.ndarray
    voxel_ptr: np.ndarray
    voxel_rays: np.ndarray
    voxel_segments: np.ndarray

    @property
    def n_rays(self) -> int:
        return self.frames * self.width * self.height

    @property
    def n_segments(self) -> int:
        return int(self.voxel.size)

    def segment_rays(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rays), np.diff(self.ray_ptr))

    def ray_id(self, frame: int, row: int, col: int) -> int:
        return (frame * self.height + row) * self.width + col

    def pixel_voxels(self, ray: int) -> list[tuple[int, float, float]]:
        s = slice(self.ray_ptr[ray], self.ray_ptr[ray + 1])
        return list(zip(self.voxel[s].tolist(), self.t_entry[s].tolist(), self.t_exit[s].tolist()))

    def voxel_pixels(self, voxel: int) -> list[int]:
        return self.voxel_rays[self.voxel_ptr[voxel] : self.voxel_ptr[voxel + 1]].tolist()

    @classmethod
    def from_segments(cls, grid, frames, width, height, ray_ptr, voxel, t_entry, t_exit):
        seg_ray = np.repeat(np.arange(frames * width * height), np.diff(ray_ptr))
        order = np.lexsort((seg_ray, voxel))
        vptr = np.zeros(grid.n_voxels + 1, dtype=np.int64)
        np.cumsum(np.bincount(voxel, minlength=grid.n_voxels), out=vptr[1:])
        return cls(grid, frames, width, height, ray_ptr, voxel, t_entry, t_exit, vptr, seg_ray[order], order)


def frame_rays(pose: CameraPose, downsample: int):
    K = pose.intrinsics.downsampled(downsample)
    small = CameraPose(K, pose.extrinsics, pose.frame_index)
    origin, dirs = pixel_grid_rays(small)
    return np.broadcast_to(origin, dirs.shape).reshape(-1, 3), dirs.reshape(-1, 3), K


def build_incidence(trajectory: CameraTrajectory, grid: VoxelGrid, downsample: int = 1) -> SparseIncidence:
    if downsample < 1 or trajectory.width % downsample or trajectory.height % downsample:
        raise ContractError(
            f"downsample {downsample} must divide image size {trajectory.width}x{trajectory.height}"
        )
    origins, dirs = [], []
    for pose in trajectory:
        o, d, K = frame_rays(pose, downsample)
        origins.append(o)
        dirs.append(d)
    ptr, vox, t0, t1 = traverse_rays(np.concatenate(origins), np.concatenate(dirs), grid)
    return SparseIncidence.from_segments(grid, len(trajectory), K.width, K.height, ptr, vox, t0, t1)


# -- CCVI binary format ---------------------------------------------------------


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def encode_incidence(inc: SparseIncidence) -> bytes:
    nx, ny, nz = inc.grid.resolution
    parts = [CCVI_MAGIC, struct.pack("<6I", nx, ny, nz, inc.frames, inc.width, inc.height)]
    rec = np.empty(inc.n_segments, dtype=[("v", "<u4"), ("t0", "<f4"), ("t1", "<f4")])
    rec["v"], rec["t0"], rec["t1"] = inc.voxel, inc.t_entry, inc.t_exit
    payload = rec.tobytes()
    for r in range(inc.n_rays):
        a, b = int(inc.ray_ptr[r]), int(inc.ray_ptr[r + 1])
        parts.append(_varint(b - a))
        parts.append(payload[12 * a : 12 * b])
    return b"".join(parts)


def decode_incidence(data: bytes) -> dict:
    """Parse a CCVI blob into header fields plus CSR arrays (f32 ``t`` values)."""
    if len(data) < 28 or data[:4] != CCVI_MAGIC:
        raise FormatError("not a CCVI incidence file (bad magic)")
    nx, ny, nz, frames, w, h = struct.unpack("<6I", data[4:28])
    pos, counts, chunks = 28, [], []
    for _ in range(frames * w * h):
        n, shift = 0, 0
        while True:
            if pos >= len(data):
                raise FormatError("truncated CCVI file")
            b = data[pos]
            pos += 1
            n |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
        chunks.append(data[pos : pos + 12 * n])
        pos += 12 * n
        counts.append(n)
    if pos != len(data):
        raise FormatError("trailing bytes after CCVI payload")
    rec = np.frombuffer(b"".join(chunks), dtype=[("v", "<u4"), ("t0", "<f4"), ("t1", "<f4")])
    ptr = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return {
        "resolution": (nx, ny, nz),
        "frames": frames,
        "width": w,
        "height": h,
        "ray_ptr": ptr,
        "voxel": rec["v"].astype(np.int64),
        "t_entry": rec["t0"],
        "t_exit": rec["t1"],
    }
