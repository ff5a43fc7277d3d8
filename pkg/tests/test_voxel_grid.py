import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camcond.camera import CameraPose, CameraTrajectory, Extrinsics, Intrinsics
from camcond.errors import ContractError, FormatError
from camcond.voxel import (
    VoxelGrid,
    build_grid,
    build_incidence,
    decode_incidence,
    encode_incidence,
    traverse,
    traverse_rays,
)

from conftest import random_rotation, random_trajectory
from oracles import dense_incidence_mask, dense_march, voxel_crossing


def random_grid(rng):
    res = tuple(int(r) for r in rng.integers(1, 12, 3))
    return VoxelGrid(res, rng.uniform(1, 6, 3), rng.normal(size=3))


def random_rays(rng, grid, n):
    o = grid.center + rng.uniform(-1, 1, (n, 3)) * grid.extent
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return o, d


def test_grid_center_single_camera():
    K = Intrinsics(10.0, 10.0, 2.0, 2.0, 4, 4)
    traj = CameraTrajectory((CameraPose(K, Extrinsics.identity(), 0),))
    assert np.array_equal(build_grid(traj).center, np.zeros(3))


def test_grid_center_midpoint():
    K = Intrinsics(10.0, 10.0, 2.0, 2.0, 4, 4)
    poses = (CameraPose(K, Extrinsics.identity(), 0), CameraPose(K, Extrinsics(np.eye(3), [-2.0, 0, 0]), 1))
    assert np.allclose(build_grid(CameraTrajectory(poses)).center, [1, 0, 0])


def test_grid_center_is_mean(rng):
    traj = random_trajectory(rng, frames=7, width=8, height=8)
    c = traj.centers()
    assert np.max(np.abs(build_grid(traj).center - sum(c) / len(c))) < 1e-12


def test_grid_invariants():
    with pytest.raises(ContractError):
        VoxelGrid((0, 2, 2), 1.0, np.zeros(3))
    with pytest.raises(ContractError):
        VoxelGrid(4, -1.0, np.zeros(3))
    g = VoxelGrid((2, 4, 8), (2.0, 2.0, 4.0), np.zeros(3))
    assert np.allclose(g.voxel_size, [1.0, 0.5, 0.5])
    assert g.n_voxels == 64
    assert g.linear_index(1, 2, 3) == (1 * 4 + 2) * 8 + 3


def test_axis_aligned_ray():
    g = VoxelGrid(4, 4.0, np.zeros(3))
    segs = traverse(((-3, 0.1, 0.1), (1, 0, 0)), g)
    assert [s[0] for s in segs] == [10, 26, 42, 58]
    ix = [g.unravel(s[0])[0] for s in segs]
    assert ix == [0, 1, 2, 3]
    assert [(s[1], s[2]) for s in segs] == [(1, 2), (2, 3), (3, 4), (4, 5)]


def test_ray_pointing_away():
    g = VoxelGrid(4, 4.0, np.zeros(3))
    assert traverse(((-3, 0.1, 0.1), (-1, 0, 0)), g) == []


def test_non_unit_direction_rejected():
    with pytest.raises(ContractError):
        traverse(((0, 0, 0), (2, 0, 0)), VoxelGrid(4, 4.0, np.zeros(3)))


def test_ray_from_inside_starts_at_zero():
    g = VoxelGrid(4, 4.0, np.zeros(3))
    segs = traverse(((0.5, 0.5, 0.5), (0, 0, 1)), g)
    assert segs[0][1] == 0.0 and len(segs) == 2


def _check_against_oracles(grid, o, d):
    ptr, vox, t0, t1 = traverse_rays(o, d, grid)
    step = 0.02 * float(grid.voxel_size.min())
    for r in range(len(o)):
        s = slice(ptr[r], ptr[r + 1])
        got = vox[s].tolist()
        assert len(set(got)) == len(got)
        t_max = t1[s][-1] + 1.0 if got else float(np.linalg.norm(grid.extent) * 3)
        t_max = max(t_max, float(np.linalg.norm(o[r] - grid.center) + np.linalg.norm(grid.extent)))
        marched = dense_march(o[r], d[r], grid, t_max)
        assert marched <= set(got), "traversal missed a voxel"
        for v, a, b in zip(got, t0[s], t1[s]):
            exact = voxel_crossing(o[r], d[r], grid, v)
            assert exact is not None
            assert abs(exact[0] - a) < 1e-9 and abs(exact[1] - b) < 1e-9
            if v not in marched:
                # too short for the march to sample
                assert b - a < step
        # ordered, non-overlapping and contiguous
        assert np.all(t0[s] < t1[s])
        assert np.all(np.abs(t1[s][:-1] - t0[s][1:]) < 1e-9)


def test_random_rays_match_oracles(rng):
    for _ in range(20):
        grid = random_grid(rng)
        o, d = random_rays(rng, grid, 50)
        _check_against_oracles(grid, o, d)


def test_axis_parallel_and_plane_rays(rng):
    grid = VoxelGrid((4, 5, 3), (4.0, 5.0, 3.0), np.zeros(3))
    o = np.array([[-5, 0.5, 0.5], [-5, 0.0, 0.5], [0.0, 0.0, -4], [1.0, 1.0, 1.0], [-5, -2.5, 0]])
    d = np.array([[1, 0, 0], [1, 0, 0], [0, 0, 1], [-1, 0, 0], [1, 0, 0]], float)
    _check_against_oracles(grid, o, d)
    ptr, vox, _, _ = traverse_rays(o, d, grid)
    # a ray on a voxel face enters the voxels on its positive side
    iy = [grid.unravel(v)[1] for v in vox[ptr[1] : ptr[2]]]
    assert set(iy) == {2}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_traversal_property(seed):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng)
    o, d = random_rays(rng, grid, 10)
    ptr, vox, t0, t1 = traverse_rays(o, d, grid)
    assert ptr[0] == 0 and ptr[-1] == len(vox)
    assert np.all((vox >= 0) & (vox < grid.n_voxels))
    assert np.all(t0 < t1) and np.all(t0 >= 0)
    # segment lengths sum to the chord of the ray inside the grid
    for r in range(len(o)):
        s = slice(ptr[r], ptr[r + 1])
        if ptr[r + 1] > ptr[r]:
            assert abs((t1[s] - t0[s]).sum() - (t1[s][-1] - t0[s][0])) < 1e-9


def _scene(rng, frames=2, w=16, h=16):
    K = Intrinsics(12.0, 12.0, w / 2, h / 2, w, h)
    poses = tuple(
        CameraPose(K, Extrinsics(random_rotation(rng), rng.uniform(-1, 1, 3)), i) for i in range(frames)
    )
    return CameraTrajectory(poses)


def test_inside_camera_every_pixel_hits():
    K = Intrinsics(4.0, 4.0, 2.0, 2.0, 4, 4)
    traj = CameraTrajectory((CameraPose(K, Extrinsics.identity(), 0),))
    inc = build_incidence(traj, build_grid(traj, 8, 4.0), downsample=2)
    assert inc.n_rays == 4
    assert all(inc.pixel_voxels(r) for r in range(4))


def test_transpose_is_exact(rng):
    for _ in range(5):
        traj = _scene(rng)
        inc = build_incidence(traj, build_grid(traj, 6, 3.0), downsample=2)
        fwd = {(r, v) for r in range(inc.n_rays) for v, _, _ in inc.pixel_voxels(r)}
        bwd = {(r, v) for v in range(inc.grid.n_voxels) for r in inc.voxel_pixels(v)}
        assert fwd == bwd
        for v in range(inc.grid.n_voxels):
            rays = inc.voxel_pixels(v)
            assert rays == sorted(rays)


def test_incidence_matches_dense_mask(rng):
    from camcond.voxel.grid import GRAZE_EPS, frame_rays

    traj = _scene(rng, 2, 8, 8)
    grid = build_grid(traj, 4, 3.0)
    inc = build_incidence(traj, grid)
    o = np.concatenate([frame_rays(p, 1)[0] for p in traj])
    d = np.concatenate([frame_rays(p, 1)[1] for p in traj])
    dense = dense_incidence_mask(o, d, grid, GRAZE_EPS * grid.voxel_size.min())
    sparse = np.zeros_like(dense)
    sparse[inc.segment_rays(), inc.voxel] = True
    assert np.array_equal(dense, sparse)


def test_downsample_quarters_rays(rng):
    traj = _scene(rng, 1, 32, 16)
    grid = build_grid(traj, 4, 4.0)
    a = build_incidence(traj, grid, downsample=2)
    b = build_incidence(traj, grid, downsample=4)
    assert a.n_rays == 4 * b.n_rays


def test_downsample_must_divide(rng):
    traj = _scene(rng, 1, 12, 12)
    with pytest.raises(ContractError):
        build_incidence(traj, build_grid(traj, 4), downsample=5)


def test_ccvi_roundtrip(rng):
    traj = _scene(rng)
    inc = build_incidence(traj, build_grid(traj, 6, 3.0), downsample=2)
    data = encode_incidence(inc)
    doc = decode_incidence(data)
    assert data[:4] == b"CCVI"
    assert doc["resolution"] == (6, 6, 6) and doc["frames"] == 2 and (doc["width"], doc["height"]) == (8, 8)
    assert np.array_equal(doc["ray_ptr"], inc.ray_ptr)
    assert np.array_equal(doc["voxel"], inc.voxel)
    assert np.array_equal(doc["t_entry"], inc.t_entry.astype(np.float32))
    assert encode_incidence(inc) == data


@pytest.mark.parametrize("cut", [3, 27, -1])
def test_ccvi_rejects_truncation(rng, cut):
    traj = _scene(rng)
    data = encode_incidence(build_incidence(traj, build_grid(traj, 4, 3.0), downsample=4))
    with pytest.raises(FormatError):
        decode_incidence(data[:cut])


def test_ccvi_rejects_trailing_bytes(rng):
    traj = _scene(rng)
    data = encode_incidence(build_incidence(traj, build_grid(traj, 4, 3.0), downsample=4))
    with pytest.raises(FormatError):
        decode_incidence(data + b"\x00")
