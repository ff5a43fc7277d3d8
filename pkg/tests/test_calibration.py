import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camcond.calibration import (
    SfmPointSet,
    calibrate,
    collect_depth_ratios,
    estimate_scale,
    frame_depth_ratios,
    scale_trajectory,
    sfm_points_from_json,
    sfm_points_to_json,
)
from camcond.camera import CameraPose, CameraTrajectory, Extrinsics, Intrinsics, project_points
from camcond.errors import CalibrationError, ContractError, FormatError
from camcond.reprojection import DepthMap, reproject_sequence, unproject_frame
from camcond.synth import generate_scene, sample_sfm_points

K = Intrinsics(20.0, 20.0, 4.5, 4.5, 8, 8)


def trimmed_mean_oracle(values):
    s = sorted(float(v) for v in values)
    cut = len(s) // 10
    kept = s[cut : len(s) - cut]
    return math.fsum(kept) / len(kept)


def test_single_ratio():
    pose = CameraPose(K, Extrinsics.identity())
    r = frame_depth_ratios(np.array([[0, 0, 4.0]]), DepthMap(np.full((8, 8), 2.0)), pose)
    assert r.tolist() == [2.0]


def test_point_behind_camera_gives_no_ratio():
    pose = CameraPose(K, Extrinsics.identity())
    r = frame_depth_ratios(np.array([[0, 0, -4.0], [0, 0, 3.0]]), DepthMap(np.full((8, 8), 1.0)), pose)
    assert r.tolist() == [3.0]


def test_invalid_metric_depth_skipped():
    pose = CameraPose(K, Extrinsics.identity())
    d = np.full((8, 8), 2.0)
    d[4, 4] = 0.0
    assert frame_depth_ratios(np.array([[0, 0, 4.0]]), DepthMap(d), pose).size == 0


def test_exact_scaled_scene_ratios():
    _, depths, traj, _ = generate_scene(0, "orbit", 4, 64, 48)
    pts = sample_sfm_points(depths, traj, stride=8, scale=3.0)
    sfm_traj = scale_trajectory(traj, 3.0)
    r = collect_depth_ratios(pts, [DepthMap(d) for d in depths], sfm_traj)
    assert r.size == len(pts)
    assert np.max(np.abs(r - 3.0)) < 1e-9


def test_constant_ratios():
    rep = estimate_scale(np.full(20, 2.0))
    assert rep.mean_ratio == 2.0 and rep.factor == 0.5
    assert rep.ratio_count == 16 and rep.trimmed_per_side == 2


def test_outlier_trimmed():
    rep = estimate_scale([2.0] * 10 + [50.0])
    assert rep.trimmed_per_side == 1
    assert abs(rep.mean_ratio - 2.0) < 1e-12


def test_one_to_hundred():
    rep = estimate_scale(np.arange(1, 101))
    assert rep.mean_ratio == 50.5
    assert rep.ratio_count == 80


def test_small_samples_not_trimmed():
    assert estimate_scale([3.0, 5.0]).mean_ratio == 4.0


def test_empty_ratios_fail():
    with pytest.raises(CalibrationError):
        estimate_scale([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=300), st.randoms())
def test_trimmed_mean_matches_oracle_and_ignores_order(values, rnd):
    rep = estimate_scale(values)
    assert rep.mean_ratio == trimmed_mean_oracle(values)
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert estimate_scale(shuffled).mean_ratio == rep.mean_ratio


def test_factor_one_is_identity(rng):
    traj = CameraTrajectory((CameraPose(K, Extrinsics(np.eye(3), rng.normal(size=3)), 0),))
    assert scale_trajectory(traj, 1.0) is traj


def test_factor_two_scales_center():
    E = Extrinsics(np.eye(3), [-1.0, -1.0, -1.0])
    out = scale_trajectory(CameraTrajectory((CameraPose(K, E, 0),)), 2.0)
    assert np.allclose(out.centers()[0], [2, 2, 2])


def test_nonpositive_factor_rejected():
    traj = CameraTrajectory((CameraPose(K, Extrinsics.identity(), 0),))
    with pytest.raises(ContractError):
        scale_trajectory(traj, 0.0)


@pytest.mark.parametrize("lam", [0.1, 3.0, 10.0])
def test_scale_equivariance(lam):
    _, depths, traj, _ = generate_scene(2, "dolly", 4, 64, 48)
    dms = [DepthMap(d) for d in depths]
    base = sample_sfm_points(depths, traj, stride=8)
    out1, rep1, _ = calibrate(base, dms, traj)
    scaled_pts = SfmPointSet(base.points * lam, base.tracks)
    out2, rep2, _ = calibrate(scaled_pts, dms, scale_trajectory(traj, lam))
    assert abs(rep2.mean_ratio / rep1.mean_ratio - lam) < 1e-9 * lam
    for a, b in zip(out1, out2):
        assert np.allclose(a.extrinsics.translation, b.extrinsics.translation, rtol=1e-9, atol=1e-12)


def test_calibrated_reprojection_pixel_error():
    images, depths, traj, _ = generate_scene(6, "dolly", 6, 64, 48, step=0.1)
    pts = sample_sfm_points(depths, traj, stride=8, scale=3.0)
    dms = [DepthMap(d) for d in depths]
    fixed, rep, _ = calibrate(pts, dms, scale_trajectory(traj, 3.0))
    cloud = unproject_frame(images[0], dms[0], fixed[0])
    errs = []
    for p_fix, p_true in zip(fixed, traj):
        a = np.stack(project_points(p_fix, cloud.points)[:2], 1)
        b = np.stack(project_points(p_true, cloud.points)[:2], 1)
        ok = np.all(np.isfinite(a) & np.isfinite(b), axis=1)
        errs.append(np.linalg.norm(a[ok] - b[ok], axis=1).mean())
    assert max(errs) < 0.5
    video = reproject_sequence(images[0], dms[0], fixed)
    assert video.masks[0].all()


def test_tracks_restrict_frames():
    # a point seen only in frame 1 must not contribute a ratio in frame 0
    poses = (CameraPose(K, Extrinsics.identity(), 0), CameraPose(K, Extrinsics.identity(), 1))
    traj = CameraTrajectory(poses)
    dms = [DepthMap(np.full((8, 8), 1.0)), DepthMap(np.full((8, 8), 2.0))]
    pts = SfmPointSet(np.array([[0, 0, 4.0]]), ((1,),))
    r, counts = collect_depth_ratios(pts, dms, traj, return_counts=True)
    assert r.tolist() == [2.0] and counts == [0, 1]
    r = collect_depth_ratios(SfmPointSet(np.array([[0, 0, 4.0]])), dms, traj)
    assert r.tolist() == [4.0, 2.0]


def test_sfm_json_roundtrip():
    pts = SfmPointSet(np.array([[1.0, 2.0, 3.0], [0.1, 0.2, 0.3]]), ((0,), (0, 2)))
    back = sfm_points_from_json(sfm_points_to_json(pts))
    assert np.array_equal(back.points, pts.points) and back.tracks == pts.tracks
    plain = sfm_points_from_json([[1, 2, 3]])
    assert plain.tracks is None


@pytest.mark.parametrize("doc", [[], {}, [[1, 2]], [{"frames": [0]}], [[1, 2, 3], {"xyz": [1, 2, 3], "frames": [0]}]])
def test_sfm_json_rejects(doc):
    with pytest.raises(FormatError):
        sfm_points_from_json(doc)


def test_report_dict():
    d = estimate_scale([1.0, 2.0, 3.0], [3]).to_dict()
    assert d["mean_ratio"] == 2.0 and d["factor"] == 0.5 and d["per_frame_counts"] == [3]
