import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polarpose.errors import InvalidInputError
from polarpose.posemath import (CameraIntrinsics, Pose, Roi, SiteTranslation, SymmetryGroup,
                                allo_to_ego, axis_angle, ego_to_allo, exp_so3, is_rotation,
                                log_so3, nearest_rotation, nocs_decode, nocs_encode,
                                random_rotation, roi_affine, rot6d_decode, rot6d_encode,
                                rotation_error, site_decode, site_encode, symmetry_rotations,
                                viewing_rotation)


finite = st.floats(-10, 10, allow_nan=False)
vec6 = arrays(np.float64, 6, elements=finite)
seeds = st.integers(0, 2 ** 32 - 1)


def test_rot6d_examples():
    np.testing.assert_array_equal(rot6d_encode(np.eye(3)), [1, 0, 0, 0, 1, 0])
    rz = axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(rot6d_encode(rz), [0, 1, 0, -1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(rot6d_decode([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(rot6d_decode([2, 0, 0, 1, 1, 0]), np.eye(3), atol=1e-15)


@pytest.mark.parametrize("bad", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 3, 0, 0], [1, 2, 3, 0, 0, 0]])
def test_rot6d_degenerate(bad):
    with pytest.raises(InvalidInputError):
        rot6d_decode(bad)


def test_rot6d_rejects_non_rotation():
    with pytest.raises(InvalidInputError):
        rot6d_encode(np.diag([1.0, 1.0, -1.0]))


@given(seeds)
def test_rot6d_round_trip(seed):
    R = random_rotation(np.random.default_rng(seed))
    np.testing.assert_allclose(rot6d_decode(rot6d_encode(R)), R, atol=1e-9)


@given(vec6)
def test_rot6d_decode_always_rotation(v):
    try:
        R = rot6d_decode(v)
    except InvalidInputError:
        return
    assert is_rotation(R, 1e-9)
    # decode then encode then decode is stable
    np.testing.assert_allclose(rot6d_decode(rot6d_encode(R)), R, atol=1e-9)


@given(seeds)
def test_exp_log_inverse(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3)
    w *= rng.uniform(0, 3.1) / np.linalg.norm(w)
    np.testing.assert_allclose(log_so3(exp_so3(w)), w, atol=1e-9)


def test_log_near_pi():
    R = axis_angle([1, 1, 0], np.pi - 1e-9)
    assert np.linalg.norm(log_so3(R)) == pytest.approx(np.pi, abs=1e-6)
    R = axis_angle([0, 0, 1], np.pi)
    np.testing.assert_allclose(exp_so3(log_so3(R)), R, atol=1e-9)


def test_rotation_error_known_angle():
    assert rotation_error(np.eye(3), axis_angle([0, 1, 0], 0.3)) == pytest.approx(0.3)


def test_nearest_rotation_fixes_drift(rng):
    R = random_rotation(rng)
    noisy = R + 1e-6 * rng.normal(size=(3, 3))
    Rn = nearest_rotation(noisy)
    assert is_rotation(Rn, 1e-12)
    assert np.abs(Rn - R).max() < 1e-5


def test_pose_ops(rng):
    a = Pose(random_rotation(rng), rng.normal(size=3))
    b = Pose(random_rotation(rng), rng.normal(size=3))
    x = rng.normal(size=(10, 3))
    np.testing.assert_allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(x)), x, atol=1e-12)
    assert a.matrix().shape == (4, 4)
    with pytest.raises(InvalidInputError):
        Pose(np.eye(3) * 2, np.zeros(3))
    with pytest.raises(InvalidInputError):
        Pose(np.eye(3), [0, 0, np.nan])


def test_allo_on_axis_is_identity_map(rng):
    R = random_rotation(rng)
    assert np.array_equal(ego_to_allo(Pose(R, [0, 0, 2.0])), R)


def test_allo_errors():
    with pytest.raises(InvalidInputError):
        viewing_rotation([0, 0, 0])
    with pytest.raises(InvalidInputError):
        viewing_rotation([0, 0, -1.0])


@given(seeds)
def test_allo_round_trips(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    t = rng.normal(size=3)
    t[2] = abs(t[2]) + 0.1
    np.testing.assert_allclose(allo_to_ego(ego_to_allo(Pose(R, t)), t), R, atol=1e-9)
    np.testing.assert_allclose(ego_to_allo(Pose(allo_to_ego(R, t), t)), R, atol=1e-9)


def test_viewing_rotation_aligns_axis(rng):
    for _ in range(50):
        t = rng.normal(size=3)
        Rv = viewing_rotation(t)
        assert is_rotation(Rv, 1e-12)
        np.testing.assert_allclose(Rv @ [0, 0, 1], t / np.linalg.norm(t), atol=1e-12)


def test_allo_two_directions(rng):
    R_allo = random_rotation(rng)
    t1, t2 = np.array([0.1, -0.2, 1.0]), np.array([-0.3, 0.05, 0.7])
    R1, R2 = allo_to_ego(R_allo, t1), allo_to_ego(R_allo, t2)
    np.testing.assert_allclose(R2 @ R1.T, viewing_rotation(t2) @ viewing_rotation(t1).T,
                               atol=1e-12)


def _site_camera():
    return CameraIntrinsics(500.0, 500.0, 256.0, 256.0, 512, 512)


def test_site_hand_example():
    site = site_encode([0.1, 0.0, 1.0], Roi(300, 256, 100, 80, 256), _site_camera())
    assert site.dx == pytest.approx(0.06, abs=1e-15)
    assert site.dy == 0.0
    assert site.dz == pytest.approx(0.390625, abs=1e-15)
    np.testing.assert_allclose(site_decode(site, Roi(300, 256, 100, 80, 256), _site_camera()),
                               [0.1, 0.0, 1.0], atol=1e-15)


def test_site_centered_object():
    K = _site_camera()
    roi = Roi(256, 256, 128, 64, 256)
    site = site_encode([0, 0, 2.0], roi, K)
    assert (site.dx, site.dy, site.dz) == (0.0, 0.0, 1.0)


def test_site_errors():
    with pytest.raises(InvalidInputError):
        site_encode([0, 0, -1.0], Roi(1, 1, 1, 1), _site_camera())
    with pytest.raises(InvalidInputError):
        site_decode(SiteTranslation(0, 0, -1.0), Roi(1, 1, 1, 1), _site_camera())
    with pytest.raises(InvalidInputError):
        site_decode(SiteTranslation(np.nan, 0, 1.0), Roi(1, 1, 1, 1), _site_camera())


@given(seeds)
def test_site_round_trip(seed):
    rng = np.random.default_rng(seed)
    K = _site_camera()
    t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.3, 3.0)])
    roi = Roi(*rng.uniform(50, 450, 2), *rng.uniform(10, 200, 2), s_out=256)
    np.testing.assert_allclose(site_decode(site_encode(t, roi, K), roi, K), t,
                               rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("k", [2.0, 0.5, 4.0])
def test_site_scale_invariant_power_of_two(k, rng):
    # Scaling the whole image by a power of two is exact in binary floating point.
    K = _site_camera()
    for _ in range(100):
        t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.3, 3.0)])
        roi = Roi(*rng.uniform(50, 450, 2), *rng.uniform(10, 200, 2), s_out=256)
        a = site_encode(t, roi, K)
        b = site_encode(t, Roi(roi.bx * k, roi.by * k, roi.bw * k, roi.bh * k, roi.s_out * k),
                        K.scaled(k))
        assert (a.dx, a.dy, a.dz) == (b.dx, b.dy, b.dz)


def test_roi_affine_examples(rng):
    roi = Roi(100, 80, 40, 60, 256)
    aff = roi_affine(roi)
    np.testing.assert_allclose(aff.forward([100, 80]), [128, 128])
    np.testing.assert_allclose(aff.forward([70, 50]), [0, 0])
    pts = rng.uniform(-100, 500, (100, 2))
    np.testing.assert_allclose(aff.inverse(aff.forward(pts)), pts, atol=1e-12)
    homog = np.c_[pts, np.ones(100)] @ aff.matrix.T
    np.testing.assert_allclose(homog, aff.forward(pts), atol=1e-10)


def test_roi_validation():
    with pytest.raises(InvalidInputError):
        Roi(0, 0, 0, 5)
    with pytest.raises(InvalidInputError):
        Roi(0, 0, 5, 5, s_out=0)


def test_nocs_examples():
    c = np.array([0.1, -0.2, 0.3])
    np.testing.assert_array_equal(nocs_encode(c, 0.5, c), [0.5, 0.5, 0.5])
    np.testing.assert_allclose(nocs_encode(c + [0.25, 0, 0], 0.5, c), [1.0, 0.5, 0.5])
    with pytest.raises(InvalidInputError):
        nocs_encode(c + [0.3, 0, 0], 0.5, c)
    with pytest.raises(InvalidInputError):
        nocs_encode(c, 0.0, c)


def test_nocs_round_trip_mesh(cube, rng):
    pts = rng.uniform(cube.bbox_min, cube.bbox_max, (1000, 3))
    enc = nocs_encode(pts, cube.bbox_diagonal, cube.bbox_center)
    assert enc.min() >= 0 and enc.max() <= 1
    np.testing.assert_allclose(nocs_decode(enc, cube.bbox_diagonal, cube.bbox_center), pts,
                               atol=1e-15)


def test_symmetry_groups():
    assert len(symmetry_rotations(SymmetryGroup())) == 1
    rots = symmetry_rotations(SymmetryGroup.revolution((0, 0, 1), 4))
    assert len(rots) == 4
    for k, R in enumerate(rots):
        np.testing.assert_allclose(R, axis_angle([0, 0, 1], k * np.pi / 2), atol=1e-15)
    flip = axis_angle([1, 0, 0], np.pi)
    d = SymmetryGroup.discrete([flip])
    assert len(symmetry_rotations(d)) == 2
    assert SymmetryGroup.from_dict(d.to_dict()).to_dict() == d.to_dict()
    with pytest.raises(InvalidInputError):
        SymmetryGroup.discrete([np.eye(3) * 2])
    with pytest.raises(InvalidInputError):
        symmetry_rotations(SymmetryGroup.revolution((0, 0, 1), 0))


def test_intrinsics_project_backproject(intrinsics, rng):
    px = rng.uniform(0, 640, (50, 2))
    depth = rng.uniform(0.2, 3, 50)
    np.testing.assert_allclose(intrinsics.project(intrinsics.backproject(px, depth)), px,
                               atol=1e-10)
    assert CameraIntrinsics.from_dict(intrinsics.to_dict()) == intrinsics
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(0, 1, 0, 0, 4, 4)
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(1, 1, 10, 0, 4, 4)


def test_random_rotation_uniformish():
    rng = np.random.default_rng(0)
    zs = np.array([random_rotation(rng)[2, 2] for _ in range(4000)])
    # R[2,2] of a Haar rotation is uniform on [-1, 1].
    assert abs(zs.mean()) < 0.05
    assert abs(np.mean(zs ** 2) - 1 / 3) < 0.03
    assert math.isclose(np.mean(np.abs(zs) < 0.5), 0.5, abs_tol=0.04)
