import numpy as np
import pytest
from hypothesis import given, strategies as st

from panostitch.geometry import (AnisotropyError, BehindCameraError, Camera, Intrinsics,
                                 angle_between_rotations, homography_between, nearest_rotation,
                                 pixel_to_ray, project_rays, quaternion_to_rotation, ray_to_pixel,
                                 rescale_intrinsics, rotation_from_angle_axis, rotation_from_ypr,
                                 rotation_to_angle_axis)

from conftest import random_rotation

angles = st.floats(-3.0, 3.0)
vec3 = st.tuples(angles, angles, angles).map(np.array)


def cam(f=500.0, R=np.eye(3), w=501, h=501, cx=None, cy=None):
    cx = (w - 1) / 2 if cx is None else cx
    cy = (h - 1) / 2 if cy is None else cy
    return Camera(Intrinsics(f, cx, cy, w, h), R)


def test_zero_angle_axis_is_identity():
    assert np.array_equal(rotation_from_angle_axis([0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    R = rotation_from_angle_axis([0, 0, np.pi / 2])
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


@given(vec3)
def test_angle_axis_round_trip(v):
    if np.linalg.norm(v) >= np.pi - 1e-6:
        v = v * (np.pi - 1e-3) / np.linalg.norm(v)
    np.testing.assert_allclose(rotation_to_angle_axis(rotation_from_angle_axis(v)), v, atol=1e-9)


def test_angle_axis_at_pi_has_canonical_sign():
    for axis in ([0, 0, -1], [-1, 2, 0], [0, -3, -4]):
        a = np.array(axis, float) / np.linalg.norm(axis)
        v = rotation_to_angle_axis(rotation_from_angle_axis(np.pi * a))
        assert np.isclose(np.linalg.norm(v), np.pi)
        first = v[np.flatnonzero(np.abs(v) > 1e-9)[0]]
        assert first > 0
        np.testing.assert_allclose(np.abs(v), np.pi * np.abs(a), atol=1e-7)


def test_quaternion_matches_rodrigues(rng):
    for _ in range(20):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        t = rng.uniform(0, np.pi)
        q = np.r_[np.cos(t / 2), np.sin(t / 2) * axis]
        np.testing.assert_allclose(quaternion_to_rotation(q), rotation_from_angle_axis(t * axis),
                                   atol=1e-12)


def test_long_rotation_chain_stays_orthonormal(rng):
    R = np.eye(3)
    for _ in range(10000):
        R = R @ random_rotation(rng)
    R = nearest_rotation(R)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_same_camera_gives_identity_homography(rng):
    c = cam(R=random_rotation(rng))
    np.testing.assert_allclose(homography_between(c, c), np.eye(3), atol=1e-12)


def test_homography_composition(rng):
    for _ in range(50):
        ci, cj, ck = (cam(rng.uniform(200, 900), random_rotation(rng)) for _ in range(3))
        lhs = homography_between(ci, ck)
        rhs = homography_between(cj, ck) @ homography_between(ci, cj)
        rhs = rhs / rhs[2, 2]
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(lhs).max())


def test_homography_inverse_pair(rng):
    for _ in range(50):
        ci, cj = cam(400, random_rotation(rng)), cam(600, random_rotation(rng))
        P = homography_between(ci, cj) @ homography_between(cj, ci)
        np.testing.assert_allclose(P / P[2, 2], np.eye(3), atol=1e-9)


def test_homography_yaw_shift_matches_gnomonic_offset():
    ci = Camera(Intrinsics(500, 250, 250, 501, 501))
    cj = Camera(Intrinsics(500, 250, 250, 501, 501), rotation_from_ypr(np.radians(10)))
    p = homography_between(ci, cj) @ [250, 250, 1]
    # camera j turned 10 degrees toward +X, so the old axis appears left of centre
    np.testing.assert_allclose(p[:2] / p[2], [250 - 500 * np.tan(np.radians(10)), 250], atol=1e-9)


def test_pixel_to_ray_examples():
    np.testing.assert_allclose(pixel_to_ray(cam(), [250, 250]), [0, 0, 1], atol=1e-15)
    yawed = cam(R=rotation_from_ypr(np.pi / 2))
    np.testing.assert_allclose(pixel_to_ray(yawed, [250, 250]), [1, 0, 0], atol=1e-15)
    pitched = cam(R=rotation_from_ypr(0, np.pi / 2))
    np.testing.assert_allclose(pixel_to_ray(pitched, [250, 250]), [0, -1, 0], atol=1e-15)


def test_ray_to_pixel_examples():
    np.testing.assert_allclose(ray_to_pixel(cam(), [0, 0, 1]), [250, 250])
    with pytest.raises(BehindCameraError):
        ray_to_pixel(cam(), [0, 0, -1])


def test_pixel_ray_round_trip(rng):
    c = cam(420, random_rotation(rng), 640, 480, 300.2, 250.7)
    px = rng.uniform([0, 0], [639, 479], (1000, 2))
    back, front = project_rays(c, pixel_to_ray(c, px))
    assert front.all()
    np.testing.assert_allclose(back, px, atol=1e-6)


def test_rescale_examples():
    K = Intrinsics(500, 500, 500, 1000, 1000)
    assert rescale_intrinsics(K, 500, 500) == Intrinsics(250, 250, 250, 500, 500)
    assert rescale_intrinsics(K, 1000, 1000) == K
    with pytest.raises(AnisotropyError):
        rescale_intrinsics(K, 1000, 500)


def test_camera_rejects_non_rotation():
    with pytest.raises(ValueError):
        Camera(Intrinsics(1, 0, 0, 2, 2), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Intrinsics(-1, 0, 0, 2, 2)


def test_from_fov_and_hfov():
    K = Intrinsics.from_fov(np.radians(60), 512, 512)
    # from_fov uses the full width, hfov the pixel-centre extent
    assert abs(K.hfov - 2 * np.arctan(255.5 / K.focal)) < 1e-12
    assert abs(K.focal - 256 / np.tan(np.radians(30))) < 1e-9


def test_ypr_conventions():
    R = rotation_from_ypr(np.radians(30))
    axis = R[2]
    np.testing.assert_allclose(axis, [np.sin(np.radians(30)), 0, np.cos(np.radians(30))], atol=1e-15)
    assert angle_between_rotations(R, np.eye(3)) == pytest.approx(np.radians(30))
