import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from colonpose.pose_algebra import (Pose, RelPose6, Trajectory, UnitQuaternion, canonical_quaternion,
                                    compose, from_6d, handedness_convert, integrate, invert, quat_exp,
                                    quat_from_matrix, quat_log, random_pose, relative, rot_x, rot_y,
                                    rot_z, rotation_angle_deg, slerp, to_6d, translate)

seeds = st.integers(0, 2 ** 32 - 1)


def rp(seed, **kw):
    return random_pose(np.random.default_rng(seed), **kw)


# ---- compose / relative -------------------------------------------------------

def test_compose_identity_and_inverse():
    p = rp(1)
    assert compose(Pose.identity(), p).allclose(p)
    assert compose(p, invert(p)).allclose(Pose.identity())


def test_compose_rz_matches_scipy():
    # independent oracle: scipy's rotation composition
    want = (Rotation.from_euler("z", 10, degrees=True) * Rotation.from_euler("z", 20, degrees=True)).as_matrix()
    got = compose(rot_z(10), rot_z(20))
    assert np.allclose(got.rotation, want, atol=1e-12)
    assert got.allclose(rot_z(30))


def test_relative_examples():
    p = rp(3)
    assert relative(p, p).allclose(Pose.identity())
    assert np.allclose(relative(Pose.identity(), translate(0, 0, 1)).translation, [0, 0, 1])
    a = translate(1, 0, 0) @ rot_z(90)
    b = translate(1, 1, 0) @ rot_z(90)
    r = relative(a, b)
    # hand computation: Rz(90)^T (0, 1, 0) = (1, 0, 0)
    assert np.allclose(r.translation, [1, 0, 0], atol=1e-12)
    assert np.allclose(r.rotation, np.eye(3), atol=1e-12)


def test_relative_positive_z_means_in_front():
    cam1 = translate(2, -1, 3) @ rot_y(30)
    ahead = cam1 @ translate(0, 0, 0.5)
    assert relative(cam1, ahead).translation[2] > 0
    assert relative(ahead, cam1).translation[2] < 0


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_group_laws(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)))
    assert compose(a, relative(a, b)).allclose(b)
    ab = compose(a, b)
    assert ab.is_valid()


def test_pose_validity_flags_bad_rotation():
    assert not Pose(np.diag([1.0, 1.0, -1.0])).is_valid()
    assert not Pose(2 * np.eye(3)).is_valid()


# ---- 6D representation ----------------------------------------------------------

def test_to_6d_identity_and_translation():
    assert np.array_equal(to_6d(Pose.identity()).as_vector(), np.zeros(6))
    p = from_6d(RelPose6.from_vector([1, 2, 3, 0, 0, 0]))
    assert p.allclose(translate(1, 2, 3))


@pytest.mark.parametrize("deg", [1.0, 10.0, 90.0, 179.0])
def test_to_6d_rz_gives_half_angle(deg):
    lq = to_6d(rot_z(deg)).logq
    assert np.allclose(lq, [0, 0, np.radians(deg) / 2], atol=1e-12)
    # independent oracle: scipy quaternion (x, y, z, w) and its log
    x, y, z, w = Rotation.from_euler("z", deg, degrees=True).as_quat()
    axis = np.array([x, y, z]) / np.linalg.norm([x, y, z])
    assert np.allclose(lq, np.arctan2(np.linalg.norm([x, y, z]), w) * axis, atol=1e-12)


def test_quaternion_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(200):
        p = random_pose(rng)
        q = quat_from_matrix(p.rotation)
        x, y, z, w = Rotation.from_matrix(p.rotation).as_quat()
        want = canonical_quaternion([w, x, y, z])
        assert np.allclose(q, want, atol=1e-10)


def test_angle_pi_tie_break():
    # Rx(180): q = (0, +-1, 0, 0); the representative has a positive first component
    r = to_6d(rot_x(180))
    assert np.allclose(r.logq, [np.pi / 2, 0, 0], atol=1e-12)
    assert from_6d(r).allclose(rot_x(180))
    q = canonical_quaternion([0.0, 0.0, -0.6, 0.8])
    assert np.allclose(q, [0, 0, 0.6, -0.8])
    assert UnitQuaternion.from_array([-1, 0, 0, 0]).w == 1.0


def test_log_exp_roundtrip_10k():
    rng = np.random.default_rng(11)
    axes = rng.normal(size=(10_000, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0, np.pi - 1e-3, 10_000)
    worst = 0.0
    for ax, th in zip(axes, angles):
        q = np.concatenate([[np.cos(th / 2)], np.sin(th / 2) * ax])
        worst = max(worst, np.abs(quat_exp(quat_log(q)) - q).max())
        p = Pose(Rotation.from_rotvec(th * ax).as_matrix(), rng.normal(size=3))
        r = to_6d(p)
        assert np.linalg.norm(r.logq) <= np.pi
        worst = max(worst, np.abs(from_6d(r).matrix - p.matrix).max())
        worst = max(worst, np.abs(to_6d(from_6d(r)).as_vector() - r.as_vector()).max())
    assert worst < 1e-9


def test_slerp_endpoints_and_midpoint():
    q0 = quat_from_matrix(rot_z(0).rotation)
    q1 = quat_from_matrix(rot_z(60).rotation)
    assert np.allclose(slerp(q0, q1, 0.0), q0)
    assert np.allclose(slerp(q0, q1, 1.0), q1)
    assert np.allclose(slerp(q0, q1, 0.5), quat_from_matrix(rot_z(30).rotation), atol=1e-12)


# ---- handedness ---------------------------------------------------------------------

def test_handedness_examples():
    assert handedness_convert(Pose.identity()).allclose(Pose.identity())
    assert handedness_convert(translate(0, 1, 0)).allclose(translate(0, -1, 0))


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_handedness_involution(seed):
    p = rp(seed)
    h = handedness_convert(p)
    assert handedness_convert(h).allclose(p, atol=1e-12)
    assert abs(np.linalg.det(h.rotation) - 1) < 1e-9
    # M P M equals the explicit 4x4 product
    m = np.diag([1.0, -1.0, 1.0, 1.0])
    assert np.allclose(h.matrix, m @ p.matrix @ m, atol=1e-12)


# ---- integrate ----------------------------------------------------------------------

def test_integrate_examples():
    assert len(integrate(Pose.identity(), [])) == 1
    tr = integrate(Pose.identity(), [translate(0, 0, 1)] * 2)
    assert np.allclose(tr.positions(), [[0, 0, 0], [0, 0, 1], [0, 0, 2]])
    loop = integrate(Pose.identity(), [rot_z(90) @ translate(1, 0, 0)] * 4)
    assert np.allclose(loop.positions()[-1], 0, atol=1e-9)
    assert loop[-1].allclose(Pose.identity(), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_integrate_inverts_relatives(seed):
    rng = np.random.default_rng(seed)
    poses = [random_pose(rng) for _ in range(6)]
    tr = Trajectory.from_poses(poses)
    again = integrate(poses[0], tr.relatives())
    for a, b in zip(again.poses, poses):
        assert a.allclose(b, atol=1e-9)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory((Pose(), Pose()), (0, 0))
    with pytest.raises(ValueError):
        Trajectory((Pose(),), (0, 1))


# ---- rotation angle ---------------------------------------------------------------------

def test_rotation_angle_examples():
    assert rotation_angle_deg(Pose.identity()) == 0.0
    assert abs(rotation_angle_deg(rot_z(10)) - 10.0) < 1e-6
    assert abs(rotation_angle_deg(rot_x(180)) - 180.0) < 1e-9


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_rotation_angle_matches_arccos_and_scipy(seed):
    p = rp(seed)
    a = rotation_angle_deg(p)
    assert 0.0 <= a <= 180.0
    c = np.clip((np.trace(p.rotation) - 1) / 2, -1, 1)
    assert abs(a - np.degrees(np.arccos(c))) < 1e-5
    assert abs(a - np.degrees(Rotation.from_matrix(p.rotation).magnitude())) < 1e-6
    assert rotation_angle_deg(relative(p, p)) == 0.0
