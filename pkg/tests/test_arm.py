"""Arm model tests.

Oracles are written independently of the package code: forward kinematics
against an explicit homogeneous-matrix chain with hand-written Rz/Ry
blocks, Jacobians against central finite differences, and the mass matrix
against the per-link point-Jacobian sum  M = sum_i Jv_i^T m_i Jv_i +
Jw_i^T I_i Jw_i.
"""
import numpy as np
import pytest

from surfscan.arm import (
    ArmModel,
    JointLimitError,
    JointSpec,
    JointState,
    LinkInertia,
    forward_kinematics,
    geometric_jacobian,
    load_arm_model,
    mass_matrix,
    joint_frames,
    reference_arm,
    save_arm_model,
)
from surfscan.geometry import Pose
from surfscan.schema import SchemaError

MODEL = reference_arm()

# reference layout, duplicated here on purpose so the oracle does not
# depend on the YAML parser or the package's transform code
OFFSETS = [0.15, 0.10, 0.20, 0.10, 0.20, 0.08, 0.08]
AXES = "zyzyzyz"
PROBE_Z = 0.16


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]])


def _tz(d):
    T = np.eye(4)
    T[2, 3] = d
    return T


def chain_oracle(q, tool_z=PROBE_Z):
    T = np.eye(4)
    for off, ax, a in zip(OFFSETS, AXES, q):
        T = T @ _tz(off) @ (_rz(a) if ax == "z" else _ry(a))
    return T @ _tz(tool_z)


def oracle_joint_frames(q):
    """Per-joint world rotation, origin and axis from the matrix chain."""
    T = np.eye(4)
    Rs, ps, zs = [], [], []
    for off, ax, a in zip(OFFSETS, AXES, q):
        T = T @ _tz(off) @ (_rz(a) if ax == "z" else _ry(a))
        Rs.append(T[:3, :3].copy())
        ps.append(T[:3, 3].copy())
        axis = np.array([0.0, 0.0, 1.0]) if ax == "z" else np.array([0.0, 1.0, 0.0])
        zs.append(T[:3, :3] @ axis)  # axis invariant under its own rotation
    return np.array(Rs), np.array(ps), np.array(zs)


def random_q(rng, margin=0.85):
    lim = MODEL.position_limits
    return lim[:, 0] * 0.0 + (rng.uniform(-1.0, 1.0, 7) * margin) * lim[:, 1]


# frozen from chain_oracle([0.3, -0.5, 0.7, 1.1, -0.4, 0.6, -0.2])
FROZEN_Q = np.array([0.3, -0.5, 0.7, 1.1, -0.4, 0.6, -0.2])
FROZEN_T = np.array(
    [
        [0.683204380436546, -0.3380666492619148, 0.6472578429104872, 0.0722725534310841],
        [-0.3156911951768359, 0.6625247839223606, 0.6792642931705231, 0.30559954750262636],
        [-0.6584609660717454, -0.6684099425842279, 0.34591516996861094, 0.7992552956085771],
        [0.0, 0.0, 0.0, 1.0],
    ]
)


def test_frozen_pose():
    T = forward_kinematics(MODEL, FROZEN_Q, "probe").matrix()
    assert np.max(np.abs(T - FROZEN_T)) < 1e-12


def test_home_pose_matches_model_file():
    pose = forward_kinematics(MODEL, np.zeros(7), "probe")
    assert MODEL.home_probe_pose is not None
    assert np.max(np.abs(pose.translation - MODEL.home_probe_pose.translation)) < 1e-12
    assert np.max(np.abs(pose.rotation - MODEL.home_probe_pose.rotation)) < 1e-12


def test_joint1_half_turn():
    q = np.zeros(7)
    q[0] = np.pi * 0.9  # stay inside the +-2.967 limit? pi*0.9 = 2.827, yes
    pose = forward_kinematics(MODEL, q, "probe")
    T = chain_oracle(q)
    assert np.max(np.abs(pose.matrix() - T)) < 1e-12
    # rotation purely about base z, translation unchanged on the axis
    assert np.max(np.abs(pose.translation - np.array([0.0, 0.0, 1.07]))) < 1e-12


def test_fk_matches_chain_oracle():
    rng = np.random.default_rng(7)
    for _ in range(300):
        q = random_q(rng)
        for frame, tz in (("probe", PROBE_Z), ("flange", 0.0)):
            T = forward_kinematics(MODEL, q, frame).matrix()
            assert np.max(np.abs(T - chain_oracle(q, tz))) < 1e-12
        cam = forward_kinematics(MODEL, q, "camera").matrix()
        Tc = chain_oracle(q, 0.0).copy()
        Tc[:3, 3] += Tc[:3, :3] @ np.array([0.05, 0.0, 0.10])
        assert np.max(np.abs(cam - Tc)) < 1e-12


def test_fk_repeatable_bitwise():
    q = FROZEN_Q
    a = forward_kinematics(MODEL, q, "probe")
    b = forward_kinematics(MODEL, q, "probe")
    assert np.array_equal(a.translation, b.translation)
    assert np.array_equal(a.rotation, b.rotation)


def test_unknown_frame_rejected():
    with pytest.raises(ValueError, match="frame"):
        forward_kinematics(MODEL, np.zeros(7), "wrist")


def test_limit_violation_reports_index():
    q = np.zeros(7)
    q[3] = 2.5  # above the 2.094 pitch limit
    with pytest.raises(JointLimitError) as exc:
        forward_kinematics(MODEL, q, "probe")
    assert exc.value.joint_index == 3


def test_joint_state_validation():
    with pytest.raises(ValueError):
        JointState(np.array([np.nan, 0, 0, 0, 0, 0, 0]))
    st = JointState(np.zeros(7))
    assert st.qdot.shape == (7,)


def _fd_jacobian(q, frame, h=1e-6):
    J = np.zeros((6, 7))
    R0 = forward_kinematics(MODEL, q, frame).rotation_matrix()
    for i in range(7):
        qp = q.copy()
        qm = q.copy()
        qp[i] += h
        qm[i] -= h
        pp = forward_kinematics(MODEL, qp, frame)
        pm = forward_kinematics(MODEL, qm, frame)
        J[:3, i] = (pp.translation - pm.translation) / (2.0 * h)
        dR = (pp.rotation_matrix() - pm.rotation_matrix()) / (2.0 * h)
        W = dR @ R0.T
        J[3:, i] = np.array([W[2, 1], W[0, 2], W[1, 0]])
    return J


def test_jacobian_matches_finite_difference():
    rng = np.random.default_rng(11)
    for _ in range(60):
        q = random_q(rng)
        for frame in ("probe", "flange", "camera"):
            J = geometric_jacobian(MODEL, q, frame)
            assert np.max(np.abs(J - _fd_jacobian(q, frame))) < 1e-5


def test_jacobian_zero_linear_when_axis_hits_probe():
    # at home every roll joint's axis is the base z line, which passes
    # through the probe point
    J = geometric_jacobian(MODEL, np.zeros(7), "probe")
    for col in (0, 2, 4, 6):
        assert np.max(np.abs(J[:3, col])) < 1e-15


def test_jacobian_angular_columns_unit():
    rng = np.random.default_rng(3)
    for _ in range(50):
        J = geometric_jacobian(MODEL, random_q(rng), "probe")
        norms = np.linalg.norm(J[3:, :], axis=0)
        assert np.max(np.abs(norms - 1.0)) < 1e-12


def test_twist_matches_pose_differencing():
    rng = np.random.default_rng(13)
    dt = 1e-6
    for _ in range(60):
        q = random_q(rng)
        qd = rng.uniform(-1.0, 1.0, 7)
        J = geometric_jacobian(MODEL, q, "probe")
        tw = J @ qd
        p0 = forward_kinematics(MODEL, q, "probe")
        p1 = forward_kinematics(MODEL, q + dt * qd, "probe")
        v = (p1.translation - p0.translation) / dt
        W = (p1.rotation_matrix() - p0.rotation_matrix()) / dt @ p0.rotation_matrix().T
        w = np.array([W[2, 1], W[0, 2], W[1, 0]])
        assert np.max(np.abs(tw[:3] - v)) < 1e-5
        assert np.max(np.abs(tw[3:] - w)) < 1e-5


def mass_oracle(q):
    Rs, ps, zs = oracle_joint_frames(q)
    M = np.zeros((7, 7))
    for i, link in enumerate(MODEL.link_inertias):
        c = ps[i] + Rs[i] @ link.com
        Iw = Rs[i] @ link.inertia @ Rs[i].T
        Jv = np.zeros((3, 7))
        Jw = np.zeros((3, 7))
        for k in range(i + 1):
            Jv[:, k] = np.cross(zs[k], c - ps[k])
            Jw[:, k] = zs[k]
        M += Jv.T @ (link.mass * Jv) + Jw.T @ Iw @ Jw
    return M


def test_mass_matrix_matches_point_jacobian_oracle():
    rng = np.random.default_rng(17)
    for _ in range(80):
        q = random_q(rng)
        M = mass_matrix(MODEL, q)
        assert np.max(np.abs(M - mass_oracle(q))) < 1e-12


def test_mass_matrix_spd():
    rng = np.random.default_rng(19)
    for _ in range(40):
        M = mass_matrix(MODEL, random_q(rng))
        assert np.max(np.abs(M - M.T)) == 0.0
        assert np.min(np.linalg.eigvalsh(M)) > 0.0


def test_joint_frames_axes_match_oracle():
    rng = np.random.default_rng(23)
    for _ in range(50):
        q = random_q(rng)
        R, p, z = joint_frames(MODEL, q)
        Ro, po, zo = oracle_joint_frames(q)
        assert np.max(np.abs(R - Ro)) < 1e-12
        assert np.max(np.abs(p - po)) < 1e-12
        assert np.max(np.abs(z - zo)) < 1e-12


def test_model_roundtrip(tmp_path):
    path = tmp_path / "arm.yaml"
    save_arm_model(MODEL, path)
    loaded = load_arm_model(path)
    for a, b in zip(MODEL.joints, loaded.joints):
        assert np.array_equal(a.axis, b.axis)
        assert np.array_equal(a.origin.translation, b.origin.translation)
        assert np.array_equal(a.origin.rotation, b.origin.rotation)
        assert a.position_limits == b.position_limits
        assert a.velocity_limit == b.velocity_limit
    for a, b in zip(MODEL.link_inertias, loaded.link_inertias):
        assert a.mass == b.mass
        assert np.array_equal(a.com, b.com)
        assert np.array_equal(a.inertia, b.inertia)
    assert np.array_equal(MODEL.probe_offset.translation, loaded.probe_offset.translation)
    assert np.array_equal(MODEL.camera_offset.translation, loaded.camera_offset.translation)


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "arm.yaml"
    save_arm_model(MODEL, path)
    text = path.read_text()
    path.write_text(text + "\nextra_field: 1\n")
    with pytest.raises(SchemaError, match="extra_field"):
        load_arm_model(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "arm.yaml"
    save_arm_model(MODEL, path)
    path.write_text(path.read_text().replace("model_version: 1", "model_version: 2"))
    with pytest.raises(SchemaError, match="model_version"):
        load_arm_model(path)


def test_model_validation():
    with pytest.raises(ValueError, match="7 joints"):
        ArmModel(
            joints=MODEL.joints[:6],
            link_inertias=MODEL.link_inertias[:6],
            probe_offset=MODEL.probe_offset,
            camera_offset=MODEL.camera_offset,
        )
    with pytest.raises(ValueError, match="positive"):
        LinkInertia(mass=-1.0, com=np.zeros(3), inertia=np.eye(3) * 1e-3)
    with pytest.raises(ValueError, match="positive-definite"):
        LinkInertia(mass=1.0, com=np.zeros(3), inertia=np.diag([1e-3, 1e-3, -1e-4]))
    with pytest.raises(ValueError, match="unit"):
        JointSpec(
            name="j",
            axis=np.array([0.0, 0.0, 2.0]),
            origin=Pose.identity(),
            position_limits=(-1.0, 1.0),
            velocity_limit=1.0,
        )
