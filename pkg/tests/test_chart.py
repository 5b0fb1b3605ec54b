"""Surface-coordinate tests.

The flat chart under the arm's home probe position is the exactness
oracle: there the coordinate map is closed-form (s = xy offset, d =
height, frame = plane frame), so finite differences of the full
task_coordinates pipeline must match the task Jacobian tightly. The
orientation-error rate map gets its own quaternion-differencing oracle.
"""
import math

import numpy as np
import pytest

from surfscan.arm import forward_kinematics, reference_arm
from surfscan.chart import (
    ChartBoundaryError,
    SurfaceChart,
    SurfaceCoords,
    eps_rate_map,
    orientation_error,
)
from surfscan.geometry import Pose, quat_from_axis_angle, quat_from_matrix, quat_multiply, quat_to_matrix
from surfscan.localization import ScenePlane
from surfscan.mesh import grid_surface_mesh

MODEL = reference_arm()
EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])
EZ = np.array([0.0, 0.0, 1.0])


def flat_chart(z=1.0, extent=0.2, n=11):
    xs = np.linspace(-extent / 2, extent / 2, n)
    mesh = grid_surface_mesh(np.array([0.0, 0.0, z]), EX, EY, EZ, xs, xs, np.zeros((n, n)))
    return SurfaceChart(mesh, ScenePlane(np.array([0.0, 0.0, z]), EZ))


def dome_chart(z=1.0, extent=0.24, n=49, a=1.5):
    # gentle paraboloid bump, a height field so the chart is a bijection
    xs = np.linspace(-extent / 2, extent / 2, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    h = 0.03 - a * (X**2 + Y**2)
    h = np.maximum(h, 0.0)
    mesh = grid_surface_mesh(np.array([0.0, 0.0, z]), EX, EY, EZ, xs, xs, h)
    return SurfaceChart(mesh, ScenePlane(np.array([0.0, 0.0, z]), EZ))


FLAT = flat_chart()
DOME = dome_chart()


def test_aligned_probe_above_flat():
    pose = Pose(np.array([1.0, 0, 0, 0]), np.array([0.03, -0.04, 1.02]))
    rho = FLAT.task_coordinates(pose).rho
    assert np.max(np.abs(rho - np.array([0.03, -0.04, 0.02, 0, 0, 0]))) < 1e-12


def test_penetration_is_negative():
    pose = Pose(np.array([1.0, 0, 0, 0]), np.array([0.0, 0.0, 0.997]))
    coords = FLAT.task_coordinates(pose)
    assert abs(coords.d + 0.003) < 1e-12


def test_tilt_90_degrees():
    q = quat_from_axis_angle(EX, math.pi / 2)  # tilt about t1
    pose = Pose(q, np.array([0.0, 0.0, 1.05]))
    coords = FLAT.task_coordinates(pose)
    assert abs(np.linalg.norm(coords.eps) - math.sin(math.pi / 4)) < 1e-12


def test_eps_zero_only_when_aligned():
    rng = np.random.default_rng(0)
    for _ in range(50):
        axis = rng.normal(size=3)
        angle = rng.uniform(0.1, 2.5)
        pose = Pose(quat_from_axis_angle(axis, angle), np.array([0.0, 0.0, 1.03]))
        coords = FLAT.task_coordinates(pose)
        assert np.linalg.norm(coords.eps) > 1e-3


def test_eps_reapplication():
    # rotating the probe by the error quaternion lands it on the frame
    rng = np.random.default_rng(1)
    for _ in range(100):
        axis = rng.normal(size=3)
        angle = rng.uniform(0.0, 2.6)
        q = quat_from_axis_angle(axis, angle)
        pose = Pose(q, np.array([0.02, 0.01, 1.04]))
        coords = FLAT.task_coordinates(pose)
        err_q = np.concatenate([[coords.eta], coords.eps])
        fixed = Pose(quat_multiply(err_q, q), pose.translation)
        assert np.linalg.norm(FLAT.task_coordinates(fixed).eps) < 1e-9


def test_eps_rate_map_against_quaternion_differencing():
    rng = np.random.default_rng(2)
    dt = 1e-7
    for _ in range(100):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quat_to_matrix(q)
        frame_R = np.eye(3)
        # error rotation for probe R against the identity frame
        eq = quat_from_matrix(frame_R @ R.T)
        if eq[0] < 0.1:
            continue  # stay off the eta = 0 canonicalisation kink
        w = rng.normal(size=3)
        Rp = quat_to_matrix(quat_from_axis_angle(w, np.linalg.norm(w) * dt)) @ R
        eq2 = quat_from_matrix(frame_R @ Rp.T)
        fd = (eq2[1:] - eq[1:]) / dt
        analytic = eps_rate_map(eq[0], eq[1:]) @ (w / np.linalg.norm(w) * np.linalg.norm(w))
        assert np.max(np.abs(fd - analytic)) < 1e-5


def probe_over_chart_states(rng, n, spread=0.06):
    """Joint states whose probe stays over the flat chart."""
    out = []
    while len(out) < n:
        q = rng.uniform(-spread, spread, 7)
        pos = forward_kinematics(MODEL, q, "probe").translation
        s = FLAT.chart_coords(pos)
        if FLAT.contains(s) and pos[2] > 1.001:
            out.append(q)
    return out


def test_task_jacobian_matches_finite_difference():
    rng = np.random.default_rng(3)
    dt = 1e-6
    for q in probe_over_chart_states(rng, 150):
        qd = rng.uniform(-1.0, 1.0, 7)
        J = FLAT.task_jacobian(MODEL, q)
        rho0 = FLAT.task_coordinates(forward_kinematics(MODEL, q, "probe")).rho
        rho1 = FLAT.task_coordinates(forward_kinematics(MODEL, q + dt * qd, "probe")).rho
        fd = (rho1 - rho0) / dt
        assert np.max(np.abs(J @ qd - fd)) < 1e-4


def test_task_jacobian_d_row_is_normal_projection():
    from surfscan.arm import geometric_jacobian

    rng = np.random.default_rng(4)
    for q in probe_over_chart_states(rng, 20):
        J_rho = FLAT.task_jacobian(MODEL, q)
        J_geom = geometric_jacobian(MODEL, q, "probe")
        assert np.max(np.abs(J_rho[2] - EZ @ J_geom[:3])) < 1e-12


def test_task_jacobian_nullspace():
    rng = np.random.default_rng(5)
    for q in probe_over_chart_states(rng, 20):
        J = FLAT.task_jacobian(MODEL, q)
        _, s, vt = np.linalg.svd(J)
        null = vt[-1]
        assert np.max(np.abs(J @ null)) < 1e-9
        # and the full pipeline barely moves along it
        dt = 1e-6
        pose0 = forward_kinematics(MODEL, q, "probe")
        pose1 = forward_kinematics(MODEL, q + dt * null, "probe")
        drho = FLAT.task_coordinates(pose1).rho - FLAT.task_coordinates(pose0).rho
        assert np.max(np.abs(drho / dt)) < 1e-4


def test_evaluate_bundle_consistent():
    rng = np.random.default_rng(6)
    for q in probe_over_chart_states(rng, 10):
        qd = rng.uniform(-0.5, 0.5, 7)
        coords, rhodot, J, _ = FLAT.evaluate(MODEL, q, qd)
        pose = forward_kinematics(MODEL, q, "probe")
        assert np.max(np.abs(coords.rho - FLAT.task_coordinates(pose).rho)) < 1e-12
        assert np.max(np.abs(J - FLAT.task_jacobian(MODEL, q))) < 1e-12
        assert np.max(np.abs(rhodot - J @ qd)) < 1e-12


def test_embed_round_trip_curved():
    rng = np.random.default_rng(7)
    lo, hi = DOME.s_min * 0.95, DOME.s_max * 0.95
    for _ in range(1000):
        s = rng.uniform(lo, hi)
        point, frame = DOME.embed(s)
        back, dist, _ = DOME.closest_point(frame.point)
        assert np.max(np.abs(back.s - s)) < 1e-9
        assert abs(dist) < 1e-9


def test_frames_orthonormal_everywhere():
    rng = np.random.default_rng(8)
    for chart in (FLAT, DOME):
        lo, hi = chart.s_min * 0.98, chart.s_max * 0.98
        for _ in range(200):
            s = rng.uniform(lo, hi)
            _, frame = chart.embed(s)
            B = np.column_stack([frame.t1, frame.t2, frame.n])
            assert np.max(np.abs(B.T @ B - np.eye(3))) < 1e-10
            assert np.linalg.det(B) > 0.99999


def test_embed_height_invariant_flat():
    rng = np.random.default_rng(9)
    for _ in range(100):
        s = rng.uniform(-0.09, 0.09, 2)
        h = rng.uniform(0.005, 0.1)
        _, frame = FLAT.embed(s)
        pose = Pose(quat_from_matrix(frame.rotation()), frame.point + h * frame.n)
        rho = FLAT.task_coordinates(pose).rho
        assert np.max(np.abs(rho - np.array([s[0], s[1], h, 0, 0, 0]))) < 1e-9


def test_embed_height_approx_curved():
    # on a faceted curved mesh the smoothed normal is not the face
    # normal, so the round trip is only short-range exact
    rng = np.random.default_rng(10)
    for _ in range(50):
        s = rng.uniform(DOME.s_min * 0.5, DOME.s_max * 0.5)
        h = 0.01
        _, frame = DOME.embed(s)
        pose = Pose(quat_from_matrix(frame.rotation()), frame.point + h * frame.n)
        coords = DOME.task_coordinates(pose)
        assert abs(coords.d - h) < 5e-4
        assert np.max(np.abs(np.array([coords.s1, coords.s2]) - s)) < 2e-3
        assert np.linalg.norm(coords.eps) < 0.05


def test_anchor_is_origin():
    point, frame = DOME.embed(np.zeros(2))
    assert np.max(np.abs(frame.point - DOME.anchor)) < 1e-9


def test_boundary_errors():
    with pytest.raises(ChartBoundaryError) as exc:
        FLAT.embed(np.array([0.5, 0.0]))
    assert np.max(np.abs(exc.value.clamped - np.array([0.1, 0.0]))) < 1e-12
    pose = Pose(np.array([1.0, 0, 0, 0]), np.array([5.0, 0.0, 1.05]))
    with pytest.raises(ChartBoundaryError):
        FLAT.task_coordinates(pose)


def test_surface_coords_validation():
    with pytest.raises(ValueError):
        SurfaceCoords(0.0, 0.0, 0.0, np.array([1.0, 1.0, 1.0]))
    c = SurfaceCoords(0.1, -0.2, 0.05, np.zeros(3))
    assert np.array_equal(c.rho, np.array([0.1, -0.2, 0.05, 0, 0, 0]))


def test_orientation_error_canonical():
    rng = np.random.default_rng(11)
    _, frame = FLAT.embed(np.zeros(2))
    for _ in range(100):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        eta, eps = orientation_error(quat_to_matrix(q), frame)
        assert eta >= 0.0
        assert np.linalg.norm(eps) <= 1.0 + 1e-12
