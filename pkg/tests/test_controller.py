"""Impedance law, setpoint generators, nullspace damping."""
import math

import numpy as np
import pytest

from surfscan.chart import SurfaceCoords
from surfscan.controller import (
    ContactProfile,
    ImpedanceGains,
    RasterPath,
    Setpoint,
    contact_setpoints,
    critical_damping,
    impedance_torque,
    nullspace_damping,
    nullspace_projector,
    raster_setpoints,
    task_space_inertia,
)


def rho_from_vec(v) -> SurfaceCoords:
    v = np.asarray(v, dtype=float)
    eps = v[3:]
    eta = math.sqrt(max(1.0 - float(eps @ eps), 0.0))
    return SurfaceCoords(v[0], v[1], v[2], eps, eta)


def random_rho(rng, scale=0.3) -> SurfaceCoords:
    v = rng.uniform(-scale, scale, 6)
    return rho_from_vec(v)


def random_spd(rng, n, shift) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T) + shift * np.eye(n)


# ---------------------------------------------------------------------------
# impedance_torque
# ---------------------------------------------------------------------------


def test_zero_error_gives_exactly_zero_torque():
    rng = np.random.default_rng(0)
    gains = ImpedanceGains.default()
    J = rng.standard_normal((6, 7))
    rho = random_rho(rng)
    rhodot = rng.standard_normal(6)
    sp = Setpoint(rho, rhodot.copy())
    tau = impedance_torque(gains, sp, rho, rhodot, J)
    assert np.array_equal(tau, np.zeros(7))


def test_unit_distance_row_maps_five_newtons():
    gains = ImpedanceGains.diagonal([300.0, 300.0, 500.0, 5.0, 5.0, 1.0], np.ones(6))
    J = np.zeros((6, 7))
    J[2, 0] = 1.0
    rho = rho_from_vec([0.0, 0.0, -0.013, 0.0, 0.0, 0.0])
    sp = Setpoint(rho_from_vec([0.0, 0.0, -0.003, 0.0, 0.0, 0.0]))
    tau = impedance_torque(gains, sp, rho, np.zeros(6), J)
    assert tau[0] == pytest.approx(5.0, abs=1e-12)
    assert np.array_equal(tau[1:], np.zeros(6))


def _torque_oracle(K, D, sp: Setpoint, rho, rhodot, J):
    """Same expression, summed element by element in plain Python."""
    e = [sp.rho_d.rho[j] - rho.rho[j] for j in range(6)]
    ve = [sp.rhodot_d[j] - rhodot[j] for j in range(6)]
    f = [
        sum(K[i][j] * e[j] for j in range(6)) + sum(D[i][j] * ve[j] for j in range(6))
        for i in range(6)
    ]
    return np.array([sum(J[i][k] * f[i] for i in range(6)) for k in range(7)])


def test_torque_matches_expression_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        K = random_spd(rng, 6, 8.0)
        D = random_spd(rng, 6, 8.0)
        gains = ImpedanceGains(K, D)
        J = rng.standard_normal((6, 7))
        rho = random_rho(rng)
        sp = Setpoint(random_rho(rng), rng.standard_normal(6))
        rhodot = rng.standard_normal(6)
        tau = impedance_torque(gains, sp, rho, rhodot, J)
        expect = _torque_oracle(K, D, sp, rho, rhodot, J)
        assert np.max(np.abs(tau - expect)) < 1e-12 * max(1.0, np.max(np.abs(expect)))


def test_torque_superposition():
    rng = np.random.default_rng(2)
    gains = ImpedanceGains.default()
    J = rng.standard_normal((6, 7))
    rho0 = rho_from_vec(np.zeros(6))
    for _ in range(50):
        va = rng.uniform(-0.2, 0.2, 6)
        vb = rng.uniform(-0.2, 0.2, 6)
        ra = rng.standard_normal(6)
        rb = rng.standard_normal(6)
        tau_a = impedance_torque(gains, Setpoint(rho_from_vec(va), ra), rho0, np.zeros(6), J)
        tau_b = impedance_torque(gains, Setpoint(rho_from_vec(vb), rb), rho0, np.zeros(6), J)
        tau_ab = impedance_torque(
            gains, Setpoint(rho_from_vec(va + vb), ra + rb), rho0, np.zeros(6), J
        )
        assert np.max(np.abs(tau_ab - (tau_a + tau_b))) < 1e-12 * max(
            1.0, np.max(np.abs(tau_ab))
        )


def test_gain_scaling_scales_torque():
    rng = np.random.default_rng(3)
    K = random_spd(rng, 6, 8.0)
    D = random_spd(rng, 6, 8.0)
    J = rng.standard_normal((6, 7))
    rho = random_rho(rng)
    sp = Setpoint(random_rho(rng), rng.standard_normal(6))
    rhodot = rng.standard_normal(6)
    tau = impedance_torque(ImpedanceGains(K, D), sp, rho, rhodot, J)
    # powers of two scale each partial sum exactly
    tau2 = impedance_torque(ImpedanceGains(2.0 * K, 2.0 * D), sp, rho, rhodot, J)
    assert np.array_equal(tau2, 2.0 * tau)
    tau3 = impedance_torque(ImpedanceGains(3.0 * K, 3.0 * D), sp, rho, rhodot, J)
    assert np.max(np.abs(tau3 - 3.0 * tau)) < 1e-12 * max(1.0, np.max(np.abs(tau3)))


def test_torque_rejects_bad_inputs():
    gains = ImpedanceGains.default()
    rho = rho_from_vec(np.zeros(6))
    sp = Setpoint(rho)
    with pytest.raises(ValueError, match="finite"):
        impedance_torque(gains, sp, rho, np.full(6, np.nan), np.zeros((6, 7)))
    with pytest.raises(ValueError, match="6xn"):
        impedance_torque(gains, sp, rho, np.zeros(6), np.zeros((3, 7)))
    with pytest.raises(ValueError, match="6 entries"):
        impedance_torque(gains, sp, rho, np.zeros(5), np.zeros((6, 7)))


def test_gain_validation():
    good = np.diag([1.0, 2, 3, 4, 5, 6.0])
    bad_sym = good.copy()
    bad_sym[0, 1] = 1e-6
    with pytest.raises(ValueError, match="symmetric"):
        ImpedanceGains(bad_sym, good)
    with pytest.raises(ValueError, match="positive-definite"):
        ImpedanceGains(np.diag([1.0, 1, 1, 1, 1, 0.0]), good)
    with pytest.raises(ValueError, match="6x6"):
        ImpedanceGains(np.eye(3), good)


# ---------------------------------------------------------------------------
# contact setpoints
# ---------------------------------------------------------------------------

PROFILE = ContactProfile(d_start=0.02, d_hold=-0.003, ramp_rate=0.01, hold_duration=4.0)


def test_ramp_start():
    sp = contact_setpoints(PROFILE, 0.0)
    assert sp.rho_d.d == 0.02
    assert sp.rhodot_d[2] == -0.01
    assert np.array_equal(sp.rho_d.eps, np.zeros(3))


def test_ramp_end_holds():
    assert PROFILE.ramp_duration == pytest.approx(2.3)
    sp = contact_setpoints(PROFILE, 100.0)
    assert sp.rho_d.d == -0.003
    assert np.array_equal(sp.rhodot_d, np.zeros(6))


def test_ramp_is_continuous_and_rate_bounded():
    ts = np.linspace(0.0, 2.0 * PROFILE.duration, 800)
    ds = np.array([contact_setpoints(PROFILE, t).rho_d.d for t in ts])
    dt = ts[1] - ts[0]
    assert np.all(np.abs(np.diff(ds)) <= PROFILE.ramp_rate * dt * (1.0 + 1e-9))
    assert np.all(np.diff(ds) <= 0.0)  # monotone descent
    assert ds[-1] == PROFILE.d_hold


def test_contact_profile_validation():
    with pytest.raises(ValueError, match="exceed"):
        ContactProfile(d_start=-0.005, d_hold=0.0, ramp_rate=0.01)
    with pytest.raises(ValueError, match="ramp_rate"):
        ContactProfile(d_start=0.02, d_hold=0.0, ramp_rate=0.0)
    with pytest.raises(ValueError, match="non-negative"):
        contact_setpoints(PROFILE, -0.1)


# ---------------------------------------------------------------------------
# raster setpoints
# ---------------------------------------------------------------------------


def square_path(spacing=0.05, speed=0.02) -> RasterPath:
    return RasterPath(
        np.array([0.0, 0.0]), np.array([0.1, 0.1]), spacing, speed, d_hold=-0.003
    )


def test_square_raster_has_three_lines_and_expected_length():
    path = square_path()
    assert len(path.scan_lines()) == 3
    assert path.total_length() == pytest.approx(0.4, abs=1e-12)


def test_raster_speed_never_exceeds_configured():
    path = square_path()
    for t in np.linspace(0.0, path.duration * 1.2, 500):
        sp = path.setpoint(t)
        assert np.linalg.norm(sp.rhodot_d[:2]) <= path.speed + 1e-12
        assert sp.rho_d.d == path.d_hold
        assert np.array_equal(sp.rhodot_d[2:], np.zeros(4))


def test_raster_position_is_continuous():
    path = square_path()
    ts = np.linspace(0.0, path.duration * 1.1, 1200)
    s = np.array([[path.setpoint(t).rho_d.s1, path.setpoint(t).rho_d.s2] for t in ts])
    step = np.linalg.norm(np.diff(s, axis=0), axis=1)
    assert np.all(step <= path.speed * (ts[1] - ts[0]) + 1e-9)


def test_raster_covers_domain_within_half_spacing():
    path = square_path()
    lines = path.scan_lines()
    grid = np.linspace(0.0, 0.1, 41)
    for s2 in grid:
        assert np.min(np.abs(lines - s2)) <= path.line_spacing / 2.0 + 1e-12


def test_raster_holds_endpoint_after_finish():
    path = square_path()
    end = path.setpoint(path.duration + 5.0)
    last = path.waypoints()[-1]
    assert (end.rho_d.s1, end.rho_d.s2) == (last[0], last[1])
    assert np.array_equal(end.rhodot_d, np.zeros(6))


def test_narrow_domain_falls_back_to_single_centre_line():
    path = RasterPath(np.array([0.0, 0.0]), np.array([0.1, 0.03]), 0.05, 0.02, -0.003)
    lines = path.scan_lines()
    assert len(lines) == 1
    assert lines[0] == pytest.approx(0.015, abs=1e-15)
    cover = np.linspace(0.0, 0.03, 13)
    assert np.all(np.abs(lines[0] - cover) <= 0.025 + 1e-12)


def test_raster_setpoints_function_matches_path():
    sp = raster_setpoints([0.0, 0.0], [0.1, 0.1], 0.05, 0.02, 3.0, -0.003)
    sp2 = square_path().setpoint(3.0)
    assert sp.rho_d.rho == pytest.approx(sp2.rho_d.rho, abs=0)
    assert np.array_equal(sp.rhodot_d, sp2.rhodot_d)


def test_raster_validation():
    with pytest.raises(ValueError, match="positive"):
        square_path(spacing=0.0)
    with pytest.raises(ValueError, match="s_min"):
        RasterPath(np.array([0.2, 0.0]), np.array([0.1, 0.1]), 0.05, 0.02, -0.003)


# ---------------------------------------------------------------------------
# nullspace damping
# ---------------------------------------------------------------------------


def test_null_projector_annihilates_task_rows():
    rng = np.random.default_rng(4)
    for _ in range(50):
        J = rng.standard_normal((6, 7))
        N = nullspace_projector(J)
        assert np.max(np.abs(J @ N)) < 1e-9
        assert np.max(np.abs(N - N.T)) < 1e-12
        assert np.max(np.abs(N @ N - N)) < 1e-12


def test_zero_velocity_gives_zero_torque():
    rng = np.random.default_rng(5)
    J = rng.standard_normal((6, 7))
    assert np.array_equal(nullspace_damping(J, np.zeros(7), 2.0), np.zeros(7))


def test_row_space_motion_is_untouched():
    rng = np.random.default_rng(6)
    for _ in range(50):
        J = rng.standard_normal((6, 7))
        qdot = J.T @ rng.standard_normal(6)
        tau = nullspace_damping(J, qdot, 3.0)
        assert np.max(np.abs(tau)) < 1e-8 * max(1.0, np.max(np.abs(qdot)))


def test_nullspace_power_is_dissipative():
    rng = np.random.default_rng(7)
    for _ in range(200):
        J = rng.standard_normal((6, 7))
        qdot = rng.standard_normal(7)
        tau = nullspace_damping(J, qdot, 1.5)
        assert float(qdot @ tau) <= 1e-12


def test_rank_deficient_jacobian_damps_everything_lost():
    qdot = np.ones(7)
    tau = nullspace_damping(np.zeros((6, 7)), qdot, 2.0)
    assert np.allclose(tau, -2.0 * qdot, atol=1e-15)
    with pytest.raises(ValueError, match="non-negative"):
        nullspace_damping(np.zeros((6, 7)), qdot, -1.0)


# ---------------------------------------------------------------------------
# critical damping
# ---------------------------------------------------------------------------


def test_commuting_case_matches_scalar_rule():
    k = np.array([300.0, 300.0, 500.0, 5.0, 5.0, 1.0])
    lam = np.array([4.0, 3.0, 5.0, 0.2, 0.3, 0.1])
    D = critical_damping(np.diag(k), np.diag(lam), zeta=0.7)
    expect = np.diag(2.0 * 0.7 * np.sqrt(k * lam))
    assert np.max(np.abs(D - expect)) < 1e-10


def test_general_case_is_spd_and_transform_consistent():
    rng = np.random.default_rng(8)
    for _ in range(20):
        K = random_spd(rng, 6, 8.0)
        lam = random_spd(rng, 6, 8.0)
        D = critical_damping(K, lam, zeta=0.7)
        assert np.max(np.abs(D - D.T)) < 1e-12
        assert np.linalg.eigvalsh(D).min() > 0.0
        # in normalized coordinates the damping must read 2 zeta sqrt(K~)
        w, v = np.linalg.eigh(lam)
        inv_root = (v / np.sqrt(w)) @ v.T
        k_tilde = inv_root @ K @ inv_root
        wk, vk = np.linalg.eigh(k_tilde)
        sqrt_k = (vk * np.sqrt(wk)) @ vk.T
        assert np.max(np.abs(inv_root @ D @ inv_root - 1.4 * sqrt_k)) < 1e-9


def test_task_space_inertia_matches_direct_inverse():
    rng = np.random.default_rng(9)
    for _ in range(30):
        M = random_spd(rng, 7, 10.0)
        J = rng.standard_normal((6, 7))
        lam = task_space_inertia(M, J)
        direct = np.linalg.inv(J @ np.linalg.inv(M) @ J.T)
        assert np.max(np.abs(lam - direct)) < 1e-9 * max(1.0, np.max(np.abs(direct)))
        assert np.array_equal(lam, lam.T)


def test_critical_damping_scales_with_zeta():
    rng = np.random.default_rng(10)
    K = random_spd(rng, 6, 8.0)
    lam = random_spd(rng, 6, 8.0)
    d1 = critical_damping(K, lam, zeta=0.5)
    d2 = critical_damping(K, lam, zeta=1.0)
    assert np.max(np.abs(d2 - 2.0 * d1)) < 1e-10
