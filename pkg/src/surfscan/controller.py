"""Impedance control in surface coordinates.

The torque law is tau = J_rho^T (K_rho (rho_d - rho) + D_rho (rhodot_d -
rhodot)), verbatim: no feedforward, gravity, or Coriolis terms. Gravity
is assumed perfectly compensated by the simulator.

Setpoint generators cover the two experiment phases: a distance ramp
that establishes contact and holds a fixed penetration, and a constant
speed boustrophedon raster over the chart domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chart import SurfaceCoords

SYMMETRY_TOL = 1e-12
NULLSPACE_RANK_TOL = 1e-10


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (6, 6):
        raise ValueError(f"{name} must be 6x6, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} must be finite")
    if np.max(np.abs(m - m.T)) >= SYMMETRY_TOL:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0.0:
        raise ValueError(f"{name} must be positive-definite")
    return m


@dataclass(frozen=True)
class ImpedanceGains:
    """Symmetric positive-definite stiffness and damping.

    Row units follow the coordinate vector: N/m for (s1, s2, d), N·m per
    unit quaternion-vector error for the orientation rows.
    """

    stiffness: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stiffness", _check_spd(self.stiffness, "stiffness"))
        object.__setattr__(self, "damping", _check_spd(self.damping, "damping"))

    @staticmethod
    def diagonal(stiffness, damping) -> "ImpedanceGains":
        return ImpedanceGains(np.diag(np.asarray(stiffness, dtype=float)),
                              np.diag(np.asarray(damping, dtype=float)))

    @staticmethod
    def default() -> "ImpedanceGains":
        # stiffness values are ours, the source gives none
        return ImpedanceGains.diagonal(
            [300.0, 300.0, 500.0, 5.0, 5.0, 1.0],
            [35.0, 35.0, 45.0, 0.9, 0.9, 0.4],
        )


@dataclass(frozen=True)
class Setpoint:
    """Desired surface coordinates and rates."""

    rho_d: SurfaceCoords
    rhodot_d: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        v = np.asarray(self.rhodot_d, dtype=float)
        if v.shape != (6,):
            raise ValueError(f"rhodot_d must have 6 entries, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("rhodot_d must be finite")
        object.__setattr__(self, "rhodot_d", v)


@dataclass(frozen=True)
class ContactProfile:
    """Distance ramp: approach at d_start, sink to d_hold, stay there."""

    d_start: float
    d_hold: float
    ramp_rate: float
    hold_duration: float = 5.0

    def __post_init__(self):
        if not self.d_start > self.d_hold:
            raise ValueError("d_start must exceed d_hold (approach decreases d)")
        if self.ramp_rate <= 0.0:
            raise ValueError("ramp_rate must be positive")
        if self.hold_duration < 0.0:
            raise ValueError("hold_duration must be non-negative")

    @property
    def ramp_duration(self) -> float:
        return (self.d_start - self.d_hold) / self.ramp_rate

    @property
    def duration(self) -> float:
        return self.ramp_duration + self.hold_duration


def _setpoint_coords(s1, s2, d) -> SurfaceCoords:
    return SurfaceCoords(float(s1), float(s2), float(d), np.zeros(3), 1.0)


def impedance_torque(
    gains: ImpedanceGains,
    sp: Setpoint,
    rho: SurfaceCoords,
    rhodot: np.ndarray,
    J_rho: np.ndarray,
) -> np.ndarray:
    """tau = J_rho^T (K (rho_d - rho) + D (rhodot_d - rhodot)), nothing else."""
    rhodot = np.asarray(rhodot, dtype=float)
    J_rho = np.asarray(J_rho, dtype=float)
    if rhodot.shape != (6,):
        raise ValueError(f"rhodot must have 6 entries, got {rhodot.shape}")
    if J_rho.ndim != 2 or J_rho.shape[0] != 6:
        raise ValueError(f"J_rho must be 6xn, got {J_rho.shape}")
    if not (np.all(np.isfinite(rhodot)) and np.all(np.isfinite(J_rho))):
        raise ValueError("controller inputs must be finite")
    err = sp.rho_d.rho - rho.rho
    verr = sp.rhodot_d - rhodot
    if not np.all(np.isfinite(err)):
        raise ValueError("controller inputs must be finite")
    return J_rho.T @ (gains.stiffness @ err + gains.damping @ verr)


def contact_setpoints(
    profile: ContactProfile,
    t: float,
    s: tuple[float, float] = (0.0, 0.0),
) -> Setpoint:
    """d_d(t) = max(d_hold, d_start - ramp_rate t); s and orientation held."""
    if t < 0.0:
        raise ValueError("time must be non-negative")
    ramping = profile.d_start - profile.ramp_rate * t > profile.d_hold
    d_d = max(profile.d_hold, profile.d_start - profile.ramp_rate * t)
    rhodot = np.zeros(6)
    if ramping:
        rhodot[2] = -profile.ramp_rate
    return Setpoint(_setpoint_coords(s[0], s[1], d_d), rhodot)


@dataclass(frozen=True)
class RasterPath:
    """Boustrophedon polyline over a rectangular chart domain.

    Scan lines run along s1 and are stepped along s2. When the s2 span
    is narrower than the requested spacing the path degenerates to a
    single centre line. Otherwise lines are spread evenly edge to edge
    at an effective spacing no larger than requested, so every domain
    point lies within half a spacing of some line.
    """

    s_min: np.ndarray
    s_max: np.ndarray
    line_spacing: float
    speed: float
    d_hold: float

    def __post_init__(self):
        lo = np.asarray(self.s_min, dtype=float)
        hi = np.asarray(self.s_max, dtype=float)
        if lo.shape != (2,) or hi.shape != (2,):
            raise ValueError("domain corners must be 2-vectors")
        if np.any(lo > hi):
            raise ValueError("domain must satisfy s_min <= s_max")
        if self.line_spacing <= 0.0 or self.speed <= 0.0:
            raise ValueError("line spacing and speed must be positive")
        object.__setattr__(self, "s_min", lo)
        object.__setattr__(self, "s_max", hi)

    def scan_lines(self) -> np.ndarray:
        """s2 value of each scan line."""
        span = self.s_max[1] - self.s_min[1]
        if span < self.line_spacing:
            return np.array([0.5 * (self.s_min[1] + self.s_max[1])])
        n = int(math.ceil(span / self.line_spacing)) + 1
        return np.linspace(self.s_min[1], self.s_max[1], n)

    def waypoints(self) -> np.ndarray:
        lines = self.scan_lines()
        pts = []
        for k, s2 in enumerate(lines):
            ends = (self.s_min[0], self.s_max[0])
            if k % 2 == 1:
                ends = ends[::-1]
            pts.append((ends[0], s2))
            pts.append((ends[1], s2))
        return np.array(pts)

    def total_length(self) -> float:
        w = self.waypoints()
        return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))

    @property
    def duration(self) -> float:
        return self.total_length() / self.speed

    def setpoint(self, t: float) -> Setpoint:
        """Constant-speed traversal; holds the endpoint after the path ends."""
        if t < 0.0:
            raise ValueError("time must be non-negative")
        w = self.waypoints()
        seg = np.diff(w, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        remaining = self.speed * t
        for p, delta, length in zip(w[:-1], seg, lengths):
            if remaining < length:
                direction = delta / length
                s = p + remaining * direction
                rhodot = np.zeros(6)
                rhodot[:2] = self.speed * direction
                return Setpoint(_setpoint_coords(s[0], s[1], self.d_hold), rhodot)
            remaining -= length
        end = w[-1]
        return Setpoint(_setpoint_coords(end[0], end[1], self.d_hold), np.zeros(6))


def raster_setpoints(
    s_min,
    s_max,
    line_spacing: float,
    speed: float,
    t: float,
    d_hold: float,
) -> Setpoint:
    return RasterPath(s_min, s_max, line_spacing, speed, d_hold).setpoint(t)


def nullspace_projector(J_rho: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto null(J_rho)."""
    J_rho = np.asarray(J_rho, dtype=float)
    if J_rho.ndim != 2:
        raise ValueError("J_rho must be a matrix")
    n = J_rho.shape[1]
    _, sv, vt = np.linalg.svd(J_rho)
    rank = int(np.sum(sv > NULLSPACE_RANK_TOL * max(sv[0], 1.0)))
    vr = vt[:rank]
    return np.eye(n) - vr.T @ vr


def nullspace_damping(J_rho: np.ndarray, qdot: np.ndarray, gain: float) -> np.ndarray:
    """tau_null = -gain N qdot; damps joint motion the task cannot see."""
    if gain < 0.0:
        raise ValueError("gain must be non-negative")
    qdot = np.asarray(qdot, dtype=float)
    N = nullspace_projector(J_rho)
    if qdot.shape != (N.shape[0],):
        raise ValueError(f"qdot must have {N.shape[0]} entries, got {qdot.shape}")
    return -gain * (N @ qdot)


def task_space_inertia(mass_matrix: np.ndarray, J_rho: np.ndarray) -> np.ndarray:
    """Lambda = (J M^-1 J^T)^-1, symmetrized against roundoff."""
    M = np.asarray(mass_matrix, dtype=float)
    J = np.asarray(J_rho, dtype=float)
    core = J @ np.linalg.solve(M, J.T)
    lam = np.linalg.inv(core)
    return 0.5 * (lam + lam.T)


def _spd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    if w.min() <= 0.0:
        raise ValueError("matrix must be positive-definite")
    return (v * np.sqrt(w)) @ v.T


def critical_damping(
    stiffness: np.ndarray,
    task_inertia: np.ndarray,
    zeta: float = 0.7,
) -> np.ndarray:
    """D = 2 zeta sqrt(K Lambda), realized through the symmetric
    factorization sqrt(L) sqrt(sqrt(L)^-1 K sqrt(L)^-1) sqrt(L) with
    L = Lambda, which equals the literal product root whenever K and
    Lambda commute and stays symmetric positive-definite otherwise."""
    if zeta <= 0.0:
        raise ValueError("damping ratio must be positive")
    K = _check_spd(stiffness, "stiffness")
    lam = _check_spd(task_inertia, "task inertia")
    root_lam = _spd_sqrt(lam)
    inv_root = np.linalg.inv(root_lam)
    inner = _spd_sqrt(inv_root @ K @ inv_root)
    d = 2.0 * zeta * (root_lam @ inner @ root_lam)
    return 0.5 * (d + d.T)
