"""Compliant contact and closed-loop time stepping.

Dynamics are M(q) qdd = tau_impedance + tau_null + J_geom^T F_contact
with gravity assumed perfectly compensated, integrated by semi-implicit
Euler. Contact is a frictionless normal penalty at the probe tip:
F = (k_t (-d) + c max(0, -ddot)) n while d < 0, never adhesive.

The energy audit assumes constant setpoints; on a flat chart the
continuous-time loop then conserves kinetic + spring energy plus
accumulated dissipation exactly, so the audit isolates integrator error.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .arm import ArmModel, ArmSnapshot, JointState, arm_snapshot
from .chart import SurfaceChart, SurfaceCoords, SurfaceFrame
from .controller import ImpedanceGains, Setpoint, impedance_torque, nullspace_damping
from .mesh import TriMesh, grid_surface_mesh

MAX_DT = 5e-3
CSV_HEADER = "t,q0,q1,q2,q3,q4,q5,q6,s1,s2,d,eps1,eps2,eps3,d_d,force_n"


class DivergenceError(RuntimeError):
    """The integrator produced a non-finite state."""


@dataclass(frozen=True)
class PhantomModel:
    """Ground-truth surface plus penalty-contact parameters.

    The material composition is carried only as a label; stiffness and
    damping are the whole constitutive story.
    """

    mesh: TriMesh
    contact_stiffness: float
    contact_damping: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.contact_stiffness <= 0.0:
            raise ValueError("contact stiffness must be positive")
        if self.contact_damping < 0.0:
            raise ValueError("contact damping must be non-negative")


def flat_phantom_mesh(centre, extent: float = 0.15, n: int = 31) -> TriMesh:
    """Level square top surface centred at `centre`."""
    centre = np.asarray(centre, dtype=float)
    if extent <= 0.0 or n < 2:
        raise ValueError("extent must be positive and n at least 2")
    xs = np.linspace(-extent, extent, n)
    heights = np.zeros((n, n))
    return grid_surface_mesh(
        centre, np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([0.0, 0, 1]),
        xs, xs, heights,
    )


def cap_phantom_mesh(
    centre,
    sphere_radius: float = 0.10,
    cap_height: float = 0.04,
    extent: float = 0.12,
    n: int = 61,
) -> TriMesh:
    """Spherical cap rising from a flat skirt; `centre` is the skirt level
    under the apex. Default rim slope is about 53 degrees."""
    centre = np.asarray(centre, dtype=float)
    if not 0.0 < cap_height <= sphere_radius:
        raise ValueError("cap height must be in (0, sphere_radius]")
    if extent <= 0.0 or n < 2:
        raise ValueError("extent must be positive and n at least 2")
    xs = np.linspace(-extent, extent, n)
    r2 = xs[:, None] ** 2 + xs[None, :] ** 2
    h = np.sqrt(np.maximum(sphere_radius**2 - r2, 0.0)) - (sphere_radius - cap_height)
    heights = np.maximum(h, 0.0)
    return grid_surface_mesh(
        centre, np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([0.0, 0, 1]),
        xs, xs, heights,
    )


@dataclass(frozen=True)
class SimState:
    """Snapshot at time t; arm and chart bundles are consistent with q."""

    t: float
    joint: JointState
    contact_wrench: np.ndarray
    rho: SurfaceCoords
    rhodot: np.ndarray
    J_rho: np.ndarray
    frame: SurfaceFrame
    arm: ArmSnapshot

    @property
    def force_normal(self) -> float:
        return float(self.contact_wrench[:3] @ self.frame.n)


def contact_wrench(
    phantom: PhantomModel,
    rho: SurfaceCoords,
    rhodot: np.ndarray,
    normal: np.ndarray,
) -> np.ndarray:
    """Penalty wrench at the probe tip, world axes; zero torque."""
    w = np.zeros(6)
    if rho.d >= 0.0:
        return w
    ddot = float(np.asarray(rhodot, dtype=float)[2])
    f = phantom.contact_stiffness * (-rho.d) + phantom.contact_damping * max(0.0, -ddot)
    w[:3] = max(f, 0.0) * np.asarray(normal, dtype=float)
    return w


def init_state(
    model: ArmModel,
    chart: SurfaceChart,
    phantom: PhantomModel,
    q,
    qdot=None,
    t: float = 0.0,
) -> SimState:
    q = np.asarray(q, dtype=float).reshape(7)
    qdot = np.zeros(7) if qdot is None else np.asarray(qdot, dtype=float).reshape(7)
    snap = arm_snapshot(model, q)
    rho, rhodot, J, frame = chart.evaluate_probe(snap.probe, snap.jacobian, qdot)
    wrench = contact_wrench(phantom, rho, rhodot, frame.n)
    return SimState(t, JointState(q, qdot), wrench, rho, rhodot, J, frame, snap)


def step(
    model: ArmModel,
    chart: SurfaceChart,
    phantom: PhantomModel,
    gains: ImpedanceGains | None,
    setpoint: Setpoint,
    state: SimState,
    dt: float,
    nullspace_gain: float = 0.0,
) -> SimState:
    """One semi-implicit Euler step using the forces of `state`."""
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must be in (0, {MAX_DT}] s, got {dt}")
    q = state.joint.q
    qdot = state.joint.qdot
    tau = np.zeros(7)
    if gains is not None:
        tau = tau + impedance_torque(gains, setpoint, state.rho, state.rhodot, state.J_rho)
    if nullspace_gain > 0.0:
        tau = tau + nullspace_damping(state.J_rho, qdot, nullspace_gain)
    # frictionless tip contact: only the linear rows of the probe
    # jacobian see the wrench
    tau = tau + state.arm.jacobian.T @ state.contact_wrench
    qdd = np.linalg.solve(state.arm.mass, tau)
    qdot_new = qdot + dt * qdd
    q_new = q + dt * qdot_new
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qdot_new))):
        raise DivergenceError(
            f"integrator diverged at t = {state.t:.6f} s (step from dt = {dt})"
        )
    snap = arm_snapshot(model, q_new)  # raises on a limit breach
    hint = state.frame.face if state.frame.face >= 0 else None
    rho, rhodot, J, frame = chart.evaluate_probe(snap.probe, snap.jacobian, qdot_new, hint)
    wrench = contact_wrench(phantom, rho, rhodot, frame.n)
    return SimState(
        state.t + dt, JointState(q_new, qdot_new), wrench, rho, rhodot, J, frame, snap
    )


def steady_state_force(k_controller: float, k_t: float, d_hold: float) -> float:
    """Equilibrium contact force of the controller spring in series with
    the contact spring, holding d at d_hold."""
    if k_controller <= 0.0 or k_t <= 0.0:
        raise ValueError("stiffnesses must be positive")
    if d_hold >= 0.0:
        raise ValueError("d_hold must command penetration (negative)")
    return k_controller * k_t / (k_controller + k_t) * (-d_hold)


@dataclass(frozen=True)
class ScanLog:
    """Fixed-schema samples of a run; one row per sampled step."""

    t: np.ndarray
    q: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    d: np.ndarray
    eps: np.ndarray
    d_d: np.ndarray
    force_n: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if n == 0:
            raise ValueError("log must contain at least one sample")
        if self.q.shape != (n, 7) or self.eps.shape != (n, 3):
            raise ValueError("log column shapes are inconsistent")
        for name in ("s1", "s2", "d", "d_d", "force_n"):
            if getattr(self, name).shape != (n,):
                raise ValueError("log column shapes are inconsistent")
        if n > 1 and np.min(np.diff(self.t)) <= 0.0:
            raise ValueError("log time must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def row(self, k: int) -> np.ndarray:
        return np.concatenate(
            [
                [self.t[k]],
                self.q[k],
                [self.s1[k], self.s2[k], self.d[k]],
                self.eps[k],
                [self.d_d[k], self.force_n[k]],
            ]
        )


class _LogBuilder:
    def __init__(self):
        self.rows = {k: [] for k in ("t", "q", "s1", "s2", "d", "eps", "d_d", "force_n")}

    def add(self, state: SimState, setpoint: Setpoint):
        r = self.rows
        r["t"].append(state.t)
        r["q"].append(state.joint.q.copy())
        r["s1"].append(state.rho.s1)
        r["s2"].append(state.rho.s2)
        r["d"].append(state.rho.d)
        r["eps"].append(state.rho.eps.copy())
        r["d_d"].append(setpoint.rho_d.d)
        r["force_n"].append(state.force_normal)

    def build(self) -> ScanLog:
        r = self.rows
        return ScanLog(
            np.array(r["t"]),
            np.array(r["q"]).reshape(-1, 7),
            np.array(r["s1"]),
            np.array(r["s2"]),
            np.array(r["d"]),
            np.array(r["eps"]).reshape(-1, 3),
            np.array(r["d_d"]),
            np.array(r["force_n"]),
        )


@dataclass(frozen=True)
class EnergyTrace:
    """Energy bookkeeping along a constant-setpoint run."""

    t: np.ndarray
    kinetic: np.ndarray
    controller_spring: np.ndarray
    contact_spring: np.ndarray
    dissipated: np.ndarray  # cumulative

    def total(self) -> np.ndarray:
        return self.kinetic + self.controller_spring + self.contact_spring

    def balance_error(self) -> float:
        """Max |E(t) + D(t) - E(0)| over the run, relative to peak energy."""
        e = self.total()
        drift = np.abs(e + self.dissipated - e[0])
        return float(drift.max() / max(e.max(), 1e-300))


class _EnergyAudit:
    def __init__(self, model, phantom, gains, nullspace_gain):
        self.model = model
        self.phantom = phantom
        self.gains = gains
        self.nullspace_gain = nullspace_gain
        self.t = []
        self.kinetic = []
        self.controller_spring = []
        self.contact_spring = []
        self.dissipated = []
        self._acc = 0.0
        self._last_power = None
        self._last_t = None

    def _power(self, state: SimState, setpoint: Setpoint) -> float:
        ve = state.rhodot - setpoint.rhodot_d
        p = float(ve @ (self.gains.damping @ ve)) if self.gains is not None else 0.0
        ddot = float(state.rhodot[2])
        if state.rho.d < 0.0:
            p += self.phantom.contact_damping * max(0.0, -ddot) ** 2
        if self.nullspace_gain > 0.0:
            qdot = state.joint.qdot
            tau_null = nullspace_damping(state.J_rho, qdot, self.nullspace_gain)
            p += float(-qdot @ tau_null)
        return p

    def add(self, state: SimState, setpoint: Setpoint):
        qdot = state.joint.qdot
        kin = 0.5 * float(qdot @ (state.arm.mass @ qdot))
        if self.gains is not None:
            e = setpoint.rho_d.rho - state.rho.rho
            spring = 0.5 * float(e @ (self.gains.stiffness @ e))
        else:
            spring = 0.0
        pen = min(state.rho.d, 0.0)
        contact = 0.5 * self.phantom.contact_stiffness * pen * pen
        power = self._power(state, setpoint)
        if self._last_power is not None:
            self._acc += 0.5 * (self._last_power + power) * (state.t - self._last_t)
        self._last_power = power
        self._last_t = state.t
        self.t.append(state.t)
        self.kinetic.append(kin)
        self.controller_spring.append(spring)
        self.contact_spring.append(contact)
        self.dissipated.append(self._acc)

    def build(self) -> EnergyTrace:
        return EnergyTrace(
            np.array(self.t),
            np.array(self.kinetic),
            np.array(self.controller_spring),
            np.array(self.contact_spring),
            np.array(self.dissipated),
        )


def simulate(
    model: ArmModel,
    chart: SurfaceChart,
    phantom: PhantomModel,
    gains: ImpedanceGains | None,
    setpoints,
    q0,
    duration: float,
    dt: float = 1e-3,
    sample_every: int = 1,
    nullspace_gain: float = 0.0,
    energy_audit: bool = False,
    deadline: float | None = None,
) -> tuple[ScanLog, EnergyTrace | None]:
    """Run the loop for `duration` seconds; setpoints is t -> Setpoint.

    Samples every `sample_every` steps (always including t = 0 and the
    final state). On joint-limit or divergence errors the partial log is
    attached to the exception as `partial_log`.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    if sample_every < 1:
        raise ValueError("sample_every must be at least 1")
    n_steps = max(1, int(round(duration / dt)))
    builder = _LogBuilder()
    audit = _EnergyAudit(model, phantom, gains, nullspace_gain) if energy_audit else None
    state = init_state(model, chart, phantom, q0)
    sp = setpoints(0.0)
    builder.add(state, sp)
    if audit:
        audit.add(state, sp)
    try:
        for k in range(n_steps):
            state = step(model, chart, phantom, gains, sp, state, dt, nullspace_gain)
            sp = setpoints(state.t)
            if (k + 1) % sample_every == 0 or k + 1 == n_steps:
                builder.add(state, sp)
                if audit:
                    audit.add(state, sp)
            if deadline is not None and k % 200 == 0 and time.monotonic() > deadline:
                raise TimeoutError(f"simulation exceeded its deadline at t = {state.t:.3f} s")
    except Exception as exc:
        exc.partial_log = builder.build() if builder.rows["t"] else None
        raise
    return builder.build(), (audit.build() if audit else None)


# ---------------------------------------------------------------------------
# log files
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def export_log(log: ScanLog, path) -> None:
    """CSV, 9 significant digits, LF endings; byte-stable for equal runs."""
    lines = [CSV_HEADER]
    for k in range(len(log)):
        lines.append(",".join(_fmt(v) for v in log.row(k)))
    data = "\n".join(lines) + "\n"
    with open(path, "w", newline="\n") as fh:
        fh.write(data)


def parse_log(path) -> ScanLog:
    with open(path, "r", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != CSV_HEADER:
        raise ValueError(f"{path}: unexpected log header")
    rows = []
    for ln in lines[1:]:
        ln = ln.rstrip("\r")
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != 16:
            raise ValueError(f"{path}: expected 16 columns, got {len(parts)}")
        rows.append([float(p) for p in parts])
    if not rows:
        raise ValueError(f"{path}: log has no rows")
    a = np.array(rows)
    return ScanLog(
        a[:, 0], a[:, 1:8], a[:, 8], a[:, 9], a[:, 10], a[:, 11:14], a[:, 14], a[:, 15]
    )
