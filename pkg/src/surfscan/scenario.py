"""Config-driven scenario runner for the scanning pipeline.

A scenario is one YAML file describing the arm, the phantom, the camera
and the controller, plus an ordered list of requested stages:

  localize     synthetic fiducials on the ground plane -> fitted plane
  reconstruct  depth-camera orbit -> fused height field -> mesh
  contact      distance-ramp contact experiment on the truth chart
  raster       coverage scan; uses the reconstructed chart when the
               reconstruct stage ran, the truth chart otherwise

Every stage writes its artifacts (marker/plane files, PFM depth maps,
OFF meshes, CSV logs) into one output directory, and a plain-text
report collects the per-stage checks. Stage failures are wrapped in
StageError carrying the stage name; artifacts written so far stay on
disk and the report flags the failed stage.

Runs are deterministic: all randomness derives from the config seed, so
a repeated run reproduces every output file byte for byte.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .arm import ArmModel, arm_snapshot, load_arm_model, reference_arm
from .chart import SurfaceChart, SurfaceCoords
from .controller import (
    ContactProfile,
    ImpedanceGains,
    RasterPath,
    Setpoint,
    contact_setpoints,
    critical_damping,
    task_space_inertia,
)
from .localization import (
    MarkerObservation,
    ScenePlane,
    alignment_pose,
    fit_plane,
    orbit_trajectory,
    save_markers,
)
from .mesh import TriMesh, load_off, save_off
from .reconstruction import (
    CameraIntrinsics,
    fuse_views,
    extract_mesh,
    mesh_error,
    render_depth,
    save_pfm,
)
from .schema import (
    SchemaError,
    as_float,
    as_int,
    as_vector,
    check_keys,
    require_mapping,
)
from .sim import (
    PhantomModel,
    ScanLog,
    cap_phantom_mesh,
    export_log,
    flat_phantom_mesh,
    simulate,
    steady_state_force,
)

STAGES = ("localize", "reconstruct", "contact", "raster")

UP = np.array([0.0, 0.0, 1.0])


class StageError(RuntimeError):
    """A scenario stage failed; artifacts written so far are kept."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    arm_model: str  # "reference" or a file path
    q_start: np.ndarray
    phantom_kind: str  # flat | cap | mesh
    phantom_mesh: str | None
    phantom_extent: float
    phantom_grid_n: int
    sphere_radius: float
    cap_height: float
    contact_stiffness: float
    contact_damping: float
    phantom_label: str
    marker_half_extents: np.ndarray
    marker_size: float
    marker_noise_sigma: float
    fit_use_corners: bool
    camera: CameraIntrinsics
    view_angle: float  # rad
    view_distance: float
    n_views: int
    resolution: float
    chart_margin: float
    stiffness: np.ndarray  # (6, 6)
    damping: np.ndarray | None  # None = critical mode
    zeta: float
    nullspace_gain: float
    d_start: float
    d_hold: float
    ramp_rate: float
    hold_duration: float
    raster_half_extents: np.ndarray
    line_spacing: float
    raster_speed: float
    raster_d_hold: float
    settle_time: float
    dt: float
    sample_every: int


def _as_bool(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaError(f"{where}: expected true/false, got {value!r}")
    return value


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: expected a string, got {value!r}")
    return value


def _gain_matrix(node, where: str) -> np.ndarray:
    """6 diagonal entries or a full 6x6 row list."""
    if isinstance(node, (list, tuple)) and len(node) == 6 and node and not isinstance(node[0], (list, tuple)):
        return np.diag(as_vector(node, 6, where))
    if isinstance(node, (list, tuple)):
        m = np.vstack([as_vector(row, 6, f"{where}[{k}]") for k, row in enumerate(node)])
        if m.shape != (6, 6):
            raise SchemaError(f"{where}: expected 6 rows")
        return m
    raise SchemaError(f"{where}: expected 6 numbers or 6 rows of 6")


_TOP_KEYS = (
    "name", "seed", "arm", "phantom", "markers", "camera",
    "reconstruction", "controller", "contact", "raster", "sim",
)
_ARM_KEYS = ("model", "q_start")
_PHANTOM_KEYS = (
    "kind", "mesh", "extent", "grid_n", "sphere_radius", "cap_height",
    "contact_stiffness", "contact_damping", "label",
)
_MARKER_KEYS = ("half_extents", "size", "noise_sigma", "use_corners")
_CAMERA_KEYS = (
    "fx", "fy", "cx", "cy", "width", "height", "depth_noise_sigma",
    "view_angle_deg", "view_distance",
)
_RECON_KEYS = ("n_views", "resolution", "chart_margin")
_CONTROLLER_KEYS = ("stiffness", "damping", "zeta", "nullspace_gain")
_CONTACT_KEYS = ("d_start", "d_hold", "ramp_rate", "hold_duration")
_RASTER_KEYS = ("half_extents", "line_spacing", "speed", "d_hold", "settle_time")
_SIM_KEYS = ("dt", "sample_every")


def parse_config(doc, where: str = "config") -> ScenarioConfig:
    doc = require_mapping(doc, where)
    check_keys(doc, _TOP_KEYS, where)

    def section(key, allowed):
        node = require_mapping(doc.get(key, {}), f"{where}.{key}")
        check_keys(node, allowed, f"{where}.{key}")
        return node

    arm = section("arm", _ARM_KEYS)
    phantom = section("phantom", _PHANTOM_KEYS)
    markers = section("markers", _MARKER_KEYS)
    camera = section("camera", _CAMERA_KEYS)
    recon = section("reconstruction", _RECON_KEYS)
    ctrl = section("controller", _CONTROLLER_KEYS)
    contact = section("contact", _CONTACT_KEYS)
    raster = section("raster", _RASTER_KEYS)
    sim = section("sim", _SIM_KEYS)

    def opt(node, key, default, conv, sub):
        if key not in node:
            return default
        prefix = f"{where}.{sub}" if sub else where
        return conv(node[key], f"{prefix}.{key}")

    kind = opt(phantom, "kind", "flat", _as_str, "phantom")
    if kind not in ("flat", "cap", "mesh"):
        raise SchemaError(f"{where}.phantom.kind: expected flat|cap|mesh, got {kind!r}")
    mesh_path = opt(phantom, "mesh", None, _as_str, "phantom")
    if kind == "mesh" and mesh_path is None:
        raise SchemaError(f"{where}.phantom: kind 'mesh' needs a 'mesh' file path")
    if kind != "mesh" and mesh_path is not None:
        raise SchemaError(f"{where}.phantom: 'mesh' is only valid with kind 'mesh'")

    damping_node = ctrl.get("damping", "critical")
    if isinstance(damping_node, str):
        if damping_node != "critical":
            raise SchemaError(f"{where}.controller.damping: expected gains or 'critical'")
        damping = None
    else:
        damping = _gain_matrix(damping_node, f"{where}.controller.damping")

    intr = CameraIntrinsics(
        fx=opt(camera, "fx", 180.0, as_float, "camera"),
        fy=opt(camera, "fy", 180.0, as_float, "camera"),
        cx=opt(camera, "cx", 120.0, as_float, "camera"),
        cy=opt(camera, "cy", 90.0, as_float, "camera"),
        width=opt(camera, "width", 240, as_int, "camera"),
        height=opt(camera, "height", 180, as_int, "camera"),
        depth_noise_sigma=opt(camera, "depth_noise_sigma", 0.0, as_float, "camera"),
    )

    cfg = ScenarioConfig(
        name=opt(doc, "name", "scenario", _as_str, ""),
        seed=opt(doc, "seed", 0, as_int, ""),
        arm_model=opt(arm, "model", "reference", _as_str, "arm"),
        q_start=opt(arm, "q_start", np.array([0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0]),
                    lambda v, w: as_vector(v, 7, w), "arm"),
        phantom_kind=kind,
        phantom_mesh=mesh_path,
        phantom_extent=opt(phantom, "extent", 0.15 if kind == "flat" else 0.12,
                           as_float, "phantom"),
        phantom_grid_n=opt(phantom, "grid_n", 31 if kind == "flat" else 61,
                           as_int, "phantom"),
        sphere_radius=opt(phantom, "sphere_radius", 0.10, as_float, "phantom"),
        cap_height=opt(phantom, "cap_height", 0.04, as_float, "phantom"),
        contact_stiffness=opt(phantom, "contact_stiffness", 300.0, as_float, "phantom"),
        contact_damping=opt(phantom, "contact_damping", 20.0, as_float, "phantom"),
        phantom_label=opt(phantom, "label", "", _as_str, "phantom"),
        marker_half_extents=opt(markers, "half_extents", np.array([0.10, 0.09]),
                                lambda v, w: as_vector(v, 2, w), "markers"),
        marker_size=opt(markers, "size", 0.02, as_float, "markers"),
        marker_noise_sigma=opt(markers, "noise_sigma", 0.0, as_float, "markers"),
        fit_use_corners=opt(markers, "use_corners", False, _as_bool, "markers"),
        camera=intr,
        view_angle=math.radians(opt(camera, "view_angle_deg", 45.0, as_float, "camera")),
        view_distance=opt(camera, "view_distance", 0.30, as_float, "camera"),
        n_views=opt(recon, "n_views", 8, as_int, "reconstruction"),
        resolution=opt(recon, "resolution", 0.005, as_float, "reconstruction"),
        chart_margin=opt(recon, "chart_margin", 0.01, as_float, "reconstruction"),
        # vertical stiffness an order above the contact spring keeps the
        # held distance within the raster tolerance (series equilibrium);
        # orientation rows stiff enough that the D/K tracking lag stays
        # small while the surface frame rotates under a moving probe
        stiffness=opt(ctrl, "stiffness", np.diag([300.0, 300.0, 3000.0, 20.0, 20.0, 4.0]),
                      _gain_matrix, "controller"),
        damping=damping,
        zeta=opt(ctrl, "zeta", 0.7, as_float, "controller"),
        nullspace_gain=opt(ctrl, "nullspace_gain", 0.5, as_float, "controller"),
        d_start=opt(contact, "d_start", 0.010, as_float, "contact"),
        d_hold=opt(contact, "d_hold", -0.004, as_float, "contact"),
        ramp_rate=opt(contact, "ramp_rate", 0.005, as_float, "contact"),
        hold_duration=opt(contact, "hold_duration", 5.0, as_float, "contact"),
        raster_half_extents=opt(raster, "half_extents", np.array([0.03, 0.02]),
                                lambda v, w: as_vector(v, 2, w), "raster"),
        line_spacing=opt(raster, "line_spacing", 0.01, as_float, "raster"),
        raster_speed=opt(raster, "speed", 0.01, as_float, "raster"),
        raster_d_hold=opt(raster, "d_hold", -0.004, as_float, "raster"),
        settle_time=opt(raster, "settle_time", 2.0, as_float, "raster"),
        dt=opt(sim, "dt", 1e-3, as_float, "sim"),
        sample_every=opt(sim, "sample_every", 1, as_int, "sim"),
    )
    if cfg.d_start <= 0.0:
        raise SchemaError(f"{where}.contact.d_start must be positive (start above the surface)")
    if cfg.settle_time < 0.0 or cfg.raster_speed <= 0.0 or cfg.line_spacing <= 0.0:
        raise SchemaError(f"{where}.raster: speed and line_spacing must be positive")
    if np.any(cfg.raster_half_extents <= 0.0):
        raise SchemaError(f"{where}.raster.half_extents must be positive")
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return parse_config(doc, str(path))


# ---------------------------------------------------------------------------
# synthetic fiducials
# ---------------------------------------------------------------------------


def synthetic_markers(
    plane: ScenePlane,
    camera_pose,
    half_extents,
    size: float,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[MarkerObservation]:
    """Four square markers at the corners of a plane-aligned rectangle.

    Corner observations are expressed in the camera frame (what a
    detector would output), clockwise from top-left as seen from the
    camera, with optional Gaussian noise on every coordinate.
    """
    hx, hy = float(half_extents[0]), float(half_extents[1])
    if hx <= 0.0 or hy <= 0.0 or size <= 0.0:
        raise ValueError("marker rectangle and size must be positive")
    if noise_sigma > 0.0 and rng is None:
        raise ValueError("corner noise requested but no generator supplied")
    u, v, _ = plane.frame()
    R = camera_pose.rotation_matrix()
    t = camera_pose.translation
    offsets = 0.5 * size * np.array([[-1, 1], [1, 1], [1, -1], [-1, -1]], dtype=float)
    out = []
    for mid, (cx, cy) in enumerate([(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]):
        centre = plane.centre + cx * u + cy * v
        corners_world = centre + offsets[:, 0, None] * u + offsets[:, 1, None] * v
        corners_cam = (corners_world - t) @ R
        if noise_sigma > 0.0:
            corners_cam = corners_cam + rng.normal(0.0, noise_sigma, (4, 3))
        out.append(MarkerObservation(mid, corners_cam))
    return out


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


@dataclass
class _StageReport:
    stage: str
    lines: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    ok: bool = True

    def info(self, key: str, value):
        self.values[key] = value
        self.lines.append(f"{key}: {_fmt(value)}")

    def check(self, key: str, value, op: str, limit: float):
        passed = value < limit if op == "<" else value >= limit
        self.values[key] = value
        self.ok = self.ok and passed
        verdict = "PASS" if passed else "FAIL"
        self.lines.append(f"{key}: {_fmt(value)} [{verdict}] ({op} {_fmt(limit)})")


@dataclass
class ScenarioResult:
    name: str
    seed: int
    stages: tuple
    out_dir: Path
    metrics: dict  # stage -> {key: value}
    logs: dict  # stage -> ScanLog
    passed: bool
    report_path: Path


def _write_report(path, name, seed, stages, reports, failed: str | None) -> None:
    lines = [f"scenario: {name}", f"seed: {seed}", "stages: " + ",".join(stages)]
    for rep in reports:
        lines.append("")
        lines.append(f"[{rep.stage}]")
        lines.extend(rep.lines)
    lines.append("")
    if failed is not None:
        lines.append(f"overall: FAIL (stage {failed} did not finish)")
    else:
        lines.append("overall: " + ("PASS" if all(r.ok for r in reports) else "FAIL"))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# stage implementations
# ---------------------------------------------------------------------------


class _Run:
    """Mutable state threaded through the stages of one scenario run."""

    def __init__(self, cfg: ScenarioConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.model = _load_model(cfg)
        self.q_start = np.asarray(cfg.q_start, dtype=float)
        self.truth_mesh, self.truth_plane = _build_phantom(cfg, self.model)
        self.phantom = PhantomModel(
            self.truth_mesh, cfg.contact_stiffness, cfg.contact_damping, cfg.phantom_label
        )
        self.fitted_plane: ScenePlane | None = None
        self.recon_mesh: TriMesh | None = None
        self.logs: dict[str, ScanLog] = {}


def _load_model(cfg: ScenarioConfig) -> ArmModel:
    if cfg.arm_model == "reference":
        return reference_arm()
    return load_arm_model(cfg.arm_model)


def _build_phantom(cfg: ScenarioConfig, model: ArmModel) -> tuple[TriMesh, ScenePlane]:
    """Ground-truth mesh placed so the probe tip starts d_start above the
    surface point below it; the scene plane is the base level under that
    point (flat top and base coincide)."""
    snap = arm_snapshot(model, np.asarray(cfg.q_start, dtype=float))
    tip = snap.probe.translation
    top = tip - np.array([0.0, 0.0, cfg.d_start])
    if cfg.phantom_kind == "flat":
        mesh = flat_phantom_mesh(top, cfg.phantom_extent, cfg.phantom_grid_n)
        return mesh, ScenePlane(top, UP)
    if cfg.phantom_kind == "cap":
        base = top - np.array([0.0, 0.0, cfg.cap_height])
        mesh = cap_phantom_mesh(
            base, cfg.sphere_radius, cfg.cap_height, cfg.phantom_extent, cfg.phantom_grid_n
        )
        return mesh, ScenePlane(base, UP)
    raw = load_off(cfg.phantom_mesh)
    lo = raw.vertices.min(axis=0)
    hi = raw.vertices.max(axis=0)
    origin = np.array([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), hi[2] + 1.0])
    t, _ = raw.raycast_batch(origin[None, :], np.array([[0.0, 0.0, -1.0]]))
    if not np.isfinite(t[0]):
        raise ValueError(f"{cfg.phantom_mesh}: no surface under the bounding-box centre")
    apex = origin + t[0] * np.array([0.0, 0.0, -1.0])
    shift = top - apex
    mesh = TriMesh(raw.vertices + shift, raw.faces)
    base = np.array([top[0], top[1], float(mesh.vertices[:, 2].min())])
    return mesh, ScenePlane(base, UP)


def _resolve_gains(cfg: ScenarioConfig, run: _Run, chart: SurfaceChart) -> ImpedanceGains:
    if cfg.damping is not None:
        return ImpedanceGains(cfg.stiffness, cfg.damping)
    snap = arm_snapshot(run.model, run.q_start)
    _, _, J_rho, _ = chart.evaluate_probe(snap.probe, snap.jacobian, np.zeros(7))
    lam = task_space_inertia(snap.mass, J_rho)
    return ImpedanceGains(cfg.stiffness, critical_damping(cfg.stiffness, lam, cfg.zeta))


def _check_deadline(deadline, what: str) -> None:
    if deadline is not None and time.monotonic() > deadline:
        raise TimeoutError(f"{what} exceeded the stage deadline")


def _stage_localize(run: _Run, deadline) -> _StageReport:
    cfg = run.cfg
    rep = _StageReport("localize")
    cam_pose = alignment_pose(run.truth_plane, cfg.view_angle, cfg.view_distance)
    z_cam = cam_pose.rotation_matrix()[:, 2]
    angle = math.acos(max(-1.0, min(1.0, float(z_cam @ (-run.truth_plane.normal)))))
    dist = float(np.linalg.norm(cam_pose.translation - run.truth_plane.centre))
    rep.check("alignment_angle_error_rad", abs(angle - cfg.view_angle), "<", 1e-12)
    rep.check("alignment_distance_error_m", abs(dist - cfg.view_distance), "<", 1e-12)

    rng = np.random.default_rng([cfg.seed, 11])
    markers = synthetic_markers(
        run.truth_plane, cam_pose, cfg.marker_half_extents, cfg.marker_size,
        cfg.marker_noise_sigma, rng,
    )
    save_markers(markers, run.out / "markers.yaml")
    fitted = fit_plane(markers, cam_pose, use_corners=cfg.fit_use_corners)
    run.fitted_plane = fitted
    with open(run.out / "plane.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(
            {
                "centre": [float(x) for x in fitted.centre],
                "normal": [float(x) for x in fitted.normal],
            },
            fh, sort_keys=False,
        )
    cosn = max(-1.0, min(1.0, float(fitted.normal @ run.truth_plane.normal)))
    normal_err = math.acos(cosn)
    limit = 1e-9 if cfg.marker_noise_sigma == 0.0 else math.radians(0.5)
    rep.check("plane_normal_error_rad", normal_err, "<", limit)
    rep.info("plane_centre_error_m", float(np.linalg.norm(fitted.centre - run.truth_plane.centre)))
    return rep


def _stage_reconstruct(run: _Run, deadline) -> _StageReport:
    cfg = run.cfg
    rep = _StageReport("reconstruct")
    if run.fitted_plane is None:
        raise ValueError("reconstruct stage needs the localize stage first")
    rng = np.random.default_rng([cfg.seed, 23])
    poses = orbit_trajectory(run.fitted_plane, cfg.n_views, cfg.view_angle, cfg.view_distance)
    views = []
    for k, pose in enumerate(poses):
        _check_deadline(deadline, f"depth view {k}")
        img = render_depth(run.truth_mesh, cfg.camera, pose, rng)
        save_pfm(img.depths, run.out / f"depth_{k:02d}.pfm")
        views.append(img)
    _check_deadline(deadline, "view fusion")
    out_field = fuse_views(views, run.fitted_plane, cfg.resolution)
    recon = extract_mesh(out_field)
    run.recon_mesh = recon
    save_off(run.truth_mesh, run.out / "truth.off")
    save_off(recon, run.out / "recon.off")
    _check_deadline(deadline, "mesh comparison")
    err = mesh_error(recon, run.truth_mesh, seed=cfg.seed)
    rep.info("views", cfg.n_views)
    rep.info("resolution_m", cfg.resolution)
    limit = cfg.resolution if cfg.camera.depth_noise_sigma == 0.0 else 2.0 * cfg.resolution
    rep.check("rms_error_m", err["rms"], "<", limit)
    rep.info("hausdorff_m", err["hausdorff"])
    return rep


def _stage_contact(run: _Run, deadline) -> _StageReport:
    cfg = run.cfg
    rep = _StageReport("contact")
    chart = SurfaceChart(run.truth_mesh, run.truth_plane)
    gains = _resolve_gains(cfg, run, chart)
    profile = ContactProfile(cfg.d_start, cfg.d_hold, cfg.ramp_rate, cfg.hold_duration)
    log, _ = simulate(
        run.model, chart, run.phantom, gains,
        lambda t: contact_setpoints(profile, t),
        run.q_start, duration=profile.duration, dt=cfg.dt,
        sample_every=cfg.sample_every, nullspace_gain=cfg.nullspace_gain,
        deadline=deadline,
    )
    run.logs["contact"] = log
    export_log(log, run.out / "contact_log.csv")

    oracle = steady_state_force(float(cfg.stiffness[2, 2]), cfg.contact_stiffness, cfg.d_hold)
    rep.info("steady_state_oracle_n", oracle)
    above = log.d > 0.0
    approach_max = float(np.max(np.abs(log.force_n[above]))) if above.any() else 0.0
    rep.check("approach_max_force_n", approach_max, "<", 0.01)
    in_ramp = (log.d < 0.0) & (log.t <= profile.ramp_duration)
    f_final = float(log.force_n[-1])
    if in_ramp.any() and f_final > 0.0:
        f = log.force_n[in_ramp]
        drop = float(np.max(np.maximum.accumulate(f) - f))
        rep.check("ramp_max_drop_frac", drop / f_final, "<", 0.05)
        rep.check("settle_error_frac", abs(f_final - oracle) / oracle, "<", 0.02)
    else:
        rep.check("ramp_max_drop_frac", math.nan, "<", 0.05)
        rep.check("settle_error_frac", math.nan, "<", 0.02)
    return rep


def _stage_raster(run: _Run, deadline) -> _StageReport:
    cfg = run.cfg
    rep = _StageReport("raster")
    if run.recon_mesh is not None:
        chart = SurfaceChart(run.recon_mesh, run.fitted_plane, margin=cfg.chart_margin)
        rep.info("chart", 1)  # 1 = reconstructed, 0 = ground truth
    else:
        chart = SurfaceChart(run.truth_mesh, run.truth_plane)
        rep.info("chart", 0)
    gains = _resolve_gains(cfg, run, chart)

    s_lo = np.maximum(chart.s_min, -cfg.raster_half_extents)
    s_hi = np.minimum(chart.s_max, cfg.raster_half_extents)
    if np.any(s_lo >= s_hi):
        raise ValueError("raster domain is empty after clipping to the chart")
    path = RasterPath(s_lo, s_hi, cfg.line_spacing, cfg.raster_speed, cfg.raster_d_hold)
    approach = ContactProfile(
        cfg.d_start, cfg.raster_d_hold, cfg.ramp_rate, hold_duration=cfg.settle_time
    )
    start = path.waypoints()[0]
    glide_len = float(np.linalg.norm(start))
    t_glide = glide_len / cfg.raster_speed

    def setpoints(t: float) -> Setpoint:
        if t < approach.duration:
            return contact_setpoints(approach, t)
        u = t - approach.duration
        if u < t_glide:
            direction = start / glide_len
            s = u * cfg.raster_speed * direction
            rhodot = np.zeros(6)
            rhodot[:2] = cfg.raster_speed * direction
            coords = SurfaceCoords(float(s[0]), float(s[1]), cfg.raster_d_hold, np.zeros(3))
            return Setpoint(coords, rhodot)
        return path.setpoint(u - t_glide)

    duration = approach.duration + t_glide + path.duration + 1.0
    log, _ = simulate(
        run.model, chart, run.phantom, gains, setpoints, run.q_start,
        duration=duration, dt=cfg.dt, sample_every=cfg.sample_every,
        nullspace_gain=cfg.nullspace_gain, deadline=deadline,
    )
    run.logs["raster"] = log
    export_log(log, run.out / "raster_log.csv")

    hold = log.t >= approach.duration
    n_hold = int(np.count_nonzero(hold))
    rep.info("hold_samples", n_hold)
    d_err = np.abs(log.d[hold] - cfg.raster_d_hold)
    eps_norm = np.linalg.norm(log.eps[hold], axis=1)
    rep.check("frac_d_within_1mm", float(np.mean(d_err < 1e-3)), ">=", 0.95)
    rep.check("frac_eps_within_0.05", float(np.mean(eps_norm < 0.05)), ">=", 0.95)
    rep.info("max_abs_d_err_m", float(np.max(d_err)))
    return rep


_STAGE_FN = {
    "localize": _stage_localize,
    "reconstruct": _stage_reconstruct,
    "contact": _stage_contact,
    "raster": _stage_raster,
}


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def run_scenario(
    config,
    out_dir,
    stages: tuple = STAGES,
    seed: int | None = None,
    stage_timeout: float | None = None,
) -> ScenarioResult:
    """Execute the requested stages and write artifacts plus report.txt.

    `config` is a ScenarioConfig, a mapping, or a YAML file path. `seed`
    overrides the config seed. Each stage gets its own cooperative
    `stage_timeout` budget in seconds. A stage that cannot finish raises
    StageError naming it; the report still lists completed checks and
    flags the failure.
    """
    if isinstance(config, ScenarioConfig):
        cfg = config
    elif isinstance(config, (str, Path)):
        cfg = load_config(config)
    else:
        cfg = parse_config(config)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    stages = tuple(stages)
    for s in stages:
        if s not in STAGES:
            raise ValueError(f"unknown stage {s!r}; expected one of {STAGES}")
    if len(set(stages)) != len(stages):
        raise ValueError("duplicate stages requested")
    if "reconstruct" in stages and "localize" not in stages[: stages.index("reconstruct")]:
        raise ValueError("reconstruct stage needs the localize stage first")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out)
    reports = []
    report_path = out / "report.txt"
    for stage in stages:
        deadline = None if stage_timeout is None else time.monotonic() + stage_timeout
        try:
            reports.append(_STAGE_FN[stage](run, deadline))
        except Exception as exc:
            failed = _StageReport(stage)
            failed.lines.append(f"FAILED: {exc}")
            failed.ok = False
            reports.append(failed)
            _write_report(report_path, cfg.name, cfg.seed, stages, reports, stage)
            raise StageError(stage, str(exc)) from exc
    _write_report(report_path, cfg.name, cfg.seed, stages, reports, None)
    return ScenarioResult(
        name=cfg.name,
        seed=cfg.seed,
        stages=stages,
        out_dir=out,
        metrics={r.stage: dict(r.values) for r in reports},
        logs=dict(run.logs),
        passed=all(r.ok for r in reports),
        report_path=report_path,
    )
