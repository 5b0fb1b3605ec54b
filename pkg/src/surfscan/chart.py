"""Surface-specific coordinates over a scanned mesh.

The chart projects the mesh onto the localisation plane and uses plane
coordinates (s1, s2) relative to the anchor (the mesh point nearest the
plane centre). That is a bijection for height-field surfaces, which is
what the reconstruction produces; overhangs are out of scope.

The six task coordinates stack as rho = (s1, s2, d, eps1, eps2, eps3):
chart position of the closest surface point, signed normal distance
(negative = penetration), and the vector part of the error quaternion
that aligns the probe axis with the inward surface normal. The 6x7 task
Jacobian maps joint rates to rho rates; it is exact on flat charts and a
quasi-static approximation on curved ones (the surface frame is treated
as frozen during the step), which is also how the controller consumes it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import ArmModel, forward_kinematics, geometric_jacobian
from .geometry import Pose, cross3, quat_from_matrix, skew
from .localization import ScenePlane
from .mesh import ClosestHit, TriMesh

FRAME_TOL = 1e-6
RAY_CLEARANCE = 0.25  # m above the mesh top for embedding rays


class ChartBoundaryError(ValueError):
    """Probe or setpoint left the chart domain; carries the clamped s."""

    def __init__(self, s, clamped):
        self.s = np.asarray(s, dtype=float)
        self.clamped = np.asarray(clamped, dtype=float)
        super().__init__(
            f"chart coordinates ({self.s[0]:.4f}, {self.s[1]:.4f}) outside the "
            f"domain; nearest valid point ({self.clamped[0]:.4f}, {self.clamped[1]:.4f})"
        )


class DegenerateFrameError(ValueError):
    """Surface normal nearly parallel to the in-plane reference axis."""


@dataclass(frozen=True)
class ChartPoint:
    face: int
    barycentric: np.ndarray  # (3,) non-negative, sums to 1
    s: np.ndarray  # (2,) chart coordinates m

    def __post_init__(self):
        b = np.asarray(self.barycentric, dtype=float).reshape(3)
        if abs(float(b.sum()) - 1.0) > 1e-9 or b.min() < -1e-9:
            raise ValueError("barycentric weights must be non-negative and sum to 1")
        object.__setattr__(self, "barycentric", np.clip(b, 0.0, None) / np.clip(b, 0.0, None).sum())
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float).reshape(2))


@dataclass(frozen=True)
class SurfaceFrame:
    """Right-handed orthonormal (t1, t2, n) at a surface point."""

    point: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    n: np.ndarray
    face: int = -1  # mesh face the point lies on; seeds the next query

    def rotation(self) -> np.ndarray:
        """Desired probe orientation: x = t1, y = t2, z = n."""
        return np.column_stack([self.t1, self.t2, self.n])


@dataclass(frozen=True)
class SurfaceCoords:
    s1: float
    s2: float
    d: float  # signed distance m, negative = penetration
    eps: np.ndarray  # (3,) error-quaternion vector part
    eta: float = 1.0  # matching scalar part, kept for the rate map

    def __post_init__(self):
        e = np.asarray(self.eps, dtype=float).reshape(3)
        if np.linalg.norm(e) > 1.0 + 1e-9:
            raise ValueError("orientation error vector cannot exceed unit length")
        object.__setattr__(self, "eps", e)

    @property
    def rho(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.d, self.eps[0], self.eps[1], self.eps[2]])


def eps_rate_map(eta: float, eps: np.ndarray) -> np.ndarray:
    """E with epsdot = E @ omega_world for the error quaternion (eta, eps)."""
    return -0.5 * (eta * np.eye(3) + skew(eps))


class SurfaceChart:
    """Immutable chart over a mesh; all queries are pure."""

    def __init__(self, mesh: TriMesh, plane: ScenePlane, margin: float = 0.0):
        self.mesh = mesh
        self.plane = plane
        anchor_hit = mesh.closest_point(plane.centre)
        self.anchor = anchor_hit.point
        self._s_origin = plane.project(anchor_hit.point)
        proj = plane.project(mesh.vertices) - self._s_origin
        self.s_min = proj.min(axis=0) + margin
        self.s_max = proj.max(axis=0) - margin
        if np.any(self.s_min >= self.s_max):
            raise ValueError("chart domain is empty; margin too large or mesh too small")
        self._ray_height = float(plane.height_of(mesh.vertices).max()) + RAY_CLEARANCE

    # ---- domain ----

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=float)
        return bool(np.all(s >= self.s_min) and np.all(s <= self.s_max))

    def clamp(self, s) -> np.ndarray:
        return np.clip(np.asarray(s, dtype=float), self.s_min, self.s_max)

    def require_inside(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(2)
        if not self.contains(s):
            raise ChartBoundaryError(s, self.clamp(s))
        return s

    def chart_coords(self, points: np.ndarray) -> np.ndarray:
        return self.plane.project(points) - self._s_origin

    # ---- geometry ----

    def _frame_at(self, hit_point: np.ndarray, face: int, bary: np.ndarray) -> SurfaceFrame:
        vn = self.mesh.vertex_normals()[self.mesh.faces[face]]
        n = bary @ vn
        norm = np.linalg.norm(n)
        if norm < FRAME_TOL:
            raise DegenerateFrameError(f"interpolated normal vanished on face {face}")
        n = n / norm
        u, _, _ = self.plane.frame()
        t1 = u - (u @ n) * n
        nt = np.linalg.norm(t1)
        if nt < FRAME_TOL:
            raise DegenerateFrameError(f"surface normal parallel to the chart axis on face {face}")
        t1 = t1 / nt
        t2 = cross3(n, t1)
        return SurfaceFrame(hit_point, t1, t2, n, int(face))

    def embed(self, s) -> tuple[ChartPoint, SurfaceFrame]:
        """Surface point over chart coordinates s, via a vertical ray."""
        s = self.require_inside(s)
        origin = self.plane.embed(s + self._s_origin, height=self._ray_height)
        hit = self.mesh.raycast(origin, -self.plane.normal)
        if hit is None:
            raise ChartBoundaryError(s, self.clamp(s))  # hole in the reconstruction
        point = ChartPoint(hit.face, hit.barycentric, s)
        return point, self._frame_at(hit.point, hit.face, hit.barycentric)

    def closest_point(self, p, hint: int | None = None) -> tuple[ChartPoint, float, SurfaceFrame]:
        """Chart point under a world point, plus its signed distance.

        Distance sign follows the winning face's outward normal (positive
        above the surface). The query point itself must project inside
        the domain; its foot point then clamps to the boundary at worst.
        hint (a face index, typically last step's foot point) only speeds
        the search up; the result is identical with or without it.
        """
        s_query = self.chart_coords(np.asarray(p, dtype=float).reshape(3))
        if not self.contains(s_query):
            raise ChartBoundaryError(s_query, self.clamp(s_query))
        hit: ClosestHit = self.mesh.closest_point(p, hint)
        s = self.chart_coords(hit.point)
        point = ChartPoint(hit.face, hit.barycentric, s)
        return point, hit.distance, self._frame_at(hit.point, hit.face, hit.barycentric)

    # ---- task coordinates ----

    def task_coordinates(self, probe_pose: Pose) -> SurfaceCoords:
        point, dist, frame = self.closest_point(probe_pose.translation)
        eta, eps = orientation_error(probe_pose.rotation_matrix(), frame)
        return SurfaceCoords(float(point.s[0]), float(point.s[1]), dist, eps, eta)

    def coordinate_map(self, frame: SurfaceFrame, eta: float, eps: np.ndarray) -> np.ndarray:
        """T with rhodot = T @ (v, omega) of the probe, frame held frozen."""
        T = np.zeros((6, 6))
        T[0, :3] = frame.t1
        T[1, :3] = frame.t2
        T[2, :3] = frame.n
        T[3:, 3:] = eps_rate_map(eta, eps)
        return T

    def task_jacobian(self, model: ArmModel, q) -> np.ndarray:
        """6x7 J with rhodot = J @ qdot; exact on flat charts."""
        pose = forward_kinematics(model, q, "probe")
        coords = self.task_coordinates(pose)
        _, _, frame = self.closest_point(pose.translation)
        J_geom = geometric_jacobian(model, q, "probe")
        return self.coordinate_map(frame, coords.eta, coords.eps) @ J_geom

    def evaluate(
        self, model: ArmModel, q, qdot, hint: int | None = None
    ) -> tuple[SurfaceCoords, np.ndarray, np.ndarray, SurfaceFrame]:
        """One-query bundle for the control loop: (rho, rhodot, J_rho, frame)."""
        pose = forward_kinematics(model, q, "probe")
        point, dist, frame = self.closest_point(pose.translation, hint)
        eta, eps = orientation_error(pose.rotation_matrix(), frame)
        coords = SurfaceCoords(float(point.s[0]), float(point.s[1]), dist, eps, eta)
        J = self.coordinate_map(frame, eta, eps) @ geometric_jacobian(model, q, "probe")
        qdot = np.asarray(qdot, dtype=float).reshape(7)
        return coords, J @ qdot, J, frame

    def evaluate_probe(
        self, probe_pose: Pose, probe_jacobian: np.ndarray, qdot, hint: int | None = None
    ) -> tuple[SurfaceCoords, np.ndarray, np.ndarray, SurfaceFrame]:
        """evaluate() for callers that already hold the probe pose and
        geometric Jacobian (one kinematics sweep per control step)."""
        point, dist, frame = self.closest_point(probe_pose.translation, hint)
        eta, eps = orientation_error(probe_pose.rotation_matrix(), frame)
        coords = SurfaceCoords(float(point.s[0]), float(point.s[1]), dist, eps, eta)
        J = self.coordinate_map(frame, eta, eps) @ probe_jacobian
        qdot = np.asarray(qdot, dtype=float).reshape(7)
        return coords, J @ qdot, J, frame


def orientation_error(R_probe: np.ndarray, frame: SurfaceFrame) -> tuple[float, np.ndarray]:
    """(eta, eps) of the world-frame rotation taking the probe onto the
    surface frame; eps = 0 exactly at alignment."""
    R_err = frame.rotation() @ R_probe.T
    q = quat_from_matrix(R_err)  # canonical, eta >= 0
    return float(q[0]), q[1:].copy()
