"""Triangle meshes with deterministic proximity and ray queries.

The closest-point kernel is a vectorised transcription of the classic
point-vs-triangle Voronoi-region case analysis (Ericson, Real-Time
Collision Detection, 5.1.5). The same kernel backs both the exhaustive
reference path and the bounding-volume hierarchy, so accelerated queries
reproduce the brute-force result bit for bit, including the
(distance, face index) tie-break.

Rays use Moller-Trumbore with double-sided hits. The hierarchy is a
median-split AABB tree over face boxes; traversal never prunes a node
whose lower bound ties the current best, which is what makes the
tie-break exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 8
DEGENERATE_AREA = 1e-12
BARY_EPS = 1e-10  # ray tests: tolerance on barycentric bounds at shared edges


@dataclass(frozen=True)
class TriMesh:
    """Immutable orientable manifold patch.

    face_normals are derived from winding; generators must wind faces so
    normals point out of the material (up, for height fields).
    """

    vertices: np.ndarray  # (n, 3) m
    faces: np.ndarray  # (m, 3) int

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise ValueError("vertices must be an (n, 3) array with n >= 3")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) < 1:
            raise ValueError("faces must be an (m, 3) array with m >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("face index out of range")
        if np.any(f[:, 0] == f[:, 1]) or np.any(f[:, 1] == f[:, 2]) or np.any(f[:, 0] == f[:, 2]):
            raise ValueError("face with repeated vertex")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.min(areas) <= DEGENERATE_AREA:
            raise ValueError(f"degenerate face (area <= {DEGENERATE_AREA} m^2)")
        self._check_manifold(f, len(v))

    @staticmethod
    def _check_manifold(f: np.ndarray, nv: int) -> None:
        # an undirected edge used more than twice means non-manifold; a
        # directed edge used twice means inconsistent winding
        a = f.ravel()
        b = f[:, [1, 2, 0]].ravel()
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        _, counts = np.unique(lo * nv + hi, return_counts=True)
        if counts.max() > 2:
            raise ValueError("non-manifold edge")
        directed = a * nv + b
        if len(np.unique(directed)) != len(directed):
            raise ValueError("inconsistent winding or duplicate face")

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        return self._accel().face_normals

    def face_areas(self) -> np.ndarray:
        return self._accel().face_areas

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals, unit length."""
        acc = self._accel()
        if acc.vertex_normals is None:
            n = np.zeros_like(self.vertices)
            # cross products carry the 2*area weighting already
            np.add.at(n, self.faces[:, 0], acc.cross)
            np.add.at(n, self.faces[:, 1], acc.cross)
            np.add.at(n, self.faces[:, 2], acc.cross)
            lengths = np.linalg.norm(n, axis=1)
            lengths[lengths == 0.0] = 1.0  # isolated vertices keep a zero normal
            acc.vertex_normals = n / lengths[:, None]
        return acc.vertex_normals

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def _accel(self) -> "_Accel":
        acc = self.__dict__.get("_accel_cache")
        if acc is None:
            acc = _Accel(self)
            # idempotent build: a racing second build produces the same tree
            object.__setattr__(self, "_accel_cache", acc)
        return acc

    # ---- queries ----

    def closest_point(self, p, hint: int | None = None) -> "ClosestHit":
        """Global nearest surface point with signed distance.

        Sign follows the winning face's normal (positive above). Ties in
        distance resolve to the smallest face index, matching the
        exhaustive per-triangle reference exactly.

        hint, if given, is a face index used to seed the search bound.
        The result is bit-identical with or without it; a good hint (the
        winning face of a nearby previous query) just prunes most of the
        tree, which matters when the query sits in a tight loop.
        """
        if hint is not None and not 0 <= hint < self.n_faces:
            raise ValueError(f"hint face {hint} out of range")
        return self._accel().nearest(np.asarray(p, dtype=float).reshape(3), hint)

    def raycast(self, origin, direction, t_min: float = 0.0) -> "RayHit | None":
        return self._accel().raycast(
            np.asarray(origin, dtype=float).reshape(3),
            np.asarray(direction, dtype=float).reshape(3),
            t_min,
        )

    def raycast_batch(self, origins: np.ndarray, directions: np.ndarray, t_min: float = 0.0):
        """Vectorised first-hit query.

        Returns (t, face) arrays; misses have t = inf and face = -1.
        """
        return self._accel().raycast_batch(
            np.asarray(origins, dtype=float).reshape(-1, 3),
            np.asarray(directions, dtype=float).reshape(-1, 3),
            t_min,
        )

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n points drawn uniformly by area."""
        acc = self._accel()
        cdf = np.cumsum(acc.face_areas)
        cdf /= cdf[-1]
        fi = np.searchsorted(cdf, rng.random(n), side="right")
        fi = np.minimum(fi, self.n_faces - 1)
        u = rng.random(n)
        v = rng.random(n)
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        return acc.A[fi] + u[:, None] * acc.eab[fi] + v[:, None] * acc.eac[fi]


@dataclass(frozen=True)
class ClosestHit:
    face: int
    point: np.ndarray  # (3,) closest surface point
    barycentric: np.ndarray  # (3,) weights on the winning face
    distance: float  # signed, positive on the normal side
    normal: np.ndarray  # (3,) face normal of the winning face


@dataclass(frozen=True)
class RayHit:
    face: int
    t: float
    barycentric: np.ndarray
    point: np.ndarray


def _dot3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # spelled out so the rounding of each lane is independent of batch
    # size; einsum/dot may switch SIMD contraction paths with shape,
    # which breaks bit-identity between leaf subsets and full arrays
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross's arithmetic without its axis bookkeeping; the queries
    # call this thousands of times on small batches
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def closest_point_triangles(p: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray):
    """Closest point on each triangle to p.

    Returns (d2, cp, bary). Pure elementwise arithmetic over the face
    axis, so results for a face do not depend on which other faces are in
    the batch; the hierarchy relies on that.
    """
    ab = B - A
    ac = C - A
    ap = p - A
    d1 = _dot3(ab, ap)
    d2_ = _dot3(ac, ap)
    bp = p - B
    d3 = _dot3(ab, bp)
    d4 = _dot3(ac, bp)
    cp_ = p - C
    d5 = _dot3(ab, cp_)
    d6 = _dot3(ac, cp_)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2_ - d1 * d6
    vc = d1 * d4 - d3 * d2_

    in_a = (d1 <= 0.0) & (d2_ <= 0.0)
    in_b = (d3 >= 0.0) & (d4 <= d3)
    in_c = (d6 >= 0.0) & (d5 <= d6)
    on_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
    on_ac = (vb <= 0.0) & (d2_ >= 0.0) & (d6 <= 0.0)
    on_bc = (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2_ / (d2_ - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    # RTCD region priority: vertices, then edges, then face interior;
    # u is the weight on B, v the weight on C. Applied lowest priority
    # first so each later (higher-priority) region overrides.
    u = np.where(on_bc, 1.0 - t_bc, v_in)
    u = np.where(on_ac, 0.0, u)
    u = np.where(on_ab, t_ab, u)
    u = np.where(in_c, 0.0, u)
    u = np.where(in_b, 1.0, u)
    u = np.where(in_a, 0.0, u)
    v = np.where(on_bc, t_bc, w_in)
    v = np.where(on_ac, t_ac, v)
    v = np.where(on_ab, 0.0, v)
    v = np.where(in_c, 1.0, v)
    v = np.where(in_b, 0.0, v)
    v = np.where(in_a, 0.0, v)
    cp = A + u[:, None] * ab + v[:, None] * ac
    diff = p - cp
    dist2 = _dot3(diff, diff)
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    return dist2, cp, bary


def ray_triangles(o: np.ndarray, d: np.ndarray, A, eab, eac, t_min: float):
    """Moller-Trumbore for one ray against a face batch.

    Returns (t, bary) with t = inf for misses; hits on either side count.
    """
    pvec = _cross3(d[None, :], eac)
    det = _dot3(eab, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = o - A
        u = _dot3(tvec, pvec) * inv
        qvec = _cross3(tvec, eab)
        v = _dot3(d[None, :], qvec) * inv
        t = _dot3(eac, qvec) * inv
    hit = (
        (np.abs(det) > 0.0)
        & (u >= -BARY_EPS)
        & (v >= -BARY_EPS)
        & (u + v <= 1.0 + BARY_EPS)
        & (t >= t_min)
    )
    t = np.where(hit, t, np.inf)
    return t, u, v


class _Accel:
    """Median-split AABB tree plus precomputed per-face data."""

    def __init__(self, mesh: TriMesh):
        v, f = mesh.vertices, mesh.faces
        self.A = v[f[:, 0]]
        self.B = v[f[:, 1]]
        self.C = v[f[:, 2]]
        self.eab = self.B - self.A
        self.eac = self.C - self.A
        self.cross = np.cross(self.eab, self.eac)
        norms = np.linalg.norm(self.cross, axis=1)
        self.face_areas = 0.5 * norms
        self.face_normals = self.cross / norms[:, None]
        self.face_normals.setflags(write=False)
        self.vertex_normals = None
        self._build(f)

    def _build(self, f: np.ndarray) -> None:
        fmin = np.minimum(np.minimum(self.A, self.B), self.C)
        fmax = np.maximum(np.maximum(self.A, self.B), self.C)
        centroids = (self.A + self.B + self.C) / 3.0
        n = len(f)
        perm = np.arange(n)
        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def build(lo: int, hi: int) -> int:
            idx = len(bmin)
            sub = perm[lo:hi]
            bmin.append(fmin[sub].min(axis=0))
            bmax.append(fmax[sub].max(axis=0))
            left.append(-1)
            right.append(-1)
            if hi - lo <= LEAF_SIZE:
                start.append(lo)
                count.append(hi - lo)
                return idx
            start.append(0)
            count.append(0)
            cen = centroids[sub]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            order = np.argsort(cen[:, axis], kind="stable")
            perm[lo:hi] = sub[order]
            mid = (lo + hi) // 2
            left[idx] = build(lo, mid)
            right[idx] = build(mid, hi)
            return idx

        build(0, n)
        self.perm = perm
        self.bmin = np.array(bmin)
        self.bmax = np.array(bmax)
        self.left = np.array(left)
        self.right = np.array(right)
        self.start = np.array(start)
        self.count = np.array(count)
        # plain-python mirrors for the point-query inner loop; indexing
        # numpy scalars per node costs more than the arithmetic
        self._bmin_l = self.bmin.tolist()
        self._bmax_l = self.bmax.tolist()
        self._left_l = self.left.tolist()
        self._right_l = self.right.tolist()
        self._start_l = self.start.tolist()
        self._count_l = self.count.tolist()

    def nearest(self, p: np.ndarray, hint: int | None = None) -> ClosestHit:
        px, py, pz = float(p[0]), float(p[1]), float(p[2])
        bmin_l, bmax_l = self._bmin_l, self._bmax_l
        left_l, right_l = self._left_l, self._right_l
        start_l, count_l = self._start_l, self._count_l

        def box_d2(node: int) -> float:
            # squared box distance, summed x then y then z like the
            # vector form d @ d so both spellings round identically
            bn = bmin_l[node]
            bx = bmax_l[node]
            d = 0.0
            t = bn[0] - px
            s = px - bx[0]
            if t > 0.0:
                d += t * t
            elif s > 0.0:
                d += s * s
            t = bn[1] - py
            s = py - bx[1]
            if t > 0.0:
                d += t * t
            elif s > 0.0:
                d += s * s
            t = bn[2] - pz
            s = pz - bx[2]
            if t > 0.0:
                d += t * t
            elif s > 0.0:
                d += s * s
            return d

        if hint is None:
            best_d2 = np.inf
            best_face = -1
            best_cp = None
            best_bary = None
            stack = [0]
            while stack:
                node = stack.pop()
                if box_d2(node) > best_d2:
                    continue
                if count_l[node] > 0:
                    s0 = start_l[node]
                    faces = self.perm[s0 : s0 + count_l[node]]
                    d2, cp, bary = closest_point_triangles(
                        p, self.A[faces], self.B[faces], self.C[faces]
                    )
                    k = int(np.lexsort((faces, d2))[0])
                    if d2[k] < best_d2 or (d2[k] == best_d2 and faces[k] < best_face):
                        best_d2 = d2[k]
                        best_face = int(faces[k])
                        best_cp = cp[k]
                        best_bary = bary[k]
                else:
                    l, r = left_l[node], right_l[node]
                    if box_d2(l) <= box_d2(r):
                        stack.append(r)
                        stack.append(l)  # popped first
                    else:
                        stack.append(l)
                        stack.append(r)
        else:
            # Warm start: bound the prune by the hint face's distance and
            # defer the kernel to one batch over every surviving leaf.
            # That bound can only be looser than the eager running best,
            # so the candidate set is a superset of the faces the eager
            # walk evaluates; the per-face kernel is batch independent
            # and the lex-min tie-break below matches the eager update
            # rule, so the winning hit is bit-identical either way.
            hf = np.array([hint])
            d2h, _, _ = closest_point_triangles(p, self.A[hf], self.B[hf], self.C[hf])
            bound = d2h[0]
            cand = [hf]
            stack = [0]
            while stack:
                node = stack.pop()
                if box_d2(node) > bound:
                    continue
                if count_l[node] > 0:
                    s0 = start_l[node]
                    cand.append(self.perm[s0 : s0 + count_l[node]])
                else:
                    stack.append(right_l[node])
                    stack.append(left_l[node])
            faces = np.concatenate(cand)
            d2, cp, bary = closest_point_triangles(p, self.A[faces], self.B[faces], self.C[faces])
            k = int(np.lexsort((faces, d2))[0])
            best_d2 = d2[k]
            best_face = int(faces[k])
            best_cp = cp[k]
            best_bary = bary[k]
        n = self.face_normals[best_face]
        diff = p - best_cp
        dist = float(np.sqrt(best_d2))
        if diff @ n < 0.0:
            dist = -dist
        return ClosestHit(best_face, best_cp, best_bary, dist, n.copy())

    def _slab(self, o: np.ndarray, d: np.ndarray, inv: np.ndarray, node):
        # inv carries a placeholder on axes where d == 0; those axes are
        # decided by the inside test instead, which sidesteps the 0 * inf
        # corner of the usual slab recipe
        t1 = (self.bmin[node] - o) * inv
        t2 = (self.bmax[node] - o) * inv
        lo_ax = np.minimum(t1, t2)
        hi_ax = np.maximum(t1, t2)
        par = d == 0.0
        if np.any(par):
            inside = (o >= self.bmin[node]) & (o <= self.bmax[node])
            lo_ax = np.where(par, np.where(inside, -np.inf, np.inf), lo_ax)
            hi_ax = np.where(par, np.where(inside, np.inf, -np.inf), hi_ax)
        return np.max(lo_ax, axis=-1), np.min(hi_ax, axis=-1)

    @staticmethod
    def _safe_inv(d: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(d == 0.0, 1.0, 1.0 / d)

    def raycast(self, o: np.ndarray, d: np.ndarray, t_min: float) -> RayHit | None:
        inv = self._safe_inv(d)
        best_t = np.inf
        best_face = -1
        best_uv = (0.0, 0.0)
        stack = [0]
        while stack:
            node = stack.pop()
            lo, hi = self._slab(o, d, inv, node)
            if lo > hi or hi < t_min or lo > best_t:
                continue
            if self.count[node] > 0:
                s = self.start[node]
                faces = self.perm[s : s + self.count[node]]
                t, u, v = ray_triangles(o, d, self.A[faces], self.eab[faces], self.eac[faces], t_min)
                k = int(np.lexsort((faces, t))[0])
                if t[k] < best_t or (t[k] == best_t and faces[k] < best_face):
                    if np.isfinite(t[k]):
                        best_t = float(t[k])
                        best_face = int(faces[k])
                        best_uv = (float(u[k]), float(v[k]))
            else:
                stack.append(int(self.right[node]))
                stack.append(int(self.left[node]))
        if best_face < 0:
            return None
        u, v = best_uv
        bary = np.array([1.0 - u - v, u, v])
        point = self.A[best_face] + u * self.eab[best_face] + v * self.eac[best_face]
        return RayHit(best_face, best_t, bary, point)

    def raycast_batch(self, O: np.ndarray, D: np.ndarray, t_min: float):
        nr = len(O)
        best_t = np.full(nr, np.inf)
        best_face = np.full(nr, -1, dtype=np.int64)
        inv = self._safe_inv(D)
        stack = [(0, np.arange(nr))]
        while stack:
            node, rays = stack.pop()
            lo, hi = self._slab(O[rays], D[rays], inv[rays], node)
            alive = (lo <= hi) & (hi >= t_min) & (lo <= best_t[rays])
            rays = rays[alive]
            if len(rays) == 0:
                continue
            if self.count[node] > 0:
                s = self.start[node]
                faces = self.perm[s : s + self.count[node]]
                # (rays, faces) broadcast; leaves are small so this stays cheap
                pvec = _cross3(D[rays][:, None, :], self.eac[faces][None, :, :])
                det = _dot3(self.eab[faces][None, :, :], pvec)
                with np.errstate(divide="ignore", invalid="ignore"):
                    invdet = 1.0 / det
                    tvec = O[rays][:, None, :] - self.A[faces][None, :, :]
                    u = _dot3(tvec, pvec) * invdet
                    qvec = _cross3(tvec, self.eab[faces][None, :, :])
                    v = _dot3(D[rays][:, None, :], qvec) * invdet
                    t = _dot3(self.eac[faces][None, :, :], qvec) * invdet
                hit = (
                    (np.abs(det) > 0.0)
                    & (u >= -BARY_EPS)
                    & (v >= -BARY_EPS)
                    & (u + v <= 1.0 + BARY_EPS)
                    & (t >= t_min)
                )
                t = np.where(hit, t, np.inf)
                k = np.argmin(t, axis=1)
                tk = t[np.arange(len(rays)), k]
                better = tk < best_t[rays]
                upd = rays[better]
                best_t[upd] = tk[better]
                best_face[upd] = faces[k[better]]
            else:
                stack.append((int(self.right[node]), rays))
                stack.append((int(self.left[node]), rays))
        return best_t, best_face


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def grid_surface_mesh(
    origin: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    n: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    heights: np.ndarray,
    mask: np.ndarray | None = None,
) -> TriMesh:
    """Height-field mesh over a plane frame.

    Vertex (i, j) sits at origin + xs[i]*u + ys[j]*v + heights[i, j]*n.
    Cells are emitted only where all four corner nodes are unmasked; faces
    wind so normals have positive component along n (upward for u x v = n).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    heights = np.asarray(heights, dtype=float)
    ni, nj = len(xs), len(ys)
    if heights.shape != (ni, nj):
        raise ValueError("heights shape must be (len(xs), len(ys))")
    if mask is None:
        mask = np.ones((ni, nj), dtype=bool)
    covered = mask[:-1, :-1] & mask[1:, :-1] & mask[1:, 1:] & mask[:-1, 1:]
    if not covered.any():
        raise ValueError("no fully covered grid cell")
    used = np.zeros((ni, nj), dtype=bool)
    ci, cj = np.nonzero(covered)
    used[ci, cj] = True
    used[ci + 1, cj] = True
    used[ci + 1, cj + 1] = True
    used[ci, cj + 1] = True
    index = np.full((ni, nj), -1, dtype=np.int64)
    ui, uj = np.nonzero(used)  # row-major, deterministic
    index[ui, uj] = np.arange(len(ui))
    pts = (
        np.asarray(origin, dtype=float)[None, :]
        + xs[ui][:, None] * np.asarray(u, dtype=float)[None, :]
        + ys[uj][:, None] * np.asarray(v, dtype=float)[None, :]
        + heights[ui, uj][:, None] * np.asarray(n, dtype=float)[None, :]
    )
    i00 = index[ci, cj]
    i10 = index[ci + 1, cj]
    i11 = index[ci + 1, cj + 1]
    i01 = index[ci, cj + 1]
    faces = np.empty((2 * len(ci), 3), dtype=np.int64)
    faces[0::2] = np.stack([i00, i10, i11], axis=1)
    faces[1::2] = np.stack([i00, i11, i01], axis=1)
    return TriMesh(pts, faces)


# ---------------------------------------------------------------------------
# ASCII OFF I/O
# ---------------------------------------------------------------------------


def save_off(mesh: TriMesh, path) -> None:
    """ASCII OFF with shortest-round-trip floats; LF endings.

    save -> load -> save is byte-identical.
    """
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    for p in mesh.vertices:
        lines.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_off(path) -> TriMesh:
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for line in fh:
            hash_at = line.find("#")
            if hash_at >= 0:
                line = line[:hash_at]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4  # skip edge count
    flat = tokens[pos : pos + 3 * nv]
    if len(flat) != 3 * nv:
        raise ValueError(f"{path}: truncated vertex block")
    vertices = np.array(flat, dtype=float).reshape(nv, 3)
    pos += 3 * nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        if tokens[pos] != "3":
            raise ValueError(f"{path}: only triangle faces supported")
        faces[k] = (int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3]))
        pos += 4
    return TriMesh(vertices, faces)
