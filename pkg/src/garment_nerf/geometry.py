"""Body template, skinning, closest-point queries and body-relative features.

Conventions: y is up, the canonical body faces +z, lengths are scene units
(roughly metres). Rigid transforms are 4x4 homogeneous matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _bvh_kernel
from .errors import ConfigurationError, DomainError
from .tensorio import load_container, load_tensor, save_container, save_tensor

DEGENERATE_AREA = 1e-12


def _readonly(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


def rigid(rotation=None, translation=None) -> np.ndarray:
    m = np.eye(4)
    if rotation is not None:
        m[:3, :3] = rotation
    if translation is not None:
        m[:3, 3] = translation
    return m


def apply_transform(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ m[:3, :3].T + m[:3, 3]


def yaw_rotation(angle: float) -> np.ndarray:
    """Rotation about +y by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def yaw_of(rotation: np.ndarray) -> float:
    """Heading of a rotation: angle of its rotated +z axis about +y."""
    fwd = rotation[:, 2]
    return float(np.arctan2(fwd[0], fwd[2]))


class Mesh:
    """Triangle mesh. Arrays are copied and frozen on construction."""

    def __init__(self, vertices, triangles):
        v = _readonly(np.reshape(vertices, (-1, 3)), np.float64)
        t = _readonly(np.reshape(triangles, (-1, 3)), np.int64)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise DomainError("triangle index out of range")
        self.vertices = v
        self.triangles = t

    def __len__(self):
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    @cached_property
    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals; isolated vertices get +y.

        Vertices at identical positions (UV seams, duplicated poles) share one
        normal accumulated over all their triangles.
        """
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        fn = np.cross(b - a, c - a)  # length = 2 * area
        _, weld = np.unique(self.vertices, axis=0, return_inverse=True)
        weld = weld.reshape(-1)
        acc = np.zeros((weld.max(initial=-1) + 1, 3))
        for i in range(3):
            np.add.at(acc, weld[self.triangles[:, i]], fn)
        acc = acc[weld]
        norm = np.linalg.norm(acc, axis=-1, keepdims=True)
        out = np.where(norm > 0, acc / np.where(norm > 0, norm, 1.0), np.array([0.0, 1.0, 0.0]))
        out.flags.writeable = False
        return out

    @cached_property
    def bvh(self) -> "TriangleBVH":
        return TriangleBVH(self)

    def transformed(self, m: np.ndarray) -> "Mesh":
        return Mesh(apply_transform(m, self.vertices), self.triangles)

    def equals(self, other: "Mesh") -> bool:
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(self.triangles, other.triangles)


@dataclass(eq=False)
class BodyTemplate:
    canonical_mesh: Mesh
    uv_coords: np.ndarray  # (V, 2) in [0, 1]
    skinning_weights: np.ndarray  # (V, J)
    joint_parents: np.ndarray  # (J,), -1 for the root
    rest_joint_positions: np.ndarray  # (J, 3); rest transforms are pure translations
    name: str = "body"
    joint_names: list = field(default_factory=list)

    def __post_init__(self):
        mesh = self.canonical_mesh
        nv = len(mesh.vertices)
        self.uv_coords = _readonly(self.uv_coords, np.float64)
        self.skinning_weights = _readonly(self.skinning_weights, np.float64)
        self.joint_parents = _readonly(self.joint_parents, np.int64)
        self.rest_joint_positions = _readonly(self.rest_joint_positions, np.float64)
        if self.uv_coords.shape != (nv, 2):
            raise ConfigurationError("uv_coords must be (V, 2)")
        if self.uv_coords.min() < 0 or self.uv_coords.max() > 1:
            raise ConfigurationError("uv_coords must lie in [0, 1]")
        w = self.skinning_weights
        if w.ndim != 2 or w.shape[0] != nv or w.shape[1] != self.n_joints:
            raise ConfigurationError("skinning_weights must be (V, J)")
        if (w < 0).any() or not np.allclose(w.sum(1), 1.0, atol=1e-6):
            raise ConfigurationError("skinning weight rows must be non-negative and sum to 1")
        for j, p in enumerate(self.joint_parents):
            if p >= j:
                raise ConfigurationError("joint_parents must list parents before children")
        if (mesh.areas < DEGENERATE_AREA).any():
            raise ConfigurationError("template contains degenerate triangles")
        if not self.joint_names:
            self.joint_names = [f"j{j}" for j in range(self.n_joints)]

    @property
    def n_joints(self) -> int:
        return len(self.joint_parents)

    @property
    def rest_joint_transforms(self) -> np.ndarray:
        out = np.tile(np.eye(4), (self.n_joints, 1, 1))
        out[:, :3, 3] = self.rest_joint_positions
        return out

    @cached_property
    def height(self) -> float:
        y = self.canonical_mesh.vertices[:, 1]
        return float(y.max() - y.min())


@dataclass(eq=False)
class PoseFrame:
    root_transform: np.ndarray  # 4x4 rigid
    joint_rotations: np.ndarray  # (J, 3, 3), local rotations about each joint
    frame_index: int = 0

    def __post_init__(self):
        self.root_transform = np.asarray(self.root_transform, dtype=np.float64)
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=np.float64)
        r = self.joint_rotations
        eye = np.eye(3)
        if np.abs(np.einsum("jab,jac->jbc", r, r) - eye).max(initial=0.0) > 1e-6:
            raise DomainError("joint rotations must be orthonormal")
        rr = self.root_transform[:3, :3]
        if np.abs(rr.T @ rr - eye).max() > 1e-6:
            raise DomainError("root rotation must be orthonormal")

    @classmethod
    def identity(cls, n_joints: int, frame_index: int = 0) -> "PoseFrame":
        return cls(np.eye(4), np.tile(np.eye(3), (n_joints, 1, 1)), frame_index)

    @property
    def root_yaw(self) -> float:
        return yaw_of(self.root_transform[:3, :3])


@dataclass(eq=False)
class MotionSequence:
    template_ref: str
    frames: list
    frame_rate: float = 30.0

    def __post_init__(self):
        idx = [f.frame_index for f in self.frames]
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise DomainError("frame indices must increase by exactly 1")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def first_index(self) -> int:
        return self.frames[0].frame_index if self.frames else 0

    def at(self, t: int) -> PoseFrame:
        return self.frames[t - self.first_index]


@dataclass
class SurfaceSample:
    position: np.ndarray
    triangle_index: int
    barycentric: np.ndarray
    distance: float


@dataclass
class SurfaceSamples:
    """Batched closest-point results for N query points."""

    positions: np.ndarray  # (N, 3)
    triangle_index: np.ndarray  # (N,)
    barycentric: np.ndarray  # (N, 3)
    distance: np.ndarray  # (N,)

    def __len__(self):
        return len(self.distance)

    def __getitem__(self, i) -> SurfaceSample:
        return SurfaceSample(self.positions[i], int(self.triangle_index[i]), self.barycentric[i], float(self.distance[i]))


@dataclass
class BodyAwareFeature:
    canonical_point: np.ndarray
    distance: float

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.canonical_point, dtype=np.float64).ravel(), [self.distance]])


# ---------------------------------------------------------------- skinning


def joint_world_transforms(template: BodyTemplate, pose: PoseFrame) -> np.ndarray:
    J = template.n_joints
    if pose.joint_rotations.shape != (J, 3, 3):
        raise ConfigurationError(f"pose has {len(pose.joint_rotations)} joint rotations, template has {J}")
    rest = template.rest_joint_positions
    world = np.empty((J, 4, 4))
    for j in range(J):
        p = template.joint_parents[j]
        if p < 0:
            world[j] = pose.root_transform @ rigid(pose.joint_rotations[j], rest[j])
        else:
            world[j] = world[p] @ rigid(pose.joint_rotations[j], rest[j] - rest[p])
    return world


def skinning_matrices(template: BodyTemplate, pose: PoseFrame) -> np.ndarray:
    world = joint_world_transforms(template, pose)
    inv_rest = np.tile(np.eye(4), (template.n_joints, 1, 1))
    inv_rest[:, :3, 3] = -template.rest_joint_positions
    return world @ inv_rest


def pose_body(template: BodyTemplate, pose: PoseFrame) -> Mesh:
    """Linear blend skinning of the canonical mesh."""
    mats = skinning_matrices(template, pose)
    blended = np.einsum("vj,jab->vab", template.skinning_weights, mats)
    v = template.canonical_mesh.vertices
    out = np.einsum("vab,vb->va", blended[:, :3, :3], v) + blended[:, :3, 3]
    return Mesh(out, template.canonical_mesh.triangles)


# ---------------------------------------------------------------- closest point


def closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all (M, 3).

    Region-based method; returns (points, barycentric weights). Degenerate
    triangles fall back to clamped weights.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    m = len(p)
    bary = np.zeros((m, 3))
    done = np.zeros(m, dtype=bool)

    def take(mask, w):
        nonlocal done
        sel = mask & ~done
        bary[sel] = w[sel] if w.ndim == 2 else w
        done |= sel

    def safe_div(num, den):
        return np.divide(num, den, out=np.zeros_like(num), where=den != 0)

    take((d1 <= 0) & (d2 <= 0), np.array([1.0, 0.0, 0.0]))
    take((d3 >= 0) & (d4 <= d3), np.array([0.0, 1.0, 0.0]))
    v = safe_div(d1, d1 - d3)
    take((vc <= 0) & (d1 >= 0) & (d3 <= 0), np.stack([1 - v, v, np.zeros(m)], 1))
    take((d6 >= 0) & (d5 <= d6), np.array([0.0, 0.0, 1.0]))
    w = safe_div(d2, d2 - d6)
    take((vb <= 0) & (d2 >= 0) & (d6 <= 0), np.stack([1 - w, np.zeros(m), w], 1))
    e43, e56 = d4 - d3, d5 - d6
    w = safe_div(e43, e43 + e56)
    take((va <= 0) & (e43 >= 0) & (e56 >= 0), np.stack([np.zeros(m), 1 - w, w], 1))
    denom = va + vb + vc
    v = safe_div(vb, denom)
    w = safe_div(vc, denom)
    take(np.ones(m, dtype=bool), np.stack([1 - v - w, v, w], 1))

    bary = np.clip(bary, 0.0, None)
    s = bary.sum(1, keepdims=True)
    bary = np.where(s > 0, bary / np.where(s > 0, s, 1.0), np.array([1.0, 0.0, 0.0]))
    q = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return q, bary


class TriangleBVH:
    """Axis-aligned bounding volume hierarchy over the non-degenerate triangles.

    Queries run breadth-first over (point, node) pairs, pruned against an
    upper bound from the nearest vertex, so whole batches stay vectorised.
    """

    def __init__(self, mesh: Mesh, leaf_size: int = 4):
        self.mesh = mesh
        valid = np.flatnonzero(mesh.areas >= DEGENERATE_AREA)
        if len(valid) == 0:
            raise DomainError("mesh has no non-degenerate triangles")
        tri_pts = mesh.vertices[mesh.triangles[valid]]  # (T, 3, 3)
        lo_t, hi_t = tri_pts.min(1), tri_pts.max(1)
        cent = tri_pts.mean(1)

        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = []

        def build(ids):
            node = len(lo)
            lo.append(lo_t[ids].min(0))
            hi.append(hi_t[ids].max(0))
            left.append(-1)
            right.append(-1)
            start.append(-1)
            count.append(0)
            if len(ids) <= leaf_size:
                start[node] = len(order)
                count[node] = len(ids)
                order.extend(ids.tolist())
                return node
            ext = cent[ids].max(0) - cent[ids].min(0)
            axis = int(np.argmax(ext))
            srt = ids[np.argsort(cent[ids, axis], kind="stable")]
            half = len(srt) // 2
            left[node] = build(srt[:half])
            right[node] = build(srt[half:])
            return node

        build(np.arange(len(valid)))
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.left = np.array(left)
        self.right = np.array(right)
        self.start = np.array(start)
        self.count = np.array(count)
        self.tri_ids = valid[np.array(order)]  # leaf order -> mesh triangle index
        used = np.unique(mesh.triangles[valid])
        self._vert_ids = used
        self._kdtree = cKDTree(mesh.vertices[used])
        # incident valid triangles per vertex, padded with -1
        vt = mesh.triangles[valid].ravel()
        owner = np.repeat(valid, 3)
        srt = np.argsort(vt, kind="stable")
        vt, owner = vt[srt], owner[srt]
        deg = np.bincount(vt, minlength=len(mesh.vertices))
        slot = np.arange(len(vt)) - np.repeat(np.cumsum(deg) - deg, deg)[: len(vt)]
        self._incident = np.full((len(mesh.vertices), max(int(deg.max()), 1)), -1)
        self._incident[vt, slot] = owner

    def _box_dist2(self, pts, nodes):
        d = np.maximum(0.0, np.maximum(self.lo[nodes] - pts, pts - self.hi[nodes]))
        return np.einsum("ij,ij->i", d, d)

    def query(self, points: np.ndarray) -> SurfaceSamples:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if _bvh_kernel.nearest_triangles is None or len(pts) == 0:
            return self.query_vectorized(pts)
        mesh = self.mesh
        dv, _ = self._kdtree.query(pts)
        upper2 = (dv * (1 + 1e-9) + 1e-12) ** 2  # a vertex of a valid triangle bounds the distance
        tri = _bvh_kernel.nearest_triangles(np.ascontiguousarray(pts), upper2, self.lo, self.hi, self.left, self.right,
                                            self.start, self.count, self.tri_ids, mesh.vertices, mesh.triangles)
        tv = mesh.triangles[tri]
        v = mesh.vertices
        q, bary = closest_on_triangles(pts, v[tv[:, 0]], v[tv[:, 1]], v[tv[:, 2]])
        return SurfaceSamples(q, tri, bary, np.linalg.norm(q - pts, axis=-1))

    def query_vectorized(self, points: np.ndarray) -> SurfaceSamples:
        """Pure-numpy traversal (used when the compiled kernel is unavailable)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(pts)
        _, nv = self._kdtree.query(pts)
        inc = self._incident[self._vert_ids[nv]]  # (n, deg)
        ok = inc >= 0
        ip = np.nonzero(ok)[0]
        it = inc[ok]
        tv = self.mesh.triangles[it]
        vv = self.mesh.vertices
        q, _ = closest_on_triangles(pts[ip], vv[tv[:, 0]], vv[tv[:, 1]], vv[tv[:, 2]])
        ub2 = np.full(n, np.inf)
        np.minimum.at(ub2, ip, np.einsum("ij,ij->i", q - pts[ip], q - pts[ip]))
        ub2 = (np.sqrt(ub2) * (1 + 1e-9) + 1e-12) ** 2

        pi = np.arange(n)
        nodes = np.zeros(n, dtype=np.int64)
        leaf_p, leaf_n = [], []
        while len(pi):
            is_leaf = self.left[nodes] < 0
            leaf_p.append(pi[is_leaf])
            leaf_n.append(nodes[is_leaf])
            ip, inode = pi[~is_leaf], nodes[~is_leaf]
            cp = np.concatenate([ip, ip])
            cn = np.concatenate([self.left[inode], self.right[inode]])
            keep = self._box_dist2(pts[cp], cn) <= ub2[cp]
            pi, nodes = cp[keep], cn[keep]
        lp = np.concatenate(leaf_p)
        ln = np.concatenate(leaf_n)

        cnt = self.count[ln]
        rep_p = np.repeat(lp, cnt)
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        tri = self.tri_ids[np.repeat(self.start[ln], cnt) + offs]
        return _reduce_candidates(self.mesh, pts, rep_p, tri)


def _reduce_candidates(mesh, pts, cand_p, cand_t) -> SurfaceSamples:
    n = len(pts)
    tv = mesh.triangles[cand_t]
    v = mesh.vertices
    q, bary = closest_on_triangles(pts[cand_p], v[tv[:, 0]], v[tv[:, 1]], v[tv[:, 2]])
    d2 = np.einsum("ij,ij->i", q - pts[cand_p], q - pts[cand_p])
    dmin = np.full(n, np.inf)
    np.minimum.at(dmin, cand_p, d2)
    near = d2 <= dmin[cand_p] * (1 + 1e-10) + 1e-24
    big = np.iinfo(np.int64).max
    tbest = np.full(n, big)
    np.minimum.at(tbest, cand_p[near], cand_t[near])
    if (tbest == big).any():
        raise DomainError("closest-point query found no candidate triangle")
    pick = near & (cand_t == tbest[cand_p])
    # one winner per point: first occurrence
    idx = np.flatnonzero(pick)
    _, first = np.unique(cand_p[idx], return_index=True)
    win = idx[first]
    order = np.argsort(cand_p[win])
    win = win[order]
    pos = q[win]
    dist = np.linalg.norm(pos - pts, axis=-1)
    return SurfaceSamples(pos, cand_t[win], bary[win], dist)


def closest_points(mesh: Mesh, points: np.ndarray) -> SurfaceSamples:
    if len(mesh) == 0:
        raise DomainError("closest-point query on an empty mesh")
    return mesh.bvh.query(points)


def closest_point(mesh: Mesh, x) -> SurfaceSample:
    return closest_points(mesh, np.asarray(x, dtype=np.float64).reshape(1, 3))[0]


def closest_points_exhaustive(mesh: Mesh, points: np.ndarray) -> SurfaceSamples:
    """Scan every non-degenerate triangle. Reference path for the BVH."""
    if len(mesh) == 0:
        raise DomainError("closest-point query on an empty mesh")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    valid = np.flatnonzero(mesh.areas >= DEGENERATE_AREA)
    cp = np.repeat(np.arange(len(pts)), len(valid))
    ct = np.tile(valid, len(pts))
    return _reduce_candidates(mesh, pts, cp, ct)


# ---------------------------------------------------------------- canonical transfer


def to_canonical(template: BodyTemplate, sample) -> np.ndarray:
    """Barycentric transfer of a posed-surface sample onto the canonical mesh.

    Accepts a SurfaceSample (returns a 3-vector) or SurfaceSamples (returns (N, 3)).
    """
    tri = np.atleast_1d(np.asarray(sample.triangle_index))
    mesh = template.canonical_mesh
    if tri.size and (tri.min() < 0 or tri.max() >= len(mesh)):
        raise DomainError("triangle index outside template topology")
    bary = np.asarray(sample.barycentric, dtype=np.float64).reshape(-1, 3)
    corners = mesh.vertices[mesh.triangles[tri]]  # (N, 3, 3)
    out = np.einsum("nk,nkd->nd", bary, corners)
    return out[0] if isinstance(sample, SurfaceSample) else out


def canonical_uv(template: BodyTemplate, triangle_index, barycentric) -> np.ndarray:
    tri = template.canonical_mesh.triangles[np.asarray(triangle_index)]
    return np.einsum("nk,nkd->nd", np.asarray(barycentric).reshape(-1, 3), template.uv_coords[tri])


def body_relative_features(points: np.ndarray, posed: Mesh, template: BodyTemplate):
    """(b_o, h, samples) for a batch of query points."""
    s = closest_points(posed, points)
    return to_canonical(template, s), s.distance, s


def body_relative_feature(x, posed: Mesh, template: BodyTemplate) -> BodyAwareFeature:
    b_o, h, _ = body_relative_features(np.asarray(x, dtype=np.float64).reshape(1, 3), posed, template)
    return BodyAwareFeature(b_o[0], float(h[0]))


# ---------------------------------------------------------------- template construction


def lat_long_part(center, axis, half_length, radius, n_lon, n_lat, uv_rect):
    """Closed ellipsoid around `axis`, lat-long parameterised into `uv_rect`.

    Returns (vertices, triangles, uvs). The seam column and both pole rows are
    duplicated so every UV triangle is distinct; pole bands use one triangle
    per quad to avoid zero-area faces.
    """
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    rx, rz = (radius, radius) if np.isscalar(radius) else radius
    phi = np.linspace(0.0, np.pi, n_lat + 1)
    theta = np.linspace(0.0, 2 * np.pi, n_lon + 1)
    P, T = np.meshgrid(phi, theta, indexing="ij")
    verts = (
        np.asarray(center)[None, None]
        + axis * (half_length * np.cos(P))[..., None]
        + e1 * (rx * np.sin(P) * np.cos(T))[..., None]
        + e2 * (rz * np.sin(P) * np.sin(T))[..., None]
    )
    # seam column and pole rows coincide exactly with their first copy
    verts[:, -1] = verts[:, 0]
    verts[0] = verts[0, 0]
    verts[-1] = verts[-1, 0]
    verts = verts.reshape(-1, 3)
    x0, y0, w, h = uv_rect
    U, V = np.meshgrid(np.linspace(0, 1, n_lon + 1), np.linspace(0, 1, n_lat + 1))
    uvs = np.stack([x0 + U * w, y0 + V * h], -1).reshape(-1, 2)

    def vid(i, j):
        return i * (n_lon + 1) + j

    tris = []
    for i in range(n_lat):
        for j in range(n_lon):
            a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            if i == 0:
                tris.append((a, c, d))
            elif i == n_lat - 1:
                tris.append((a, c, b))
            else:
                tris.append((a, c, d))
                tris.append((a, d, b))
    tris = np.array(tris)
    # outward winding
    tv = verts[tris]
    n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    if np.einsum("ij,ij->", n, tv.mean(1) - center) < 0:
        tris = tris[:, [0, 2, 1]]
    return verts, tris, uvs


JOINTS = [
    # name, parent, rest position
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("spine", 0, (0.0, 1.25, 0.0)),
    ("neck", 1, (0.0, 1.50, 0.0)),
    ("l_shoulder", 1, (0.20, 1.42, 0.0)),
    ("l_elbow", 3, (0.30, 1.15, 0.0)),
    ("r_shoulder", 1, (-0.20, 1.42, 0.0)),
    ("r_elbow", 5, (-0.30, 1.15, 0.0)),
    ("l_hip", 0, (0.10, 0.92, 0.0)),
    ("l_knee", 7, (0.11, 0.50, 0.0)),
    ("r_hip", 0, (-0.10, 0.92, 0.0)),
    ("r_knee", 9, (-0.11, 0.50, 0.0)),
]
_JOINT = {name: i for i, (name, _, _) in enumerate(JOINTS)}


def make_body_template(detail: int = 1) -> BodyTemplate:
    """Hand-authored 11-joint body: ellipsoid torso, head and limb segments.

    `detail` scales the tessellation (1 gives ~440 triangles).
    """
    rest = np.array([p for _, _, p in JOINTS])
    parents = np.array([p for _, p, _ in JOINTS])
    wrist_l, wrist_r = np.array([0.36, 0.90, 0.0]), np.array([-0.36, 0.90, 0.0])
    ankle_l, ankle_r = np.array([0.12, 0.08, 0.0]), np.array([-0.12, 0.08, 0.0])

    def seg(a, b, r, pad=0.03):
        a, b = np.asarray(a), np.asarray(b)
        return (a + b) / 2, b - a, np.linalg.norm(b - a) / 2 + pad, r

    limb_lon, limb_lat = 6 * detail, 4 * detail
    parts = [
        # name, (center, axis, half_len, radius), lon, lat, joint
        ("torso", ((0.0, 1.18, 0.0), (0, 1, 0), 0.36, (0.17, 0.11)), 10 * detail, 6 * detail, None),
        ("head", ((0.0, 1.64, 0.0), (0, 1, 0), 0.13, (0.11, 0.11)), 8 * detail, 4 * detail, "neck"),
        ("l_upper_arm", seg(rest[3], rest[4], 0.045), limb_lon, limb_lat, "l_shoulder"),
        ("l_forearm", seg(rest[4], wrist_l, 0.04), limb_lon, limb_lat, "l_elbow"),
        ("r_upper_arm", seg(rest[5], rest[6], 0.045), limb_lon, limb_lat, "r_shoulder"),
        ("r_forearm", seg(rest[6], wrist_r, 0.04), limb_lon, limb_lat, "r_elbow"),
        ("l_thigh", seg(rest[7], rest[8], 0.065), limb_lon, limb_lat, "l_hip"),
        ("l_shin", seg(rest[8], ankle_l, 0.05), limb_lon, limb_lat, "l_knee"),
        ("r_thigh", seg(rest[9], rest[10], 0.065), limb_lon, limb_lat, "r_hip"),
        ("r_shin", seg(rest[10], ankle_r, 0.05), limb_lon, limb_lat, "r_knee"),
    ]
    # atlas: torso takes two cells of a 4x3 grid
    gap = 0.02
    cells = [(0, 0, 2, 1)] + [(c % 4, c // 4, 1, 1) for c in range(2, 11)]
    verts, tris, uvs, weights = [], [], [], []
    offset = 0
    for (name, geom, lon, lat, joint), (cx, cy, cw, ch) in zip(parts, cells):
        rect = (cx / 4 + gap, cy / 3 + gap, cw / 4 - 2 * gap, ch / 3 - 2 * gap)
        v, t, uv = lat_long_part(*geom, lon, lat, rect)
        w = np.zeros((len(v), len(JOINTS)))
        if joint is None:
            s = np.clip((v[:, 1] - 1.0) / 0.3, 0.0, 1.0)
            s = s * s * (3 - 2 * s)
            w[:, _JOINT["spine"]] = s
            w[:, _JOINT["pelvis"]] = 1 - s
        else:
            w[:, _JOINT[joint]] = 1.0
        verts.append(v)
        tris.append(t + offset)
        uvs.append(uv)
        weights.append(w)
        offset += len(v)
    return storage_exact(BodyTemplate(
        Mesh(np.concatenate(verts), np.concatenate(tris)),
        np.concatenate(uvs),
        np.concatenate(weights),
        parents,
        rest,
        name="desk_body",
        joint_names=[n for n, _, _ in JOINTS],
    ))


def make_sphere_template(n_lon: int = 32, n_lat: int = 16, radius: float = 1.0) -> BodyTemplate:
    v, t, uv = lat_long_part(np.zeros(3), (0, 1, 0), radius, radius, n_lon, n_lat, (0.01, 0.01, 0.98, 0.98))
    return storage_exact(BodyTemplate(Mesh(v, t), uv, np.ones((len(v), 1)), np.array([-1]), np.zeros((1, 3)),
                                      name="sphere"))


# ---------------------------------------------------------------- file formats


def storage_weights(w) -> np.ndarray:
    """Skinning weights as they survive float32 storage: rounded, then rows renormalised."""
    w = np.asarray(w, dtype=np.float32).astype(np.float64)
    return w / w.sum(1, keepdims=True)


def storage_exact(template: BodyTemplate) -> BodyTemplate:
    """Copy of a template whose arrays round-trip through the float32 file format unchanged."""
    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
    return BodyTemplate(Mesh(f32(template.canonical_mesh.vertices), template.canonical_mesh.triangles),
                        f32(template.uv_coords), storage_weights(template.skinning_weights), template.joint_parents,
                        f32(template.rest_joint_positions), template.name, list(template.joint_names))


def save_template(template: BodyTemplate, directory: str | Path) -> None:
    """Directory layout: manifest.json + raw little-endian arrays."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "vertices": ("vertices.f32", template.canonical_mesh.vertices.astype("<f4")),
        "triangles": ("triangles.u32", template.canonical_mesh.triangles.astype("<u4")),
        "uv_coords": ("uvs.f32", template.uv_coords.astype("<f4")),
        "skinning_weights": ("weights.f32", template.skinning_weights.astype("<f4")),
        "rest_joint_positions": ("joints.f32", template.rest_joint_positions.astype("<f4")),
    }
    for fname, arr in files.values():
        save_tensor(d / fname, arr)
    manifest = {
        "format": "garment_nerf.template/1",
        "name": template.name,
        "joint_names": list(template.joint_names),
        "joint_parents": template.joint_parents.tolist(),
        "files": {k: v[0] for k, v in files.items()},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_template(directory: str | Path) -> BodyTemplate:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except OSError as exc:
        raise OSError(f"cannot read template manifest in {d}: {exc}") from exc
    f = {k: load_tensor(d / v) for k, v in manifest["files"].items()}
    return BodyTemplate(
        Mesh(f["vertices"], f["triangles"]),
        f["uv_coords"],
        storage_weights(f["skinning_weights"]),
        np.array(manifest["joint_parents"]),
        f["rest_joint_positions"],
        name=manifest["name"],
        joint_names=manifest["joint_names"],
    )


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    save_container(path, {"vertices": mesh.vertices, "triangles": mesh.triangles.astype("<u4")}, {"kind": "mesh"})


def load_mesh(path: str | Path) -> Mesh:
    t, _ = load_container(path)
    return Mesh(t["vertices"], t["triangles"].astype(np.int64))
