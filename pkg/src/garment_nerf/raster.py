"""Vectorised triangle rasterizer with a deterministic z-buffer.

Pixel (i, j) is sampled at its centre (j + 0.5, i + 0.5). Depth ties resolve
to the lowest triangle index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .geometry import Mesh

NEAR = 1e-3


@dataclass
class Fragments:
    tri_id: np.ndarray  # (H, W) int64, -1 where empty
    bary: np.ndarray  # (H, W, 3), perspective-correct weights
    depth: np.ndarray  # (H, W), inf where empty

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0


def _candidates(xy, tris, height, width, strict=False):
    p = xy[tris]  # (T, 3, 2)
    lo = np.ceil(p.min(1) - 0.5).astype(np.int64)
    hi = np.floor(p.max(1) - 0.5).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi[:, 0] = np.minimum(hi[:, 0], width - 1)
    hi[:, 1] = np.minimum(hi[:, 1], height - 1)
    nx = np.maximum(hi[:, 0] - lo[:, 0] + 1, 0)
    ny = np.maximum(hi[:, 1] - lo[:, 1] + 1, 0)
    cnt = nx * ny
    tid = np.repeat(np.arange(len(tris)), cnt)
    if len(tid) == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, np.zeros((0, 3))
    local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    px = lo[tid, 0] + local % nx[tid]
    py = lo[tid, 1] + local // nx[tid]

    a, b, c = p[tid, 0], p[tid, 1], p[tid, 2]
    sx, sy = px + 0.5, py + 0.5
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    w0 = (b[:, 0] - sx) * (c[:, 1] - sy) - (b[:, 1] - sy) * (c[:, 0] - sx)
    w1 = (c[:, 0] - sx) * (a[:, 1] - sy) - (c[:, 1] - sy) * (a[:, 0] - sx)
    w2 = (a[:, 0] - sx) * (b[:, 1] - sy) - (a[:, 1] - sy) * (b[:, 0] - sx)
    ok = np.abs(area) > 1e-14
    sa = np.where(ok, area, 1.0)
    bary = np.stack([w0 / sa, w1 / sa, w2 / sa], -1)
    tol = 1e-9
    inside = ok & ((bary > tol).all(-1) if strict else (bary >= -tol).all(-1))
    return tid[inside], py[inside], px[inside], bary[inside]


def rasterize(xy: np.ndarray, depth: np.ndarray, triangles: np.ndarray, height: int, width: int,
              perspective: bool = True) -> Fragments:
    """Rasterize triangles given per-vertex pixel coordinates and view depth."""
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary_map = np.zeros((height, width, 3))
    depth_map = np.full((height, width), np.inf)
    if len(tris) == 0:
        return Fragments(tri_id, bary_map, depth_map)
    keep = (depth[tris] > NEAR).all(1)
    idx = np.flatnonzero(keep)
    tid, py, px, bary = _candidates(xy, tris[idx], height, width)
    if len(tid) == 0:
        return Fragments(tri_id, bary_map, depth_map)
    tid = idx[tid]
    z = depth[tris[tid]]
    if perspective:
        wz = bary / z
        s = wz.sum(-1, keepdims=True)
        bary = wz / s
        zf = 1.0 / s[:, 0]
    else:
        zf = (bary * z).sum(-1)
    pix = py * width + px
    order = np.lexsort((tid, zf, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    tri_id.flat[pix[win]] = tid[win]
    bary_map.reshape(-1, 3)[pix[win]] = bary[win]
    depth_map.flat[pix[win]] = zf[win]
    return Fragments(tri_id, bary_map, depth_map)


def rasterize_mesh(mesh: Mesh, camera: Camera) -> Fragments:
    xy, z = camera.project(mesh.vertices)
    return rasterize(xy, z, mesh.triangles, camera.height, camera.width)


def rasterize_uv(uv: np.ndarray, triangles: np.ndarray, height: int, width: int) -> Fragments:
    """Orthographic rasterization in texture space: u -> columns, v -> rows."""
    xy = np.asarray(uv, dtype=np.float64) * np.array([width, height])
    return rasterize(xy, np.ones(len(xy)), triangles, height, width, perspective=False)


def uv_coverage_counts(uv: np.ndarray, triangles: np.ndarray, height: int, width: int) -> np.ndarray:
    """How many UV triangles strictly contain each texel centre."""
    xy = np.asarray(uv, dtype=np.float64) * np.array([width, height])
    _, py, px, _ = _candidates(xy, np.asarray(triangles).reshape(-1, 3), height, width, strict=True)
    counts = np.zeros((height, width), dtype=np.int64)
    np.add.at(counts, (py, px), 1)
    return counts
