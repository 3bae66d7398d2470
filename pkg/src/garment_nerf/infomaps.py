"""Body information textures: UV-space normal and velocity maps."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import BodyTemplate, Mesh, yaw_rotation
from .raster import Fragments, rasterize_uv as _raster_uv


@dataclass
class UVRaster:
    data: np.ndarray  # (H, W, C)
    validity: np.ndarray  # (H, W) bool

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))


@dataclass
class HistoryWindow:
    """Per-vertex world positions for frames t, t-1, ..., t-k (index 0 is frame t)."""

    world_positions: list
    root_yaw: float = 0.0  # heading of frame t

    def __post_init__(self):
        if len(self.world_positions) < 1:
            raise DomainError("history window needs at least the current frame")
        n = {np.shape(p)[0] for p in self.world_positions}
        if len(n) != 1:
            raise DomainError("history frames disagree on vertex count")

    @property
    def k(self) -> int:
        return len(self.world_positions) - 1


def _check_resolution(resolution):
    h, w = resolution
    if h <= 0 or w <= 0:
        raise ConfigurationError(f"raster resolution must be positive, got {resolution}")
    return int(h), int(w)


@lru_cache(maxsize=16)
def uv_fragments(template: BodyTemplate, height: int, width: int) -> Fragments:
    """Texel -> (triangle, barycentric) lookup for a template's atlas."""
    return _raster_uv(template.uv_coords, template.canonical_mesh.triangles, height, width)


def rasterize_uv(template: BodyTemplate, per_vertex_attr: np.ndarray, resolution) -> UVRaster:
    h, w = _check_resolution(resolution)
    attr = np.asarray(per_vertex_attr, dtype=np.float64)
    if attr.ndim == 1:
        attr = attr[:, None]
    if attr.shape[0] != len(template.canonical_mesh.vertices):
        raise DomainError("attribute length must equal the template vertex count")
    frag = uv_fragments(template, h, w)
    valid = frag.mask
    data = np.zeros((h, w, attr.shape[1]))
    tri = template.canonical_mesh.triangles[frag.tri_id[valid]]
    data[valid] = np.einsum("nk,nkc->nc", frag.bary[valid], attr[tri])
    return UVRaster(data, valid)


def root_alignment(root_yaw: float | None) -> np.ndarray:
    return np.eye(3) if root_yaw is None else yaw_rotation(-root_yaw)


def normal_map(posed: Mesh, template: BodyTemplate, resolution, root_yaw: float | None = None) -> UVRaster:
    """Per-vertex unit normals of the posed body, optionally heading-aligned, in UV space.

    Covered texels are renormalised after interpolation.
    """
    if len(posed.vertices) != len(template.canonical_mesh.vertices):
        raise DomainError("posed mesh does not match template topology")
    n = posed.vertex_normals @ root_alignment(root_yaw).T
    r = rasterize_uv(template, n, resolution)
    norm = np.linalg.norm(r.data, axis=-1, keepdims=True)
    r.data = np.where(r.validity[..., None] & (norm > 0), r.data / np.where(norm > 0, norm, 1.0), 0.0)
    return r


def velocity_map(window: HistoryWindow, template: BodyTemplate, resolution, align: bool = True) -> UVRaster:
    """Backward differences p(t-i+1) - p(t-i), i = 1..k, one 3-channel block each."""
    h, w = _check_resolution(resolution)
    pos = [np.asarray(p, dtype=np.float64) for p in window.world_positions]
    if pos[0].shape[0] != len(template.canonical_mesh.vertices):
        raise DomainError("history positions do not match template vertex count")
    if window.k == 0:
        frag = uv_fragments(template, h, w)
        return UVRaster(np.zeros((h, w, 0)), frag.mask)
    rot = root_alignment(window.root_yaw if align else None)
    blocks = [(pos[i - 1] - pos[i]) @ rot.T for i in range(1, window.k + 1)]
    return rasterize_uv(template, np.concatenate(blocks, axis=1), (h, w))
