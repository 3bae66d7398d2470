"""Ground-truth renderer: z-buffered Lambertian shading with object labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import Camera
from ..geometry import Mesh
from ..raster import rasterize

BACKGROUND, BODY, GARMENT = 0, 1, 2


@dataclass
class SceneObject:
    mesh: Mesh
    label: int
    vertex_colors: np.ndarray  # (V, 3) albedo


@dataclass
class Materials:
    body_color: tuple = (0.87, 0.68, 0.55)
    garment_color: tuple = (0.22, 0.36, 0.78)
    wrinkle_albedo_gain: float = 5.0  # albedo scale per scene unit of wrinkle displacement
    light_dir: tuple = (0.35, 0.75, 0.55)
    ambient: float = 0.35
    unshaded: bool = False  # debug: flat albedo, no wrinkle modulation
    background: tuple = field(default=(0.0, 0.0, 0.0))

    def garment_albedo(self, wrinkle: np.ndarray) -> np.ndarray:
        base = np.asarray(self.garment_color, dtype=np.float64)
        if self.unshaded:
            return np.tile(base, (len(wrinkle), 1))
        f = np.clip(1.0 + self.wrinkle_albedo_gain * np.asarray(wrinkle), 0.0, None)
        return np.clip(base[None] * f[:, None], 0.0, 1.0)

    def body_albedo(self, n: int) -> np.ndarray:
        return np.tile(np.asarray(self.body_color, dtype=np.float64), (n, 1))


def render_ground_truth(objects: list, camera: Camera, materials: Materials):
    """Returns (image (H, W, 3) float in [0, 1], mask (H, W) bool, segmentation (H, W) uint8)."""
    h, w = camera.resolution
    image = np.broadcast_to(np.asarray(materials.background, dtype=np.float64), (h, w, 3)).copy()
    seg = np.zeros((h, w), dtype=np.uint8)
    if not objects:
        return image, seg != BACKGROUND, seg

    verts, tris, labels, colors, normals = [], [], [], [], []
    off = 0
    for ob in objects:
        verts.append(ob.mesh.vertices)
        tris.append(ob.mesh.triangles + off)
        labels.append(np.full(len(ob.mesh.triangles), ob.label, dtype=np.uint8))
        colors.append(np.asarray(ob.vertex_colors, dtype=np.float64))
        normals.append(ob.mesh.vertex_normals)
        off += len(ob.mesh.vertices)
    verts = np.concatenate(verts)
    tris = np.concatenate(tris)
    labels = np.concatenate(labels)
    colors = np.concatenate(colors)
    normals = np.concatenate(normals)

    xy, z = camera.project(verts)
    frag = rasterize(xy, z, tris, h, w)
    cov = frag.mask
    tv = tris[frag.tri_id[cov]]
    bary = frag.bary[cov]
    albedo = np.einsum("nk,nkc->nc", bary, colors[tv])
    seg[cov] = labels[frag.tri_id[cov]]
    if materials.unshaded:
        image[cov] = albedo
    else:
        n = np.einsum("nk,nkc->nc", bary, normals[tv])
        n /= np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
        p = np.einsum("nk,nkc->nc", bary, verts[tv])
        to_cam = camera.center - p
        flip = np.einsum("nc,nc->n", n, to_cam) < 0
        n[flip] *= -1  # two-sided
        light = np.asarray(materials.light_dir, dtype=np.float64)
        light /= np.linalg.norm(light)
        lam = np.clip(n @ light, 0.0, None)
        shade = materials.ambient + (1.0 - materials.ambient) * lam
        image[cov] = np.clip(albedo * shade[:, None], 0.0, 1.0)
    return image, seg != BACKGROUND, seg


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
