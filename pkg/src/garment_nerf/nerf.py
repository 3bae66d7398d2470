"""Body-conditioned radiance field and feature-space volume rendering.

Samples along camera rays are described relative to the posed body: the
canonical position of the closest body point and the distance to it. Each
sample also picks up a dynamic feature (from the UV-space map, at the closest
point's UV) and a detail feature (from the front or back reference feature
map, at the closest point's projection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .camera import Camera
from .errors import ConfigurationError
from .geometry import BodyTemplate, Mesh, canonical_uv, closest_points, to_canonical
from .raster import Fragments, rasterize_mesh

FRONT, BACK = 0, 1
XB_DIM, FS_DIM, FD_DIM = 4, 8, 8
FIELD_INPUT_DIM = XB_DIM + FD_DIM + FS_DIM
ZETA_DIM = 128
VISIBILITY_EPS = 1e-3


# ---------------------------------------------------------------- ray sampling


@dataclass
class RaySampleBatch:
    """Rays through every pixel of a feature grid and the stratified samples of the rays that hit the bounds."""

    resolution: tuple  # (H, W) of the feature grid
    origins: np.ndarray  # (R, 3)
    directions: np.ndarray  # (R, 3) unit
    hit: np.ndarray  # (R,) bool
    depths: np.ndarray  # (R_hit, S) sorted
    deltas: np.ndarray  # (R_hit, S) > 0
    # filled by lookup_features
    f_s: torch.Tensor | None = None  # (R_hit * S, 8)
    f_d: torch.Tensor | None = None  # (R_hit * S, 8)
    x_b: torch.Tensor | None = None  # (R_hit * S, 4)

    @property
    def n_samples(self) -> int:
        return self.depths.shape[1]

    @property
    def hit_index(self) -> np.ndarray:
        return np.flatnonzero(self.hit)

    @property
    def points(self) -> np.ndarray:
        """(R_hit, S, 3) sample positions."""
        o = self.origins[self.hit][:, None]
        d = self.directions[self.hit][:, None]
        return o + d * self.depths[..., None]


def ray_box(origins, directions, lo, hi):
    """Slab intersection; returns (near, far, hit). near is clipped at 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf)
    tmax = np.nan_to_num(np.maximum(t0, t1), nan=np.inf)
    near = np.maximum(tmin.max(-1), 0.0)
    far = tmax.min(-1)
    return near, far, far > near


def stratified_depths(near, far, n_samples, rng: np.random.Generator | None = None):
    """Split [near, far] into n_samples equal bins; midpoints, or uniform jitter inside each bin."""
    edges = np.linspace(0.0, 1.0, n_samples + 1)
    u = rng.random((len(near), n_samples)) if rng is not None else np.full((len(near), n_samples), 0.5)
    frac = edges[:-1] + u / n_samples
    span = (far - near)[:, None]
    depths = near[:, None] + span * frac
    deltas = np.broadcast_to(span / n_samples, depths.shape).copy()
    return depths, deltas


def sample_rays(camera: Camera, feature_resolution, n_samples: int, bounds, rng=None) -> RaySampleBatch:
    """Rays through the pixel centres of `camera` rescaled to the feature grid."""
    if n_samples < 2:
        raise ConfigurationError("n_samples must be at least 2")
    h, w = feature_resolution
    if h <= 0 or w <= 0:
        raise ConfigurationError(f"bad feature resolution {feature_resolution}")
    cam = camera.scaled(h, w)
    origins, dirs = cam.pixel_rays()
    if not np.isfinite(dirs).all():
        raise ConfigurationError("degenerate camera")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    near, far, hit = ray_box(origins, dirs, lo, hi)
    depths, deltas = stratified_depths(near[hit], far[hit], n_samples, rng)
    return RaySampleBatch((h, w), origins, dirs, hit, depths, deltas)


def body_bounds(posed: Mesh, body_height: float, margin: float = 0.3):
    """Bounding box of the posed body dilated by margin * body height."""
    pad = margin * body_height
    return posed.vertices.min(0) - pad, posed.vertices.max(0) + pad


# ---------------------------------------------------------------- reference views


@dataclass
class ReferenceView:
    """One reference camera's z-buffer of the posed body."""

    camera: Camera
    fragments: Fragments
    mesh: Mesh

    def depth_at(self, xy: np.ndarray) -> np.ndarray:
        """Depth of the visible body surface along the ray through sub-pixel positions `xy`.

        Evaluated on the plane of the triangle visible in the containing pixel,
        so it is exact at any sub-pixel location. inf off the body or outside the image.
        """
        cam = self.camera
        h, w = cam.resolution
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        out = np.full(len(xy), np.inf)
        j = np.floor(xy[:, 0]).astype(np.int64)
        i = np.floor(xy[:, 1]).astype(np.int64)
        inside = (j >= 0) & (j < w) & (i >= 0) & (i < h) & np.isfinite(xy).all(-1)
        idx = np.flatnonzero(inside)
        tri = self.fragments.tri_id[i[idx], j[idx]]
        on = tri >= 0
        idx, tri = idx[on], tri[on]
        if len(idx) == 0:
            return out
        r = cam.pose[:3, :3]
        d_cam = np.stack([(xy[idx, 0] - cam.cx) / cam.fx, (xy[idx, 1] - cam.cy) / cam.fy, np.ones(len(idx))], -1)
        d = d_cam @ r.T  # camera-z component is 1, so the ray parameter is the depth
        a = self.mesh.vertices[self.mesh.triangles[tri, 0]]
        n = self.mesh.face_normals[tri]
        den = np.einsum("nc,nc->n", n, d)
        num = np.einsum("nc,nc->n", n, a - cam.center)
        ok = np.abs(den) > 1e-9
        z = np.where(ok, num / np.where(ok, den, 1.0), self.fragments.depth[i[idx], j[idx]])
        out[idx] = z
        return out


def reference_view(posed: Mesh, camera: Camera) -> ReferenceView:
    return ReferenceView(camera, rasterize_mesh(posed, camera), posed)


def _visible(view: ReferenceView, points: np.ndarray, eps: float):
    xy, z = view.camera.project(points)
    h, w = view.camera.resolution
    inside = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h) & (z > 0)
    return inside & (z <= view.depth_at(xy) + eps), inside, xy


def select_reference_view(b_t: np.ndarray, normals: np.ndarray, front: ReferenceView, back: ReferenceView,
                          eps: float = VISIBILITY_EPS) -> np.ndarray:
    """FRONT/BACK tag per surface point.

    Visible in exactly one camera -> that camera; in both -> front; in neither
    (or projecting outside both images) -> the camera the surface normal faces more.
    """
    b_t = np.asarray(b_t, dtype=np.float64).reshape(-1, 3)
    vis_f, _, _ = _visible(front, b_t, eps)
    vis_b, _, _ = _visible(back, b_t, eps)
    tag = np.where(vis_f, FRONT, np.where(vis_b, BACK, -1))
    rest = tag < 0
    if rest.any():
        n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)[rest]
        to_f = front.camera.center - b_t[rest]
        to_b = back.camera.center - b_t[rest]
        to_f /= np.linalg.norm(to_f, axis=-1, keepdims=True)
        to_b /= np.linalg.norm(to_b, axis=-1, keepdims=True)
        df = np.einsum("nc,nc->n", n, to_f)
        db = np.einsum("nc,nc->n", n, to_b)
        tag[rest] = np.where(df >= db, FRONT, BACK)
    return tag.astype(np.int64)


# ---------------------------------------------------------------- feature lookup


@dataclass
class SampleGeometry:
    """Per-sample, feature-map-independent lookup coordinates (flattened R_hit * S)."""

    canonical: np.ndarray  # (N, 3) b_o
    distance: np.ndarray  # (N,) h
    uv: np.ndarray  # (N, 2) UV of b_o, in [0, 1]
    tag: np.ndarray  # (N,) FRONT / BACK
    ref_xy: np.ndarray  # (N, 2) pixel coordinates of b_t in the selected reference camera

    def __len__(self):
        return len(self.distance)

    def x_b(self) -> np.ndarray:
        return np.concatenate([self.canonical, self.distance[:, None]], 1)


def sample_geometry(points: np.ndarray, posed: Mesh, template: BodyTemplate, front: ReferenceView,
                    back: ReferenceView, eps: float = VISIBILITY_EPS) -> SampleGeometry:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        z = np.zeros((0, 3))
        return SampleGeometry(z, np.zeros(0), np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
    s = closest_points(posed, pts)
    b_o = to_canonical(template, s)
    uv = canonical_uv(template, s.triangle_index, s.barycentric)
    vn = posed.vertex_normals[posed.triangles[s.triangle_index]]
    normals = np.einsum("nk,nkc->nc", s.barycentric, vn)
    tag = select_reference_view(s.positions, normals, front, back, eps)
    xy_f, _ = front.camera.project(s.positions)
    xy_b, _ = back.camera.project(s.positions)
    ref_xy = np.where((tag == FRONT)[:, None], xy_f, xy_b)
    return SampleGeometry(b_o, s.distance, uv, tag, ref_xy)


def _grid_sample(fmap: torch.Tensor, grid_xy: torch.Tensor) -> torch.Tensor:
    """Bilinear sample of a (C, H, W) map at normalised coords (N, 2) in [-1, 1] -> (N, C)."""
    if len(grid_xy) == 0:
        return fmap.new_zeros(0, fmap.shape[0])
    g = grid_xy.to(fmap.dtype).view(1, 1, -1, 2)
    return F.grid_sample(fmap[None], g, mode="bilinear", padding_mode="border", align_corners=False)[0, :, 0].T


def lookup_features(geom: SampleGeometry, F_s: torch.Tensor, F_d_front: torch.Tensor, F_d_back: torch.Tensor):
    """(f_s, f_d, x_b) tensors for every sample; differentiable in the feature maps."""
    dtype = F_s.dtype
    f_s = _grid_sample(F_s, torch.as_tensor(geom.uv * 2.0 - 1.0))
    h, w = F_d_front.shape[-2:]
    norm_xy = torch.as_tensor(geom.ref_xy / np.array([w, h]) * 2.0 - 1.0)
    f_d = F_s.new_zeros(len(geom), F_d_front.shape[0])
    for tag, fmap in ((FRONT, F_d_front), (BACK, F_d_back)):
        sel = np.flatnonzero(geom.tag == tag)
        if len(sel):
            idx = torch.as_tensor(sel)
            f_d = f_d.index_copy(0, idx, _grid_sample(fmap, norm_xy[idx]))
    x_b = torch.as_tensor(geom.x_b(), dtype=dtype)
    return f_s, f_d, x_b


def fill_batch(batch: RaySampleBatch, geom: SampleGeometry, F_s, F_d_front, F_d_back) -> RaySampleBatch:
    batch.f_s, batch.f_d, batch.x_b = lookup_features(geom, F_s, F_d_front, F_d_back)
    return batch


# ---------------------------------------------------------------- field


def shifted_softplus(x: torch.Tensor) -> torch.Tensor:
    return F.softplus(x - 1.0)


class RadianceField(nn.Module):
    """Six ReLU linear layers, then a density head (1) and an appearance-feature head (128).

    Input is the 20-wide concatenation [x_b (4), f_d (8), f_s (8)]. With
    `pe_freqs > 0` the x_b part is additionally sin/cos encoded internally.
    `density_bias` sets the initial density-head bias. Combined with a density
    shell around the body (see `render_feature_image`), a positive bias makes
    the body silhouette opaque from the first iteration, so foreground and
    background pixels receive distinguishable features.
    """

    def __init__(self, width: int = 256, depth: int = 6, zeta_dim: int = ZETA_DIM, pe_freqs: int = 0,
                 density_bias: float = 2.0):
        super().__init__()
        self.in_dim = FIELD_INPUT_DIM
        self.pe_freqs = pe_freqs
        d = FIELD_INPUT_DIM + XB_DIM * 2 * pe_freqs
        layers = []
        for _ in range(depth):
            layers += [nn.Linear(d, width), nn.ReLU()]
            d = width
        self.trunk = nn.Sequential(*layers)
        self.sigma_head = nn.Linear(width, 1)
        nn.init.constant_(self.sigma_head.bias, density_bias)
        self.zeta_head = nn.Linear(width, zeta_dim)
        self.zeta_dim = zeta_dim

    def encode(self, inp: torch.Tensor) -> torch.Tensor:
        if not self.pe_freqs:
            return inp
        xb = inp[:, :XB_DIM]
        freqs = 2.0 ** torch.arange(self.pe_freqs, dtype=inp.dtype) * np.pi
        ang = (xb[:, :, None] * freqs).flatten(1)
        return torch.cat([inp, torch.sin(ang), torch.cos(ang)], 1)

    def forward(self, inp: torch.Tensor):
        if inp.shape[-1] != self.in_dim:
            raise ConfigurationError(f"radiance field expects input width {self.in_dim}, got {inp.shape[-1]}")
        hid = self.trunk(self.encode(inp))
        return shifted_softplus(self.sigma_head(hid))[:, 0], self.zeta_head(hid)


def field_input(f_s, f_d, x_b) -> torch.Tensor:
    return torch.cat([x_b, f_d, f_s], -1)


def eval_field(net: RadianceField, f_s, f_d, x_b):
    """(sigma (N,), zeta (N, 128))."""
    return net(field_input(f_s, f_d, x_b))


# ---------------------------------------------------------------- volume rendering


def volume_render(sigma, zeta, delta):
    """Alpha compositing of per-sample features.

    sigma, delta: (..., S); zeta: (..., S, C). Returns (feature (..., C), alpha (...)).
    """
    sigma = torch.as_tensor(sigma)
    zeta = torch.as_tensor(zeta)
    delta = torch.as_tensor(delta, dtype=sigma.dtype)
    if sigma.shape[-1] == 0:
        return zeta.new_zeros(zeta.shape[:-2] + zeta.shape[-1:]), sigma.new_zeros(sigma.shape[:-1])
    tau = sigma * delta
    alpha = -torch.expm1(-tau)
    # transmittance before each sample: exp(-sum_{j<i} tau_j) = prod_{j<i} (1 - alpha_j)
    acc = torch.cumsum(tau, -1)
    trans = torch.exp(-torch.cat([torch.zeros_like(acc[..., :1]), acc[..., :-1]], -1))
    weights = trans * alpha
    return (weights[..., None] * zeta).sum(-2), weights.sum(-1)


def quadrature_weights(sigma, delta):
    sigma = torch.as_tensor(sigma)
    tau = sigma * torch.as_tensor(delta, dtype=sigma.dtype)
    acc = torch.cumsum(tau, -1)
    trans = torch.exp(-torch.cat([torch.zeros_like(acc[..., :1]), acc[..., :-1]], -1))
    return trans * -torch.expm1(-tau)


@dataclass
class AppearanceFeatureImage:
    features: torch.Tensor  # (C, H, W)
    alpha: torch.Tensor  # (H, W)


def render_feature_image(batch: RaySampleBatch, net: RadianceField, chunk: int = 4096,
                         max_distance: float | None = None) -> AppearanceFeatureImage:
    """Evaluate the field on a filled batch and composite into the feature grid.

    `chunk` is the number of rays per field evaluation; results do not depend on it.
    With `max_distance`, samples farther than that from the body surface have
    zero density, so the field only lives in a shell around the body.
    """
    if chunk < 1:
        raise ConfigurationError("chunk must be positive")
    h, w = batch.resolution
    s = batch.n_samples
    hit = batch.hit_index
    ref = batch.f_s if batch.f_s is not None else next(net.parameters())
    c = net.zeta_dim
    feats = ref.new_zeros(h * w, c)
    alpha = ref.new_zeros(h * w)
    if len(hit) == 0:
        return AppearanceFeatureImage(feats.T.reshape(c, h, w), alpha.reshape(h, w))
    inp = field_input(batch.f_s, batch.f_d, batch.x_b).view(len(hit), s, FIELD_INPUT_DIM)
    deltas = torch.as_tensor(batch.deltas, dtype=ref.dtype)
    out_f, out_a = [], []
    for a in range(0, len(hit), chunk):
        x = inp[a:a + chunk]
        sig, zeta = net(x.reshape(-1, FIELD_INPUT_DIM))
        if max_distance is not None:
            sig = torch.where(x.reshape(-1, FIELD_INPUT_DIM)[:, XB_DIM - 1] <= max_distance, sig, torch.zeros_like(sig))
        f, al = volume_render(sig.view(x.shape[0], s), zeta.view(x.shape[0], s, c), deltas[a:a + chunk])
        out_f.append(f)
        out_a.append(al)
    idx = torch.as_tensor(hit)
    feats = feats.index_copy(0, idx, torch.cat(out_f))
    alpha = alpha.index_copy(0, idx, torch.cat(out_a))
    return AppearanceFeatureImage(feats.T.reshape(c, h, w), alpha.reshape(h, w))
