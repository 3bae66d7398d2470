"""End-to-end model: per-frame conditioning, ray geometry, and the trainable networks."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .camera import Camera
from .encoders import FEATURE_CHANNELS, UNetEncoder
from .errors import ConfigurationError
from .generator import ImageGenerator, NeuralTexture, generate_reference, render_neural_texture
from .geometry import BodyTemplate, MotionSequence, pose_body, rigid, yaw_rotation
from .infomaps import HistoryWindow, normal_map, velocity_map
from .nerf import (
    ZETA_DIM,
    AppearanceFeatureImage,
    RadianceField,
    RaySampleBatch,
    ReferenceView,
    SampleGeometry,
    body_bounds,
    fill_batch,
    reference_view,
    render_feature_image,
    sample_geometry,
    sample_rays,
)
from .palette import DecompositionMaps, DecompositionNet, PaletteVector, composite, decompose

UPSAMPLE = 4  # decomposition head upsampling factor


@dataclass
class ModelConfig:
    k: int = 2  # history frames in the velocity map
    uv_resolution: int = 64
    image_size: int = 128
    n_samples: int = 32
    margin: float = 0.3  # sampling-box dilation, fraction of body height
    max_distance: float | None = 0.1  # density shell around the body (scene units); None = unbounded
    encoder_width: float = 0.5
    nerf_width: int = 128
    nerf_depth: int = 6
    zeta_dim: int = ZETA_DIM
    decomp_hidden: int = 64
    pe_freqs: int = 0
    density_bias: float = 2.0  # initial density-head bias
    use_dynamic: bool = True
    use_detail: bool = True
    align_root: bool = True  # express normals / velocities in the body's heading frame
    follow_body: bool = False  # reference cameras turn with the body instead of staying fixed
    chunk: int = 4096

    @property
    def feature_size(self) -> int:
        if self.image_size % UPSAMPLE:
            raise ConfigurationError(f"image size must be a multiple of {UPSAMPLE}")
        return self.image_size // UPSAMPLE

    @classmethod
    def full(cls, **kw) -> "ModelConfig":
        base = dict(uv_resolution=128, image_size=512, n_samples=64, encoder_width=1.0, nerf_width=256,
                    decomp_hidden=64)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- conditioning


@dataclass(eq=False)
class FrameContext:
    """Everything about one body frame that does not depend on trainable weights."""

    motion: str
    index: int
    posed: object  # Mesh
    normal: torch.Tensor  # (3, U, U)
    velocity: torch.Tensor  # (3k, U, U)
    front: ReferenceView
    back: ReferenceView
    ref_front: torch.Tensor  # (3, H, W) generated reference image
    ref_back: torch.Tensor
    bounds: tuple


@dataclass(eq=False)
class RayGeometry:
    batch: RaySampleBatch
    samples: SampleGeometry


def reference_cameras(rig, pose, follow: bool, size: int):
    front, back = rig.front, rig.back
    if follow:
        root = pose.root_transform[:3, 3]
        m = rigid(yaw_rotation(pose.root_yaw), np.array([root[0], 0.0, root[2]]))
        front, back = front.transformed(m), back.transformed(m)
    return front.scaled(size, size), back.scaled(size, size)


class Conditioner:
    """Builds and caches frame contexts and ray geometry for one scene.

    The image generator is frozen, so reference images are computed once per frame.
    """

    def __init__(self, template: BodyTemplate, motions: dict, rig, generator: ImageGenerator,
                 texture: NeuralTexture, config: ModelConfig, max_frames: int = 512, max_rays: int = 0):
        if not generator.frozen:
            raise ConfigurationError("the image generator must be frozen")
        self.template = template
        self.motions = motions
        self.rig = rig
        self.generator = generator
        self.texture = texture
        self.config = config
        self.max_frames = max_frames
        self.max_rays = max_rays
        self._frames: OrderedDict = OrderedDict()
        self._rays: OrderedDict = OrderedDict()
        self.ray_hits = 0
        self.ray_misses = 0

    def _posed(self, motion: MotionSequence, t: int):
        t = max(t, motion.first_index)
        return pose_body(self.template, motion.at(t))

    def context(self, motion_name: str, t: int) -> FrameContext:
        key = (motion_name, t)
        if key in self._frames:
            self._frames.move_to_end(key)
            return self._frames[key]
        ctx = self._build(motion_name, t)
        self._frames[key] = ctx
        if len(self._frames) > self.max_frames:
            self._frames.popitem(last=False)
        return ctx

    def _build(self, motion_name: str, t: int) -> FrameContext:
        cfg = self.config
        motion = self.motions[motion_name]
        pose = motion.at(t)
        posed = self._posed(motion, t)
        yaw = pose.root_yaw if cfg.align_root else None
        res = (cfg.uv_resolution, cfg.uv_resolution)
        n_map = normal_map(posed, self.template, res, yaw)
        history = [posed.vertices] + [self._posed(motion, t - i).vertices for i in range(1, cfg.k + 1)]
        v_map = velocity_map(HistoryWindow(history, pose.root_yaw), self.template, res, align=cfg.align_root)
        cam_f, cam_b = reference_cameras(self.rig, pose, cfg.follow_body, cfg.image_size)
        front, back = reference_view(posed, cam_f), reference_view(posed, cam_b)
        with torch.no_grad():
            q_f = render_neural_texture(posed, self.template, self.texture, cam_f)
            q_b = render_neural_texture(posed, self.template, self.texture, cam_b)
            ref_f = generate_reference(self.generator, q_f)
            ref_b = generate_reference(self.generator, q_b)
        bounds = body_bounds(posed, self.template.height, cfg.margin)
        return FrameContext(motion_name, t, posed, torch.as_tensor(n_map.chw(), dtype=torch.float32),
                            torch.as_tensor(v_map.chw(), dtype=torch.float32), front, back, ref_f, ref_b, bounds)

    def ray_geometry(self, ctx: FrameContext, camera: Camera, rng=None) -> RayGeometry:
        """Ray samples and their body-relative lookups; cached when deterministic (rng is None)."""
        key = (ctx.motion, ctx.index, camera.name, tuple(camera.pose.ravel()))
        if rng is None and self.max_rays and key in self._rays:
            self._rays.move_to_end(key)
            self.ray_hits += 1
            return self._rays[key]
        self.ray_misses += 1
        cfg = self.config
        size = cfg.feature_size
        batch = sample_rays(camera, (size, size), cfg.n_samples, ctx.bounds, rng)
        samples = sample_geometry(batch.points.reshape(-1, 3), ctx.posed, self.template, ctx.front, ctx.back)
        geo = RayGeometry(batch, _compact(samples))
        if rng is None and self.max_rays:
            self._rays[key] = geo
            if len(self._rays) > self.max_rays:
                self._rays.popitem(last=False)
        return geo


def _compact(s: SampleGeometry) -> SampleGeometry:
    return SampleGeometry(s.canonical.astype(np.float32), s.distance.astype(np.float32), s.uv.astype(np.float32),
                          s.tag.astype(np.int8), s.ref_xy.astype(np.float32))


# ---------------------------------------------------------------- networks


@dataclass
class RenderOutput:
    image: torch.Tensor  # (3, H, W), unclamped
    maps: DecompositionMaps
    feature_image: AppearanceFeatureImage
    dynamic_features: torch.Tensor
    detail_front: torch.Tensor
    detail_back: torch.Tensor


class GarmentModel(nn.Module):
    """Dynamic encoder, detail encoder, radiance field, decomposition head and palette."""

    def __init__(self, config: ModelConfig, palette: PaletteVector):
        super().__init__()
        self.config = config
        self.dynamic = UNetEncoder(3 * (config.k + 1), FEATURE_CHANNELS, width_mult=config.encoder_width)
        self.detail = UNetEncoder(3, FEATURE_CHANNELS, width_mult=config.encoder_width)
        self.nerf = RadianceField(config.nerf_width, config.nerf_depth, config.zeta_dim, config.pe_freqs,
                                 config.density_bias)
        self.decomp = DecompositionNet(config.zeta_dim, config.decomp_hidden)
        self.palette = palette

    def encode(self, ctx: FrameContext):
        cfg = self.config
        if cfg.use_dynamic:
            f_s = self.dynamic(torch.cat([ctx.normal, ctx.velocity], 0)[None])[0]
        else:
            f_s = ctx.normal.new_zeros(FEATURE_CHANNELS, *ctx.normal.shape[-2:])
        if cfg.use_detail:
            f_d = self.detail(torch.stack([ctx.ref_front, ctx.ref_back]))
            f_front, f_back = f_d[0], f_d[1]
        else:
            f_front = f_back = ctx.ref_front.new_zeros(FEATURE_CHANNELS, *ctx.ref_front.shape[-2:])
        return f_s, f_front, f_back

    def forward(self, ctx: FrameContext, geo: RayGeometry, chunk: int | None = None) -> RenderOutput:
        f_s, f_front, f_back = self.encode(ctx)
        batch = fill_batch(geo.batch, geo.samples, f_s, f_front, f_back)
        feat = render_feature_image(batch, self.nerf, chunk or self.config.chunk, self.config.max_distance)
        batch.f_s = batch.f_d = batch.x_b = None  # geometry may be cached; drop graph references
        maps = decompose(feat, self.decomp)
        return RenderOutput(composite(maps, self.palette), maps, feat, f_s, f_front, f_back)


def render_view(model: GarmentModel, conditioner: Conditioner, motion: str, t: int, camera: Camera,
                chunk: int | None = None) -> RenderOutput:
    model.eval()
    with torch.no_grad():
        ctx = conditioner.context(motion, t)
        return model(ctx, conditioner.ray_geometry(ctx, camera), chunk)
