"""Neural texture on the body surface and the frozen image generator that turns
rasterized texture images into reference RGB images."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .camera import Camera
from .encoders import UNetEncoder
from .errors import ConfigurationError, TrainingAborted, UsageError
from .geometry import BodyTemplate, Mesh, canonical_uv
from .perceptual import PerceptualExtractor, perceptual_distance
from .raster import rasterize_mesh
from .tensorio import load_container, save_container

log = logging.getLogger(__name__)

NEURAL_TEXTURE_CHANNELS = 16


class NeuralTexture(nn.Module):
    """Learnable (C, H, W) grid in the body's UV space."""

    def __init__(self, resolution=(128, 128), channels: int = NEURAL_TEXTURE_CHANNELS, seed: int = 0):
        super().__init__()
        h, w = resolution
        if h <= 0 or w <= 0 or channels <= 0:
            raise ConfigurationError("neural texture needs positive resolution and channels")
        gen = torch.Generator().manual_seed(seed)
        self.values = nn.Parameter(torch.randn(channels, h, w, generator=gen) * 0.1)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def resolution(self):
        return tuple(self.values.shape[1:])

    def sample(self, uv: torch.Tensor) -> torch.Tensor:
        """Bilinear lookup at (N, 2) UV coordinates -> (N, C)."""
        grid = (uv * 2.0 - 1.0).to(self.values.dtype).view(1, 1, -1, 2)
        out = F.grid_sample(self.values[None], grid, mode="bilinear", padding_mode="border", align_corners=False)
        return out[0, :, 0].T


@dataclass
class BodyPixels:
    """Body coverage of one camera: mask, per-pixel UV, and depth (inf off the body)."""

    mask: np.ndarray
    uv: np.ndarray  # (N, 2) for the covered pixels, row-major order
    depth: np.ndarray


def body_pixels(posed: Mesh, template: BodyTemplate, camera: Camera) -> BodyPixels:
    frag = rasterize_mesh(posed, camera)
    cov = frag.mask
    uv = canonical_uv(template, frag.tri_id[cov], frag.bary[cov])
    return BodyPixels(cov, uv, frag.depth)


@dataclass
class NeuralImage:
    values: torch.Tensor  # (C, H, W); zero off the body
    mask: np.ndarray  # (H, W) bool body coverage
    camera_name: str = ""

    @property
    def resolution(self):
        return tuple(self.values.shape[1:])


def render_neural_texture(posed: Mesh, template: BodyTemplate, texture: NeuralTexture, camera: Camera,
                          pixels: BodyPixels | None = None) -> NeuralImage:
    pixels = pixels or body_pixels(posed, template, camera)
    h, w = camera.resolution
    c = texture.channels
    flat_idx = torch.as_tensor(np.flatnonzero(pixels.mask.ravel()))
    sampled = texture.sample(torch.as_tensor(pixels.uv))
    out = torch.zeros(h * w, c, dtype=texture.values.dtype)
    out = out.index_copy(0, flat_idx, sampled)
    return NeuralImage(out.T.reshape(c, h, w), pixels.mask, camera.name)


class ImageGenerator(nn.Module):
    """Image-translation U-Net (neural texture image -> RGB) with a freeze flag."""

    def __init__(self, in_channels: int = NEURAL_TEXTURE_CHANNELS, width_mult: float = 1.0):
        super().__init__()
        self.net = UNetEncoder(in_channels, 3, head="sigmoid", width_mult=width_mult)
        self.width_mult = width_mult
        self.frozen = False

    def freeze(self) -> "ImageGenerator":
        for p in self.parameters():
            p.requires_grad_(False)
            p.grad = None
        self.frozen = True
        self.eval()
        return self

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        return self.net(q)


def generate_reference(gen: ImageGenerator, q) -> torch.Tensor:
    """Reference RGB image (3, H, W) in [0, 1] from a neural image."""
    if not gen.frozen:
        raise UsageError("the image generator must be frozen before inference")
    values = q.values if isinstance(q, NeuralImage) else q
    with torch.no_grad():
        return gen(values[None])[0]


def parameter_checksum(module: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- pre-training


@dataclass
class GeneratorSchedule:
    steps: int = 2000
    lr: float = 1e-3
    views: str = "reference"  # reference (front + back) | all
    frames: list | None = None  # training frames used; None = all
    perceptual_weight: float = 0.1
    texture_resolution: tuple = (128, 128)
    texture_channels: int = NEURAL_TEXTURE_CHANNELS
    width_mult: float = 0.5
    seed: int = 0
    log_every: int = 100
    history: list = field(default_factory=list)  # filled with (step, l1, total)


def _pretrain_items(dataset, schedule: GeneratorSchedule):
    split = dataset.splits["train"]
    frames = split.frames if schedule.frames is None else list(schedule.frames)
    if schedule.views == "reference":
        cams = [dataset.rig.front_index, dataset.rig.back_index]
    elif schedule.views == "all":
        cams = list(split.cameras)
    else:
        raise ConfigurationError(f"unknown view set {schedule.views!r}")
    return [(t, c) for t in frames for c in cams]


def pretrain_generator(dataset, schedule: GeneratorSchedule | None = None):
    """Jointly fit neural texture + generator to ground-truth views; returns both, frozen."""
    schedule = schedule or GeneratorSchedule()
    torch.manual_seed(schedule.seed)
    texture = NeuralTexture(schedule.texture_resolution, schedule.texture_channels, seed=schedule.seed)
    gen = ImageGenerator(schedule.texture_channels, schedule.width_mult)
    extractor = PerceptualExtractor()
    items = _pretrain_items(dataset, schedule)
    if not items:
        raise ConfigurationError("no frames selected for generator pre-training")
    # rasterization is fixed per (frame, camera); cache it
    cache = {}
    for t, c in items:
        cam = dataset.camera("train", c)
        fr = dataset.frames[t]
        target = torch.as_tensor(fr.image(cam.name)).permute(2, 0, 1).contiguous()
        cache[(t, c)] = (body_pixels(fr.body_mesh, dataset.template, cam), cam, target)
    opt = torch.optim.Adam(list(texture.parameters()) + list(gen.parameters()), lr=schedule.lr)
    rng = np.random.default_rng(schedule.seed)
    for step in range(schedule.steps):
        t, c = items[rng.integers(len(items))]
        pixels, cam, target = cache[(t, c)]
        q = render_neural_texture(None, dataset.template, texture, cam, pixels)
        pred = gen(q.values[None])[0]
        l1 = (pred - target).abs().mean()
        loss = l1 + schedule.perceptual_weight * perceptual_distance(pred, target, extractor)
        if not torch.isfinite(loss):
            raise TrainingAborted(f"non-finite generator loss at step {step} (frame {t}, camera {c}): "
                                  f"l1={l1.item()}, total={loss.item()}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        schedule.history.append((step, l1.item(), loss.item()))
        if schedule.log_every and step % schedule.log_every == 0:
            log.info("generator step %d l1 %.4f total %.4f", step, l1.item(), loss.item())
    texture.values.requires_grad_(False)
    texture.values.grad = None
    return gen.freeze(), texture


def evaluate_generator_l1(gen: ImageGenerator, texture: NeuralTexture, dataset, items) -> float:
    """Mean L1 of generated reference images over (frame, camera) items."""
    errs = []
    for t, c in items:
        cam = dataset.camera("train", c)
        fr = dataset.frames[t]
        q = render_neural_texture(fr.body_mesh, dataset.template, texture, cam)
        pred = generate_reference(gen, q)
        target = torch.as_tensor(fr.image(cam.name)).permute(2, 0, 1)
        errs.append(float((pred - target).abs().mean()))
    return float(np.mean(errs)) if errs else math.nan


# ---------------------------------------------------------------- checkpoint I/O


def save_generator(path, gen: ImageGenerator, texture: NeuralTexture, meta: dict | None = None) -> None:
    tensors = {f"generator.{k}": v.detach().numpy() for k, v in gen.state_dict().items()}
    tensors["texture"] = texture.values.detach().numpy()
    info = {"width_mult": gen.width_mult, "texture_channels": texture.channels,
            "texture_resolution": list(texture.resolution), **(meta or {})}
    save_container(path, tensors, info)


def load_generator(path):
    """Returns (frozen generator, texture, meta)."""
    tensors, meta = load_container(path)
    gen = ImageGenerator(int(meta["texture_channels"]), float(meta["width_mult"]))
    state = {k[len("generator."):]: torch.as_tensor(v) for k, v in tensors.items() if k.startswith("generator.")}
    gen.load_state_dict(state)
    texture = NeuralTexture(tuple(meta["texture_resolution"]), int(meta["texture_channels"]))
    with torch.no_grad():
        texture.values.copy_(torch.as_tensor(tensors["texture"]))
    texture.values.requires_grad_(False)
    texture.values.grad = None
    return gen.freeze(), texture, meta
