"""Palette-based decomposition of the appearance feature image, compositing and recolouring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DomainError

OFFSET_CH, RADIANCE_CH, WEIGHT_CH, MASK_CH = 6, 3, 2, 1
DECOMP_CHANNELS = OFFSET_CH + RADIANCE_CH + WEIGHT_CH + MASK_CH


class PaletteVector(nn.Module):
    """Learnable base colours p = [p^G, p^B] with a frozen copy of their initial value."""

    def __init__(self, mu_garment, mu_body):
        super().__init__()
        init = torch.tensor(np.concatenate([np.asarray(mu_garment, dtype=np.float64).ravel(),
                                            np.asarray(mu_body, dtype=np.float64).ravel()]), dtype=torch.float32)
        if init.shape != (6,):
            raise DomainError("palette colours must be two RGB triples")
        if not torch.isfinite(init).all() or (init < 0).any() or (init > 1).any():
            raise DomainError("palette initialisation must lie in [0, 1]")
        self.p = nn.Parameter(init.clone())
        self.register_buffer("_p_star", init.clone())

    @property
    def p_star(self) -> torch.Tensor:
        out = self._p_star.clone()
        out.requires_grad_(False)
        return out

    @p_star.setter
    def p_star(self, value):
        raise AttributeError("p_star is fixed at construction")

    @property
    def garment(self) -> torch.Tensor:
        return self.p[:3]

    @property
    def body(self) -> torch.Tensor:
        return self.p[3:]


def init_palette(dataset, split: str = "train") -> PaletteVector:
    """Palette initialised to mean garment / body colours over a split's ground truth."""
    from .synthdata.dataset import compute_mean_colors

    mu_g, mu_b = compute_mean_colors(dataset, split)
    return PaletteVector(mu_g, mu_b)


@dataclass
class DecompositionMaps:
    offsets: torch.Tensor  # (6, H, W): o^G (0:3), o^B (3:6)
    radiance: torch.Tensor  # (3, H, W) >= 0
    weight_logits: torch.Tensor  # (2, H, W) raw
    mask: torch.Tensor  # (1, H, W) in [0, 1]

    @property
    def weight(self) -> torch.Tensor:
        """Scalar garment weight w (H, W): softmax channel 0."""
        return torch.softmax(self.weight_logits, 0)[0]

    @property
    def resolution(self):
        return tuple(self.mask.shape[-2:])


class DecompositionNet(nn.Module):
    """Two upsample-conv layers (x4 spatial) from the appearance feature image to 12 channels."""

    def __init__(self, in_channels: int = 128, hidden: int = 64):
        super().__init__()
        self.in_channels = in_channels
        self.up1 = nn.Conv2d(in_channels, hidden, 3, padding=1, padding_mode="replicate")
        self.up2 = nn.Conv2d(hidden, DECOMP_CHANNELS, 3, padding=1, padding_mode="replicate")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.leaky_relu(self.up1(x), 0.2)
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.up2(x)


def split_heads(raw: torch.Tensor) -> DecompositionMaps:
    o, r, w, m = torch.split(raw, [OFFSET_CH, RADIANCE_CH, WEIGHT_CH, MASK_CH], 0)
    return DecompositionMaps(torch.tanh(o), F.softplus(r), w, torch.sigmoid(m))


def decompose(features, net: DecompositionNet) -> DecompositionMaps:
    """features: (128, H, W) tensor or an AppearanceFeatureImage."""
    x = getattr(features, "features", features)
    if x.shape[0] != net.in_channels:
        raise ConfigurationError(f"decomposition expects {net.in_channels} channels, got {x.shape[0]}")
    return split_heads(net(x[None])[0])


def _palette_tensor(p):
    t = p.p if isinstance(p, PaletteVector) else torch.as_tensor(p)
    return t


def composite(maps: DecompositionMaps, p) -> torch.Tensor:
    """c = m * r * [w (p^G + o^G) + (1 - w) (p^B + o^B)], (3, H, W); no clamping."""
    pv = _palette_tensor(p).to(maps.mask.dtype)
    w = maps.weight[None]
    garment = pv[:3, None, None] + maps.offsets[:3]
    body = pv[3:, None, None] + maps.offsets[3:]
    return maps.mask * maps.radiance * (w * garment + (1.0 - w) * body)


def recolor(maps: DecompositionMaps, p, new_garment_color) -> torch.Tensor:
    pv = _palette_tensor(p).detach().clone()
    pv[:3] = torch.as_tensor(np.asarray(new_garment_color, dtype=np.float64), dtype=pv.dtype)
    return composite(maps, pv)
