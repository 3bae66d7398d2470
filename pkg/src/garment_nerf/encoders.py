"""U-shaped convolutional encoders: dynamic (info maps -> F^s) and detail (reference image -> F^d)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError

FULL_WIDTHS = (64, 128, 256, 512)
FULL_BASE = 32
FEATURE_CHANNELS = 8


def _norm(c):
    # per-sample, per-channel normalisation (instance norm); needs at least 2x2 maps
    return nn.GroupNorm(c, c, affine=True)


def conv_block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode="replicate"),
        _norm(cout),
        nn.LeakyReLU(0.2),
    )


class UpBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = conv_block(cin, cout)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class UNetEncoder(nn.Module):
    """conv_in -> four stride-2 downs -> four upsampling convs with skip concatenation -> head.

    With the default widths this is the full-size schedule: base 32, downs to
    64/128/256/512 (16x spatial reduction), ups to 256/128/64/32.
    `width_mult` scales every width for small-scale runs.
    """

    def __init__(self, in_channels, out_channels=FEATURE_CHANNELS, base=FULL_BASE, widths=FULL_WIDTHS,
                 head="tanh", width_mult=1.0):
        super().__init__()
        scale = lambda c: max(1, int(round(c * width_mult)))
        base = scale(base)
        widths = [scale(w) for w in widths]
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.base = base
        self.widths = widths
        self.conv_in = conv_block(in_channels, base)
        downs, prev = [], base
        for w in widths:
            downs.append(conv_block(prev, w, stride=2))
            prev = w
        self.downs = nn.ModuleList(downs)
        up_out = list(reversed(widths[:-1])) + [base]  # 256, 128, 64, 32
        skips = list(reversed(widths[:-1]))  # d3, d2, d1 widths
        ups = [UpBlock(widths[-1], up_out[0])]
        for i in range(1, len(up_out)):
            ups.append(UpBlock(up_out[i - 1] + skips[i - 1], up_out[i]))
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(up_out[-1] + base, out_channels, 3, padding=1, padding_mode="replicate")
        self.head_activation = head

    @property
    def factor(self) -> int:
        return 2 ** len(self.downs)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h % self.factor or w % self.factor:
            raise ConfigurationError(f"spatial size {h}x{w} must be a multiple of {self.factor}")
        d0 = self.conv_in(x)
        feats = [d0]
        for down in self.downs:
            feats.append(down(feats[-1]))
        u = self.ups[0](feats[-1])
        for i, up in enumerate(self.ups[1:], start=1):
            u = up(torch.cat([u, feats[-1 - i]], 1))
        out = self.head(torch.cat([u, d0], 1))
        if self.head_activation == "tanh":
            return torch.tanh(out)
        if self.head_activation == "sigmoid":
            return torch.sigmoid(out)
        return out


@dataclass
class FeatureMap2D:
    data: torch.Tensor  # (C, H, W)
    tag: str  # dynamic | detail-front | detail-back | appearance

    @property
    def resolution(self):
        return tuple(self.data.shape[-2:])

    @property
    def channels(self):
        return self.data.shape[0]


def make_dynamic_encoder(k: int, width_mult: float = 1.0) -> UNetEncoder:
    return UNetEncoder(3 * (k + 1), FEATURE_CHANNELS, width_mult=width_mult)


def make_detail_encoder(width_mult: float = 1.0) -> UNetEncoder:
    return UNetEncoder(3, FEATURE_CHANNELS, width_mult=width_mult)


def _as_chw(x, dtype):
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x)
    return torch.as_tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)), dtype=dtype)


def encode_dynamic(normal_map, velocity_map, net: UNetEncoder) -> FeatureMap2D:
    """F^s from a normal raster and a velocity raster (UVRaster or (C, H, W) tensors)."""
    dtype = next(net.parameters()).dtype
    n = normal_map if isinstance(normal_map, torch.Tensor) else torch.as_tensor(normal_map.chw(), dtype=dtype)
    v = velocity_map if isinstance(velocity_map, torch.Tensor) else torch.as_tensor(velocity_map.chw(), dtype=dtype)
    if n.shape[-2:] != v.shape[-2:]:
        raise ConfigurationError(f"normal map {tuple(n.shape[-2:])} and velocity map {tuple(v.shape[-2:])} differ in size")
    if v.shape[0] % 3:
        raise ConfigurationError("velocity map channels must be a multiple of 3")
    x = torch.cat([n, v], 0)[None]
    return FeatureMap2D(net(x)[0], "dynamic")


def encode_detail(ref_image, net: UNetEncoder, tag: str = "detail-front") -> FeatureMap2D:
    """F^d from an RGB reference image ((H, W, 3) array or (3, H, W) tensor)."""
    dtype = next(net.parameters()).dtype
    x = _as_chw(ref_image, dtype)
    if x.shape[0] != 3:
        raise ConfigurationError(f"reference image must have 3 channels, got {x.shape[0]}")
    return FeatureMap2D(net(x[None])[0], tag)
