"""Fixed multi-scale conv feature pyramid used for the perceptual loss and metric."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

BACKEND_RANDOM_CONV = "random-conv"


class PerceptualExtractor(nn.Module):
    """Seeded random-weight conv pyramid; parameters never train.

    Each stage is a 3x3 conv + ReLU; every stage after the first halves the
    resolution. `forward` returns the list of stage outputs (one per scale).
    """

    backend = BACKEND_RANDOM_CONV

    def __init__(self, channels=(16, 32, 64, 64), seed: int = 1234):
        super().__init__()
        if len(channels) < 3:
            raise ValueError("need at least 3 feature scales")
        gen = torch.Generator().manual_seed(seed)
        layers, prev = [], 3
        for i, c in enumerate(channels):
            conv = nn.Conv2d(prev, c, 3, stride=1 if i == 0 else 2, padding=1, padding_mode="replicate")
            with torch.no_grad():
                std = (2.0 / (prev * 9)) ** 0.5
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
                conv.bias.zero_()
            layers.append(conv)
            prev = c
        self.layers = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        return super().train(False)

    def forward(self, image: torch.Tensor) -> list:
        """image: (B, 3, H, W) or (3, H, W) in [0, 1]."""
        x = image if image.dim() == 4 else image[None]
        x = x * 2.0 - 1.0
        feats = []
        for conv in self.layers:
            x = F.relu(conv(x))
            feats.append(x)
        return feats


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, extractor: PerceptualExtractor) -> torch.Tensor:
    """Sum over scales of the mean L1 feature distance."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    fa, fb = extractor(a), extractor(b)
    return sum((x - y).abs().mean() for x, y in zip(fa, fb))
