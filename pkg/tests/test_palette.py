import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import composite_pixel

from garment_nerf.errors import ConfigurationError, DomainError
from garment_nerf.palette import (
    DECOMP_CHANNELS,
    DecompositionMaps,
    DecompositionNet,
    PaletteVector,
    composite,
    decompose,
    init_palette,
    recolor,
    split_heads,
)


def random_maps(n, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return DecompositionMaps(
        offsets=torch.rand(6, 1, n, generator=g, dtype=dtype) * 2 - 1,
        radiance=torch.rand(3, 1, n, generator=g, dtype=dtype) * 2,
        weight_logits=torch.randn(2, 1, n, generator=g, dtype=dtype) * 3,
        mask=torch.rand(1, 1, n, generator=g, dtype=dtype),
    )


def test_composite_matches_scalar_formula():
    n = 100_000
    maps = random_maps(n)
    p = torch.rand(6, dtype=torch.float64)
    c = composite(maps, p)[:, 0].numpy()
    m, r, w, o = maps.mask[0, 0].numpy(), maps.radiance[:, 0].numpy(), maps.weight[0].numpy(), maps.offsets[:, 0].numpy()
    pv = p.numpy()
    idx = np.random.default_rng(0).choice(n, 2000, replace=False)
    ref = np.array([composite_pixel(m[i], r[:, i], w[i], o[:, i], pv) for i in idx]).T
    assert np.abs(c[:, idx] - ref).max() < 1e-6
    # vectorised form of the same formula over all 10^5 tuples
    full = m * r * (w * (pv[:3, None] + o[:3]) + (1 - w) * (pv[3:, None] + o[3:]))
    assert np.abs(c - full).max() < 1e-6


def test_recolor_delta():
    maps = random_maps(5000, seed=3)
    p = torch.rand(6, dtype=torch.float64)
    new = np.array([0.9, 0.1, 0.4])
    delta = recolor(maps, p, new) - composite(maps, p)
    expect = maps.mask * maps.radiance * maps.weight[None] * (torch.as_tensor(new)[:, None, None] - p[:3, None, None])
    assert (delta - expect).abs().max() < 1e-6


def test_recolor_invariant_where_mask_or_weight_is_zero():
    maps = random_maps(1000, seed=4)
    maps.mask[..., :300] = 0.0
    maps.weight_logits[0, :, 300:600] = -torch.inf
    maps.weight_logits[1, :, 300:600] = 0.0
    p = torch.rand(6, dtype=torch.float64)
    a = composite(maps, p)[..., :600]
    b = recolor(maps, p, [0.0, 1.0, 0.5])[..., :600]
    assert torch.equal(a, b)


def test_recolor_does_not_touch_palette():
    pal = PaletteVector([0.2, 0.3, 0.4], [0.5, 0.6, 0.7])
    before = pal.p.detach().clone()
    recolor(random_maps(10, dtype=torch.float32), pal, [1, 0, 0])
    assert torch.equal(pal.p.detach(), before)


def test_palette_validation_and_frozen_copy():
    with pytest.raises(DomainError):
        PaletteVector([0.2, 0.3], [0.5, 0.6, 0.7])
    with pytest.raises(DomainError):
        PaletteVector([0.2, 0.3, 1.5], [0.5, 0.6, 0.7])
    pal = PaletteVector([0.2, 0.3, 0.4], [0.5, 0.6, 0.7])
    with torch.no_grad():
        pal.p += 0.1
    assert torch.allclose(pal.p_star, torch.tensor([0.2, 0.3, 0.4, 0.5, 0.6, 0.7]))
    assert not pal.p_star.requires_grad
    with pytest.raises(AttributeError):
        pal.p_star = torch.zeros(6)
    assert torch.equal(pal.garment, pal.p[:3]) and torch.equal(pal.body, pal.p[3:])


def test_heads_ranges_and_shapes():
    net = DecompositionNet(128, hidden=8)
    maps = decompose(torch.randn(128, 6, 5), net)
    assert DECOMP_CHANNELS == 12
    assert maps.resolution == (24, 20)
    assert maps.offsets.shape == (6, 24, 20) and maps.radiance.shape == (3, 24, 20)
    assert maps.weight_logits.shape == (2, 24, 20) and maps.mask.shape == (1, 24, 20)
    assert (maps.offsets.abs() <= 1).all() and (maps.radiance >= 0).all()
    assert ((maps.mask >= 0) & (maps.mask <= 1)).all()
    assert ((maps.weight >= 0) & (maps.weight <= 1)).all()
    with pytest.raises(ConfigurationError):
        decompose(torch.randn(64, 6, 5), net)


def test_split_heads_channel_order():
    raw = torch.zeros(12, 1, 1)
    raw[6:9] = 5.0
    raw[9] = 2.0
    raw[11] = 10.0
    maps = split_heads(raw)
    assert (maps.offsets == 0).all()
    assert torch.allclose(maps.radiance, torch.nn.functional.softplus(torch.tensor(5.0)).expand(3, 1, 1))
    assert maps.weight.item() == pytest.approx(torch.sigmoid(torch.tensor(2.0)).item())
    assert maps.mask.item() == pytest.approx(torch.sigmoid(torch.tensor(10.0)).item())


def test_init_palette_from_mean_colours(tiny_dataset):
    from garment_nerf.synthdata.dataset import compute_mean_colors

    pal = init_palette(tiny_dataset)
    g, b = compute_mean_colors(tiny_dataset, "train")
    assert np.allclose(pal.p_star.numpy(), np.concatenate([g, b]), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_composite_linear_in_garment_colour(m, colour):
    maps = random_maps(50, seed=7)
    maps.mask[:] = m
    p = torch.rand(6, dtype=torch.float64)
    q = p.clone()
    q[:3] = torch.tensor(colour, dtype=torch.float64)
    mid = p.clone()
    mid[:3] = 0.5 * (p[:3] + q[:3])
    lhs = composite(maps, mid)
    rhs = 0.5 * (composite(maps, p) + composite(maps, q))
    assert (lhs - rhs).abs().max() < 1e-12
