import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import volume_render_loop

from garment_nerf.camera import Camera
from garment_nerf.errors import ConfigurationError
from garment_nerf.geometry import PoseFrame, make_body_template, pose_body
from garment_nerf.nerf import (
    BACK,
    FIELD_INPUT_DIM,
    FRONT,
    RadianceField,
    body_bounds,
    fill_batch,
    quadrature_weights,
    ray_box,
    reference_view,
    render_feature_image,
    sample_geometry,
    sample_rays,
    select_reference_view,
    shifted_softplus,
    stratified_depths,
    volume_render,
)


@pytest.fixture(scope="module")
def scene():
    body = make_body_template()
    posed = pose_body(body, PoseFrame.identity(body.n_joints))
    front = Camera.look_at([0, 0.9, 3.0], [0, 0.9, 0], 40, 32, 32, "front")
    back = Camera.look_at([0, 0.9, -3.0], [0, 0.9, 0], 40, 32, 32, "back")
    return body, posed, reference_view(posed, front), reference_view(posed, back)


def test_two_sample_hand_case():
    sigma = torch.tensor([math.log(2.0), math.log(2.0)], dtype=torch.float64)
    zeta = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    feat, alpha = volume_render(sigma, zeta, torch.ones(2, dtype=torch.float64))
    assert abs(feat[0].item() - 0.5) < 1e-12 and abs(feat[1].item() - 0.25) < 1e-12
    assert abs(alpha.item() - 0.75) < 1e-12


def test_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = int(rng.integers(1, 12))
        sigma, delta = rng.uniform(0, 5, s), rng.uniform(0.01, 0.5, s)
        zeta = rng.normal(size=(s, 5))
        f, a = volume_render(torch.tensor(sigma), torch.tensor(zeta), torch.tensor(delta))
        f0, a0 = volume_render_loop(sigma, zeta, delta)
        assert np.abs(f.numpy() - f0).max() < 1e-12 and abs(a.item() - a0) < 1e-12


def test_zero_samples():
    f, a = volume_render(torch.zeros(3, 0), torch.zeros(3, 0, 7), torch.zeros(3, 0))
    assert f.shape == (3, 7) and a.shape == (3,) and (a == 0).all()


def test_zero_density_is_transparent():
    f, a = volume_render(torch.zeros(4), torch.ones(4, 2), torch.ones(4))
    assert (f == 0).all() and a.item() == 0


def test_weights_sum_to_alpha_on_random_rays():
    g = torch.Generator().manual_seed(1)
    sigma = torch.rand(10_000, 16, generator=g, dtype=torch.float64) * 20
    delta = torch.rand(10_000, 16, generator=g, dtype=torch.float64) * 0.3
    w = quadrature_weights(sigma, delta)
    _, alpha = volume_render(sigma, torch.ones(10_000, 16, 1, dtype=torch.float64), delta)
    assert (w >= 0).all()
    assert (w.sum(-1) - alpha).abs().max() < 1e-9
    assert alpha.max() <= 1 + 1e-6


def test_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(2)
    sigma = (torch.rand(3, 6, generator=g, dtype=torch.float64) * 3).requires_grad_()
    zeta = torch.randn(3, 6, 4, generator=g, dtype=torch.float64).requires_grad_()
    delta = torch.rand(3, 6, generator=g, dtype=torch.float64) * 0.5 + 0.05

    def fn(s, z):
        f, a = volume_render(s, z, delta)
        return (f * torch.arange(1, 5, dtype=torch.float64)).sum() + a.sum()

    assert torch.autograd.gradcheck(fn, (sigma, zeta), eps=1e-6, atol=1e-7, rtol=1e-3)


def test_shifted_softplus():
    x = torch.linspace(-5, 5, 11, dtype=torch.float64)
    assert torch.allclose(shifted_softplus(x), torch.log1p(torch.exp(x - 1)))
    assert (shifted_softplus(x) > 0).all()


def test_field_shapes_and_input_width():
    net = RadianceField(width=32)
    sigma, zeta = net(torch.randn(10, FIELD_INPUT_DIM))
    assert FIELD_INPUT_DIM == 20
    assert sigma.shape == (10,) and zeta.shape == (10, 128)
    assert (sigma >= 0).all()
    with pytest.raises(ConfigurationError):
        net(torch.randn(10, 19))


def test_positional_encoding_widens_internally():
    net = RadianceField(width=16, pe_freqs=3)
    assert net.trunk[0].in_features == 20 + 4 * 6
    assert net(torch.randn(4, 20))[1].shape == (4, 128)


def test_ray_box_and_stratification():
    o = np.array([[0.0, 0.0, -5.0], [0.0, 5.0, -5.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    near, far, hit = ray_box(o, d, -np.ones(3), np.ones(3))
    assert hit.tolist() == [True, False]
    assert near[0] == 4.0 and far[0] == 6.0
    depths, deltas = stratified_depths(near[:1], far[:1], 4)
    assert np.allclose(depths, [[4.25, 4.75, 5.25, 5.75]]) and np.allclose(deltas, 0.5)
    jd, _ = stratified_depths(near[:1], far[:1], 4, np.random.default_rng(0))
    assert (np.diff(jd) > 0).all() and (jd >= 4).all() and (jd <= 6).all()


def test_sample_rays_rejects_single_sample(scene):
    _, posed, front, _ = scene
    with pytest.raises(ConfigurationError):
        sample_rays(front.camera, (8, 8), 1, body_bounds(posed, 1.7))


def test_sample_rays_hit_the_box(scene):
    body, posed, front, _ = scene
    batch = sample_rays(front.camera, (16, 16), 8, body_bounds(posed, body.height))
    assert batch.hit.shape == (256,) and batch.hit.any()
    assert batch.points.shape == (batch.hit.sum(), 8, 3)
    lo, hi = body_bounds(posed, body.height)
    assert (batch.points >= lo - 1e-9).all() and (batch.points <= hi + 1e-9).all()


def test_view_selection(scene):
    body, posed, front, back = scene
    verts = posed.vertices
    normals = posed.vertex_normals
    i_front = np.argmax(verts[:, 2])
    i_back = np.argmin(verts[:, 2])
    tags = select_reference_view(verts[[i_front, i_back]], normals[[i_front, i_back]], front, back)
    assert tags.tolist() == [FRONT, BACK]


def test_view_selection_falls_back_to_normal(scene):
    _, _, front, back = scene
    far_away = np.array([[50.0, 0.0, 0.0], [50.0, 0.0, 0.0]])
    tags = select_reference_view(far_away, np.array([[0, 0, 1.0], [0, 0, -1.0]]), front, back)
    assert tags.tolist() == [FRONT, BACK]


def test_render_chunk_independent(scene):
    body, posed, front, back = scene
    batch = sample_rays(front.camera, (8, 8), 6, body_bounds(posed, body.height))
    geom = sample_geometry(batch.points.reshape(-1, 3), posed, body, front, back)
    torch.manual_seed(0)
    fs, ff, fb = torch.randn(8, 16, 16), torch.randn(8, 32, 32), torch.randn(8, 32, 32)
    fill_batch(batch, geom, fs, ff, fb)
    net = RadianceField(width=32)
    a = render_feature_image(batch, net, chunk=7)
    b = render_feature_image(batch, net, chunk=100_000)
    assert a.features.shape == (128, 8, 8)
    assert (a.features - b.features).abs().max() < 1e-6
    assert (a.alpha - b.alpha).abs().max() < 1e-6
    assert (a.alpha[~torch.as_tensor(batch.hit.reshape(8, 8))] == 0).all()
    with pytest.raises(ConfigurationError):
        render_feature_image(batch, net, chunk=0)


def test_feature_lookup_gradients_flow(scene):
    body, posed, front, back = scene
    batch = sample_rays(front.camera, (4, 4), 4, body_bounds(posed, body.height))
    geom = sample_geometry(batch.points.reshape(-1, 3), posed, body, front, back)
    fs = torch.randn(8, 16, 16, requires_grad=True)
    ff = torch.randn(8, 32, 32, requires_grad=True)
    fb = torch.randn(8, 32, 32, requires_grad=True)
    fill_batch(batch, geom, fs, ff, fb)
    out = render_feature_image(batch, RadianceField(width=16))
    out.features.sum().backward()
    assert fs.grad.abs().sum() > 0
    assert ff.grad.abs().sum() + fb.grad.abs().sum() > 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50), st.floats(1e-3, 1.0)), min_size=1, max_size=20))
def test_alpha_in_unit_interval(pairs):
    sigma = torch.tensor([p[0] for p in pairs], dtype=torch.float64)
    delta = torch.tensor([p[1] for p in pairs], dtype=torch.float64)
    w = quadrature_weights(sigma, delta)
    assert (w >= 0).all() and w.sum() <= 1 + 1e-9


def test_density_shell(scene):
    body, posed, front, back = scene
    batch = sample_rays(front.camera, (8, 8), 6, body_bounds(posed, body.height))
    geom = sample_geometry(batch.points.reshape(-1, 3), posed, body, front, back)
    torch.manual_seed(1)
    fill_batch(batch, geom, torch.randn(8, 16, 16), torch.randn(8, 32, 32), torch.randn(8, 32, 32))
    net = RadianceField(width=32).double()
    batch.f_s, batch.f_d, batch.x_b = batch.f_s.double(), batch.f_d.double(), batch.x_b.double()
    free = render_feature_image(batch, net)
    assert torch.equal(render_feature_image(batch, net, max_distance=1e9).features, free.features)
    empty = render_feature_image(batch, net, max_distance=-1.0)
    assert (empty.alpha == 0).all() and (empty.features == 0).all()
    md = 0.1
    shell = render_feature_image(batch, net, max_distance=md)
    # per-ray loop oracle with the out-of-shell samples zeroed
    s = batch.n_samples
    h = geom.distance.reshape(-1, s)
    assert (h >= 0).all()
    with torch.no_grad():
        sig, zeta = net(torch.cat([batch.x_b, batch.f_d, batch.f_s], -1))
    sig = sig.view(-1, s).numpy()
    zeta = zeta.view(-1, s, 128).numpy()
    for r, pix in enumerate(batch.hit_index):
        sg = np.where(h[r] <= md, sig[r], 0.0)
        f, a = volume_render_loop(sg, zeta[r], batch.deltas[r])
        i, j = divmod(pix, 8)
        assert abs(shell.alpha[i, j].item() - a) < 1e-9
        assert np.abs(shell.features[:, i, j].detach().numpy() - f).max() < 1e-9
    assert (shell.alpha <= free.alpha + 1e-12).all()


def test_density_bias_initialisation():
    assert RadianceField(width=8, density_bias=-3.0).sigma_head.bias.item() == -3.0
    net = RadianceField(width=8, density_bias=5.0)
    with torch.no_grad():
        sig, _ = net(torch.zeros(4, FIELD_INPUT_DIM))
    assert (sig > 1.0).all()
