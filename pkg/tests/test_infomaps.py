import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from garment_nerf.errors import ConfigurationError, DomainError
from garment_nerf.geometry import PoseFrame, make_body_template, make_sphere_template, pose_body, rigid, yaw_rotation
from garment_nerf.infomaps import HistoryWindow, normal_map, rasterize_uv, velocity_map


@pytest.fixture(scope="module")
def body():
    return make_body_template()


@pytest.fixture(scope="module")
def sphere():
    return make_sphere_template()


def test_constant_attribute(body):
    r = rasterize_uv(body, np.tile([0.25, -1.0, 3.0], (len(body.canonical_mesh.vertices), 1)), (64, 64))
    assert r.data.shape == (64, 64, 3)
    assert np.abs(r.data[r.validity] - [0.25, -1.0, 3.0]).max() < 1e-12
    assert (r.data[~r.validity] == 0).all()
    assert 0.2 < r.validity.mean() < 1.0


def test_identity_rasterization_reproduces_texel_centres(body):
    h = w = 64
    r = rasterize_uv(body, body.uv_coords, (h, w))
    i, j = np.nonzero(r.validity)
    centre = np.column_stack([(j + 0.5) / w, (i + 0.5) / h])
    assert np.abs(r.data[i, j] - centre).max() <= 1.0 / w


def test_full_resolution_shape(body):
    posed = pose_body(body, PoseFrame.identity(body.n_joints))
    assert normal_map(posed, body, (128, 128)).data.shape == (128, 128, 3)


def test_bad_resolution(body):
    with pytest.raises(ConfigurationError):
        rasterize_uv(body, body.uv_coords, (0, 16))


def test_attribute_length_mismatch(body):
    with pytest.raises(DomainError):
        rasterize_uv(body, np.zeros((3, 1)), (16, 16))


def test_sphere_normals_match_radial_direction(sphere):
    posed = pose_body(sphere, PoseFrame.identity(1))
    n = normal_map(posed, sphere, (128, 128))
    pos = rasterize_uv(sphere, posed.vertices, (128, 128))
    v = n.validity
    radial = pos.data[v] / np.linalg.norm(pos.data[v], axis=1, keepdims=True)
    cosang = np.clip(np.einsum("nc,nc->n", n.data[v], radial), -1, 1)
    assert np.degrees(np.arccos(cosang)).max() < 5.0
    norms = np.linalg.norm(n.data[v], axis=1)
    assert norms.min() >= 0.9 and norms.max() <= 1.0 + 1e-9


def test_root_alignment_cancels_yaw(body):
    rots = np.tile(np.eye(3), (body.n_joints, 1, 1))
    rots[3] = yaw_rotation(0.4)
    base = pose_body(body, PoseFrame(np.eye(4), rots))
    yaw = 1.1
    turned = pose_body(body, PoseFrame(rigid(yaw_rotation(yaw), [0.3, 0, -0.2]), rots))
    a = normal_map(base, body, (64, 64), root_yaw=0.0)
    b = normal_map(turned, body, (64, 64), root_yaw=yaw)
    assert np.abs(a.data - b.data).max() < 1e-4


def test_static_history_is_zero(body):
    v = body.canonical_mesh.vertices
    r = velocity_map(HistoryWindow([v, v, v]), body, (32, 32))
    assert r.data.shape == (32, 32, 6)
    assert (r.data == 0).all()


def test_rigid_translation_gives_constant_velocity(body):
    v = body.canonical_mesh.vertices
    d = np.array([0.01, -0.02, 0.03])
    window = HistoryWindow([v + 2 * d, v + d, v])
    r = velocity_map(window, body, (32, 32), align=False)
    for blk in range(2):
        assert np.abs(r.data[r.validity][:, 3 * blk:3 * blk + 3] - d).max() < 1e-5


def test_k2_full_resolution_channels(body):
    v = body.canonical_mesh.vertices
    assert velocity_map(HistoryWindow([v, v, v]), body, (128, 128)).data.shape == (128, 128, 6)


def test_k0_has_no_channels(body):
    v = body.canonical_mesh.vertices
    r = velocity_map(HistoryWindow([v]), body, (32, 32))
    assert r.data.shape == (32, 32, 0)


def test_history_vertex_mismatch(body):
    v = body.canonical_mesh.vertices
    with pytest.raises(DomainError):
        HistoryWindow([v, v[:-1]])


def test_validity_shared(body):
    v = body.canonical_mesh.vertices
    posed = pose_body(body, PoseFrame.identity(body.n_joints))
    assert np.array_equal(normal_map(posed, body, (48, 48)).validity,
                          velocity_map(HistoryWindow([v, v]), body, (48, 48)).validity)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3))
def test_velocity_linear_in_differences(seed, s):
    body = make_body_template()
    rng = np.random.default_rng(seed)
    v = body.canonical_mesh.vertices
    step = rng.normal(0, 0.01, v.shape)
    a = velocity_map(HistoryWindow([v + step, v], 0.3), body, (32, 32))
    b = velocity_map(HistoryWindow([v + s * step, v], 0.3), body, (32, 32))
    assert np.abs(b.data - s * a.data).max() < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-5, 5), st.floats(-5, 5))
def test_rasterization_commutes_with_affine_maps(seed, a, b):
    body = make_body_template()
    attr = np.random.default_rng(seed).normal(size=(len(body.canonical_mesh.vertices), 2))
    r0 = rasterize_uv(body, attr, (32, 32))
    r1 = rasterize_uv(body, a * attr + b, (32, 32))
    assert np.abs(r1.data[r1.validity] - (a * r0.data[r0.validity] + b)).max() < 1e-9
