import numpy as np
import pytest

from conftest import tiny_scene

from garment_nerf.errors import ConfigurationError, DomainError
from garment_nerf.geometry import make_body_template
from garment_nerf.synthdata import (
    BODY,
    GARMENT,
    GarmentConfig,
    Materials,
    MotionConfig,
    SceneObject,
    build_dataset,
    compute_mean_colors,
    garment_frame,
    generate_garment_frame,
    generate_motion,
    load_dataset,
    make_camera_rig,
    render_ground_truth,
    root_velocity_history,
    write_dataset,
)
from garment_nerf.synthdata.motion import relative_angle_deg


def test_rig_layout():
    rig = make_camera_rig(16, 3.2, 1.0, (32, 32))
    assert len(rig) == 16
    assert abs(rig.front.azimuth_deg) < 1e-9
    assert abs(rig.back.azimuth_deg - 180.0) < 1e-9
    centres = np.array([c.center for c in rig.cameras])
    assert np.allclose(np.linalg.norm(centres[:, [0, 2]], axis=1), 3.2)
    assert rig.subset(4) == [0, 4, 8, 12]
    assert rig.subset(99) == list(range(16))
    assert rig.from_dict(rig.to_dict()).back_index == rig.back_index
    with pytest.raises(ConfigurationError):
        make_camera_rig(1, 3.0, 1.0, (8, 8))


def test_novel_rig_interleaves():
    rig = make_camera_rig(8, 3.0, 1.0, (8, 8), azimuth_offset_deg=22.5, prefix="n")
    az = sorted(c.azimuth_deg for c in rig.cameras)
    assert np.allclose(np.diff(az), 45.0)
    assert az[0] == pytest.approx(22.5)
    assert rig[0].name == "n00"


def test_motion_is_deterministic_and_smooth():
    a = generate_motion(MotionConfig(seed=3), 60)
    b = generate_motion(MotionConfig(seed=3), 60)
    c = generate_motion(MotionConfig(seed=4), 60)
    assert all(np.array_equal(x.joint_rotations, y.joint_rotations) for x, y in zip(a.frames, b.frames))
    assert not np.array_equal(a.frames[10].joint_rotations, c.frames[10].joint_rotations)
    for f0, f1 in zip(a.frames, a.frames[1:]):
        for j in range(len(f0.joint_rotations)):
            assert relative_angle_deg(f0.joint_rotations[j], f1.joint_rotations[j]) <= 15.0 + 1e-6


def test_root_velocity_history_padding():
    m = generate_motion(MotionConfig(seed=0), 10)
    h = root_velocity_history(m, 1, 4)
    assert h.shape == (4, 3)
    assert np.allclose(h[0], m.at(1).root_transform[:3, 3] - m.at(0).root_transform[:3, 3])
    assert (h[1:] == 0).all()


def test_garment_static_vs_moving():
    body = make_body_template()
    pose = generate_motion(MotionConfig(seed=0), 2).at(0)
    cfg = GarmentConfig()
    still = garment_frame(pose, np.zeros((4, 3)), cfg, body)
    moving = garment_frame(pose, np.tile([0.02, 0.0, 0.0], (4, 1)), cfg, body)
    assert still.wrinkle_amplitude == 0.0 and (still.wrinkle == 0).all()
    assert moving.wrinkle_amplitude > 0
    assert len(still.mesh.triangles) == 2 * cfg.n_segments * (cfg.n_rings - 1)
    # the hem swings against the motion
    assert moving.mesh.vertices[-cfg.n_segments:, 0].mean() < still.mesh.vertices[-cfg.n_segments:, 0].mean()
    with pytest.raises(DomainError):
        generate_garment_frame(pose, np.zeros((1, 3)), cfg, body, k=2)


def test_render_labels_and_occlusion():
    from garment_nerf.camera import Camera
    from garment_nerf.geometry import Mesh

    cam = Camera.look_at([0, 0, 5], [0, 0, 0], 40, 32, 32)
    quad = lambda z, s: Mesh([[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]], [[0, 1, 2], [0, 2, 3]])  # noqa: E731
    near = SceneObject(quad(1.0, 0.3), GARMENT, np.tile([1.0, 0, 0], (4, 1)))
    far = SceneObject(quad(0.0, 1.0), BODY, np.tile([0, 1.0, 0], (4, 1)))
    img, mask, seg = render_ground_truth([far, near], cam, Materials(unshaded=True))
    assert seg[16, 16] == GARMENT and np.allclose(img[16, 16], [1, 0, 0])
    assert seg[16, 10] == BODY
    assert seg[0, 0] == 0 and not mask[0, 0] and (img[0, 0] == 0).all()
    assert np.array_equal(mask, seg != 0)


@pytest.fixture(scope="module")
def written(tiny_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    write_dataset(tiny_dataset, root)
    return root, load_dataset(root)


def test_dataset_splits(tiny_dataset):
    s = tiny_dataset.splits
    assert set(s) == {"train", "seen_motion", "unseen_view", "unseen_motion"}
    assert len(s["train"].frames) == 20
    assert not set(s["train"].frames) & set(s["seen_motion"].frames)
    assert set(s["unseen_view"].frames) <= set(s["train"].frames)
    assert s["unseen_view"].rig == "novel"
    assert s["unseen_motion"].motion != s["train"].motion
    assert len(s["unseen_motion"].frames) == 4
    # held-out frames lie inside the span of the training frames
    assert min(s["train"].frames) < min(s["seen_motion"].frames) and max(s["seen_motion"].frames) < max(s["train"].frames)


def test_dataset_is_deterministic(tiny_dataset):
    again = build_dataset(tiny_scene())
    for t, fr in tiny_dataset.frames.items():
        for cam, (rgb, seg) in fr.views.items():
            assert np.array_equal(again.frames[t].views[cam][0], rgb)
            assert np.array_equal(again.frames[t].views[cam][1], seg)


def test_every_view_shows_body_and_garment(tiny_dataset):
    for t, rig, c in tiny_dataset.views_of("train"):
        seg = tiny_dataset.frames[t].seg(tiny_dataset.camera(rig, c).name)
        assert (seg == BODY).any() and (seg == GARMENT).any()


def test_round_trip(tiny_dataset, written):
    _, ds = written
    assert ds.splits == tiny_dataset.splits
    assert ds.mean_colors == tiny_dataset.mean_colors
    assert np.array_equal(ds.template.canonical_mesh.vertices, tiny_dataset.template.canonical_mesh.vertices)
    assert np.array_equal(ds.template.skinning_weights, tiny_dataset.template.skinning_weights)
    for t, fr in tiny_dataset.frames.items():
        assert fr.body_mesh.equals(ds.frames[t].body_mesh)
        for cam, (rgb, seg) in fr.views.items():
            assert np.array_equal(ds.frames[t].views[cam][0], rgb)
            assert np.array_equal(ds.frames[t].views[cam][1], seg)
    for name, m in tiny_dataset.motions.items():
        assert all(np.array_equal(a.root_transform, b.root_transform) for a, b in zip(m.frames, ds.motions[name].frames))


def test_mask_disagreement_detected(written, tmp_path):
    import shutil

    from PIL import Image

    root, ds = written
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    t = ds.splits["train"].frames[0]
    cam = ds.camera("train", 0).name
    Image.fromarray(np.zeros_like(ds.frames[t].seg(cam))).save(copy / "frames" / str(t) / f"mask_{cam}.png")
    with pytest.raises(DomainError):
        load_dataset(copy)


def test_missing_dataset(tmp_path):
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nothing")


def test_mean_colours(tiny_dataset):
    g, b = compute_mean_colors(tiny_dataset, "train")
    assert len(g) == 3 and len(b) == 3
    # the default garment is blue, the body skin-toned
    assert g[2] > g[0] and b[0] > b[2]
