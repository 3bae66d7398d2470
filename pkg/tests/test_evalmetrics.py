import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from conftest import tiny_model, tiny_train

from garment_nerf.errors import ConfigurationError
from garment_nerf.evalmetrics import (
    PSNR_CAP,
    AblationSettings,
    MetricReport,
    ablate,
    ablation_runs,
    baseline_renderers,
    block_matching_flow,
    evaluate,
    evaluate_renderer,
    ground_truth_renderer,
    nearest_camera,
    perceptual,
    psnr,
    ssim,
    temporal_mean_images,
    tof,
)


def smooth_texture(shape, seed=0):
    img = gaussian_filter(np.random.default_rng(seed).random(shape), (1.5, 1.5, 0))
    return (img - img.min()) / (img.max() - img.min())


def test_identical_inputs():
    img = smooth_texture((32, 32, 3))
    assert psnr(img, img) == PSNR_CAP
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    assert perceptual(img, img) == 0.0
    video = [smooth_texture((32, 32, 3), s) for s in range(3)]
    assert tof(video, video) == 0.0


def test_psnr_twenty_db_on_uniform_error():
    a = np.full((16, 16, 3), 0.3)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-6
    assert abs(psnr(a, a - 0.1) - 20.0) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 0.5))
def test_psnr_matches_closed_form(e):
    a = np.zeros((4, 4, 3))
    assert abs(psnr(a, a + e) - (-20.0 * np.log10(e))) < 1e-9


def test_metric_shape_mismatch():
    with pytest.raises(ConfigurationError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ConfigurationError):
        tof([np.zeros((8, 8))], [np.zeros((8, 8))])
    with pytest.raises(ConfigurationError):
        tof([np.zeros((8, 8))] * 2, [np.zeros((8, 8))] * 3)


def test_ssim_drops_with_noise():
    img = smooth_texture((32, 32, 3))
    noisy = np.clip(img + np.random.default_rng(1).normal(0, 0.1, img.shape), 0, 1)
    assert ssim(noisy, img) < 0.9
    assert perceptual(noisy, img) > 0


@pytest.mark.parametrize("dx,dy", [(2, 0), (0, -3), (1, 1), (5, 0)])
def test_flow_recovers_translation(dx, dy):
    big = smooth_texture((80, 80, 3), seed=2)
    a = big[8:72, 8:72]
    b = np.roll(big, (dy, dx), axis=(0, 1))[8:72, 8:72]  # b(x + d) = a(x)
    flow = block_matching_flow(a, b)
    inner = flow[12:-12, 12:-12]
    assert np.median(inner[..., 0]) == pytest.approx(dx, abs=0.25)
    assert np.median(inner[..., 1]) == pytest.approx(dy, abs=0.25)


def test_static_content_has_zero_flow():
    a = smooth_texture((40, 40, 3), seed=3)
    assert (block_matching_flow(a, a) == 0).all()


def test_tof_detects_different_motion():
    big = smooth_texture((80, 80, 3), seed=4)
    still = [big[8:72, 8:72]] * 2
    moving = [big[8:72, 8:72], np.roll(big, 2, axis=1)[8:72, 8:72]]
    assert tof(moving, still) > 1.0


def test_report_round_trip(tmp_path):
    import csv
    import json

    r = MetricReport(meta={"k": 1})
    r.add("seen_motion", "ours", "psnr", 21.5)
    r.add("seen_motion", "temporal_mean", "psnr", 1 / 3)
    assert r.value("seen_motion", "ours", "psnr") == 21.5
    with pytest.raises(KeyError):
        r.value("seen_motion", "ours", "ssim")
    csv_path, json_path = r.write(tmp_path)
    rows = list(csv.DictReader(open(csv_path)))
    assert float(rows[1]["value"]) == 1 / 3  # repr keeps every bit
    assert json.loads(json_path.read_text())["meta"] == {"k": 1}


def test_temporal_mean_images(tiny_dataset):
    means = temporal_mean_images(tiny_dataset)
    s = tiny_dataset.splits["train"]
    name = tiny_dataset.camera("train", 1).name
    ref = np.mean([tiny_dataset.frames[t].image(name).astype(np.float64) for t in s.frames], 0)
    assert np.abs(means[1] - ref).max() < 1e-6


def test_baselines_apply_to_the_right_splits(tiny_dataset):
    b = baseline_renderers(tiny_dataset)
    assert sorted(b["temporal_mean"][1]) == ["seen_motion", "unseen_motion"]
    assert b["nearest_view"][1] == ["unseen_view"]
    c = nearest_camera(tiny_dataset, "novel", 0)
    assert c in tiny_dataset.splits["train"].cameras


def test_ground_truth_scores_perfectly(tiny_dataset):
    rep = evaluate_renderer(tiny_dataset, ground_truth_renderer(tiny_dataset), "gt", splits=("seen_motion",),
                            cameras=[0, 1], max_frames=2)
    assert rep.value("seen_motion", "gt", "psnr") == PSNR_CAP
    assert rep.value("seen_motion", "gt", "tof") == 0.0
    assert rep.value("seen_motion", "temporal_mean", "psnr") < PSNR_CAP
    methods = {r["method"] for r in rep.rows}
    assert methods == {"gt", "temporal_mean"}
    assert len(rep.rows) == 8


def test_missing_split_is_recorded(tiny_dataset):
    rep = evaluate_renderer(tiny_dataset, ground_truth_renderer(tiny_dataset), splits=("nope",),
                            with_baselines=False)
    assert rep.rows == [] and rep.meta["skipped_splits"] == ["nope"]


def test_ablation_cells(tiny_dataset):
    runs = ablation_runs(AblationSettings(), tiny_dataset)
    assert [r[0] for r in runs].count("features") == 4
    assert [r[0] for r in runs].count("views") == 4
    assert [r[0] for r in runs].count("history") == 3
    assert runs[4][3]["cameras"] == tiny_dataset.rig.subset(2)


def test_ablation_isolates_failures(tiny_dataset, tmp_path):
    calls = []

    def runner(mcfg, tcfg):
        calls.append((mcfg.k, tcfg.cameras))
        if mcfg.k == 1:
            raise RuntimeError("boom")
        return ground_truth_renderer(tiny_dataset)

    s = AblationSettings(iterations=1, views=(2,), ks=(0, 1), eval_cameras=(0,), max_frames=1)
    bundle = ablate(tiny_dataset, None, None, tiny_model(), tiny_train(), s, tmp_path, runner=runner)
    assert len(calls) == 4 + 1 + 2
    assert bundle.settings("features") == ["detail=off,dynamic=off", "detail=on,dynamic=off",
                                           "detail=off,dynamic=on", "detail=on,dynamic=on"]
    failed = [r for r in bundle.rows if r["status"] != "ok"]
    assert {r["setting"] for r in failed} == {"k=1"} and all(np.isnan(r["value"]) for r in failed)
    assert (tmp_path / "ablation.csv").exists()


def test_evaluation_is_bitwise_deterministic(tiny_dataset, tiny_generator, tmp_path):
    from garment_nerf.training import Trainer

    gen, tex = tiny_generator
    tr = Trainer(tiny_dataset, gen, tex, tiny_model(), tiny_train(iterations=1, checkpoint_every=1), tmp_path)
    tr.run()
    ck = tmp_path / "checkpoints" / "iter_000001.ckpt"
    kw = dict(splits=("seen_motion", "unseen_view"), cameras=[0], max_frames=2)
    a = evaluate(ck, tiny_dataset, **kw)
    b = evaluate(ck, tiny_dataset, **kw)
    assert a.rows == b.rows and a.meta == b.meta
    assert a.meta["iteration"] == 1
