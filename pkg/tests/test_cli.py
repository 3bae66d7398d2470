import csv

import pytest
import yaml

from garment_nerf.cli import frame_range, main, rgb255

TINY = {
    "scene": {"image_size": 64, "n_cameras": 4, "n_train_frames": 20, "n_unseen_frames": 4,
              "n_novel_view_frames": 3, "warmup_frames": 3},
    "model": {"uv_resolution": 32, "image_size": 64, "n_samples": 8, "encoder_width": 0.25, "nerf_width": 32,
              "decomp_hidden": 16},
    "generator": {"steps": 2, "texture_resolution": 32, "texture_channels": 4, "width_mult": 0.25},
    "train": {"iterations": 2, "checkpoint_every": 2, "log_every": 1},
    "ablation": {"iterations": 1, "views": [2], "ks": [0], "eval_cameras": [0], "max_frames": 1},
}


def test_no_arguments_is_a_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_and_bad_values():
    assert main(["frobnicate"]) == 2
    assert main(["render", "--ckpt", "x", "--frames", "5..1", "--camera", "0", "--out", "o"]) == 2
    assert main(["recolor", "--ckpt", "x", "--frames", "1", "--camera", "0", "--garment-color", "1,2",
                 "--out", "o"]) == 2


def test_argument_helpers():
    assert frame_range("3..5") == [3, 4, 5] and frame_range("7") == [7]
    assert rgb255("255,0,51") == (1.0, 0.0, 0.2)


def test_missing_dataset_and_bad_config(tmp_path, monkeypatch):
    monkeypatch.delenv("GARMENT_NERF_DATA", raising=False)
    assert main(["pretrain-generator", "--out", str(tmp_path / "g.ckpt")]) == 2
    (tmp_path / "bad.yaml").write_text("model: {nope: 1}\n")
    assert main(["gen-data", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "d")]) == 2
    assert main(["pretrain-generator", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "g.ckpt")]) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    data, gen, run = root / "data", root / "gen.ckpt", root / "run"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["pretrain-generator", "--config", str(cfg), "--data", str(data), "--out", str(gen)]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(data), "--gimg", str(gen), "--out", str(run)]) == 0
    return root, cfg, data, gen, run


def test_pipeline_artifacts(pipeline):
    root, _, data, gen, run = pipeline
    assert (data / "manifest.json").exists() and gen.exists()
    assert (root / "gen_history.csv").exists() and (root / "gen_history.png").exists()
    assert (run / "metrics.csv").exists() and (run / "training_curves.png").exists()
    assert (run / "config.yaml").exists() and (run / "checkpoints" / "iter_000002.ckpt").exists()


def test_render_and_recolor(pipeline):
    root, _, data, _, run = pipeline
    ck = str(run / "checkpoints" / "iter_000002.ckpt")
    out = root / "render"
    assert main(["render", "--ckpt", ck, "--data", str(data), "--frames", "4..5", "--camera", "1",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "frames.csv")))
    assert [int(r["frame"]) for r in rows] == [4, 5]
    assert (out / "frame_000004.png").exists() and (out / "mask_000005.png").exists()
    out = root / "recolor"
    assert main(["recolor", "--ckpt", ck, "--data", str(data), "--frames", "4", "--camera", "0",
                 "--garment-color", "200,30,30", "--out", str(out)]) == 0
    assert (out / "recolored_000004.png").exists() and (out / "recolor.png").exists()
    assert main(["render", "--ckpt", ck, "--data", str(data), "--frames", "4", "--camera", "99",
                 "--out", str(out)]) == 1


def test_eval_report(pipeline):
    root, _, data, _, run = pipeline
    out = root / "eval"
    ck = str(run / "checkpoints" / "iter_000002.ckpt")
    assert main(["eval", "--ckpt", ck, "--dataset", str(data), "--cameras", "0", "--max-frames", "2",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "report.csv")))
    assert {r["split"] for r in rows} == {"seen_motion", "unseen_view", "unseen_motion"}
    assert {r["method"] for r in rows} == {"ours", "temporal_mean", "nearest_view"}
    assert (out / "report.png").exists() and (out / "summary.yaml").exists()


def test_resume_and_ablate(pipeline):
    root, cfg, data, gen, run = pipeline
    out = root / "resumed"
    assert main(["train", "--resume", str(run / "checkpoints" / "iter_000002.ckpt"), "--data", str(data),
                 "--iterations", "3", "--out", str(out)]) == 0
    out = root / "ablate"
    assert main(["ablate", "--config", str(cfg), "--data", str(data), "--gimg", str(gen), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert {r["study"] for r in rows} == {"features", "views", "history"}
    assert (out / "ablation_psnr.png").exists()
