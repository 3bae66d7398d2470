"""Image and video metrics, baselines, evaluation reports and the ablation harness."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from scipy.ndimage import uniform_filter
from skimage.metrics import structural_similarity

from .errors import ConfigurationError
from .perceptual import PerceptualExtractor, perceptual_distance

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
METRICS = ("psnr", "ssim", "perceptual", "tof")
DEFAULT_SPLITS = ("seen_motion", "unseen_view", "unseen_motion")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(image, image_gt) -> float:
    """Peak signal-to-noise ratio for images in [0, 1], capped at 99 dB."""
    a, b = _pair(image, image_gt)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def ssim(image, image_gt) -> float:
    """SSIM with an 11x11 Gaussian window (sigma 1.5) and the standard stabilisers; (H, W, 3) or (H, W)."""
    a, b = _pair(image, image_gt)
    kw = dict(data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    if a.ndim == 3:
        kw["channel_axis"] = -1
    return float(structural_similarity(a, b, **kw))


_EXTRACTOR: PerceptualExtractor | None = None


def default_extractor() -> PerceptualExtractor:
    global _EXTRACTOR
    if _EXTRACTOR is None:
        _EXTRACTOR = PerceptualExtractor()
    return _EXTRACTOR


def perceptual(image, image_gt, extractor: PerceptualExtractor | None = None) -> float:
    """Mean L1 feature distance summed over the extractor's scales; (H, W, 3) inputs."""
    a, b = _pair(image, image_gt)
    ex = extractor or default_extractor()
    ta = torch.as_tensor(a, dtype=torch.float32).permute(2, 0, 1)
    tb = torch.as_tensor(b, dtype=torch.float32).permute(2, 0, 1)
    with torch.no_grad():
        return float(perceptual_distance(ta, tb, ex))


def perceptual_label(extractor: PerceptualExtractor | None = None) -> str:
    return f"perceptual[{(extractor or default_extractor()).backend}]"


# ---------------------------------------------------------------- optical flow


def _gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(-1) if img.ndim == 3 else img


def _downsample(img):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean((1, 3))


def block_matching_flow(a, b, levels: int = 3, radius: int = 2, block: int = 7) -> np.ndarray:
    """Dense flow (H, W, 2) as (dx, dy) such that a(x) ~ b(x + flow).

    Coarse-to-fine integer block matching (sum of squared differences over a
    block x block window) with a parabolic sub-pixel refinement at full
    resolution. Ties prefer the smallest displacement, so static content yields
    exactly zero flow.
    """
    ga, gb = _gray(a), _gray(b)
    if ga.shape != gb.shape:
        raise ConfigurationError("flow inputs differ in shape")
    pyr = [(ga, gb)]
    for _ in range(levels - 1):
        x, y = pyr[-1]
        if min(x.shape) < 4 * block:
            break
        pyr.append((_downsample(x), _downsample(y)))
    flow = np.zeros(pyr[-1][0].shape + (2,), dtype=np.int64)
    for lvl in range(len(pyr) - 1, -1, -1):
        x, y = pyr[lvl]
        h, w = x.shape
        if flow.shape[:2] != (h, w):
            up = np.repeat(np.repeat(flow, 2, 0), 2, 1) * 2
            flow = np.zeros((h, w, 2), dtype=np.int64)
            flow[: up.shape[0], : up.shape[1]] = up[:h, :w]
        costs = _displacement_costs(x, y, flow, radius, block)
        best_c = np.full((h, w), np.inf)
        best_n = np.full((h, w), np.iinfo(np.int64).max)
        new = flow.copy()
        for (dx, dy), c in costs.items():
            allowed = (np.abs(dx - flow[..., 0]) <= radius) & (np.abs(dy - flow[..., 1]) <= radius)
            c = np.where(allowed, c, np.inf)
            n = abs(dx) + abs(dy)
            with np.errstate(invalid="ignore"):
                better = (c < best_c - 1e-12) | ((np.abs(c - best_c) <= 1e-12) & (n < best_n))
            best_c = np.where(better, c, best_c)
            best_n = np.where(better, n, best_n)
            new[better] = (dx, dy)
        flow = new
    out = flow.astype(np.float64)
    # parabolic sub-pixel refinement; exact matches stay on the integer grid
    for axis in (0, 1):
        unit = np.array([1, 0]) if axis == 0 else np.array([0, 1])
        cm = _lookup_cost(costs, flow - unit)
        cp = _lookup_cost(costs, flow + unit)
        den = cm - 2 * best_c + cp
        ok = np.isfinite(cm) & np.isfinite(cp) & (den > 1e-12) & (best_c > 1e-12)
        shift = np.where(ok, 0.5 * (cm - cp) / np.where(ok, den, 1.0), 0.0)
        out[..., axis] += np.clip(shift, -0.5, 0.5)
    return out


def _displacement_costs(x, y, flow, radius, block) -> dict:
    """Block SSD maps for every absolute displacement reachable from `flow` within `radius` (+1 for refinement)."""
    h, w = x.shape
    ii, jj = np.mgrid[0:h, 0:w]
    r = radius + 1
    out = {}
    for dy in range(int(flow[..., 1].min()) - r, int(flow[..., 1].max()) + r + 1):
        for dx in range(int(flow[..., 0].min()) - r, int(flow[..., 0].max()) + r + 1):
            yy = np.clip(ii + dy, 0, h - 1)
            xx = np.clip(jj + dx, 0, w - 1)
            out[(dx, dy)] = uniform_filter((x - y[yy, xx]) ** 2, size=block, mode="nearest")
    return out


def _lookup_cost(costs: dict, disp: np.ndarray) -> np.ndarray:
    out = np.full(disp.shape[:2], np.inf)
    for (dx, dy), c in costs.items():
        sel = (disp[..., 0] == dx) & (disp[..., 1] == dy)
        out[sel] = c[sel]
    return out


FlowEstimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def tof(video_a, video_b, flow: FlowEstimator = block_matching_flow) -> float:
    """Mean over consecutive frame pairs of the mean per-pixel L1 distance between the two videos' flows."""
    if len(video_a) != len(video_b):
        raise ConfigurationError(f"video lengths differ: {len(video_a)} vs {len(video_b)}")
    if len(video_a) < 2:
        raise ConfigurationError("tOF needs at least two frames")
    return tof_from_flows(video_flows(video_a, flow), video_flows(video_b, flow))


def video_flows(video, flow: FlowEstimator = block_matching_flow) -> list:
    return [flow(video[t], video[t + 1]) for t in range(len(video) - 1)]


def tof_from_flows(flows_a, flows_b) -> float:
    if len(flows_a) != len(flows_b):
        raise ConfigurationError("flow sequences differ in length")
    return float(np.mean([np.abs(fa - fb).sum(-1).mean() for fa, fb in zip(flows_a, flows_b)]))


# ---------------------------------------------------------------- reports


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # dicts: split, method, metric, value
    meta: dict = field(default_factory=dict)

    def add(self, split, method, metric, value):
        self.rows.append({"split": split, "method": method, "metric": metric, "value": float(value)})

    def value(self, split, method, metric) -> float:
        for r in self.rows:
            if (r["split"], r["method"], r["metric"]) == (split, method, metric):
                return r["value"]
        raise KeyError((split, method, metric))

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["split", "method", "metric", "value"])
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "value": repr(r["value"])})
        json_path = out / f"{stem}.json"
        json_path.write_text(json.dumps({"meta": self.meta, "rows": self.rows}, indent=2, sort_keys=True))
        return csv_path, json_path


# a renderer maps (split name, frame index, rig name, camera index) -> (H, W, 3) image in [0, 1]
Renderer = Callable[[str, int, str, int], np.ndarray]


def ground_truth_renderer(dataset) -> Renderer:
    def render(split, t, rig, c):
        return dataset.frames[t].image(dataset.camera(rig, c).name)

    return render


def temporal_mean_images(dataset) -> dict:
    """Per training camera, the mean ground-truth image over the training frames."""
    split = dataset.splits["train"]
    out = {}
    for c in split.cameras:
        name = dataset.camera("train", c).name
        acc = None
        for t in split.frames:
            img = dataset.frames[t].views[name][0].astype(np.float64)
            acc = img if acc is None else acc + img
        out[c] = (acc / len(split.frames) / 255.0).astype(np.float32)
    return out


def nearest_camera(dataset, rig: str, c: int) -> int:
    """Training camera whose centre is closest to the given camera's centre."""
    target = dataset.camera(rig, c).center
    train = dataset.splits["train"].cameras
    d = [np.linalg.norm(dataset.camera("train", k).center - target) for k in train]
    return train[int(np.argmin(d))]


def baseline_renderers(dataset) -> dict:
    """Checkpoint-independent comparators, keyed by method name, each with the splits it applies to."""
    means = None

    def temporal_mean(split, t, rig, c):
        nonlocal means
        if means is None:
            means = temporal_mean_images(dataset)
        return means[c]

    def nearest_view(split, t, rig, c):
        k = nearest_camera(dataset, rig, c)
        return dataset.frames[t].image(dataset.camera("train", k).name)

    train_frames = set(dataset.splits["train"].frames)
    out = {}
    for name, s in dataset.splits.items():
        if name == "train":
            continue
        if s.rig == "train":
            out.setdefault("temporal_mean", (temporal_mean, []))[1].append(name)
        elif all(t in train_frames for t in s.frames):
            out.setdefault("nearest_view", (nearest_view, []))[1].append(name)
    return out


def split_metrics(dataset, split: str, render: Renderer, cameras=None, extractor=None, with_tof: bool = True,
                  max_frames: int | None = None, flow_cache: dict | None = None) -> dict:
    """All metrics for one split, averaged over (frame, camera); tOF over each camera's frame sequence."""
    s = dataset.splits[split]
    cams = s.cameras if cameras is None else [c for c in s.cameras if c in set(cameras)]
    frames = s.frames if max_frames is None else s.frames[:max_frames]
    vals = {m: [] for m in ("psnr", "ssim", "perceptual")}
    tofs = []
    for c in cams:
        name = dataset.camera(s.rig, c).name
        preds, gts = [], []
        for t in frames:
            pred = np.clip(np.asarray(render(split, t, s.rig, c), dtype=np.float64), 0.0, 1.0)
            gt = dataset.frames[t].image(name).astype(np.float64)
            vals["psnr"].append(psnr(pred, gt))
            vals["ssim"].append(ssim(pred, gt))
            vals["perceptual"].append(perceptual(pred, gt, extractor))
            preds.append(pred)
            gts.append(gt)
        if with_tof and len(frames) >= 2:
            key = (split, c, tuple(frames))
            if flow_cache is None or key not in flow_cache:
                gt_flows = video_flows(gts)
                if flow_cache is not None:
                    flow_cache[key] = gt_flows
            else:
                gt_flows = flow_cache[key]
            tofs.append(tof_from_flows(video_flows(preds), gt_flows))
    out = {m: float(np.mean(v)) for m, v in vals.items()}
    if with_tof and tofs:
        out["tof"] = float(np.mean(tofs))
    return out


def evaluate_renderer(dataset, render: Renderer, method: str = "ours", splits=DEFAULT_SPLITS, cameras=None,
                      with_baselines: bool = True, with_tof: bool = True, max_frames: int | None = None,
                      meta: dict | None = None) -> MetricReport:
    report = MetricReport(meta=dict(meta or {}))
    report.meta["perceptual_backend"] = perceptual_label()
    flow_cache: dict = {}
    present = []
    for split in splits:
        if split not in dataset.splits:
            log.warning("split %r not in dataset; skipped", split)
            report.meta.setdefault("skipped_splits", []).append(split)
            continue
        present.append(split)
        for metric, v in split_metrics(dataset, split, render, cameras, with_tof=with_tof,
                                       max_frames=max_frames, flow_cache=flow_cache).items():
            report.add(split, method, metric, v)
    if with_baselines:
        for name, (fn, applies) in baseline_renderers(dataset).items():
            for split in present:
                if split in applies:
                    for metric, v in split_metrics(dataset, split, fn, cameras, with_tof=with_tof,
                                                   max_frames=max_frames, flow_cache=flow_cache).items():
                        report.add(split, name, metric, v)
    return report


def model_renderer(model, conditioner, dataset, chunk: int | None = None) -> Renderer:
    from .model import render_view

    def render(split, t, rig, c):
        cam = dataset.camera(rig, c)
        out = render_view(model, conditioner, dataset.splits[split].motion, t, cam, chunk)
        return out.image.clamp(0, 1).permute(1, 2, 0).numpy()

    return render


def evaluate(checkpoint, dataset, splits=DEFAULT_SPLITS, cameras=None, with_tof: bool = True,
             max_frames: int | None = None) -> MetricReport:
    """Metric report for a checkpoint path (or a LoadedCheckpoint) on the given splits, with baselines."""
    from .model import Conditioner
    from .training import load_checkpoint

    ck = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    cond = Conditioner(dataset.template, dataset.motions, dataset.rig, ck.generator, ck.texture, ck.model.config)
    meta = {k: ck.state.get(k) for k in ("config_hash", "seed", "iteration")}
    return evaluate_renderer(dataset, model_renderer(ck.model, cond, dataset), "ours", splits, cameras,
                             with_tof=with_tof, max_frames=max_frames, meta=meta)


# ---------------------------------------------------------------- ablations


@dataclass
class AblationSettings:
    iterations: int = 2000
    views: tuple = (2, 4, 8, 16)
    ks: tuple = (0, 1, 2)
    feature_toggles: tuple = ((False, False), (True, False), (False, True), (True, True))  # (detail, dynamic)
    eval_split: str = "seen_motion"
    eval_cameras: tuple | None = None
    max_frames: int | None = None
    with_tof: bool = False


@dataclass
class AblationBundle:
    rows: list = field(default_factory=list)  # study, setting, split, metric, value, status
    meta: dict = field(default_factory=dict)

    def table(self, study: str) -> list:
        return [r for r in self.rows if r["study"] == study]

    def settings(self, study: str) -> list:
        seen = []
        for r in self.table(study):
            if r["setting"] not in seen:
                seen.append(r["setting"])
        return seen

    def write(self, out_dir, stem: str = "ablation") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["study", "setting", "split", "metric", "value", "status"])
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "value": repr(r["value"])})
        (out / f"{stem}.json").write_text(json.dumps({"meta": self.meta, "rows": self.rows}, indent=2,
                                                     sort_keys=True))
        return path


def ablation_runs(settings: AblationSettings, dataset):
    """(study, setting label, model overrides, train overrides) for every ablation cell."""
    runs = []
    for detail, dynamic in settings.feature_toggles:
        label = f"detail={'on' if detail else 'off'},dynamic={'on' if dynamic else 'off'}"
        runs.append(("features", label, {"use_detail": detail, "use_dynamic": dynamic}, {}))
    for n in settings.views:
        runs.append(("views", f"views={n}", {}, {"cameras": dataset.rig.subset(n)}))
    for k in settings.ks:
        runs.append(("history", f"k={k}", {"k": k}, {}))
    return runs


def ablate(dataset, generator, texture, model_config, train_config, settings: AblationSettings | None = None,
           out_dir=None, runner=None) -> AblationBundle:
    """Train and evaluate every ablation cell; a failing cell is recorded and the sweep continues.

    `runner(model_config, train_config) -> Renderer` can replace the default train-then-render path.
    """
    from dataclasses import replace

    from .model import Conditioner
    from .training import Trainer

    settings = settings or AblationSettings()

    def default_runner(mcfg, tcfg):
        tr = Trainer(dataset, generator, texture, mcfg, tcfg)
        tr.run()
        cond = Conditioner(dataset.template, dataset.motions, dataset.rig, generator, texture, mcfg)
        return model_renderer(tr.model, cond, dataset)

    runner = runner or default_runner
    bundle = AblationBundle(meta={"iterations": settings.iterations, "eval_split": settings.eval_split,
                                  "perceptual_backend": perceptual_label()})
    metric_names = ["psnr", "ssim", "perceptual"] + (["tof"] if settings.with_tof else [])
    for study, label, m_over, t_over in ablation_runs(settings, dataset):
        log.info("ablation %s / %s", study, label)
        try:
            mcfg = replace(model_config, **m_over)
            tcfg = replace(train_config, iterations=settings.iterations, **t_over)
            render = runner(mcfg, tcfg)
            vals = split_metrics(dataset, settings.eval_split, render, settings.eval_cameras,
                                 with_tof=settings.with_tof, max_frames=settings.max_frames)
            for metric in metric_names:
                bundle.rows.append({"study": study, "setting": label, "split": settings.eval_split,
                                    "metric": metric, "value": vals[metric], "status": "ok"})
        except Exception as exc:  # isolate the failing cell
            log.error("ablation cell %s / %s failed: %s", study, label, exc)
            for metric in metric_names:
                bundle.rows.append({"study": study, "setting": label, "split": settings.eval_split,
                                    "metric": metric, "value": float("nan"), "status": f"failed: {exc}"})
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle
