"""Loss terms, learning-rate schedule, checkpoints and the joint training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, TrainingAborted, UsageError
from .generator import ImageGenerator, NeuralTexture, parameter_checksum
from .model import Conditioner, GarmentModel, ModelConfig
from .palette import PaletteVector, init_palette
from .perceptual import PerceptualExtractor, perceptual_distance
from .tensorio import load_container, save_container

log = logging.getLogger(__name__)

TERMS = ("img", "vgg", "sp", "off", "p")


# ---------------------------------------------------------------- losses


@dataclass
class LossWeights:
    img: float = 1.0
    vgg: float = 0.1
    sp: float = 0.0002
    off: float = 0.03
    p: float = 0.001

    def as_dict(self) -> dict:
        return asdict(self)


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ConfigurationError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_img(image, image_gt, mask, mask_gt):
    """Mean L1 on colours plus mean L1 on the front mask."""
    _check_shapes(image, image_gt, "image")
    _check_shapes(mask, mask_gt, "mask")
    return (image - image_gt).abs().mean() + (mask - mask_gt).abs().mean()


def loss_vgg(image, image_gt, extractor: PerceptualExtractor):
    return perceptual_distance(image, image_gt, extractor)


def loss_sp(w):
    """Pushes the garment/body blending weight towards 0 or 1."""
    return (1.0 / (w * w + (1.0 - w) ** 2) - 1.0).abs().mean()


def loss_off(offsets):
    return (offsets * offsets).mean()


def loss_p(p, p_star):
    d = p - p_star
    return (d * d).mean()


def total_loss(terms: dict, weights: LossWeights):
    """Weighted sum of the named terms; returns (total, {name: float})."""
    w = weights.as_dict()
    total = 0.0
    breakdown = {}
    for name, value in terms.items():
        if name not in w:
            raise ConfigurationError(f"unknown loss term {name!r}")
        v = torch.as_tensor(value)
        if not torch.isfinite(v).all():
            raise TrainingAborted(f"non-finite loss term {name!r}: {v.detach().tolist()}")
        total = total + w[name] * value
        breakdown[name] = float(v.detach())
    return total, breakdown


# ---------------------------------------------------------------- schedule / config


@dataclass
class TrainConfig:
    iterations: int = 10000
    batch_size: int = 1
    lr_start: float = 5e-4
    lr_end: float = 5e-5
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    jitter: bool = False  # stratified jitter of ray samples
    ray_cache: int = 0  # cached (frame, camera) ray geometries; 0 disables
    cameras: list | None = None  # training-rig camera indices used for training; None = all
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.batch_size != 1:
            raise ConfigurationError("only batch size 1 is supported")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be positive")
        if not (0 < self.lr_end <= self.lr_start):
            raise ConfigurationError("need 0 < lr_end <= lr_start")


def learning_rate(iteration: int, config: TrainConfig) -> float:
    """Exponential decay from lr_start (iteration 0) to lr_end (iteration == iterations)."""
    f = iteration / config.iterations
    return config.lr_start * (config.lr_end / config.lr_start) ** f


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- checkpoints

_PREFIX = {"dynamic.": "encoder.dynamic.", "detail.": "encoder.detail.", "nerf.": "nerf.", "decomp.": "decomp.",
           "palette.": "palette."}


def _model_tensors(model: GarmentModel) -> dict:
    out = {}
    for k, v in model.state_dict().items():
        for src, dst in _PREFIX.items():
            if k.startswith(src):
                out[dst + k[len(src):]] = v.detach().cpu().numpy()
                break
        else:  # pragma: no cover - guarded by the architecture audit test
            raise ConfigurationError(f"unexpected parameter {k}")
    return out


def _optimizer_tensors(opt: torch.optim.Optimizer):
    sd = opt.state_dict()
    tensors = {}
    for idx, st in sd["state"].items():
        for name, val in st.items():
            tensors[f"optim.{idx}.{name}"] = torch.as_tensor(val).detach().cpu().numpy()
    groups = [{k: v for k, v in g.items()} for g in sd["param_groups"]]
    return tensors, groups


def save_checkpoint(path, model: GarmentModel, generator: ImageGenerator, texture: NeuralTexture,
                    optimizer: torch.optim.Optimizer | None, state: dict) -> Path:
    """Tensor container (+ a JSON training-state sidecar next to it). Written atomically."""
    path = Path(path)
    tensors = _model_tensors(model)
    tensors.update({f"generator.{k}": v.detach().cpu().numpy() for k, v in generator.state_dict().items()})
    tensors["texture"] = texture.values.detach().cpu().numpy()
    groups = None
    if optimizer is not None:
        opt_t, groups = _optimizer_tensors(optimizer)
        tensors.update(opt_t)
    meta = dict(state)
    meta["optimizer_groups"] = groups
    meta["generator"] = {"width_mult": generator.width_mult, "texture_channels": texture.channels,
                         "texture_resolution": list(texture.resolution)}
    tmp = path.with_name(path.name + ".tmp")
    save_container(tmp, tensors, meta)
    os.replace(tmp, path)
    sidecar = sidecar_path(path)
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    tmp.write_text(json.dumps(state, indent=2, sort_keys=True, default=str))
    os.replace(tmp, sidecar)
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


@dataclass
class LoadedCheckpoint:
    model: GarmentModel
    generator: ImageGenerator
    texture: NeuralTexture
    state: dict
    optimizer_tensors: dict
    optimizer_groups: list | None


def load_checkpoint(path) -> LoadedCheckpoint:
    tensors, meta = load_container(path)
    mcfg = ModelConfig(**meta["model_config"])
    p_star = tensors["palette._p_star"]
    model = GarmentModel(mcfg, PaletteVector(p_star[:3], p_star[3:]))
    inv = {v: k for k, v in _PREFIX.items()}
    state = {}
    for k, v in tensors.items():
        for dst, src in inv.items():
            if k.startswith(dst):
                state[src + k[len(dst):]] = torch.as_tensor(v)
    model.load_state_dict(state)
    g = meta["generator"]
    gen = ImageGenerator(int(g["texture_channels"]), float(g["width_mult"]))
    gen.load_state_dict({k[len("generator."):]: torch.as_tensor(v) for k, v in tensors.items()
                         if k.startswith("generator.")})
    tex = NeuralTexture(tuple(g["texture_resolution"]), int(g["texture_channels"]))
    with torch.no_grad():
        tex.values.copy_(torch.as_tensor(tensors["texture"]))
    tex.values.requires_grad_(False)
    opt = {k: v for k, v in tensors.items() if k.startswith("optim.")}
    st = {k: v for k, v in meta.items() if k not in ("optimizer_groups", "generator")}
    return LoadedCheckpoint(model, gen.freeze(), tex, st, opt, meta.get("optimizer_groups"))


def _restore_optimizer(opt: torch.optim.Optimizer, tensors: dict, groups: list):
    state = {}
    for key, val in tensors.items():
        _, idx, name = key.split(".", 2)
        state.setdefault(int(idx), {})[name] = torch.as_tensor(val)
    opt.load_state_dict({"state": state, "param_groups": groups})


# ---------------------------------------------------------------- training loop


def smoothed(values, window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


class Trainer:
    """Joint optimisation of the encoders, radiance field, decomposition head and palette.

    One (frame, training camera) pair per iteration, drawn from a generator
    seeded by (seed, iteration) so that a resumed run replays exactly.
    """

    def __init__(self, dataset, generator: ImageGenerator, texture: NeuralTexture, model_config: ModelConfig,
                 train_config: TrainConfig, out_dir=None, model: GarmentModel | None = None,
                 run_meta: dict | None = None):
        if not generator.frozen:
            raise UsageError("train requires a frozen image generator")
        if "train" not in dataset.splits:
            raise ConfigurationError("dataset has no training split")
        self.dataset = dataset
        self.generator = generator
        self.texture = texture
        self.mcfg = model_config
        self.tcfg = train_config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.run_meta = dict(run_meta or {})
        torch.manual_seed(train_config.seed)
        self.model = model or GarmentModel(model_config, init_palette(dataset))
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=train_config.lr_start)
        self.extractor = PerceptualExtractor()
        self.conditioner = Conditioner(dataset.template, dataset.motions, dataset.rig, generator, texture,
                                       model_config, max_rays=train_config.ray_cache)
        split = dataset.splits["train"]
        cams = split.cameras if train_config.cameras is None else [c for c in split.cameras
                                                                   if c in set(train_config.cameras)]
        if not cams:
            raise ConfigurationError("no training cameras selected")
        self.items = [(t, c) for t in split.frames for c in cams]
        self.iteration = 0
        self.history: list[dict] = []
        self.generator_checksum = self._frozen_checksum()
        self._targets: dict = {}

    def _frozen_checksum(self) -> str:
        return parameter_checksum(self.generator) + parameter_checksum(self.texture)

    @property
    def hash(self) -> str:
        return config_hash({"model": self.mcfg.to_dict(), "train": asdict(self.tcfg), **self.run_meta})

    def pick(self, iteration: int):
        rng = np.random.default_rng([self.tcfg.seed, iteration])
        t, c = self.items[int(rng.integers(len(self.items)))]
        return t, c, (rng if self.tcfg.jitter else None)

    def _target(self, t, cam_name):
        key = (t, cam_name)
        if key not in self._targets:
            fr = self.dataset.frames[t]
            img = torch.as_tensor(fr.image(cam_name)).permute(2, 0, 1).contiguous()
            mask = torch.as_tensor(fr.mask(cam_name), dtype=torch.float32)[None]
            self._targets[key] = (img, mask)
        return self._targets[key]

    def compute_loss(self, iteration: int):
        t, c, rng = self.pick(iteration)
        cam = self.dataset.camera("train", c)
        motion = self.dataset.splits["train"].motion
        ctx = self.conditioner.context(motion, t)
        geo = self.conditioner.ray_geometry(ctx, cam, rng)
        out = self.model(ctx, geo)
        img_gt, mask_gt = self._target(t, cam.name)
        terms = {
            "img": loss_img(out.image, img_gt, out.maps.mask, mask_gt),
            "vgg": loss_vgg(out.image, img_gt, self.extractor),
            "sp": loss_sp(out.maps.weight),
            "off": loss_off(out.maps.offsets),
            "p": loss_p(self.model.palette.p, self.model.palette.p_star),
        }
        return total_loss(terms, self.tcfg.weights)

    def step(self) -> dict:
        it = self.iteration
        lr = learning_rate(it, self.tcfg)
        for g in self.optimizer.param_groups:
            g["lr"] = lr
        self.model.train()
        total, breakdown = self.compute_loss(it)
        if not torch.isfinite(total):
            raise TrainingAborted(f"non-finite total loss at iteration {it}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        row = {"iteration": it, **breakdown, "total": float(total.detach()), "lr": lr}
        self.history.append(row)
        self.iteration += 1
        return row

    def state(self) -> dict:
        return {
            "iteration": self.iteration,
            "lr": learning_rate(self.iteration, self.tcfg),
            "seed": self.tcfg.seed,
            "config_hash": self.hash,
            "model_config": self.mcfg.to_dict(),
            "train_config": asdict(self.tcfg),
            "generator_checksum": self.generator_checksum,
            **self.run_meta,
        }

    def save(self, path=None) -> Path:
        if path is None:
            if self.out_dir is None:
                raise UsageError("no output directory configured")
            path = self.out_dir / "checkpoints" / f"iter_{self.iteration:06d}.ckpt"
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.model, self.generator, self.texture, self.optimizer, self.state())
        if self.out_dir is not None:
            (self.out_dir / "latest.txt").write_text(str(path.resolve()) + "\n")
        return path

    @classmethod
    def resume(cls, path, dataset, out_dir=None) -> "Trainer":
        ck = load_checkpoint(path)
        st = ck.state
        tcfg = TrainConfig(**st["train_config"])
        mcfg = ModelConfig(**st["model_config"])
        extra = {k: v for k, v in st.items() if k not in ("iteration", "lr", "seed", "config_hash", "model_config",
                                                          "train_config", "generator_checksum")}
        tr = cls(dataset, ck.generator, ck.texture, mcfg, tcfg, out_dir, model=ck.model, run_meta=extra)
        if ck.optimizer_groups is not None:
            _restore_optimizer(tr.optimizer, ck.optimizer_tensors, ck.optimizer_groups)
        tr.iteration = int(st["iteration"])
        return tr

    def _metrics_writer(self):
        path = self.out_dir / "metrics.csv"
        new = not path.exists()
        fh = open(path, "a", newline="")
        w = csv.DictWriter(fh, fieldnames=["iteration", *TERMS, "total", "lr"])
        if new:
            w.writeheader()
        return fh, w

    def run(self, until: int | None = None, progress=None) -> list:
        """Train up to `until` iterations (default: the configured total)."""
        until = self.tcfg.iterations if until is None else min(until, self.tcfg.iterations)
        fh = w = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            fh, w = self._metrics_writer()
        start = time.time()
        try:
            while self.iteration < until:
                row = self.step()
                if w is not None:
                    w.writerow({k: row[k] for k in ["iteration", *TERMS, "total", "lr"]})
                done = self.iteration
                if self.tcfg.log_every and done % self.tcfg.log_every == 0:
                    recent = [r["total"] for r in self.history[-self.tcfg.log_every:]]
                    log.info("iter %d loss %.4f lr %.2e (%.2fs/it)", done, float(np.mean(recent)), row["lr"],
                             (time.time() - start) / max(1, len(self.history)))
                    if fh is not None:
                        fh.flush()
                if progress is not None:
                    progress(row)
                if self.out_dir is not None and self.tcfg.checkpoint_every and done % self.tcfg.checkpoint_every == 0:
                    self.save()
        finally:
            if fh is not None:
                fh.close()
        if self._frozen_checksum() != self.generator_checksum:
            raise UsageError("frozen image generator or neural texture changed during training")
        if self.out_dir is not None and self.iteration % max(1, self.tcfg.checkpoint_every):
            self.save()
        return self.history


def read_metrics(path) -> list:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train(dataset, generator, texture, model_config: ModelConfig, train_config: TrainConfig, out_dir=None,
          run_meta: dict | None = None) -> Trainer:
    tr = Trainer(dataset, generator, texture, model_config, train_config, out_dir, run_meta=run_meta)
    tr.run()
    return tr

