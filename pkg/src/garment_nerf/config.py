"""Run configuration: one YAML document covering scene, model, schedules and paths.

Unknown keys are rejected. `scale: full` switches resolution and width
defaults to full size before the document's own values are applied; the
default `scale: desk` keeps everything small enough for a CPU.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .evalmetrics import DEFAULT_SPLITS, AblationSettings
from .generator import GeneratorSchedule
from .model import ModelConfig
from .synthdata.dataset import SceneConfig
from .training import TrainConfig, config_hash

SCALES = ("desk", "full")


@dataclass
class GeneratorConfig:
    steps: int = 1500
    lr: float = 1e-3
    views: str = "reference"  # reference | all
    n_frames: int | None = None  # first n training frames; None = all
    perceptual_weight: float = 0.1
    texture_resolution: int = 128
    texture_channels: int = 16
    width_mult: float = 0.5
    seed: int = 0

    def schedule(self, dataset) -> GeneratorSchedule:
        frames = None if self.n_frames is None else dataset.splits["train"].frames[: self.n_frames]
        return GeneratorSchedule(steps=self.steps, lr=self.lr, views=self.views, frames=frames,
                                 perceptual_weight=self.perceptual_weight,
                                 texture_resolution=(self.texture_resolution, self.texture_resolution),
                                 texture_channels=self.texture_channels, width_mult=self.width_mult, seed=self.seed)


@dataclass
class EvalConfig:
    splits: tuple = DEFAULT_SPLITS
    cameras: tuple | None = None  # camera indices; None = every camera of the split
    max_frames: int | None = None
    with_tof: bool = True


@dataclass
class AblationConfig:
    iterations: int = 2000
    views: tuple = (2, 4, 8, 16)
    ks: tuple = (0, 1, 2)
    eval_split: str = "seen_motion"
    eval_cameras: tuple | None = None
    max_frames: int | None = None
    with_tof: bool = False

    def settings(self) -> AblationSettings:
        return AblationSettings(iterations=self.iterations, views=tuple(self.views), ks=tuple(self.ks),
                                eval_split=self.eval_split,
                                eval_cameras=None if self.eval_cameras is None else tuple(self.eval_cameras),
                                max_frames=self.max_frames, with_tof=self.with_tof)


@dataclass
class PathsConfig:
    data: str | None = None
    generator: str | None = None
    out: str | None = None


@dataclass
class RunConfig:
    scale: str = "desk"
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


# full-size values; everything else keeps its desk default
FULL_OVERRIDES = {
    "scene": {"image_size": 512},
    "model": {"uv_resolution": 128, "image_size": 512, "n_samples": 64, "encoder_width": 1.0, "nerf_width": 256},
    "generator": {"texture_resolution": 512, "width_mult": 1.0},
    "train": {"iterations": 200000},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigurationError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default if f.default is not dataclasses.MISSING else (
            f.default_factory() if f.default_factory is not dataclasses.MISSING else None)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    scale = data.get("scale", "desk")
    if scale not in SCALES:
        raise ConfigurationError(f"scale must be one of {SCALES}, got {scale!r}")
    if scale == "full":
        data = _merge(FULL_OVERRIDES, data)
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{p}: invalid YAML: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
