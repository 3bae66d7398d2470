"""Multi-view dataset generation and its on-disk layout.

Directory layout::

    manifest.json                 rigs, splits, seeds, scene config, mean colours
    template/                     body template (see geometry.save_template)
    motions/<name>.bin            pose arrays (tensor container)
    frames/<t>/<cam>.png          RGB ground truth
    frames/<t>/mask_<cam>.png     front mask (0/255)
    frames/<t>/seg_<cam>.png      labels 0 background, 1 body, 2 garment
    frames/<t>/body.mesh, garment.mesh
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DomainError
from ..geometry import (
    BodyTemplate,
    Mesh,
    load_mesh,
    load_template,
    make_body_template,
    pose_body,
    save_mesh,
    save_template,
)
from ..tensorio import load_container, save_container
from .garment import GarmentConfig, garment_frame, root_velocity_history
from .motion import MotionConfig, generate_motion, motion_arrays, motion_from_arrays
from .render import BODY, GARMENT, Materials, SceneObject, render_ground_truth, to_uint8
from .rig import CameraRig, make_camera_rig

log = logging.getLogger(__name__)

TRAIN_MOTION, UNSEEN_MOTION = "train", "unseen"
UNSEEN_MOTION_FIRST_INDEX = 100000


@dataclass
class SceneConfig:
    seed: int = 0
    unseen_seed: int = 1
    image_size: int = 128
    n_cameras: int = 16
    camera_radius: float = 3.2
    camera_height: float = 1.0
    fov_deg: float = 40.0
    target: tuple = (0.0, 0.9, 0.0)
    n_train_frames: int = 200
    holdout_every: int = 11
    n_unseen_frames: int = 50
    n_novel_view_frames: int = 8
    warmup_frames: int = 8
    template_detail: int = 1
    motion: MotionConfig = field(default_factory=MotionConfig)
    garment: GarmentConfig = field(default_factory=GarmentConfig)
    materials: Materials = field(default_factory=Materials)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        sub = {"motion": MotionConfig, "garment": GarmentConfig, "materials": Materials}
        for k, kls in sub.items():
            if k in d and isinstance(d[k], dict):
                vals = {kk: tuple(v) if isinstance(v, list) else v for kk, v in d[k].items()}
                d[k] = kls(**vals)
        for k in ("target",):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Split:
    motion: str
    frames: list
    rig: str  # "train" or "novel"
    cameras: list


@dataclass(eq=False)
class Frame:
    index: int
    motion: str
    body_mesh: Mesh
    garment_mesh: Mesh
    views: dict = field(default_factory=dict)  # camera name -> (rgb uint8, seg uint8)

    def image(self, cam: str) -> np.ndarray:
        return self.views[cam][0].astype(np.float32) / 255.0

    def seg(self, cam: str) -> np.ndarray:
        return self.views[cam][1]

    def mask(self, cam: str) -> np.ndarray:
        return self.views[cam][1] != 0


@dataclass(eq=False)
class Dataset:
    config: SceneConfig
    template: BodyTemplate
    rig: CameraRig
    novel_rig: CameraRig
    motions: dict
    frames: dict
    splits: dict
    mean_colors: tuple  # (mu_G, mu_B), RGB in [0, 1]

    def rig_of(self, name: str) -> CameraRig:
        return self.rig if name == "train" else self.novel_rig

    def camera(self, rig: str, idx: int):
        return self.rig_of(rig)[idx]

    def pose(self, motion: str, t: int):
        return self.motions[motion].at(t)

    def views_of(self, split: str):
        """(frame index, rig name, camera index) for every item of a split."""
        s = self.splits[split]
        return [(t, s.rig, c) for t in s.frames for c in s.cameras]


def _split_frames(config: SceneConfig):
    w = config.warmup_frames
    per = config.holdout_every
    n_seen = config.n_train_frames // (per - 1)
    total = config.n_train_frames + n_seen
    all_t = np.arange(w, w + total)
    held = all_t[(all_t - w) % per == per // 2]
    train = np.setdiff1d(all_t, held)
    # the longest run of consecutive training frames near the middle hosts the novel-view clip
    n_nv = config.n_novel_view_frames
    start = int(train[len(train) // 2])
    while not all(t in set(train.tolist()) for t in range(start, start + n_nv)):
        start += 1
    novel = list(range(start, start + n_nv))
    return train.tolist(), held.tolist(), novel, w + total


def build_dataset(config: SceneConfig | None = None, progress: bool = False) -> Dataset:
    config = config or SceneConfig()
    template = make_body_template(config.template_detail)
    size = (config.image_size, config.image_size)
    rig = make_camera_rig(config.n_cameras, config.camera_radius, config.camera_height, size,
                          config.fov_deg, config.target)
    novel_rig = make_camera_rig(config.n_cameras, config.camera_radius, config.camera_height, size,
                                config.fov_deg, config.target, azimuth_offset_deg=180.0 / config.n_cameras,
                                prefix="n")
    train_t, held_t, novel_t, n_total = _split_frames(config)
    mcfg = config.motion
    motion_a = generate_motion(MotionConfig(**{**asdict(mcfg), "seed": config.seed, "first_index": 0}), n_total)
    n_unseen_total = config.warmup_frames + config.n_unseen_frames
    motion_b = generate_motion(
        MotionConfig(**{**asdict(mcfg), "seed": config.unseen_seed, "first_index": UNSEEN_MOTION_FIRST_INDEX}),
        n_unseen_total,
    )
    unseen_t = list(range(UNSEEN_MOTION_FIRST_INDEX + config.warmup_frames, UNSEEN_MOTION_FIRST_INDEX + n_unseen_total))
    all_cams = list(range(config.n_cameras))
    splits = {
        "train": Split(TRAIN_MOTION, train_t, "train", all_cams),
        "seen_motion": Split(TRAIN_MOTION, held_t, "train", all_cams),
        "unseen_view": Split(TRAIN_MOTION, novel_t, "novel", all_cams),
        "unseen_motion": Split(UNSEEN_MOTION, unseen_t, "train", all_cams),
    }
    motions = {TRAIN_MOTION: motion_a, UNSEEN_MOTION: motion_b}
    needed: dict[int, tuple[str, set]] = {}
    for s in splits.values():
        for t in s.frames:
            mot, names = needed.setdefault(t, (s.motion, set()))
            rig_obj = rig if s.rig == "train" else novel_rig
            names.update(rig_obj[c].name for c in s.cameras)

    frames = {}
    for n_done, (t, (mot, names)) in enumerate(sorted(needed.items())):
        frames[t] = make_frame(template, motions[mot], t, mot, config,
                               [c for c in rig.cameras + novel_rig.cameras if c.name in names])
        if progress and n_done % 20 == 0:
            log.info("rendered frame %d (%d/%d)", t, n_done + 1, len(needed))
    ds = Dataset(config, template, rig, novel_rig, motions, frames, splits, ((0.0,) * 3, (0.0,) * 3))
    ds.mean_colors = compute_mean_colors(ds)
    return ds


def make_frame(template, motion, t, motion_name, config: SceneConfig, cameras) -> Frame:
    pose = motion.at(t)
    body = pose_body(template, pose)
    gf = garment_frame(pose, root_velocity_history(motion, t, config.garment.history), config.garment, template)
    mats = config.materials
    objects = [
        SceneObject(body, BODY, mats.body_albedo(len(body.vertices))),
        SceneObject(gf.mesh, GARMENT, mats.garment_albedo(gf.wrinkle)),
    ]
    views = {}
    for cam in cameras:
        img, _, seg = render_ground_truth(objects, cam, mats)
        views[cam.name] = (to_uint8(img), seg)
    return Frame(t, motion_name, body, gf.mesh, views)


def compute_mean_colors(ds: Dataset, split: str = "train"):
    """Mean RGB over garment and body pixels of a split."""
    sums = {GARMENT: np.zeros(3), BODY: np.zeros(3)}
    counts = {GARMENT: 0, BODY: 0}
    for t, rig, c in ds.views_of(split):
        name = ds.camera(rig, c).name
        rgb, seg = ds.frames[t].views[name]
        for lab in (GARMENT, BODY):
            sel = seg == lab
            sums[lab] += rgb[sel].astype(np.float64).sum(0)
            counts[lab] += int(sel.sum())
    for lab, label in ((GARMENT, "garment"), (BODY, "body")):
        if counts[lab] == 0:
            raise DomainError(f"no {label} pixels in split {split!r}")
    return tuple(tuple((sums[lab] / counts[lab] / 255.0).tolist()) for lab in (GARMENT, BODY))


# ---------------------------------------------------------------- I/O


def _write_png(path: Path, arr: np.ndarray) -> None:
    try:
        Image.fromarray(arr).save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as exc:
        raise OSError(f"failed to read {path}: {exc}") from exc


def write_dataset(ds: Dataset, root: str | Path) -> Path:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "motions").mkdir(exist_ok=True)
    save_template(ds.template, root / "template")
    for name, m in ds.motions.items():
        save_container(root / "motions" / f"{name}.bin", motion_arrays(m), {"template_ref": m.template_ref})
    for t, fr in ds.frames.items():
        d = root / "frames" / str(t)
        d.mkdir(exist_ok=True)
        save_mesh(fr.body_mesh, d / "body.mesh")
        save_mesh(fr.garment_mesh, d / "garment.mesh")
        for cam, (rgb, seg) in fr.views.items():
            _write_png(d / f"{cam}.png", rgb)
            _write_png(d / f"mask_{cam}.png", np.where(seg != 0, 255, 0).astype(np.uint8))
            _write_png(d / f"seg_{cam}.png", seg)
    manifest = {
        "format": "garment_nerf.dataset/1",
        "scene": asdict(ds.config),
        "rig": ds.rig.to_dict(),
        "novel_rig": ds.novel_rig.to_dict(),
        "motions": sorted(ds.motions),
        "frames": {str(t): {"motion": fr.motion, "cameras": sorted(fr.views)} for t, fr in sorted(ds.frames.items())},
        "splits": {k: asdict(v) for k, v in ds.splits.items()},
        "seeds": {"train": ds.config.seed, "unseen": ds.config.unseen_seed},
        "mean_colors": {"garment": list(ds.mean_colors[0]), "body": list(ds.mean_colors[1])},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except OSError as exc:
        raise OSError(f"cannot read dataset manifest {root / 'manifest.json'}: {exc}") from exc
    template = load_template(root / "template")
    motions = {}
    for name in manifest["motions"]:
        arrs, meta = load_container(root / "motions" / f"{name}.bin")
        motions[name] = motion_from_arrays(arrs, meta.get("template_ref", "desk_body"))
    frames = {}
    for key, ent in manifest["frames"].items():
        d = root / "frames" / key
        views = {}
        for cam in ent["cameras"]:
            rgb = _read_png(d / f"{cam}.png")
            seg = _read_png(d / f"seg_{cam}.png")
            mask = _read_png(d / f"mask_{cam}.png")
            if not np.array_equal(mask != 0, seg != 0):
                raise DomainError(f"{d / f'mask_{cam}.png'} disagrees with its segmentation")
            views[cam] = (rgb, seg)
        frames[int(key)] = Frame(int(key), ent["motion"], load_mesh(d / "body.mesh"), load_mesh(d / "garment.mesh"), views)
    mc = manifest["mean_colors"]
    return Dataset(
        SceneConfig.from_dict(manifest["scene"]),
        template,
        CameraRig.from_dict(manifest["rig"]),
        CameraRig.from_dict(manifest["novel_rig"]),
        motions,
        frames,
        {k: Split(**v) for k, v in manifest["splits"].items()},
        (tuple(mc["garment"]), tuple(mc["body"])),
    )
