"""Command-line entry point: data generation, pre-training, training, rendering, recoloring, evaluation, ablations.

Exit codes: 0 on success, 1 on a domain or runtime failure, 2 on a usage or
configuration error. Logs go to stderr; artifacts go under --out.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, DomainError, GarmentNerfError, TrainingAborted, UsageError

log = logging.getLogger("garment_nerf")

DATA_ENV = "GARMENT_NERF_DATA"  # optional default dataset root


# ---------------------------------------------------------------- argument helpers


def frame_range(text: str) -> list:
    """'a..b' (inclusive) or a single index."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
        else:
            a = b = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b or an integer, got {text!r}") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"empty frame range {text!r}")
    return list(range(a, b + 1))


def rgb255(text: str) -> tuple:
    """'R,G,B' with 0-255 integers -> floats in [0, 1]."""
    parts = text.split(",")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,G,B integers, got {text!r}") from None
    if len(vals) != 3 or any(v < 0 or v > 255 for v in vals):
        raise argparse.ArgumentTypeError(f"expected three integers in 0..255, got {text!r}")
    return tuple(v / 255.0 for v in vals)


def int_list(text: str) -> tuple:
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.scene.seed = args.seed
        cfg.train.seed = args.seed
        cfg.generator.seed = args.seed
    if getattr(args, "iterations", None) is not None:
        cfg.train.iterations = args.iterations
    return cfg


def _data_root(args, cfg=None) -> Path:
    root = getattr(args, "data", None) or (cfg.paths.data if cfg is not None else None) or os.environ.get(DATA_ENV)
    if not root:
        raise ConfigurationError(f"no dataset given: pass --data, set paths.data or ${DATA_ENV}")
    return Path(root)


def _load_data(args, cfg=None):
    from .synthdata import load_dataset

    return load_dataset(_data_root(args, cfg))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, rows: list, fields: list) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    from .synthdata import build_dataset, write_dataset

    cfg = _config(args)
    ds = build_dataset(cfg.scene, progress=True)
    root = write_dataset(ds, _out(args))
    log.info("dataset written to %s (%d frames)", root, len(ds.frames))
    return 0


def cmd_pretrain_generator(args) -> int:
    from .generator import evaluate_generator_l1, pretrain_generator, save_generator
    from .plotting import plot_generator_history

    cfg = _config(args)
    ds = _load_data(args, cfg)
    schedule = cfg.generator.schedule(ds)
    gen, tex = pretrain_generator(ds, schedule)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    held = [(t, c) for t in ds.splits["seen_motion"].frames[:4] for c in (ds.rig.front_index, ds.rig.back_index)] \
        if "seen_motion" in ds.splits else []
    meta = {"config_hash": cfg.hash, "steps": schedule.steps, "final_l1": schedule.history[-1][1] if schedule.history
            else None, "held_out_l1": evaluate_generator_l1(gen, tex, ds, held) if held else None}
    save_generator(out, gen, tex, meta)
    stem = out.with_suffix("")
    _write_rows(Path(f"{stem}_history.csv"), [{"step": s, "l1": a, "total": b} for s, a, b in schedule.history],
                ["step", "l1", "total"])
    if schedule.history:
        plot_generator_history(schedule.history, f"{stem}_history.png")
    log.info("generator written to %s (held-out L1 %s)", out, meta["held_out_l1"])
    return 0


def cmd_train(args) -> int:
    from .config import dump_config
    from .generator import load_generator
    from .plotting import plot_training_curves
    from .training import Trainer, read_metrics

    out = _out(args)
    if args.resume:
        cfg = _config(args) if args.config else None
        ds = _load_data(args, cfg)
        tr = Trainer.resume(args.resume, ds, out)
        if args.iterations is not None:
            tr.tcfg = replace(tr.tcfg, iterations=args.iterations)
    else:
        cfg = _config(args)
        gimg = args.gimg or cfg.paths.generator
        if not gimg:
            raise ConfigurationError("train needs a pre-trained generator: pass --gimg or set paths.generator")
        ds = _load_data(args, cfg)
        gen, tex, _ = load_generator(gimg)
        dump_config(cfg, out / "config.yaml")
        tr = Trainer(ds, gen, tex, cfg.model, cfg.train, out, run_meta={"run_config_hash": cfg.hash})
    tr.run()
    rows = read_metrics(out / "metrics.csv")
    if rows:
        plot_training_curves(rows, out / "training_curves.png")
    log.info("training finished at iteration %d; outputs in %s", tr.iteration, out)
    return 0


def _model_and_conditioner(args):
    from .model import Conditioner
    from .training import load_checkpoint

    ck = load_checkpoint(args.ckpt)
    ds = _load_data(args)
    cond = Conditioner(ds.template, ds.motions, ds.rig, ck.generator, ck.texture, ck.model.config)
    return ck, ds, cond


def _camera(ds, rig: str, idx: int):
    r = ds.rig_of(rig)
    if not 0 <= idx < len(r):
        raise DomainError(f"camera index {idx} outside the {rig} rig (0..{len(r) - 1})")
    return r[idx]


def _motion_of(ds, t: int, motion: str | None) -> str:
    if motion is not None:
        if motion not in ds.motions:
            raise DomainError(f"unknown motion {motion!r}; available: {sorted(ds.motions)}")
        return motion
    if t in ds.frames:
        return ds.frames[t].motion
    for name, m in ds.motions.items():
        if m.first_index <= t < m.first_index + len(m):
            return name
    raise DomainError(f"frame {t} is not covered by any motion")


def cmd_render(args) -> int:
    from .model import render_view
    from .plotting import save_image

    ck, ds, cond = _model_and_conditioner(args)
    cam = _camera(ds, args.rig, args.camera)
    out = _out(args)
    rows = []
    for t in args.frames:
        res = render_view(ck.model, cond, _motion_of(ds, t, args.motion), t, cam)
        img = res.image.clamp(0, 1).permute(1, 2, 0).numpy()
        path = save_image(img, out / f"frame_{t:06d}.png")
        m = res.maps
        save_image(np.repeat(m.mask[0].numpy()[..., None], 3, -1), out / f"mask_{t:06d}.png")
        save_image(np.repeat((m.mask[0] * m.weight).numpy()[..., None], 3, -1), out / f"garment_{t:06d}.png")
        rows.append({"frame": t, "camera": cam.name, "image": path.name,
                     "mask_coverage": float((m.mask[0] > 0.5).float().mean())})
    _write_rows(out / "frames.csv", rows, ["frame", "camera", "image", "mask_coverage"])
    log.info("rendered %d frame(s) to %s", len(rows), out)
    return 0


def cmd_recolor(args) -> int:
    import torch

    from .model import render_view
    from .palette import recolor
    from .plotting import plot_recolor, save_image

    ck, ds, cond = _model_and_conditioner(args)
    cam = _camera(ds, args.rig, args.camera)
    out = _out(args)
    rows = []
    pairs = []
    for t in args.frames:
        res = render_view(ck.model, cond, _motion_of(ds, t, args.motion), t, cam)
        with torch.no_grad():
            edited = recolor(res.maps, ck.model.palette, args.garment_color)
        a = res.image.clamp(0, 1).permute(1, 2, 0).numpy()
        b = edited.clamp(0, 1).permute(1, 2, 0).numpy()
        save_image(a, out / f"original_{t:06d}.png")
        save_image(b, out / f"recolored_{t:06d}.png")
        pairs.append((t, a, b))
        rows.append({"frame": t, "camera": cam.name, "mean_abs_change": float(np.abs(b - a).mean())})
    _write_rows(out / "recolor.csv", rows, ["frame", "camera", "mean_abs_change"])
    plot_recolor(pairs, out / "recolor.png")
    p = ck.model.palette
    log.info("garment colour %s -> %s for %d frame(s)", np.round(p.garment.detach().numpy(), 3).tolist(),
             np.round(args.garment_color, 3).tolist(), len(rows))
    return 0


def _summary(report) -> dict:
    out: dict = {"meta": report.meta, "splits": {}}
    for r in report.rows:
        out["splits"].setdefault(r["split"], {}).setdefault(r["method"], {})[r["metric"]] = r["value"]
    return out


def cmd_eval(args) -> int:
    from .evalmetrics import DEFAULT_SPLITS, evaluate
    from .plotting import plot_report
    from .synthdata import load_dataset
    from .training import load_checkpoint

    ck = load_checkpoint(args.ckpt)
    if args.dataset is None and not os.environ.get(DATA_ENV):
        raise ConfigurationError(f"eval needs --dataset (or ${DATA_ENV})")
    ds = load_dataset(args.dataset or os.environ[DATA_ENV])
    report = evaluate(ck, ds, splits=args.splits or DEFAULT_SPLITS, cameras=args.cameras,
                      with_tof=not args.no_tof, max_frames=args.max_frames)
    out = _out(args)
    csv_path, _ = report.write(out)
    (out / "summary.yaml").write_text(yaml.safe_dump(_summary(report), sort_keys=True))
    if report.rows:
        plot_report(report, out / "report.png")
    log.info("report written to %s", csv_path)
    return 0


def cmd_ablate(args) -> int:
    from .evalmetrics import ablate
    from .generator import load_generator
    from .plotting import plot_ablation

    cfg = _config(args)
    gimg = args.gimg or cfg.paths.generator
    if not gimg:
        raise ConfigurationError("ablate needs a pre-trained generator: pass --gimg or set paths.generator")
    ds = _load_data(args, cfg)
    gen, tex, _ = load_generator(gimg)
    settings = cfg.ablation.settings()
    if args.iterations is not None:
        settings = replace(settings, iterations=args.iterations)
    out = _out(args)
    bundle = ablate(ds, gen, tex, cfg.model, cfg.train, settings, out)
    bundle.meta["run_config_hash"] = cfg.hash
    bundle.write(out)
    for metric in ("psnr", "ssim"):
        plot_ablation(bundle, out / f"ablation_{metric}.png", metric)
    failed = sorted({(r["study"], r["setting"]) for r in bundle.rows if r["status"] != "ok"})
    for study, setting in failed:
        log.error("ablation cell failed: %s / %s", study, setting)
    return 1 if failed else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="garment-nerf", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic multi-view dataset")
    sp.add_argument("--config", help="YAML run configuration (defaults to the desk scene)")
    sp.add_argument("--seed", type=int, help="override every seed in the configuration")
    sp.add_argument("--out", required=True, help="dataset directory to create")

    sp = add("pretrain-generator", cmd_pretrain_generator, "pre-train and freeze the neural texture and image generator")
    sp.add_argument("--config")
    sp.add_argument("--data", help=f"dataset directory (or paths.data, or ${DATA_ENV})")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="generator checkpoint file")

    sp = add("train", cmd_train, "joint training with the frozen generator")
    sp.add_argument("--config")
    sp.add_argument("--data")
    sp.add_argument("--gimg", help="pre-trained generator checkpoint (or paths.generator)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iterations", type=int, help="override train.iterations")
    sp.add_argument("--resume", help="continue from a training checkpoint")
    sp.add_argument("--out", required=True, help="run directory")

    for name, fn, text in (("render", cmd_render, "render frames from a checkpoint"),
                           ("recolor", cmd_recolor, "render frames with a new garment colour")):
        sp = add(name, fn, text)
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--data")
        sp.add_argument("--frames", type=frame_range, required=True, help="a..b, inclusive")
        sp.add_argument("--camera", type=int, required=True, help="camera index within the rig")
        sp.add_argument("--rig", choices=("train", "novel"), default="train")
        sp.add_argument("--motion", help="motion name (default: inferred from the frame index)")
        if name == "recolor":
            sp.add_argument("--garment-color", type=rgb255, required=True, help="R,G,B in 0..255")
        sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "metric report for a checkpoint, with baselines")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--dataset", help=f"dataset directory (or ${DATA_ENV})")
    sp.add_argument("--splits", type=lambda s: tuple(x for x in s.split(",") if x))
    sp.add_argument("--cameras", type=int_list, help="restrict to these camera indices")
    sp.add_argument("--max-frames", type=int)
    sp.add_argument("--no-tof", action="store_true", help="skip the optical-flow metric")
    sp.add_argument("--out", required=True)

    sp = add("ablate", cmd_ablate, "feature, view-count and history-length ablations")
    sp.add_argument("--config")
    sp.add_argument("--data")
    sp.add_argument("--gimg")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iterations", type=int, help="iterations per ablation cell")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        log.error("%s", exc)
        return 2
    except (DomainError, TrainingAborted, GarmentNerfError, OSError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
