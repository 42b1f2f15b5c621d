"""Command-line entry points: synth, train, render, eval, ablate.

Any extra ``--section.key=value`` flag overrides a single config key.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ABLATION_VARIANTS, ConfigError, RunConfig
from .scene_io import (CheckpointError, DatasetError, SyntheticScene, Sphere,
                       default_sphere_scene, load_blender_dataset, load_checkpoint,
                       save_checkpoint, write_blender_dataset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raydiance",
                                     description="Neural ray-rendering pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write an analytic sphere dataset in Blender layout")
    p.add_argument("--scene", default="sphere",
                   help="'sphere' or a path to a scene JSON file")
    p.add_argument("--views", default="20,5,5",
                   help="train,val,test view counts")
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--out", default=None, help="output directory")

    for name in ("train", "ablate"):
        p = sub.add_parser(name, help=f"{name} a model from a config file")
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="override config out_dir")
        if name == "ablate":
            p.add_argument("--variant", required=True,
                           choices=sorted(ABLATION_VARIANTS))

    p = sub.add_parser("render", help="render images (and optionally depth) from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--depth", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="PSNR/SSIM table for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    return parser


def _default_out(explicit: str | None) -> str:
    if explicit:
        return explicit
    return os.environ.get("RAYDIANCE_OUT", "runs/out")


def _load_scene(spec: str) -> SyntheticScene:
    if spec == "sphere":
        return default_sphere_scene()
    with open(spec) as fh:
        data = json.load(fh)
    return SyntheticScene(
        spheres=[Sphere(np.array(s["center"]), float(s["radius"]), np.array(s["albedo"]))
                 for s in data.get("spheres", [])],
        light_dir=np.array(data.get("light_dir", [1.0, 1.0, 1.0])),
        background=np.array(data.get("background", [1.0, 1.0, 1.0])))


def _load_config(path: str, overrides: list[str], out: str | None) -> RunConfig:
    cfg = RunConfig.load(path)
    if overrides:
        cfg = cfg.apply_overrides(overrides)
    if out:
        cfg.out_dir = out
    return cfg


def _restore(checkpoint_path: str):
    from . import model as model_mod

    params, cfg, step = load_checkpoint(checkpoint_path)
    coarse, fine = model_mod.build_models(cfg)
    coarse.load_state_dict(params["coarse"])
    if not cfg.train.share_coarse_fine:
        fine.load_state_dict(params["fine"])
    return coarse, fine, cfg, step


def _run_training(cfg: RunConfig) -> Path:
    from . import training

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, near, far = load_blender_dataset(cfg.dataset, "train")
    cfg.sampling.near, cfg.sampling.far = near, far
    val_frames = None
    if (Path(cfg.dataset) / "transforms_val.json").exists() and cfg.train.val_every:
        val_frames, _, _ = load_blender_dataset(cfg.dataset, "val")
    result = training.train(frames, cfg, val_frames=val_frames, log_dir=out_dir)
    params = {"coarse": result.coarse.state_dict()}
    if not cfg.train.share_coarse_fine:
        params["fine"] = result.fine.state_dict()
    ckpt = out_dir / "checkpoint.pt"
    save_checkpoint(params, cfg, cfg.train.iterations, ckpt)
    cfg.save(out_dir / "config.json")
    return ckpt


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = []
    for item in extra:
        if item.startswith("--") and "=" in item:
            overrides.append(item[2:])
        else:
            print(f"error: unrecognized argument {item!r}", file=sys.stderr)
            return 1

    try:
        return _dispatch(args, overrides)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace, overrides: list[str]) -> int:
    from . import training
    from .renderer import save_depth_png

    if args.command == "synth":
        if overrides:
            raise ConfigError(f"synth takes no config overrides: {overrides}")
        counts = [int(x) for x in args.views.split(",")]
        if len(counts) != 3:
            raise ConfigError("--views must be train,val,test counts")
        scene = _load_scene(args.scene)
        out = _default_out(args.out)
        write_blender_dataset(scene, out,
                              {"train": counts[0], "val": counts[1], "test": counts[2]},
                              args.height, args.width)
        print(f"wrote dataset to {out}")
        return 0

    if args.command == "train":
        cfg = _load_config(args.config, overrides, args.out)
        ckpt = _run_training(cfg)
        print(f"wrote checkpoint to {ckpt}")
        return 0

    if args.command == "ablate":
        cfg = _load_config(args.config, overrides, args.out)
        setattr(cfg.train.ablation, ABLATION_VARIANTS[args.variant], True)
        if not args.out:
            cfg.out_dir = str(Path(cfg.out_dir) / args.variant)
        ckpt = _run_training(cfg)
        print(f"wrote ablation checkpoint ({cfg.train.ablation.tag()}) to {ckpt}")
        return 0

    if args.command == "render":
        coarse, fine, cfg, _ = _restore(args.checkpoint)
        if overrides:
            cfg = cfg.apply_overrides(overrides)
        frames, near, far = load_blender_dataset(cfg.dataset, args.split)
        cfg.sampling.near, cfg.sampling.far = near, far
        out = Path(_default_out(args.out))
        out.mkdir(parents=True, exist_ok=True)
        from PIL import Image
        for i, frame in enumerate(frames):
            rgb, depth = training.render_image(coarse, fine, frame, cfg)
            Image.fromarray((rgb * 255).round().astype("uint8")).save(out / f"r_{i}.png")
            if args.depth:
                save_depth_png(depth, out / f"r_{i}_depth.png")
        print(f"wrote {len(frames)} image(s) to {out}")
        return 0

    if args.command == "eval":
        coarse, fine, cfg, _ = _restore(args.checkpoint)
        if overrides:
            cfg = cfg.apply_overrides(overrides)
        frames, near, far = load_blender_dataset(cfg.dataset, args.split)
        cfg.sampling.near, cfg.sampling.far = near, far
        result = training.evaluate(coarse, fine, frames, cfg)
        table = training.format_metrics_table(result)
        print(table)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "metrics.txt").write_text(table + "\n")
            (out / "metrics.json").write_text(json.dumps(result, indent=2) + "\n")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
