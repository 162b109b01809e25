"""Command-line driver: ``maskdit {train,tune,sample,eval,flops}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import SCHEDULES, RunConfig
from .errors import MaskDiTError


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _seeded(config: RunConfig, seed):
    return config if seed is None else config.replace_training(seed=seed)


def _pick_model(state, no_ema: bool):
    return state.model if no_ema else state.ema


def cmd_train(args) -> int:
    from .trainer import run_training

    config = _seeded(_load_config(args.config), args.seed)
    out = Path(args.out)
    if args.resume is None:
        config.save(out.mkdir(parents=True, exist_ok=True) or out / "config.json")
    state, rows = run_training(config, out, resume=args.resume)
    _emit({"step": state.step, "steps_run": len(rows), "out": str(out)})
    return 0


def cmd_tune(args) -> int:
    from .checkpoint import load_checkpoint
    from .trainer import run_training

    state = load_checkpoint(args.ckpt)
    config = _seeded(_load_config(args.config), args.seed)
    config = config.replace_training(phase1_steps=state.step, phase2_steps=args.steps, schedule=args.schedule)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    state, rows = run_training(config, out, state=state)
    _emit({"step": state.step, "steps_run": len(rows), "schedule": args.schedule, "out": str(out)})
    return 0


def cmd_sample(args) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .evaluation import generate
    from .ppm import make_grid, to_uint8, write_ppm

    state = load_checkpoint(args.ckpt)
    config = state.config
    sampler = dataclasses.replace(config.sampler, guidance_scale=args.guidance, num_steps=args.steps)
    labels = torch.full((args.count,), args.class_label, dtype=torch.long)
    seed = 0 if args.seed is None else args.seed
    images, evals = generate(_pick_model(state, args.no_ema), labels, sampler, seed, config.edm)
    pixels = to_uint8(config.data.denormalize(images.double()).numpy())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_ppm(out / f"samples_class{args.class_label}_seed{seed}.ppm", make_grid(pixels))
    _emit({"path": str(path), "count": args.count, "evaluations": evals, "guidance": args.guidance})
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import balanced_labels, class_consistency, frechet_to_real, generate

    state = load_checkpoint(args.ckpt)
    config = state.config
    count = args.count or config.eval.num_samples
    w = config.eval.guidance_scale if args.guidance is None else args.guidance
    sampler = dataclasses.replace(config.sampler, guidance_scale=w)
    labels = balanced_labels(count, config.backbone.num_classes)
    seed = 0 if args.seed is None else args.seed
    images, _ = generate(_pick_model(state, args.no_ema), labels, sampler, seed, config.edm)
    real_seed = config.eval.real_seed if args.real_seed is None else args.real_seed
    result = {
        "metric": args.metric,
        "frechet": frechet_to_real(images.numpy(), config.data, real_seed),
        "class_consistency": class_consistency(images.numpy(), labels.numpy(), config.data),
        "count": count,
        "guidance": w,
        "step": state.step,
    }
    _emit(result)
    return 0


def cmd_flops(args) -> int:
    from .efficiency import flops_count

    config = _load_config(args.config)
    report = flops_count(config.backbone, args.tokens, args.ratio)
    _emit(report.to_dict())
    return 0


def _emit(doc):
    print(json.dumps(doc, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskdit", description="Masked diffusion transformer training at desk scale.")
    parser.add_argument("--seed", type=int, default=None, help="seed for all randomness of the command")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="masked training, then unmasking tuning if configured")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, metavar="CKPT")
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="unmasking tuning from a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--schedule", choices=SCHEDULES, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", default="runs/tune")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sample", help="write a PPM grid of class-conditional samples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--class", dest="class_label", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--out", required=True)
    p.add_argument("--no-ema", action="store_true", help="sample with raw instead of EMA weights")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="pixel-space Fréchet distance against fresh synthetic data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--metric", choices=("frechet",), default="frechet")
    p.add_argument("--real-seed", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--no-ema", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="print the analytic per-forward cost report as JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--tokens", type=int, default=None, help="token count N (default: from the config)")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "count", None) is not None and args.count < 1:
        parser.error("--count must be positive")
    try:
        return args.func(args)
    except (MaskDiTError, ValueError, OSError) as exc:
        print(f"maskdit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
