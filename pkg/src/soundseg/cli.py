"""Batch command-line interface: every pipeline stage as a subcommand.

Each subcommand is a thin adapter over the library; identical invocations
with identical seeds produce byte-identical outputs. Exit codes: 0 success,
2 usage error, 1 runtime error. Floats print with 6 significant digits.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import pgm
from .errors import FormatError
from .flow import temporal_align
from .losses import (LossWeights, avs_loss, bce_mask_loss, dice_loss,
                     class_bce_loss, post_mask_loss, total_loss)
from .autodiff import Tensor
from .masks import apply_premask, binarize, postmask_label, premask
from .metrics import DEFAULT_BETA2, evaluate_manifest
from .model import init_model_params, ModelConfig
from .scenes import SceneConfig, gen_scene
from .training import ABLATION_VARIANTS, TrainConfig, ablate, parse_config, train
from .vta import (TextPrompt, embed_text, embed_visual, tokenize,
                  unify_attention_masks, vta_align)


def _fmt(x: float) -> str:
    return f"{float(x):.6g}"


def _echo_seed(args) -> None:
    print(f"seed = {getattr(args, 'seed', 0)}")


def _cmd_flow_align(args) -> int:
    flows = [pgm.read_gray(p) for p in args.flows]
    aligned = temporal_align(flows)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_seed(args)
    for i, frame in enumerate(aligned):
        path = out_dir / f"{args.prefix}{i:03d}.pgm"
        pgm.write_gray(path, frame)
        print(path)
    return 0


def _cmd_binarize(args) -> int:
    if not 0.0 <= args.tau <= 1.0:
        raise ValueError(f"--tau must lie in [0, 1], got {args.tau}")
    mask = binarize(pgm.read_gray(args.infile), args.tau)
    pgm.write_binary_mask(args.out, mask)
    _echo_seed(args)
    print(f"tau = {_fmt(args.tau)}")
    print(args.out)
    return 0


def _cmd_premask(args) -> int:
    out = premask(pgm.read_binary_mask(args.flow_mask),
                  pgm.read_binary_mask(args.gt))
    pgm.write_tri_mask(args.out, out)
    _echo_seed(args)
    print(args.out)
    return 0


def _cmd_postmask(args) -> int:
    out = postmask_label(pgm.read_binary_mask(args.flow_mask),
                         pgm.read_binary_mask(args.gt))
    pgm.write_binary_mask(args.out, out)
    _echo_seed(args)
    print(args.out)
    return 0


def _cmd_apply(args) -> int:
    frame = pgm.read_image(args.frame)
    mask = pgm.read_tri_mask(args.mask)
    pgm.write_image(args.out, apply_premask(frame, mask))
    _echo_seed(args)
    print(args.out)
    return 0


def _cmd_loss(args) -> int:
    pred = Tensor(pgm.read_gray(args.pred))
    gt = pgm.read_binary_mask(args.gt)
    weights = LossWeights(args.lambda_mask, args.lambda_dice,
                          args.lambda_bce, args.lambda_post)
    l_mask = bce_mask_loss(pred, gt)
    l_dice = dice_loss(pred, gt)
    if args.class_logits and args.class_labels:
        logits = Tensor(np.asarray(json.loads(Path(args.class_logits).read_text())))
        labels = np.asarray(json.loads(Path(args.class_labels).read_text()))
        l_cls = class_bce_loss(logits, labels)
    else:
        l_cls = Tensor(0.0)
    l_avs = avs_loss(l_mask, l_dice, l_cls, weights)
    if args.post_label:
        l_post = post_mask_loss(pred, pgm.read_binary_mask(args.post_label))
    else:
        l_post = Tensor(0.0)
    total = total_loss(l_avs, l_post, weights)
    _echo_seed(args)
    print(f"loss_mask = {_fmt(l_mask.data)}")
    print(f"loss_dice = {_fmt(l_dice.data)}")
    print(f"loss_class = {_fmt(l_cls.data)}")
    print(f"loss_avs = {_fmt(l_avs.data)}")
    print(f"loss_post = {_fmt(l_post.data)}")
    print(f"loss_total = {_fmt(total.data)}")
    return 0


def _cmd_metrics(args) -> int:
    report = evaluate_manifest(args.manifest, beta2=args.beta2,
                               average="macro" if args.macro else "micro")
    _echo_seed(args)
    record = report.to_record()
    for key in ("miou", "precision", "recall", "f_score"):
        print(f"{key} = {_fmt(record[key])}")
    print(f"tp fp fn = {report.tp} {report.fp} {report.fn}")
    print(f"beta2 = {_fmt(report.beta2)}  average = {report.average}")
    if args.out:
        lines = [json.dumps({"record": "frame", "index": i, "iou": iou},
                            sort_keys=True)
                 for i, iou in enumerate(report.per_frame_iou)]
        lines.append(json.dumps({"record": "summary", **record}, sort_keys=True))
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(args.out)
    return 0


def _cmd_gen_scene(args) -> int:
    cfg = SceneConfig(grid=args.grid, frames=args.frames, speed=args.speed,
                      kind=args.kind)
    scene = gen_scene(args.seed, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_seed(args)
    lines = []
    for t in range(cfg.frames):
        frame_path = out_dir / f"frame_{t:03d}.ppm"
        gt_path = out_dir / f"gt_{t:03d}.pgm"
        pgm.write_image(frame_path, scene.frames[t])
        pgm.write_binary_mask(gt_path, scene.gt_masks.get(t))
        record = {
            "frame": frame_path.name,
            "gt": gt_path.name,
            "prompt1": scene.prompts[0].text,
            "prompt2": scene.prompts[1].text,
        }
        if scene.class_labels[t]:
            record["class"] = scene.class_labels[t][0]
        lines.append(json.dumps(record, sort_keys=True))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(manifest)
    return 0


def _load_train_config(args) -> TrainConfig:
    config = parse_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _cmd_train(args) -> int:
    config = _load_train_config(args)
    report = train(config)
    print(f"seed = {config.seed}")
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_jsonl(), encoding="utf-8")
        print(args.out)
    return 0


def _cmd_ablate(args) -> int:
    config = _load_train_config(args)
    variants = args.variants or list(ABLATION_VARIANTS)
    report = ablate(config, variants, n_seeds=args.seeds)
    print(f"seed = {config.seed}")
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_jsonl(), encoding="utf-8")
        print(args.out)
    return 0


def _cmd_vta_demo(args) -> int:
    frame = pgm.read_image(args.image)
    if frame.ndim == 2:
        frame = np.repeat(frame[:, :, None], 3, axis=2)
    cfg = ModelConfig()
    params = init_model_params(cfg, args.seed)
    _echo_seed(args)
    prompts = (TextPrompt(args.prompt1, "scene"),
               TextPrompt(args.prompt2, "objects"))
    vis_patches = (frame.shape[0] // cfg.vta.patch) * (frame.shape[1] // cfg.vta.patch)
    for label, prompt in zip(("prompt1", "prompt2"), prompts):
        toks = tokenize(prompt, cfg.vta.max_len, cfg.vta.vocab)
        unified = unify_attention_masks(toks.attn,
                                        np.ones(vis_patches, dtype=np.int64))
        align = vta_align(prompt, frame, params.vta, two_pass=True)
        print(f"{label} tokens = {' '.join(str(i) for i in toks.ids)}")
        print(f"{label} attn = {' '.join(str(i) for i in toks.attn)}")
        print(f"{label} unified_attn = {' '.join(str(i) for i in unified)}")
        print(f"{label} align = {' '.join(_fmt(v) for v in align.data)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soundseg",
        description="Flow- and text-prompted sounding-object segmentation "
                    "pipeline stages.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0,
                       help="deterministic seed (echoed in output)")
        return p

    p = add("flow-align", _cmd_flow_align,
            "align T-1 flow fields to T frames by adjacent means")
    p.add_argument("--flows", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="aligned_")

    p = add("binarize", _cmd_binarize, "threshold a gray frame into a mask")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--out", required=True)

    p = add("premask", _cmd_premask, "tri-valued fusion of flow and gt masks")
    p.add_argument("--flow-mask", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)

    p = add("postmask", _cmd_postmask, "intersection label of flow and gt masks")
    p.add_argument("--flow-mask", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)

    p = add("apply", _cmd_apply, "multiply a frame by a tri-valued mask")
    p.add_argument("--frame", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = add("loss", _cmd_loss, "loss components for a pred/target pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--post-label")
    p.add_argument("--class-logits")
    p.add_argument("--class-labels")
    p.add_argument("--lambda-mask", type=float, default=5.0)
    p.add_argument("--lambda-dice", type=float, default=5.0)
    p.add_argument("--lambda-bce", type=float, default=2.0)
    p.add_argument("--lambda-post", type=float, default=10.0)

    p = add("metrics", _cmd_metrics, "evaluate a manifest of gt/pred pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--beta2", type=float, default=DEFAULT_BETA2)
    p.add_argument("--macro", action="store_true",
                   help="average F per frame instead of pooling pixels")
    p.add_argument("--out")

    p = add("gen-scene", _cmd_gen_scene, "write a synthetic scene to disk")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", choices=("moving", "static", "both"),
                   default="moving")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--speed", type=int, default=3)

    p = add("train", _cmd_train, "train on synthetic scenes, report metrics")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="write JSONL records here")
    p.set_defaults(seed=None)

    p = add("ablate", _cmd_ablate, "train toggle variants, report medians")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--variants", nargs="*",
                   choices=sorted(ABLATION_VARIANTS))
    p.add_argument("--out")
    p.set_defaults(seed=None)

    p = add("vta-demo", _cmd_vta_demo,
            "align two prompts against an image, print traces")
    p.add_argument("--prompt1", required=True)
    p.add_argument("--prompt2", required=True)
    p.add_argument("--image", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (OSError, ValueError, FormatError, RuntimeError) as exc:
        print(f"soundseg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
