"""Training and ablation harness around the estimator.

TrainConfig is the file-facing configuration (key = value lines, # comments);
train() generates deterministic scene sets from the seed, fits the estimator,
and evaluates on held-out scenes under the ground-truth inference guard.
ablate() reruns named toggle variants over several seeds and reports medians,
mirroring the usual add-one-module ablation table.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .metrics import evaluate_pairs
from .model import SoundingObjectSegmenter
from .scenes import SceneConfig, SceneSequence, gen_scene_set

__all__ = [
    "TrainConfig", "TrainReport", "AblationReport", "train", "ablate",
    "parse_config", "parse_config_text", "ABLATION_VARIANTS",
]

# toggle subsets in the conventional add-one-module order
ABLATION_VARIANTS: dict[str, dict[str, bool]] = {
    "premask": dict(use_premask=True, use_postmask=False,
                    use_prompts=False, use_vta=False),
    "premask+postmask": dict(use_premask=True, use_postmask=True,
                             use_prompts=False, use_vta=False),
    "prompts": dict(use_premask=False, use_postmask=False,
                    use_prompts=True, use_vta=False),
    "prompts+vta": dict(use_premask=False, use_postmask=False,
                        use_prompts=True, use_vta=True),
    "no-postmask": dict(use_premask=True, use_postmask=False,
                        use_prompts=True, use_vta=True),
    "full": dict(use_premask=True, use_postmask=True,
                 use_prompts=True, use_vta=True),
}


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    lr: float = 1e-3
    lr_decay_epoch: int = 15
    lr_decay_factor: float = 0.1
    lambda_mask: float = 5.0
    lambda_dice: float = 5.0
    lambda_bce: float = 2.0
    lambda_mask_prime: float = 10.0
    use_premask: bool = True
    use_postmask: bool = True
    use_prompts: bool = True
    use_vta: bool = True
    tau: float = 0.05
    beta2: float = 0.3
    grid: int = 32
    frames: int = 4
    speed: int = 3
    scene_kind: str = "moving"
    object_size: int = 8
    audio_noise: float = 1.5
    n_train_scenes: int = 6
    n_eval_scenes: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0 or self.lr_decay_factor <= 0:
            raise ValueError("learning rates must be > 0")

    def scene_config(self) -> SceneConfig:
        return SceneConfig(grid=self.grid, frames=self.frames,
                           speed=self.speed, kind=self.scene_kind,
                           object_size=self.object_size,
                           audio_noise=self.audio_noise)

    def estimator(self) -> SoundingObjectSegmenter:
        return SoundingObjectSegmenter(
            epochs=self.epochs, lr=self.lr,
            lr_decay_epoch=self.lr_decay_epoch,
            lr_decay_factor=self.lr_decay_factor,
            lambda_mask=self.lambda_mask, lambda_dice=self.lambda_dice,
            lambda_bce=self.lambda_bce,
            lambda_mask_prime=self.lambda_mask_prime,
            use_premask=self.use_premask, use_postmask=self.use_postmask,
            use_prompts=self.use_prompts, use_vta=self.use_vta,
            tau=self.tau, grid=self.grid, seed=self.seed)


def _coerce(raw: str, kind: type):
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def parse_config_text(text: str) -> TrainConfig:
    """Parse key = value lines (# starts a comment) into a TrainConfig."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    types = {"seed": int, "epochs": int, "lr_decay_epoch": int, "grid": int,
             "frames": int, "speed": int, "object_size": int,
             "n_train_scenes": int, "n_eval_scenes": int,
             "scene_kind": str}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key.startswith("use_"):
            kind = bool
        else:
            kind = types.get(key, float)
        try:
            values[key] = _coerce(raw, kind)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    return TrainConfig(**values)


def parse_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class TrainReport:
    seed: int
    config: dict
    epochs: list[dict]
    final_miou: float
    final_fscore: float
    guarded_gt_reads: int

    def to_records(self) -> list[dict]:
        records = [{"record": "config", **self.config}]
        records.extend({"record": "epoch", **e} for e in self.epochs)
        records.append({
            "record": "final",
            "seed": self.seed,
            "miou": self.final_miou,
            "f_score": self.final_fscore,
            "guarded_gt_reads": self.guarded_gt_reads,
        })
        return records

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records()) + "\n"

    def to_table(self) -> str:
        lines = ["epoch      lr    mask    dice   class    post   total"]
        for e in self.epochs:
            lines.append(
                f"{e['epoch']:5d} {e['lr']:7.5f} {e['loss_mask']:7.4f} "
                f"{e['loss_dice']:7.4f} {e['loss_class']:7.4f} "
                f"{e['loss_post']:7.4f} {e['loss_total']:7.4f}")
        lines.append(f"final mIoU = {self.final_miou:.6g}")
        lines.append(f"final F-score = {self.final_fscore:.6g}")
        return "\n".join(lines)


def train(config: TrainConfig) -> TrainReport:
    """Full train + held-out evaluation cycle for one configuration."""
    scene_cfg = config.scene_config()
    train_scenes = gen_scene_set(config.seed, config.n_train_scenes, scene_cfg)
    eval_scenes = [s for s in gen_scene_set(config.seed + 77_001,
                                            config.n_eval_scenes, scene_cfg)]

    est = config.estimator().fit(train_scenes)

    predictions = est.predict(eval_scenes)
    preds, gts = [], []
    for scene, frame_masks in zip(eval_scenes, predictions):
        for t, pred in enumerate(frame_masks):
            preds.append(pred)
            gts.append(scene.gt_masks.get(t))
    report = evaluate_pairs(preds, gts, beta2=config.beta2)
    guarded = sum(s.gt_masks.guarded_reads
                  for s in train_scenes + eval_scenes)
    return TrainReport(
        seed=config.seed,
        config=dataclasses.asdict(config),
        epochs=est.history_,
        final_miou=report.miou,
        final_fscore=report.f_score,
        guarded_gt_reads=guarded,
    )


@dataclass
class AblationRow:
    name: str
    miou_by_seed: list[float]
    fscore_by_seed: list[float]

    @property
    def median_miou(self) -> float:
        return float(np.median(self.miou_by_seed))

    @property
    def median_fscore(self) -> float:
        return float(np.median(self.fscore_by_seed))


@dataclass
class AblationReport:
    base: dict
    seeds: list[int]
    rows: list[AblationRow]

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_records(self) -> list[dict]:
        records = [{"record": "config", **self.base,
                    "seeds": list(self.seeds)}]
        for r in self.rows:
            records.append({
                "record": "variant",
                "name": r.name,
                "median_miou": r.median_miou,
                "median_fscore": r.median_fscore,
                "miou_by_seed": r.miou_by_seed,
                "fscore_by_seed": r.fscore_by_seed,
            })
        return records

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records()) + "\n"

    def to_table(self) -> str:
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'variant':<{width}}  median mIoU  median F-score"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.median_miou:11.6g}  "
                         f"{r.median_fscore:14.6g}")
        return "\n".join(lines)


def ablate(base_config: TrainConfig, variants: list[str],
           n_seeds: int = 5) -> AblationReport:
    """Train the baseline plus each named variant over several seeds.

    The baseline is the given config with all four technique toggles off.
    Variant names index ABLATION_VARIANTS; medians are reported per row.
    """
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown}; "
                         f"known: {sorted(ABLATION_VARIANTS)}")
    seeds = list(range(n_seeds))
    rows = []
    arms = [("baseline", dict(use_premask=False, use_postmask=False,
                              use_prompts=False, use_vta=False))]
    arms.extend((name, ABLATION_VARIANTS[name]) for name in variants)
    for name, toggles in arms:
        mious, fscores = [], []
        for seed in seeds:
            cfg = replace(base_config, seed=seed, **toggles)
            report = train(cfg)
            mious.append(report.final_miou)
            fscores.append(report.final_fscore)
        rows.append(AblationRow(name, mious, fscores))
    return AblationReport(base=dataclasses.asdict(base_config),
                          seeds=seeds, rows=rows)
