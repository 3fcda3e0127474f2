"""Synthetic audio-visual scenes for the desk-scale training harness.

A scene is a short clip containing some mix of: a moving sounding object, a
stationary sounding object at a class-specific anchor position, and a moving
silent distractor, over a static cluttered background. Audio features are
class-keyed unit vectors plus seeded noise; prompts are fixture text. Ground
truth masks live behind a store that counts (and rejects) reads while an
inference guard is active.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import GroundTruthLeakError
from .validation import check_binary
from .vta import TextPrompt

__all__ = [
    "CLASS_NAMES", "SceneConfig", "SceneSequence", "GroundTruthStore",
    "gen_scene", "gen_scene_set", "class_key",
]

CLASS_NAMES = ("bell", "drum", "siren", "motor")
_CLASS_COLORS = (
    (0.95, 0.85, 0.15),
    (0.90, 0.20, 0.20),
    (0.20, 0.35, 0.95),
    (0.15, 0.85, 0.35),
)
_DISTRACTOR_COLOR = (0.55, 0.55, 0.55)
_MOVE_VERBS = ("moves", "slides", "drifts")


class GroundTruthStore:
    """Per-frame ground-truth masks with an inference-time access canary."""

    def __init__(self, masks: list[np.ndarray]):
        self._masks = [check_binary(m, "gt mask") for m in masks]
        self.guarded_reads = 0
        self._guard_depth = 0

    def __len__(self) -> int:
        return len(self._masks)

    def get(self, t: int) -> np.ndarray:
        if self._guard_depth > 0:
            self.guarded_reads += 1
            raise GroundTruthLeakError(
                "ground-truth mask read while the inference guard is active")
        return self._masks[t]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.get(t)

    @contextmanager
    def inference_guard(self):
        self._guard_depth += 1
        try:
            yield self
        finally:
            self._guard_depth -= 1


@dataclass(frozen=True)
class SceneConfig:
    grid: int = 32
    frames: int = 4
    speed: int = 3
    kind: str = "moving"        # "moving" | "static" | "both"
    object_size: int = 8
    n_classes: int = 4
    audio_dim: int = 8
    audio_noise: float = 1.5
    clutter_blobs: int = 3
    noise_level: float = 0.1

    def __post_init__(self):
        if self.kind not in ("moving", "static", "both"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.frames < 2:
            raise ValueError("a scene needs at least 2 frames")
        span = self.object_size + self.speed * (self.frames - 1)
        if span > self.grid:
            raise ValueError(f"trajectory span {span} exceeds grid {self.grid}")


@dataclass
class SceneSequence:
    frames: np.ndarray                      # (T, H, W, 3) in [0, 1]
    gt_masks: GroundTruthStore              # (H, W) binary per frame
    class_labels: list[tuple[int, ...]]     # sounding class ids per frame
    audio: np.ndarray                       # (T, audio_dim)
    prompts: tuple[TextPrompt, TextPrompt]  # scene description, object list
    kind: str = "moving"
    seed: int = field(default=0)


def class_key(class_id: int, dim: int) -> np.ndarray:
    """Deterministic unit vector keying one class in audio-feature space."""
    rng = np.random.default_rng(10_000 + class_id)
    v = rng.normal(0.0, 1.0, dim)
    return v / np.linalg.norm(v)


def _anchor(class_id: int, grid: int, size: int) -> tuple[int, int]:
    """Stationary objects sit at a fixed per-class quadrant position."""
    margin = max(grid // 16, 1)
    row = margin if class_id < 2 else grid - size - margin
    col = margin if class_id % 2 == 0 else grid - size - margin
    return row, col


def _paint(frame: np.ndarray, row: int, col: int, size: int,
           color: tuple[float, float, float]) -> None:
    frame[row:row + size, col:col + size] = color


def _mark(mask: np.ndarray, row: int, col: int, size: int) -> None:
    mask[row:row + size, col:col + size] = 1.0


def _trajectory(rng: np.random.Generator, grid: int, size: int, speed: int,
                frames: int, lo: int, hi: int) -> list[int]:
    """Start positions for a straight constant-speed move inside [lo, hi]."""
    span = speed * (frames - 1)
    start_max = hi - size - span
    start = int(rng.integers(lo, start_max + 1))
    if rng.integers(0, 2):
        return [start + speed * t for t in range(frames)]
    return [start + span - speed * t for t in range(frames)]


def gen_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> SceneSequence:
    """Deterministic scene; the same seed and config reproduce it bitwise."""
    rng = np.random.default_rng(seed)
    g, t_total, size = cfg.grid, cfg.frames, cfg.object_size

    classes = list(range(cfg.n_classes))
    moving_class = int(rng.integers(0, cfg.n_classes))
    static_choices = [c for c in classes if c != moving_class]
    static_class = int(rng.choice(static_choices))

    background = rng.uniform(0.0, cfg.noise_level, (g, g, 3))
    for _ in range(cfg.clutter_blobs):
        blob_class = int(rng.integers(0, cfg.n_classes))
        br = int(rng.integers(0, g - 4))
        bc = int(rng.integers(0, g - 4))
        color = tuple(0.5 * c for c in _CLASS_COLORS[blob_class])
        _paint(background, br, bc, 4, color)

    # the cross-track coordinate of each moving object stays clear of the
    # per-class anchor corners, so stationary objects are never occluded
    margin = max(g // 16, 1)
    band_lo, band_hi = margin + size, g - 2 * size - margin + 1
    mover_cols = _trajectory(rng, g, size, cfg.speed, t_total, 0, g)
    mover_row = int(rng.integers(band_lo, band_hi))
    distractor_rows = _trajectory(rng, g, size, cfg.speed, t_total, 0, g)
    distractor_col = int(rng.integers(band_lo, band_hi))

    sounding: list[int] = []
    if cfg.kind in ("moving", "both"):
        sounding.append(moving_class)
    if cfg.kind in ("static", "both"):
        sounding.append(static_class)
    sounding = sorted(sounding)

    frames = np.empty((t_total, g, g, 3))
    gt = []
    for t in range(t_total):
        frame = background.copy()
        mask = np.zeros((g, g))
        if cfg.kind in ("static", "both"):
            ar, ac = _anchor(static_class, g, size)
            _paint(frame, ar, ac, size, _CLASS_COLORS[static_class])
            _mark(mask, ar, ac, size)
        _paint(frame, distractor_rows[t], distractor_col, size, _DISTRACTOR_COLOR)
        if cfg.kind in ("moving", "both"):
            _paint(frame, mover_row, mover_cols[t], size,
                   _CLASS_COLORS[moving_class])
            _mark(mask, mover_row, mover_cols[t], size)
        frames[t] = frame
        gt.append(mask)

    keys = np.stack([class_key(c, cfg.audio_dim) for c in sounding])
    audio = np.empty((t_total, cfg.audio_dim))
    for t in range(t_total):
        noise = rng.normal(0.0, cfg.audio_noise / np.sqrt(cfg.audio_dim),
                           cfg.audio_dim)
        audio[t] = keys.mean(axis=0) + noise

    names = [CLASS_NAMES[c] for c in sounding]
    pieces = []
    if cfg.kind in ("moving", "both"):
        verb = _MOVE_VERBS[int(rng.integers(0, len(_MOVE_VERBS)))]
        pieces.append(f"a {CLASS_NAMES[moving_class]} {verb} across the scene")
    if cfg.kind in ("static", "both"):
        pieces.append(f"a {CLASS_NAMES[static_class]} sits still near the corner")
    pieces.append("a gray shape drifts past")
    prompt1 = TextPrompt(" while ".join(pieces) + ".", kind="scene")
    prompt2 = TextPrompt(", ".join(names) + ".", kind="objects")

    return SceneSequence(
        frames=frames,
        gt_masks=GroundTruthStore(gt),
        class_labels=[tuple(sounding)] * t_total,
        audio=audio,
        prompts=(prompt1, prompt2),
        kind=cfg.kind,
        seed=seed,
    )


def gen_scene_set(base_seed: int, count: int,
                  cfg: SceneConfig = SceneConfig()) -> list[SceneSequence]:
    """A deterministic list of scenes with per-scene derived seeds."""
    return [gen_scene(base_seed * 100_000 + i, cfg) for i in range(count)]
