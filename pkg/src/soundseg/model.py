"""Desk-scale segmentation model and its sklearn-style estimator facade.

The model chain: frame-difference flow -> temporal alignment -> binarized
flow mask -> tri-valued pre-mask multiplied into the frames -> four-scale
encoder -> FPN-style decoder -> per-query mask logits and class logits.
Audio features steer learnable object queries by cosine similarity; textual
prompts, when enabled, are aligned against the raw first frame and fused
into the decoder feature map.

Training uses plain gradient descent on the composite objective, with the
post-mask (flow/ground-truth intersection) BCE as an extra supervised term.
Ground truth is read only while fitting; prediction runs under the ground
truth store's inference guard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, TrainingDivergedError
from .flow import frame_diff_flow, temporal_align
from .losses import (LossWeights, avs_loss, bce_mask_loss, class_bce_loss,
                     dice_loss, post_mask_loss, total_loss)
from .masks import apply_premask, binarize, postmask_label, premask, test_premask
from .metrics import miou
from .scenes import SceneSequence, class_key
from .vta import VtaConfig, VtaParams, fuse_features, init_vta_params, vta_align

__all__ = [
    "ModelConfig", "ModelParams", "map_object_queries", "toy_encoder",
    "toy_decoder", "forward_scene", "downsample_mask", "upsample_mask",
    "SoundingObjectSegmenter",
]


@dataclass(frozen=True)
class ModelConfig:
    grid: int = 32
    patch: int = 4
    channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    out_channels: int = 8
    audio_dim: int = 8
    n_queries: int = 4
    n_classes: int = 4
    vta: VtaConfig = field(default_factory=VtaConfig)

    def __post_init__(self):
        if self.grid % 32:
            raise ShapeError(f"grid {self.grid} must be divisible by 32")
        if self.vta.out_dim != self.out_channels:
            raise ShapeError("vta.out_dim must equal the decoder width "
                             f"({self.vta.out_dim} vs {self.out_channels})")

    @property
    def decoder_hw(self) -> int:
        return self.grid // self.patch


@dataclass
class ModelParams:
    enc_w: list[Tensor]
    enc_b: list[Tensor]
    pos: Tensor
    lat_w: list[Tensor]
    lat_b: list[Tensor]
    queries: Tensor
    qproj_w: Tensor
    mask_b: Tensor
    cls_w: Tensor
    cls_b: Tensor
    vta: VtaParams

    def named(self):
        for i, (w, b) in enumerate(zip(self.enc_w, self.enc_b)):
            yield f"enc{i}_w", w
            yield f"enc{i}_b", b
        yield "pos", self.pos
        for i, (w, b) in enumerate(zip(self.lat_w, self.lat_b)):
            yield f"lat{i}_w", w
            yield f"lat{i}_b", b
        yield "queries", self.queries
        yield "qproj_w", self.qproj_w
        yield "mask_b", self.mask_b
        yield "cls_w", self.cls_w
        yield "cls_b", self.cls_b
        yield from self.vta.named()


def init_model_params(cfg: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)

    def param(shape, fan_in):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape),
                      requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    chans = cfg.channels
    enc_w = [param((cfg.patch * cfg.patch * 3, chans[0]), cfg.patch ** 2 * 3)]
    enc_b = [zeros(chans[0])]
    for c_in, c_out in zip(chans[:-1], chans[1:]):
        enc_w.append(param((4 * c_in, c_out), 4 * c_in))
        enc_b.append(zeros(c_out))
    hw = cfg.decoder_hw
    # query slots are bound to fixed classes, so start each at its class's
    # audio key; surplus slots start random
    query_init = np.stack([
        class_key(n, cfg.audio_dim) if n < cfg.n_classes
        else rng.normal(0.0, 1.0 / math.sqrt(cfg.audio_dim), cfg.audio_dim)
        for n in range(cfg.n_queries)])
    return ModelParams(
        enc_w=enc_w,
        enc_b=enc_b,
        pos=Tensor(rng.normal(0.0, 0.3, (hw, hw, chans[0])), requires_grad=True),
        lat_w=[param((c, cfg.out_channels), c) for c in chans],
        lat_b=[zeros(cfg.out_channels) for _ in chans],
        queries=Tensor(query_init, requires_grad=True),
        qproj_w=param((cfg.audio_dim, cfg.out_channels), cfg.audio_dim),
        # prior log-odds of foreground; keeps early background pressure from
        # saturating the sigmoid before features can discriminate
        mask_b=Tensor(np.asarray(-2.0), requires_grad=True),
        cls_w=param((cfg.audio_dim, cfg.n_classes), cfg.audio_dim),
        cls_b=zeros(cfg.n_classes),
        vta=init_vta_params(cfg.vta, rng),
    )


# ---------------------------------------------------------------------------
# forward pieces

def map_object_queries(z_a: Tensor, q: Tensor) -> Tensor:
    """Cosine-scaled query mapping: out[n, t, :] = cos(q[n], z_a[t]) * q[n, :].

    A zero-norm row on either side makes the cosine 0 for that pair.
    """
    if z_a.shape[1] != q.shape[1]:
        raise ShapeError(f"audio dim {z_a.shape[1]} vs query dim {q.shape[1]}")
    n, t_total = q.shape[0], z_a.shape[0]
    rows = []
    for i in range(n):
        qn = ad.reshape(ad.narrow(q, 0, i, 1), (q.shape[1],))
        qnorm = ad.sqrt(ad.tsum(ad.mul(qn, qn)))
        per_t = []
        for t in range(t_total):
            zt = ad.reshape(ad.narrow(z_a, 0, t, 1), (z_a.shape[1],))
            znorm = ad.sqrt(ad.tsum(ad.mul(zt, zt)))
            if qnorm.data == 0.0 or znorm.data == 0.0:
                s = Tensor(0.0)
            else:
                s = ad.div(ad.tsum(ad.mul(qn, zt)), ad.mul(qnorm, znorm))
            per_t.append(ad.mul(qn, s))
        rows.append(ad.stack(per_t, axis=0))
    return ad.stack(rows, axis=0)


def _patchify(x: Tensor, p: int) -> Tensor:
    """(T, H, W, C) -> (T * (H/p) * (W/p), p*p*C), patches row-major."""
    t, h, w, c = x.shape
    if h % p or w % p:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by patch {p}")
    x = ad.reshape(x, (t, h // p, p, w // p, p, c))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (t * (h // p) * (w // p), p * p * c))


def toy_encoder(frames: Tensor, params: ModelParams,
                cfg: ModelConfig) -> list[Tensor]:
    """Four feature maps at 1/4, 1/8, 1/16, 1/32 scale, each (T, C_s, H_s, W_s)."""
    t, h, w, _ = frames.shape
    if h % 32 or w % 32:
        raise ShapeError(f"frame dims {h}x{w} must be divisible by 32")
    hs, ws = h // cfg.patch, w // cfg.patch
    x = _patchify(frames, cfg.patch)
    # per-scale layer norm keeps features scale-robust, so the 0.5-dimmed
    # uncertainty regions of the pre-mask land near their full-intensity
    # counterparts in feature space
    x = ad.layer_norm(ad.relu(ad.add(ad.matmul(x, params.enc_w[0]),
                                     params.enc_b[0])), axis=-1)
    x = ad.reshape(x, (t, hs, ws, cfg.channels[0]))
    x = ad.add(x, params.pos)

    maps = []
    for level in range(4):
        if level > 0:
            x = _patchify(x, 2)  # (t * hs/2 * ws/2, 4 * c_in)
            x = ad.layer_norm(ad.relu(ad.add(ad.matmul(x, params.enc_w[level]),
                                             params.enc_b[level])), axis=-1)
            hs, ws = hs // 2, ws // 2
            x = ad.reshape(x, (t, hs, ws, cfg.channels[level]))
        maps.append(ad.transpose(x, (0, 3, 1, 2)))
    return maps


def _channel_affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1x1 convolution over a (T, C, H, W) map."""
    t, c, h, wd = x.shape
    flat = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (t * h * wd, c))
    out = ad.add(ad.matmul(flat, w), b)
    return ad.transpose(ad.reshape(out, (t, h, wd, w.shape[1])), (0, 3, 1, 2))


def toy_decoder(features: list[Tensor], queries: Tensor, params: ModelParams,
                cfg: ModelConfig,
                aligns: tuple[Tensor, Tensor] | None = None
                ) -> tuple[Tensor, Tensor, Tensor]:
    """FPN-style top-down merge plus per-query dot-product mask heads.

    Returns (mask_logits (T, N, H', W'), class_logits (N, K), fused map).
    With aligned prompt features, the map is fused per the channelwise
    add-and-normalize rule before the mask heads read it.
    """
    lats = [_channel_affine(f, w, b)
            for f, w, b in zip(features, params.lat_w, params.lat_b)]
    x = lats[3]
    for level in (2, 1, 0):
        x = ad.add(ad.upsample_nearest(x, 2), lats[level])
    if aligns is not None:
        x = fuse_features(x, aligns[0], aligns[1])
    else:
        # the zero-align degenerate case of the fusion rule: the last hidden
        # state is still channel-normalized per location
        x = ad.layer_norm(x, axis=1, eps=1e-5)

    t, c, h, w = x.shape
    n = queries.shape[0]
    qflat = ad.reshape(ad.transpose(queries, (1, 0, 2)),
                       (t * n, cfg.audio_dim))
    qproj = ad.matmul(qflat, params.qproj_w)          # (t*n, C')
    zmap = ad.reshape(x, (t, c, h * w))
    per_frame = []
    for i in range(t):
        q_t = ad.narrow(qproj, 0, i * n, n)           # (n, C')
        z_t = ad.reshape(ad.narrow(zmap, 0, i, 1), (c, h * w))
        per_frame.append(ad.matmul(q_t, z_t))         # (n, h*w)
    logits = ad.add(ad.stack(per_frame, axis=0), params.mask_b)
    mask_logits = ad.reshape(logits, (t, n, h, w))

    pooled = ad.mean(queries, axis=1)                 # (n, audio_dim)
    class_logits = ad.add(ad.matmul(pooled, params.cls_w), params.cls_b)
    return mask_logits, class_logits, x


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Pool a full-resolution mask to decoder resolution (>= 0.5 coverage -> 1)."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ShapeError(f"mask {h}x{w} not divisible by {factor}")
    blocks = mask.reshape(h // factor, factor, w // factor, factor)
    return (blocks.mean(axis=(1, 3)) >= 0.5).astype(np.float64)


def upsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor expansion back to full resolution."""
    return mask.repeat(factor, axis=0).repeat(factor, axis=1)


@dataclass
class ForwardResult:
    mask_logits: Tensor          # (T, N, H', W')
    mask_probs: Tensor           # (T, N, H', W')
    class_logits: Tensor         # (N, K)
    flow_masks: list[np.ndarray]  # full-resolution M_O per frame
    pre_masks: list[np.ndarray]   # tri-valued masks actually applied
    frames_in: Tensor            # masked frames leaf (T, H, W, 3)


def forward_scene(frames: np.ndarray, audio, prompts, gt_masks,
                  params: ModelParams, cfg: ModelConfig, *,
                  use_premask: bool, use_prompts: bool, use_vta: bool,
                  tau: float, train_mode: bool,
                  frames_tensor: Tensor | None = None,
                  audio_tensor: Tensor | None = None) -> ForwardResult:
    """One scene through the full chain.

    In train mode the tri-valued pre-mask combines the flow mask with ground
    truth; in eval mode ground truth is never consulted and every flow pixel
    is marked uncertain. `frames_tensor`/`audio_tensor` may inject leaf
    tensors (for gradient checks); masking is applied to raw numpy frames
    before the differentiable graph starts.
    """
    t_total = frames.shape[0]
    flow_masks = [binarize(f, tau)
                  for f in temporal_align(frame_diff_flow(list(frames)))]

    if use_premask:
        if train_mode:
            if gt_masks is None:
                raise ValueError("train-mode pre-masking needs ground truth")
            pre = [premask(flow_masks[t], gt_masks[t]) for t in range(t_total)]
        else:
            pre = [test_premask(flow_masks[t]) for t in range(t_total)]
        masked = np.stack([apply_premask(frames[t], pre[t])
                           for t in range(t_total)])
    else:
        pre = [np.ones(frames.shape[1:3]) for _ in range(t_total)]
        masked = frames.copy()

    x = frames_tensor if frames_tensor is not None else Tensor(masked)
    z_a = audio_tensor if audio_tensor is not None else Tensor(np.asarray(audio))

    feats = toy_encoder(x, params, cfg)
    queries = map_object_queries(z_a, params.queries)

    aligns = None
    if use_prompts:
        raw_first = Tensor(frames[0])
        a1 = vta_align(prompts[0], raw_first, params.vta, two_pass=use_vta)
        a2 = vta_align(prompts[1], raw_first, params.vta, two_pass=use_vta)
        aligns = (a1, a2)

    mask_logits, class_logits, _ = toy_decoder(feats, queries, params, cfg,
                                               aligns)
    return ForwardResult(
        mask_logits=mask_logits,
        mask_probs=ad.sigmoid(mask_logits),
        class_logits=class_logits,
        flow_masks=flow_masks,
        pre_masks=pre,
        frames_in=x,
    )


def scene_targets(scene: SceneSequence, flow_masks: list[np.ndarray],
                  cfg: ModelConfig, n_queries: int
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Training targets at decoder resolution.

    Returns (mask targets (T, N, H', W'), post-mask targets (T, N, H', W'),
    multi-hot class labels (N, K)). Query slot n is bound to class n; silent
    slots get empty masks.
    """
    t_total = scene.frames.shape[0]
    hw = cfg.decoder_hw
    mask_t = np.zeros((t_total, n_queries, hw, hw))
    post_t = np.zeros((t_total, n_queries, hw, hw))
    labels = np.zeros((n_queries, cfg.n_classes))
    for t in range(t_total):
        gt = scene.gt_masks.get(t)
        gt_small = downsample_mask(gt, cfg.patch)
        post_small = downsample_mask(postmask_label(flow_masks[t], gt), cfg.patch)
        for n in scene.class_labels[t]:
            if n < n_queries:
                mask_t[t, n] = gt_small
                post_t[t, n] = post_small
                labels[n, n] = 1.0
    return mask_t, post_t, labels


# ---------------------------------------------------------------------------
# estimator

class SoundingObjectSegmenter(BaseEstimator):
    """Segment sound-emitting objects in short synthetic clips.

    Parameters mirror the training configuration: loss weights, the four
    technique toggles, the flow binarization threshold, and the gradient
    descent schedule. fit() consumes a list of SceneSequence; predict()
    returns per-scene lists of full-resolution binary masks and never reads
    ground truth (enforced by the scenes' inference guard).
    """

    def __init__(self, epochs=30, lr=1e-3, lr_decay_epoch=15,
                 lr_decay_factor=0.1, lambda_mask=5.0, lambda_dice=5.0,
                 lambda_bce=2.0, lambda_mask_prime=10.0, use_premask=True,
                 use_postmask=True, use_prompts=True, use_vta=True,
                 tau=0.05, grid=32, n_queries=4, n_classes=4, audio_dim=8,
                 seed=0):
        self.epochs = epochs
        self.lr = lr
        self.lr_decay_epoch = lr_decay_epoch
        self.lr_decay_factor = lr_decay_factor
        self.lambda_mask = lambda_mask
        self.lambda_dice = lambda_dice
        self.lambda_bce = lambda_bce
        self.lambda_mask_prime = lambda_mask_prime
        self.use_premask = use_premask
        self.use_postmask = use_postmask
        self.use_prompts = use_prompts
        self.use_vta = use_vta
        self.tau = tau
        self.grid = grid
        self.n_queries = n_queries
        self.n_classes = n_classes
        self.audio_dim = audio_dim
        self.seed = seed

    def _config(self) -> ModelConfig:
        return ModelConfig(grid=self.grid, n_queries=self.n_queries,
                           n_classes=self.n_classes, audio_dim=self.audio_dim)

    def _weights(self) -> LossWeights:
        return LossWeights(self.lambda_mask, self.lambda_dice,
                           self.lambda_bce, self.lambda_mask_prime)

    def lr_at(self, epoch: int) -> float:
        if epoch >= self.lr_decay_epoch:
            return self.lr * self.lr_decay_factor
        return self.lr

    def _scene_loss(self, scene: SceneSequence, weights: LossWeights):
        out = forward_scene(
            scene.frames, scene.audio, scene.prompts,
            [scene.gt_masks.get(t) for t in range(len(scene.gt_masks))],
            self.params_, self.cfg_,
            use_premask=self.use_premask, use_prompts=self.use_prompts,
            use_vta=self.use_vta, tau=self.tau, train_mode=True)
        mask_t, post_t, labels = scene_targets(scene, out.flow_masks,
                                               self.cfg_, self.n_queries)
        t_total, n = mask_t.shape[0], mask_t.shape[1]

        l_mask = bce_mask_loss(out.mask_probs, mask_t)
        dice_terms = []
        for t in range(t_total):
            frame_probs = ad.narrow(out.mask_probs, 0, t, 1)
            for q in range(n):
                pred_q = ad.reshape(ad.narrow(frame_probs, 1, q, 1),
                                    (self.cfg_.decoder_hw, self.cfg_.decoder_hw))
                dice_terms.append(dice_loss(pred_q, mask_t[t, q]))
        l_dice = ad.scale(ad.tsum(ad.stack(dice_terms, axis=0)),
                          1.0 / len(dice_terms))
        l_cls = class_bce_loss(out.class_logits, labels)
        l_avs = avs_loss(l_mask, l_dice, l_cls, weights)
        if self.use_postmask:
            l_post = post_mask_loss(out.mask_probs, post_t)
            loss = total_loss(l_avs, l_post, weights)
        else:
            l_post = Tensor(0.0)
            loss = l_avs
        components = {
            "loss_mask": float(l_mask.data),
            "loss_dice": float(l_dice.data),
            "loss_class": float(l_cls.data),
            "loss_post": float(l_post.data),
            "loss_avs": float(l_avs.data),
            "loss_total": float(loss.data),
        }
        return loss, components

    def fit(self, scenes: list[SceneSequence], y=None):
        self.cfg_ = self._config()
        self.params_ = init_model_params(self.cfg_, self.seed)
        weights = self._weights()
        trainable = list(self.params_.named())
        self.history_ = []
        for epoch in range(self.epochs):
            lr = self.lr_at(epoch)
            sums: dict[str, float] = {}
            for scene in scenes:
                loss, components = self._scene_loss(scene, weights)
                if not np.isfinite(loss.data):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}: {components}")
                for name, p in trainable:
                    p.grad = None
                ad.backward(loss)
                for name, p in trainable:
                    if p.grad is not None:
                        p.data -= lr * p.grad
                for key, v in components.items():
                    sums[key] = sums.get(key, 0.0) + v
            record = {key: v / len(scenes) for key, v in sums.items()}
            record["lr"] = lr
            record["epoch"] = epoch
            self.history_.append(record)
        return self

    def predict_probs(self, scene: SceneSequence) -> np.ndarray:
        """Per-query mask probabilities (T, N, H', W'); ground truth guarded."""
        with scene.gt_masks.inference_guard():
            out = forward_scene(
                scene.frames, scene.audio, scene.prompts, None,
                self.params_, self.cfg_,
                use_premask=self.use_premask, use_prompts=self.use_prompts,
                use_vta=self.use_vta, tau=self.tau, train_mode=False)
        return out.mask_probs.data

    def predict(self, scenes) -> list[list[np.ndarray]]:
        """Full-resolution binary masks per scene per frame.

        The frame mask is the union over query slots of probability >= 0.5.
        """
        single = isinstance(scenes, SceneSequence)
        if single:
            scenes = [scenes]
        results = []
        for scene in scenes:
            probs = self.predict_probs(scene)
            frame_masks = []
            for t in range(probs.shape[0]):
                union = (probs[t] >= 0.5).any(axis=0).astype(np.float64)
                frame_masks.append(upsample_mask(union, self.cfg_.patch))
            results.append(frame_masks)
        return results[0] if single else results

    def score(self, scenes, y=None) -> float:
        """Mean IoU of predictions against ground truth over all frames."""
        if isinstance(scenes, SceneSequence):
            scenes = [scenes]
        predictions = self.predict(scenes)
        preds, gts = [], []
        for scene, frame_masks in zip(scenes, predictions):
            for t, pred in enumerate(frame_masks):
                preds.append(pred)
                gts.append(scene.gt_masks.get(t))
        return miou(preds, gts)
