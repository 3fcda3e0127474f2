"""Visual-textual alignment: a two-pass masked cross-attention encoder.

Text prompts are hash-tokenized and embedded, visual frames are patch-embedded
(small learnable stand-ins for pretrained encoders), and the attention masks of
both modalities are unified. The encoder runs twice: the first pass attends
from text to visual patches, the second refines the text features against the
first pass's output. The pooled, projected, normalized result is a single
aligned feature vector per prompt, which is fused into spatial feature maps by
channelwise addition followed by normalization.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

__all__ = [
    "TextPrompt", "TokenSeq", "VtaConfig", "VtaParams",
    "tokenize", "embed_text", "embed_visual", "unify_attention_masks",
    "cross_encode", "refine", "project_normalize", "fuse_features",
    "vta_align", "init_vta_params",
]

LN_EPS = 1e-5
MASK_LOGIT = -1e9
_TOKEN_RE = re.compile(r"[a-z0-9]+")
PAD_ID = 0
EMPTY_ID = 1  # stand-in token for empty prompts


@dataclass(frozen=True)
class TextPrompt:
    """A prompt string; kind is "scene" (description) or "objects" (noun list)."""
    text: str
    kind: str = "scene"


@dataclass(frozen=True)
class TokenSeq:
    ids: np.ndarray   # (max_len,) int64
    attn: np.ndarray  # (max_len,) {0,1}, prefix of ones


@dataclass(frozen=True)
class VtaConfig:
    d_model: int = 32
    heads: int = 2
    layers: int = 2
    max_len: int = 16
    vocab: int = 1024
    patch: int = 8
    out_dim: int = 8
    ffn_dim: int = 64
    norm: str = "layer"      # "layer" | "l2"
    shared_refine: bool = True


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class EncoderLayerParams:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


@dataclass
class VtaParams:
    cfg: VtaConfig
    token_table: Tensor
    text_w: Tensor
    text_b: Tensor
    vis_w: Tensor
    vis_b: Tensor
    out_w: Tensor
    out_b: Tensor
    layers: list[EncoderLayerParams] = field(default_factory=list)
    refine_layers: list[EncoderLayerParams] | None = None

    def named(self, prefix: str = "vta"):
        yield f"{prefix}.token_table", self.token_table
        yield f"{prefix}.text_w", self.text_w
        yield f"{prefix}.text_b", self.text_b
        yield f"{prefix}.vis_w", self.vis_w
        yield f"{prefix}.vis_b", self.vis_b
        stacks = [("layer", self.layers)]
        if self.refine_layers is not None:
            stacks.append(("refine", self.refine_layers))
        for stack_name, stack in stacks:
            for i, lp in enumerate(stack):
                for blk, attn in (("self", lp.self_attn), ("cross", lp.cross_attn)):
                    yield f"{prefix}.{stack_name}{i}.{blk}_wq", attn.wq
                    yield f"{prefix}.{stack_name}{i}.{blk}_wk", attn.wk
                    yield f"{prefix}.{stack_name}{i}.{blk}_wv", attn.wv
                    yield f"{prefix}.{stack_name}{i}.{blk}_wo", attn.wo
                yield f"{prefix}.{stack_name}{i}.ffn_w1", lp.ffn_w1
                yield f"{prefix}.{stack_name}{i}.ffn_b1", lp.ffn_b1
                yield f"{prefix}.{stack_name}{i}.ffn_w2", lp.ffn_w2
                yield f"{prefix}.{stack_name}{i}.ffn_b2", lp.ffn_b2
        yield f"{prefix}.out_w", self.out_w
        yield f"{prefix}.out_b", self.out_b


def _param(rng: np.random.Generator, shape: tuple[int, ...],
           fan_in: int | None = None) -> Tensor:
    std = 1.0 / math.sqrt(fan_in) if fan_in else 0.1
    return Tensor(rng.normal(0.0, std, shape), requires_grad=True)


def _init_layer(rng: np.random.Generator, d: int, ffn: int) -> EncoderLayerParams:
    def attn() -> AttentionParams:
        return AttentionParams(*(_param(rng, (d, d), d) for _ in range(4)))

    return EncoderLayerParams(
        self_attn=attn(),
        cross_attn=attn(),
        ffn_w1=_param(rng, (d, ffn), d),
        ffn_b1=Tensor(np.zeros(ffn), requires_grad=True),
        ffn_w2=_param(rng, (ffn, d), ffn),
        ffn_b2=Tensor(np.zeros(d), requires_grad=True),
    )


def init_vta_params(cfg: VtaConfig, rng: np.random.Generator) -> VtaParams:
    d = cfg.d_model
    if d % cfg.heads:
        raise ShapeError(f"d_model {d} not divisible by heads {cfg.heads}")
    patch_dim = cfg.patch * cfg.patch * 3
    return VtaParams(
        cfg=cfg,
        token_table=_param(rng, (cfg.vocab, d)),
        text_w=_param(rng, (d, d), d),
        text_b=Tensor(np.zeros(d), requires_grad=True),
        vis_w=_param(rng, (patch_dim, d), patch_dim),
        vis_b=Tensor(np.zeros(d), requires_grad=True),
        layers=[_init_layer(rng, d, cfg.ffn_dim) for _ in range(cfg.layers)],
        refine_layers=(None if cfg.shared_refine else
                       [_init_layer(rng, d, cfg.ffn_dim) for _ in range(cfg.layers)]),
        out_w=_param(rng, (d, cfg.out_dim), d),
        out_b=Tensor(np.zeros(cfg.out_dim), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# tokenization and embedding

def _fnv1a(token: str) -> int:
    h = 2166136261
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
    return h


def tokenize(p: TextPrompt, max_len: int = 16, vocab: int = 1024) -> TokenSeq:
    """Lowercase, split on whitespace/punctuation, hash into a fixed vocabulary.

    Ids 0 and 1 are reserved (pad, empty-prompt stand-in); real tokens hash
    into [2, vocab). Sequences are truncated or padded to max_len, with the
    attention flags marking real positions.
    """
    if max_len < 1:
        raise ValueError(f"tokenize: max_len must be >= 1, got {max_len}")
    words = _TOKEN_RE.findall(p.text.lower())
    if words:
        ids = [2 + _fnv1a(w) % (vocab - 2) for w in words][:max_len]
    else:
        ids = [EMPTY_ID]
    attn = [1] * len(ids) + [0] * (max_len - len(ids))
    ids = ids + [PAD_ID] * (max_len - len(ids))
    return TokenSeq(ids=np.asarray(ids, dtype=np.int64),
                    attn=np.asarray(attn, dtype=np.int64))


def embed_text(t: TokenSeq, params: VtaParams) -> Tensor:
    """Token-table lookup followed by a learned affine map; (max_len, d_model)."""
    rows = ad.take_rows(params.token_table, t.ids)
    return ad.add(ad.matmul(rows, params.text_w), params.text_b)


def patch_grid(frame: Tensor, patch: int) -> Tensor:
    """Cut (H, W, C) into non-overlapping patches, flattened row-major: (P, p*p*C)."""
    h, w, c = frame.shape
    if h % patch or w % patch:
        raise ShapeError(f"frame {h}x{w} not divisible by patch {patch}")
    x = ad.reshape(frame, (h // patch, patch, w // patch, patch, c))
    x = ad.transpose(x, (0, 2, 1, 3, 4))
    return ad.reshape(x, ((h // patch) * (w // patch), patch * patch * c))


def embed_visual(frame, params: VtaParams, patch: int | None = None) -> Tensor:
    """Patch embedding of a frame: flatten non-overlapping patches, project."""
    patch = params.cfg.patch if patch is None else patch
    frame = ad.as_tensor(frame)
    if frame.data.ndim != 3:
        raise ShapeError("embed_visual: expected an (H, W, 3) frame, "
                         f"got shape {frame.shape}")
    patches = patch_grid(frame, patch)
    if patches.shape[1] != params.vis_w.shape[0]:
        raise ShapeError(f"embed_visual: patch dim {patches.shape[1]} vs "
                         f"projection {params.vis_w.shape[0]}")
    return ad.add(ad.matmul(patches, params.vis_w), params.vis_b)


def unify_attention_masks(text_attn: np.ndarray, vis_attn: np.ndarray) -> np.ndarray:
    """Concatenate the two modality masks, text first."""
    return np.concatenate([np.asarray(text_attn, dtype=np.int64).reshape(-1),
                           np.asarray(vis_attn, dtype=np.int64).reshape(-1)])


# ---------------------------------------------------------------------------
# encoder

def _attend(x_q: Tensor, kv: Tensor, key_mask: np.ndarray,
            p: AttentionParams, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention with additive key masking."""
    q = ad.matmul(x_q, p.wq)
    k = ad.matmul(kv, p.wk)
    v = ad.matmul(kv, p.wv)
    d_head = q.shape[1] // heads
    # 0 for valid keys, -1e9 for masked ones
    bias = (1.0 - np.asarray(key_mask, dtype=np.float64)) * MASK_LOGIT
    outs = []
    for qh, kh, vh in zip(ad.split(q, heads, axis=1),
                          ad.split(k, heads, axis=1),
                          ad.split(v, heads, axis=1)):
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (1, 0))),
                          1.0 / math.sqrt(d_head))
        scores = ad.add(scores, Tensor(bias))
        outs.append(ad.matmul(ad.softmax(scores, axis=-1), vh))
    merged = outs[0]
    for o in outs[1:]:
        merged = ad.concat(merged, o, axis=1)
    return ad.matmul(merged, p.wo)


def _ffn(x: Tensor, lp: EncoderLayerParams) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, lp.ffn_w1), lp.ffn_b1))
    return ad.add(ad.matmul(h, lp.ffn_w2), lp.ffn_b2)


def _encode(x: Tensor, self_mask: np.ndarray, ctx: Tensor, ctx_mask: np.ndarray,
            stack: list[EncoderLayerParams], heads: int) -> Tensor:
    for lp in stack:
        x = ad.layer_norm(ad.add(x, _attend(x, x, self_mask, lp.self_attn, heads)),
                          axis=-1, eps=LN_EPS)
        x = ad.layer_norm(ad.add(x, _attend(x, ctx, ctx_mask, lp.cross_attn, heads)),
                          axis=-1, eps=LN_EPS)
        x = ad.layer_norm(ad.add(x, _ffn(x, lp)), axis=-1, eps=LN_EPS)
    return x


def _check_unified(unified_attn: np.ndarray, lt: int) -> np.ndarray:
    unified_attn = np.asarray(unified_attn).reshape(-1)
    if unified_attn.size < lt:
        raise ShapeError(f"unified attention mask of length {unified_attn.size} "
                         f"shorter than the {lt} text positions")
    return unified_attn


def cross_encode(text_emb: Tensor, unified_attn: np.ndarray, vis_emb: Tensor,
                 vis_attn: np.ndarray, params: VtaParams) -> Tensor:
    """First pass: text self-attention plus cross-attention into visual patches.

    The text portion of the unified mask gates self-attention keys; vis_attn
    gates the cross-attention keys. Masked keys receive -1e9 additive logits.
    """
    if text_emb.shape[1] != vis_emb.shape[1]:
        raise ShapeError(f"d_model mismatch: text {text_emb.shape} vs "
                         f"visual {vis_emb.shape}")
    unified_attn = _check_unified(unified_attn, text_emb.shape[0])
    text_mask = unified_attn[: text_emb.shape[0]]
    vis_attn = np.asarray(vis_attn).reshape(-1)
    if vis_attn.size != vis_emb.shape[0]:
        raise ShapeError(f"visual mask length {vis_attn.size} vs "
                         f"{vis_emb.shape[0]} patches")
    return _encode(text_emb, text_mask, vis_emb, vis_attn,
                   params.layers, params.cfg.heads)


def refine(text_emb: Tensor, unified_attn: np.ndarray, align: Tensor,
           params: VtaParams) -> Tensor:
    """Second pass: same stack, first-pass output as cross-attention context."""
    unified_attn = _check_unified(unified_attn, text_emb.shape[0])
    text_mask = unified_attn[: text_emb.shape[0]]
    if align.shape != text_emb.shape:
        raise ShapeError(f"refine: context {align.shape} vs text {text_emb.shape}")
    stack = params.refine_layers if params.refine_layers is not None else params.layers
    return _encode(text_emb, text_mask, align, text_mask, stack, params.cfg.heads)


def project_normalize(align: Tensor, attn: np.ndarray, params: VtaParams) -> Tensor:
    """Masked mean-pool, project to the decoder width, normalize; shape (out_dim,)."""
    attn = np.asarray(attn, dtype=np.float64).reshape(-1)
    if attn.size != align.shape[0]:
        raise ShapeError(f"attention length {attn.size} vs {align.shape[0]} tokens")
    n_valid = attn.sum()
    if n_valid == 0:
        raise ValueError("project_normalize: no valid tokens to pool")
    weights = Tensor((attn / n_valid).reshape(1, -1))
    pooled = ad.reshape(ad.matmul(weights, align), (align.shape[1],))
    proj = ad.add(ad.reshape(ad.matmul(ad.reshape(pooled, (1, -1)), params.out_w),
                             (params.cfg.out_dim,)), params.out_b)
    if params.cfg.norm == "l2":
        norm = ad.sqrt(ad.tsum(ad.mul(proj, proj)))
        return ad.div(proj, norm)
    return ad.layer_norm(proj, axis=-1, eps=LN_EPS)


def fuse_features(z_v: Tensor, a1: Tensor, a2: Tensor) -> Tensor:
    """Add two aligned feature vectors across the channel axis, then normalize.

    z_v is (T, C, H, W); a1 and a2 are (C,). The sum broadcasts over time and
    space, and the result is layer-normalized over channels per location.
    """
    if a1.shape != a2.shape or a1.shape != (z_v.shape[1],):
        raise ShapeError(f"fuse_features: channels {z_v.shape[1]} vs aligned "
                         f"{a1.shape} / {a2.shape}")
    s = ad.reshape(ad.add(a1, a2), (z_v.shape[1], 1, 1))
    return ad.layer_norm(ad.add(z_v, ad.broadcast_to(s, z_v.shape)),
                         axis=1, eps=LN_EPS)


def vta_align(prompt: TextPrompt, frame, params: VtaParams,
              two_pass: bool = True) -> Tensor:
    """Full alignment of one prompt against one frame -> (out_dim,) feature.

    two_pass=False is the plain cross-attention arm (no refinement pass).
    """
    cfg = params.cfg
    toks = tokenize(prompt, cfg.max_len, cfg.vocab)
    text_emb = embed_text(toks, params)
    vis_emb = embed_visual(frame, params)
    vis_attn = np.ones(vis_emb.shape[0], dtype=np.int64)
    unified = unify_attention_masks(toks.attn, vis_attn)
    out = cross_encode(text_emb, unified, vis_emb, vis_attn, params)
    if two_pass:
        out = refine(text_emb, unified, out, params)
    return project_normalize(out, toks.attn, params)
