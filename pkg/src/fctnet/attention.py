"""Convolutional Attention: depthwise-conv token embedding and projections
around plain scaled dot-product multi-head self-attention.

The token map is produced by a stride-1 depthwise conv plus layer norm;
q/k/v each get a per-role depthwise conv (strided for k/v if configured)
followed by a pointwise map to heads*head_dim. Spatial structure enters
only through those convolutions, so no positional encoding is used.

The block output is z' = W_o(attention output) + W_o(v tokens), with a
single shared bias-free output map W_o so the two paths sum exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import (ConvParams, NormParams, depthwise_conv2d, init_depthwise,
                     init_linear, init_norm, layer_norm, linear,
                     nearest_resample, softmax)
from .tensor import Tensor, active_tape, add, matmul, mul, permute, reshape

# per-head score entries above which untaped attention streams over query
# blocks instead of materializing the full T_q x T_kv matrix
STREAM_THRESHOLD = 1 << 26


@dataclass
class AttentionConfig:
    channels: int
    heads: int
    head_dim: int = 0  # 0 means floor(channels/heads), clamped to >= 1
    proj_kernel: int = 3
    q_stride: int = 1
    kv_stride: int = 1

    def __post_init__(self):
        if self.heads < 1:
            raise ShapeError("attention: heads must be >= 1")
        if self.q_stride < 1 or self.kv_stride < 1:
            raise ShapeError("attention: strides must be >= 1")
        if self.head_dim == 0:
            self.head_dim = max(1, self.channels // self.heads)
        if self.head_dim < 1:
            raise ShapeError("attention: head_dim must be >= 1")

    @property
    def scale(self):
        return 1.0 / math.sqrt(self.head_dim)

    @property
    def inner(self):
        return self.heads * self.head_dim


@dataclass
class TokenMap:
    """Flattened spatial features: tokens (N, H_t*W_t, C_t) plus the
    spatial extents needed to reshape back."""

    tokens: Tensor
    spatial: tuple

    def __post_init__(self):
        h, w = self.spatial
        if self.tokens.shape[1] != h * w:
            raise ShapeError(f"token count {self.tokens.shape[1]} != {h}x{w}")


@dataclass
class AttentionParams:
    embed_conv: ConvParams  # depthwise, stride 1
    embed_norm: NormParams
    proj_depthwise: dict  # role -> ConvParams (strided for k/v)
    proj_pointwise: dict  # role -> LinearParams, channels -> heads*head_dim
    out_weight: Tensor  # (heads*head_dim, channels), shared by both paths


def init_attention(rng, cfg: AttentionConfig, dtype=np.float32):
    c = cfg.channels
    dw = {}
    pw = {}
    for role in ("q", "k", "v"):
        stride = cfg.q_stride if role == "q" else cfg.kv_stride
        dw[role] = init_depthwise(rng, cfg.proj_kernel, c, stride=(stride, stride), dtype=dtype)
        pw[role] = init_linear(rng, c, cfg.inner, dtype=dtype)
    limit = 1.0 / math.sqrt(cfg.inner)
    out_w = rng.uniform(-limit, limit, size=(cfg.inner, c)).astype(dtype)
    return AttentionParams(
        embed_conv=init_depthwise(rng, cfg.proj_kernel, c, dtype=dtype),
        embed_norm=init_norm(c, dtype=dtype),
        proj_depthwise=dw,
        proj_pointwise=pw,
        out_weight=Tensor(out_w, requires_grad=True),
    )


def patch_embed(x, cfg: AttentionConfig, params: AttentionParams) -> TokenMap:
    """Depthwise conv + layer norm, flattened into tokens."""
    if x.shape[-1] != cfg.channels:
        raise ShapeError(f"patch_embed: input channels {x.shape[-1]} != configured {cfg.channels}")
    y = depthwise_conv2d(x, params.embed_conv)
    y = layer_norm(y, params.embed_norm)
    n, h, w, c = y.shape
    return TokenMap(tokens=reshape(y, (n, h * w, c)), spatial=(h, w))


def conv_project(tok: TokenMap, role, cfg: AttentionConfig, params: AttentionParams):
    """Per-role depthwise conv (strided for k/v) + pointwise map to heads*head_dim.

    Returns tokens (N, T_role, heads*head_dim); T_role shrinks by the
    role's stride squared (ceil division per axis).
    """
    if role not in ("q", "k", "v"):
        raise ShapeError(f"conv_project: unknown role {role!r}")
    h, w = tok.spatial
    stride = cfg.q_stride if role == "q" else cfg.kv_stride
    if stride > h or stride > w:
        raise ShapeError(f"conv_project: stride {stride} exceeds token grid {h}x{w}")
    n = tok.tokens.shape[0]
    fmap = reshape(tok.tokens, (n, h, w, cfg.channels))
    y = depthwise_conv2d(fmap, params.proj_depthwise[role])
    y = linear(y, params.proj_pointwise[role])
    ho, wo = y.shape[1], y.shape[2]
    return reshape(y, (n, ho * wo, cfg.inner))


def split_heads(t, heads):
    """(N, T, heads*d) -> (N, heads, T, d)."""
    n, tn, hd = t.shape
    d = hd // heads
    if d * heads != hd:
        raise ShapeError(f"split_heads: {hd} channels not divisible by {heads} heads")
    return permute(reshape(t, (n, tn, heads, d)), (0, 2, 1, 3))


def merge_heads(t):
    """(N, heads, T, d) -> (N, T, heads*d)."""
    n, h, tn, d = t.shape
    return reshape(permute(t, (0, 2, 1, 3)), (n, tn, h * d))


def _mhsa_streamed(q, k, v, scale):
    # softmax rows depend only on their own query, so computing query
    # blocks one at a time changes nothing but the peak memory
    out = np.empty(q.shape[:-1] + (v.shape[-1],), dtype=q.dtype)
    t_q, t_kv = q.shape[2], k.shape[2]
    block = max(1, STREAM_THRESHOLD // t_kv)
    kt = np.swapaxes(k, -1, -2)
    for lo in range(0, t_q, block):
        s = np.matmul(q[:, :, lo:lo + block] * scale, kt)
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        out[:, :, lo:lo + block] = np.matmul(s, v)
    return out


def mhsa(q, k, v, cfg: AttentionConfig):
    """softmax(q kᵀ / sqrt(d)) v per head, heads merged back to (N, T_q, h*d)."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"mhsa: q head_dim {q.shape[-1]} != k head_dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"mhsa: k tokens {k.shape[-2]} != v tokens {v.shape[-2]}")
    if active_tape() is None and q.shape[2] * k.shape[2] > STREAM_THRESHOLD:
        return merge_heads(Tensor(_mhsa_streamed(q.data, k.data, v.data, cfg.scale)))
    # scale q before the product: the scores matrix is the memory peak and
    # this keeps one fewer T_q x T_kv tensor alive on the tape
    scores = matmul(mul(q, cfg.scale), permute(k, (0, 1, 3, 2)))
    attn = softmax(scores, axis=-1)
    return merge_heads(matmul(attn, v))


def convolutional_attention(z_prev, cfg: AttentionConfig, params: AttentionParams, trace=False):
    """The full attention block: returns (z', trace_dict_or_None).

    z' = W_o(mhsa over projected tokens) + W_o(v tokens), the v path being
    the residual that carries the projected input forward. When k/v are
    strided the v tokens are nearest-resampled onto the query grid first.
    """
    tok = patch_embed(z_prev, cfg, params)
    h, w = tok.spatial
    q_tok = conv_project(tok, "q", cfg, params)
    k_tok = conv_project(tok, "k", cfg, params)
    v_tok = conv_project(tok, "v", cfg, params)
    hq, wq = -(-h // cfg.q_stride), -(-w // cfg.q_stride)
    hk, wk = -(-h // cfg.kv_stride), -(-w // cfg.kv_stride)
    n = z_prev.shape[0]

    attn_tok = mhsa(split_heads(q_tok, cfg.heads), split_heads(k_tok, cfg.heads),
                    split_heads(v_tok, cfg.heads), cfg)

    v_res_tok = v_tok
    if (hk, wk) != (hq, wq):
        v_map = reshape(v_tok, (n, hk, wk, cfg.inner))
        v_res_tok = reshape(nearest_resample(v_map, (hq, wq)), (n, hq * wq, cfg.inner))

    attn_path = reshape(matmul(attn_tok, params.out_weight), (n, hq, wq, cfg.channels))
    v_res = reshape(matmul(v_res_tok, params.out_weight), (n, hq, wq, cfg.channels))
    z_attn = add(attn_path, v_res)

    tr = None
    if trace:
        tr = {
            "z_prev": z_prev,
            "z_qkv": {"q": q_tok, "k": k_tok, "v": v_tok},
            "attn_path": attn_path,
            "v_res": v_res,
            "z_attn": z_attn,
        }
    return z_attn, tr
