"""One FCT layer: norm-conv-conv(-pool) stem, Convolutional Attention,
Wide-Focus, in encoder, bottleneck, and decoder variants.

encoder     layer_norm -> conv+gelu -> conv+gelu -> max_pool -> attention -> wide-focus
bottleneck  same stem without the pool
decoder     upsample 2x -> concat skip -> stem without pool -> attention -> wide-focus

Both residuals live in the sub-blocks: attention adds its v path, and
wide-focus is applied as z = WF(z') + z'.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (AttentionConfig, AttentionParams, convolutional_attention,
                        init_attention)
from .errors import ShapeError
from .layers import (ConvParams, NormParams, conv2d, concat_channels, gelu,
                     init_conv, init_norm, layer_norm, max_pool2d,
                     upsample_nearest_2x)
from .tensor import add
from .wide_focus import WideFocusConfig, WideFocusParams, init_wide_focus, wide_focus

VARIANTS = ("encoder", "bottleneck", "decoder")


@dataclass
class FctLayerConfig:
    filters: int
    attention: AttentionConfig
    wf: WideFocusConfig
    variant: str = "encoder"
    stem_kernel: int = 3
    stem_norm: bool = True  # single-channel inputs disable this (the norm would be constant)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ShapeError(f"fct_layer: variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.attention.channels != self.filters:
            raise ShapeError(f"fct_layer: attention channels {self.attention.channels} "
                             f"!= filters {self.filters}")


@dataclass
class FctLayerParams:
    norm: NormParams  # None when cfg.stem_norm is off
    conv1: ConvParams
    conv2: ConvParams
    attention: AttentionParams
    wf: WideFocusParams


@dataclass
class FctLayerTrace:
    """Named intermediates of one layer forward.

    `stem` (the pre-pool stem feature, needed as the full-resolution skip)
    is always recorded; the z_* fields are populated only when tracing is
    requested. z_attn must equal attn_path + v_res and z_out must equal
    wf_out + z_attn, which the tests re-verify numerically.
    """

    stem: object = None
    z_prev: object = None
    z_qkv: dict = None
    attn_path: object = None
    v_res: object = None
    z_attn: object = None
    wf_out: object = None
    z_out: object = None


def init_fct_layer(rng, in_channels, cfg: FctLayerConfig, dtype=np.float32):
    k = cfg.stem_kernel
    f = cfg.filters
    return FctLayerParams(
        norm=init_norm(in_channels, dtype=dtype) if cfg.stem_norm else None,
        conv1=init_conv(rng, k, k, in_channels, f, dtype=dtype),
        conv2=init_conv(rng, k, k, f, f, dtype=dtype),
        attention=init_attention(rng, cfg.attention, dtype=dtype),
        wf=init_wide_focus(rng, f, cfg.wf, dtype=dtype),
    )


def fct_layer_forward(x, cfg: FctLayerConfig, params: FctLayerParams, skip=None, trace=False):
    """Run one FCT layer; returns (y, FctLayerTrace).

    Encoder halves the spatial extents, decoder doubles them (its input is
    upsampled and concatenated with the required skip), bottleneck
    preserves them.
    """
    if cfg.variant == "decoder":
        if skip is None:
            raise ShapeError("decoder layer requires a skip tensor")
        x = upsample_nearest_2x(x)
        if skip.shape[0] != x.shape[0] or skip.shape[1:3] != x.shape[1:3]:
            raise ShapeError(f"skip shape {tuple(skip.shape)} does not match "
                             f"upsampled input {tuple(x.shape)}")
        x = concat_channels(x, skip)
    elif skip is not None:
        raise ShapeError(f"{cfg.variant} layer takes no skip tensor")

    h = layer_norm(x, params.norm) if params.norm is not None else x
    h = gelu(conv2d(h, params.conv1))
    h = gelu(conv2d(h, params.conv2))
    stem = h
    if cfg.variant == "encoder":
        h = max_pool2d(h)

    z_attn, attn_tr = convolutional_attention(h, cfg.attention, params.attention, trace=trace)
    wf_out = wide_focus(z_attn, cfg.wf, params.wf)
    y = add(wf_out, z_attn)

    tr = FctLayerTrace(stem=stem)
    if trace:
        tr.z_prev = attn_tr["z_prev"]
        tr.z_qkv = attn_tr["z_qkv"]
        tr.attn_path = attn_tr["attn_path"]
        tr.v_res = attn_tr["v_res"]
        tr.z_attn = z_attn
        tr.wf_out = wf_out
        tr.z_out = y
    return y, tr
