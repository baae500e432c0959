"""Wide-Focus: the multi-branch dilated-convolution feed-forward block.

B parallel convolution branches with increasing dilation run on the same
input, each followed by gelu; the branch outputs are summed in index
order and passed through a 3-kernel aggregation convolution plus gelu.
Channel width is preserved throughout (no hidden expansion).

head_type selects the branch convolution family:
  * conv2d: k x k spatial convs (the default, B=3, dilations 1,2,3)
  * conv1d: convolutions along the flattened token axis
  * mlp: pointwise (1x1) convs, dilation irrelevant
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import ConvParams, conv2d, gelu, init_conv, pad2d
from .tensor import add, reshape

HEAD_TYPES = ("mlp", "conv1d", "conv2d")


@dataclass
class WideFocusConfig:
    head_type: str = "conv2d"
    branches: int = 3
    dilations: tuple = (1, 2, 3)
    kernel: int = 3
    kernels: tuple = None  # optional per-branch kernel sizes (e.g. (3, 4))

    def __post_init__(self):
        if self.head_type not in HEAD_TYPES:
            raise ShapeError(f"wide_focus: head_type must be one of {HEAD_TYPES}, got {self.head_type!r}")
        if self.branches < 1:
            raise ShapeError("wide_focus: need at least one branch")
        self.dilations = tuple(int(d) for d in self.dilations)
        if len(self.dilations) != self.branches:
            raise ShapeError(f"wide_focus: {self.branches} branches but {len(self.dilations)} dilations")
        if min(self.dilations) < 1:
            raise ShapeError("wide_focus: dilations must be >= 1")
        if self.kernels is not None:
            self.kernels = tuple(int(k) for k in self.kernels)
            if len(self.kernels) != self.branches:
                raise ShapeError(f"wide_focus: {self.branches} branches but {len(self.kernels)} kernels")

    def branch_kernel(self, i):
        return self.kernels[i] if self.kernels is not None else self.kernel


@dataclass
class WideFocusParams:
    branch_convs: list  # one ConvParams per branch
    agg_conv: ConvParams


def _branch_geometry(cfg, i):
    """(k_h, k_w, d_h, d_w) of branch i under the head type."""
    k = cfg.branch_kernel(i)
    d = cfg.dilations[i]
    if cfg.head_type == "mlp":
        return 1, 1, 1, 1
    if cfg.head_type == "conv1d":
        return 1, k, 1, d
    return k, k, d, d


def _agg_geometry(cfg):
    if cfg.head_type == "mlp":
        return 1, 1
    if cfg.head_type == "conv1d":
        return 1, 3
    return 3, 3


def init_wide_focus(rng, channels, cfg: WideFocusConfig, dtype=np.float32):
    branch_convs = []
    for i in range(cfg.branches):
        kh, kw, dh, dw = _branch_geometry(cfg, i)
        branch_convs.append(init_conv(rng, kh, kw, channels, channels,
                                      dilation=(dh, dw), dtype=dtype))
    ah, aw = _agg_geometry(cfg)
    return WideFocusParams(
        branch_convs=branch_convs,
        agg_conv=init_conv(rng, ah, aw, channels, channels, dtype=dtype),
    )


def _apply_conv_same(x, p: ConvParams):
    """Size-preserving conv; even kernels pad with the extra pixel on the
    top/left (conv2d's own same padding is bottom/right-heavy)."""
    kh, kw = p.kernel.shape[0], p.kernel.shape[1]
    dh, dw = p.dilation
    eff_h = (kh - 1) * dh + 1
    eff_w = (kw - 1) * dw + 1
    if eff_h % 2 == 1 and eff_w % 2 == 1:
        return conv2d(x, p)
    pads = (eff_h - 1 - (eff_h - 1) // 2, (eff_h - 1) // 2,
            eff_w - 1 - (eff_w - 1) // 2, (eff_w - 1) // 2)
    valid = ConvParams(kernel=p.kernel, bias=p.bias, stride=p.stride,
                       dilation=p.dilation, groups=p.groups, padding="valid")
    return conv2d(pad2d(x, pads), valid)


def wide_focus(z_attn, cfg: WideFocusConfig, params: WideFocusParams):
    """Branch convs + gelu, summed, then aggregation conv + gelu. Shape-preserving."""
    x = z_attn
    if cfg.head_type == "conv1d":
        n, h, w, c = z_attn.shape
        x = reshape(z_attn, (n, 1, h * w, c))
    acc = None
    for p in params.branch_convs:
        y = gelu(_apply_conv_same(x, p))
        acc = y if acc is None else add(acc, y)
    out = gelu(_apply_conv_same(acc, params.agg_conv))
    if cfg.head_type == "conv1d":
        out = reshape(out, z_attn.shape)
    return out


def fct_ffn_residual(z_attn, cfg: WideFocusConfig, params: WideFocusParams):
    """z = WideFocus(z') + z', the block's residual form."""
    return add(wide_focus(z_attn, cfg, params), z_attn)


def table_configs():
    """The ten ablation configurations: MLP, Conv1D at 1..4 branches,
    Conv2D at 1..4 branches, and the two-branch Conv2D with kernels 3 and 4."""
    configs = [WideFocusConfig("mlp", 1, (1,))]
    for b in range(1, 5):
        configs.append(WideFocusConfig("conv1d", b, tuple(range(1, b + 1))))
    for b in range(1, 5):
        configs.append(WideFocusConfig("conv2d", b, tuple(range(1, b + 1))))
    configs.append(WideFocusConfig("conv2d", 2, (1, 1), kernels=(3, 4)))
    return configs
