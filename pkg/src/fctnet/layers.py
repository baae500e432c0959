"""Differentiable layer primitives over NHWC tensors.

Convolution is cross-correlation, computed one kernel tap at a time:
each tap contributes a strided slice of the (padded) input mapped through
that tap's weights, which keeps striding, dilation and groups uniform and
vectorizes well for the small kernels used here. `same` padding pads
symmetrically with the extra pixel on the bottom/right and preserves
ceil(H/stride) output size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, record_op

SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC = 0.044715


@dataclass
class ConvParams:
    """Weights and geometry of one convolution.

    kernel is (K_h, K_w, C_in/groups, C_out); depthwise means
    groups == C_in == C_out with a (K_h, K_w, 1, C) kernel.
    """

    kernel: Tensor
    bias: Tensor
    stride: tuple = (1, 1)
    dilation: tuple = (1, 1)
    groups: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"conv: padding must be same|valid, got {self.padding!r}")
        if self.groups < 1:
            raise ShapeError("conv: groups must be positive")
        if min(self.dilation) < 1:
            raise ShapeError("conv: dilation must be >= 1")
        kh, kw, cin_g, cout = self.kernel.shape
        if cout % self.groups != 0:
            raise ShapeError(f"conv: output channels {cout} not divisible by groups {self.groups}")
        if self.bias.shape != (cout,):
            raise ShapeError(f"conv: bias shape {tuple(self.bias.shape)} != ({cout},)")


@dataclass
class NormParams:
    """Per-channel affine parameters of layer normalization."""

    gamma: Tensor
    beta: Tensor
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ShapeError("layer_norm: epsilon must be > 0")


@dataclass
class LinearParams:
    """A positionwise channel map (equivalent to a 1x1 convolution)."""

    weight: Tensor  # (C_in, C_out)
    bias: Tensor  # (C_out,)


def _same_pads(extent, k, stride, dilation):
    eff = (k - 1) * dilation + 1
    out = -(-extent // stride)  # ceil
    total = max(0, (out - 1) * stride + eff - extent)
    return out, total // 2, total - total // 2


def conv_output_shape(h, w, p: ConvParams):
    kh, kw = p.kernel.shape[0], p.kernel.shape[1]
    sh, sw = p.stride
    dh, dw = p.dilation
    eff_h = (kh - 1) * dh + 1
    eff_w = (kw - 1) * dw + 1
    if p.padding == "same":
        ho = -(-h // sh)
        wo = -(-w // sw)
    else:
        if eff_h > h or eff_w > w:
            raise ShapeError(f"conv: effective kernel ({eff_h}x{eff_w}) larger than input ({h}x{w})")
        ho = (h - eff_h) // sh + 1
        wo = (w - eff_w) // sw + 1
    return ho, wo


def conv2d(x, p: ConvParams):
    """Strided/dilated/grouped cross-correlation of an NHWC tensor."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N,H,W,C), got {tuple(x.shape)}")
    n, h, w, cin = x.shape
    kh, kw, cin_g, cout = p.kernel.shape
    g = p.groups
    if cin_g * g != cin:
        raise ShapeError(f"conv2d: input channels {cin} != kernel {cin_g} x groups {g}")
    sh, sw = p.stride
    dh, dw = p.dilation
    ho, wo = conv_output_shape(h, w, p)
    if p.padding == "same":
        _, pt, pb = _same_pads(h, kh, sh, dh)
        _, pl, pr = _same_pads(w, kw, sw, dw)
        eff_h = (kh - 1) * dh + 1
        eff_w = (kw - 1) * dw + 1
        if eff_h > h + pt + pb or eff_w > w + pl + pr:
            raise ShapeError(f"conv2d: effective kernel ({eff_h}x{eff_w}) larger than padded input")
    else:
        pt = pb = pl = pr = 0

    xd = x.data
    if pt or pb or pl or pr:
        xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        xp = xd
    kd = p.kernel.data
    depthwise = g == cin == cout

    out = np.zeros((n, ho, wo, cout), dtype=xd.dtype)
    for ki in range(kh):
        rows = slice(ki * dh, ki * dh + sh * ho, sh)
        for kj in range(kw):
            cols = slice(kj * dw, kj * dw + sw * wo, sw)
            xs = xp[:, rows, cols, :]
            if depthwise:
                out += xs * kd[ki, kj, 0, :]
            elif g == 1:
                out += (xs.reshape(-1, cin) @ kd[ki, kj]).reshape(n, ho, wo, cout)
            else:
                xg = xs.reshape(n, ho, wo, g, cin_g)
                wg = kd[ki, kj].reshape(cin_g, g, cout // g)
                out += np.einsum("nhwgi,igo->nhwgo", xg, wg).reshape(n, ho, wo, cout)
    out += p.bias.data
    result = Tensor(out)

    kernel_t, bias_t = p.kernel, p.bias

    def bwd(grad):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for ki in range(kh):
            rows = slice(ki * dh, ki * dh + sh * ho, sh)
            for kj in range(kw):
                cols = slice(kj * dw, kj * dw + sw * wo, sw)
                xs = xp[:, rows, cols, :]
                if depthwise:
                    gk[ki, kj, 0, :] = (xs * grad).sum(axis=(0, 1, 2))
                    gxp[:, rows, cols, :] += grad * kd[ki, kj, 0, :]
                elif g == 1:
                    gflat = grad.reshape(-1, cout)
                    gk[ki, kj] = xs.reshape(-1, cin).T @ gflat
                    gxp[:, rows, cols, :] += (gflat @ kd[ki, kj].T).reshape(n, ho, wo, cin)
                else:
                    xg = xs.reshape(n, ho, wo, g, cin_g)
                    gg = grad.reshape(n, ho, wo, g, cout // g)
                    wg = kd[ki, kj].reshape(cin_g, g, cout // g)
                    gk[ki, kj] = np.einsum("nhwgi,nhwgo->igo", xg, gg).reshape(cin_g, cout)
                    gxs = np.einsum("nhwgo,igo->nhwgi", gg, wg).reshape(n, ho, wo, cin)
                    gxp[:, rows, cols, :] += gxs
        gx = gxp[:, pt:pt + h, pl:pl + w, :] if (pt or pb or pl or pr) else gxp
        gb = grad.sum(axis=(0, 1, 2))
        return gx, gk, gb

    return record_op("conv2d", (x, kernel_t, bias_t), result, bwd)


def depthwise_conv2d(x, p: ConvParams):
    """conv2d restricted to one filter per channel (groups == C_in == C_out)."""
    cin = x.shape[-1]
    cout = p.kernel.shape[-1]
    if not (p.groups == cin == cout):
        raise ShapeError(f"depthwise_conv2d: groups ({p.groups}) must equal C_in ({cin}) and C_out ({cout})")
    return conv2d(x, p)


def linear(x, p: LinearParams):
    """Positionwise channel map on (..., C_in) tensors."""
    from .tensor import add, matmul

    return add(matmul(x, p.weight), p.bias)


def layer_norm(x, n: NormParams):
    """Normalize over the channel (last) axis, then scale/shift per channel."""
    c = x.shape[-1]
    if n.gamma.shape != (c,) or n.beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta length {tuple(n.gamma.shape)} != channels {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + n.epsilon)
    xhat = xc * inv
    out = Tensor(xhat * n.gamma.data + n.beta.data)

    gamma_t, beta_t = n.gamma, n.beta
    gd = n.gamma.data

    def bwd(grad):
        dxhat = grad * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        axes = tuple(range(grad.ndim - 1))
        ggamma = (grad * xhat).sum(axis=axes)
        gbeta = grad.sum(axis=axes)
        return gx, ggamma, gbeta

    return record_op("layer_norm", (x, gamma_t, beta_t), out, bwd)


def max_pool2d(x):
    """2x2/stride-2 max pooling; gradient goes to the first argmax per window."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: spatial extents must be even, got {h}x{w}")
    xd = x.data
    win = xd.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    flat = np.ascontiguousarray(win).reshape(n, h // 2, w // 2, 4, c)
    arg = flat.argmax(axis=3)
    out = Tensor(np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :])

    def bwd(grad):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        gw = gf.reshape(n, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        return (np.ascontiguousarray(gw).reshape(n, h, w, c),)

    return record_op("max_pool2d", (x,), out, bwd)


def avg_pool2d(x, factor):
    """Non-overlapping mean pooling by an integer factor (used by the input pyramid)."""
    n, h, w, c = x.shape
    f = int(factor)
    if h % f or w % f:
        raise ShapeError(f"avg_pool2d: extents {h}x{w} not divisible by {f}")
    xd = x.data
    out = Tensor(xd.reshape(n, h // f, f, w // f, f, c).mean(axis=(2, 4)))

    def bwd(grad):
        gg = grad[:, :, None, :, None, :] / (f * f)
        return (np.broadcast_to(gg, (n, h // f, f, w // f, f, c)).reshape(n, h, w, c).copy(),)

    return record_op("avg_pool2d", (x,), out, bwd)


def gelu(x):
    """tanh-approximated GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    xd = x.data
    u = SQRT_2_OVER_PI * (xd + GELU_CUBIC * xd ** 3)
    t = np.tanh(u)
    out = Tensor(0.5 * xd * (1.0 + t))

    def bwd(grad):
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * xd * xd)
        return (grad * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return record_op("gelu", (x,), out, bwd)


def softmax(x, axis=-1):
    """Max-subtracted stable softmax along `axis`."""
    xd = x.data
    y = xd - xd.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(grad):
        dot = (grad * y).sum(axis=axis, keepdims=True)
        return (y * (grad - dot),)

    return record_op("softmax", (x,), out, bwd)


def log_softmax(x, axis=-1):
    """log(softmax(x)) computed stably; used by the cross-entropy loss."""
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    s = xd - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    out = Tensor(s - lse)
    prob = np.exp(out.data)

    def bwd(grad):
        return (grad - prob * grad.sum(axis=axis, keepdims=True),)

    return record_op("log_softmax", (x,), out, bwd)


def upsample_nearest(x, factor, out_hw=None):
    """Replicate each pixel into a factor x factor block, optionally cropped."""
    n, h, w, c = x.shape
    f = int(factor)
    up_h, up_w = h * f, w * f
    oh, ow = out_hw if out_hw is not None else (up_h, up_w)
    if not (up_h - f < oh <= up_h and up_w - f < ow <= up_w):
        raise ShapeError(f"upsample_nearest: target {oh}x{ow} incompatible with {h}x{w} x{f}")
    y = np.broadcast_to(x.data[:, :, None, :, None, :], (n, h, f, w, f, c)).reshape(n, up_h, up_w, c)
    out = Tensor(y[:, :oh, :ow, :].copy())

    def bwd(grad):
        if (oh, ow) != (up_h, up_w):
            gfull = np.zeros((n, up_h, up_w, c), dtype=grad.dtype)
            gfull[:, :oh, :ow, :] = grad
        else:
            gfull = grad
        return (gfull.reshape(n, h, f, w, f, c).sum(axis=(2, 4)),)

    return record_op("upsample_nearest", (x,), out, bwd)


def upsample_nearest_2x(x):
    return upsample_nearest(x, 2)


def nearest_resample(x, out_hw):
    """Nearest-neighbor resample to an arbitrary spatial size.

    Index mapping is floor(i*in/out), so equal sizes are an identity.
    """
    n, h, w, c = x.shape
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return x
    ri = (np.arange(oh) * h) // oh
    ci = (np.arange(ow) * w) // ow
    out = Tensor(x.data[:, ri[:, None], ci[None, :], :])

    def bwd(grad):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), ri[:, None], ci[None, :]), grad)
        return (gx,)

    return record_op("nearest_resample", (x,), out, bwd)


def concat_channels(a, b):
    """Concatenate along the channel axis; all other extents must match."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_channels: shapes {tuple(a.shape)} and {tuple(b.shape)} "
                         "differ outside the channel axis")
    ca = a.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))

    def bwd(grad):
        return grad[..., :ca], grad[..., ca:]

    return record_op("concat_channels", (a, b), out, bwd)


def slice_channels(x, start, stop):
    """Channel-axis slice [start, stop); gradient zero-pads back."""
    c = x.shape[-1]
    if not (0 <= start <= stop <= c):
        raise ShapeError(f"slice_channels: [{start}:{stop}) out of range for C={c}")
    out = Tensor(x.data[..., start:stop].copy())

    def bwd(grad):
        g = np.zeros_like(x.data)
        g[..., start:stop] = grad
        return (g,)

    return record_op("slice_channels", (x,), out, bwd)


def pad2d(x, pads):
    """Zero-pad spatial axes by (top, bottom, left, right)."""
    pt, pb, pl, pr = pads
    n, h, w, c = x.shape
    out = Tensor(np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))))

    def bwd(grad):
        return (grad[:, pt:pt + h, pl:pl + w, :],)

    return record_op("pad2d", (x,), out, bwd)


# ---------------------------------------------------------------------------
# parameter initialization
#
# Kernels draw from uniform(-1, 1)/sqrt(fan_in) with fan_in = K_h*K_w*C_in/groups;
# biases and beta start at zero, gamma at one, so zero input stays zero
# through any freshly initialized stack.


def init_conv(rng, kh, kw, cin, cout, groups=1, stride=(1, 1), dilation=(1, 1),
              padding="same", dtype=np.float32):
    cin_g = cin // groups
    if cin_g * groups != cin:
        raise ShapeError(f"init_conv: groups {groups} does not divide C_in {cin}")
    fan_in = kh * kw * cin_g
    limit = 1.0 / np.sqrt(fan_in)
    kernel = rng.uniform(-limit, limit, size=(kh, kw, cin_g, cout)).astype(dtype)
    return ConvParams(
        kernel=Tensor(kernel, requires_grad=True),
        bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
        stride=tuple(stride), dilation=tuple(dilation), groups=groups, padding=padding,
    )


def init_depthwise(rng, k, channels, stride=(1, 1), padding="same", dtype=np.float32):
    return init_conv(rng, k, k, channels, channels, groups=channels,
                     stride=stride, padding=padding, dtype=dtype)


def init_linear(rng, cin, cout, dtype=np.float32):
    limit = 1.0 / np.sqrt(cin)
    weight = rng.uniform(-limit, limit, size=(cin, cout)).astype(dtype)
    return LinearParams(
        weight=Tensor(weight, requires_grad=True),
        bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
    )


def init_norm(channels, epsilon=1e-6, dtype=np.float32):
    return NormParams(
        gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
        beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        epsilon=epsilon,
    )
