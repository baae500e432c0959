"""Dense float tensors with reverse-mode automatic differentiation.

Every value in the package is a `Tensor`: a numpy float array plus a
`requires_grad` flag and an optional `.grad` buffer. Differentiable ops
record themselves on the currently active `Tape`; `backward` replays the
tape in reverse and accumulates gradients into the leaf tensors.

Conventions, used everywhere:
  * layout is channels-last; 4-D activations are (N, H, W, C)
  * storage dtype is float32 for training, float64 for gradient checks
  * broadcasting in elementwise ops is restricted to a scalar operand or
    a 1-D operand matching the trailing channel axis (bias shape);
    anything else needs an explicit reshape
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

# The tape ops record onto; None means forward-only (no recording).
_ACTIVE_TAPE = None


class Tensor:
    """A dense float array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """A view of the same data with no grad tracking."""
        return Tensor(self.data, requires_grad=False)

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; all dispatch to the recorded ops below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of operations for one forward pass.

    Recording order is topological by construction: an op's inputs are
    registered before the op itself. `backward` walks entries exactly
    once, in reverse order.
    """

    def __init__(self):
        self._ids = {}  # id(tensor) -> node id
        self.nodes = []  # node id -> Tensor
        self.ops = []  # (name, in_ids, out_id, backward_fn)
        self._produced = set()  # node ids that are op outputs

    def node_id(self, t):
        nid = self._ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self._ids[id(t)] = nid
            self.nodes.append(t)
        return nid

    def record(self, name, inputs, output, backward_fn):
        in_ids = tuple(self.node_id(t) for t in inputs)
        out_id = self.node_id(output)
        self.ops.append((name, in_ids, out_id, backward_fn))
        self._produced.add(out_id)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def active_tape():
    return _ACTIVE_TAPE


def record_op(name, inputs, out, backward_fn):
    """Register `out = name(*inputs)` on the active tape, if any.

    `backward_fn(grad_out) -> tuple` must return one gradient array (or
    None) per input, aligned with `inputs`. Extension point for fused
    layer ops defined outside this module.
    """
    tape = _ACTIVE_TAPE
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tape.record(name, inputs, out, backward_fn)
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(leaf) into `.grad` of every requires_grad leaf.

    The loss must be scalar and recorded on `tape`. Leaf grads are
    overwritten (not accumulated across separate backward calls); a leaf
    feeding several ops still accumulates additively within one call.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ShapeError(f"backward needs a scalar loss, got shape {shape}")
    loss_id = tape._ids.get(id(loss))
    if loss_id is None or loss_id not in tape._produced:
        raise ValueError("loss tensor is detached from this tape")

    grads = {loss_id: np.ones_like(loss.data)}
    for name, in_ids, out_id, backward_fn in reversed(tape.ops):
        g = grads.pop(out_id, None)  # complete by now: consumers already visited
        if g is None:
            continue
        in_grads = backward_fn(g)
        for nid, gi in zip(in_ids, in_grads):
            if gi is None or not tape.nodes[nid].requires_grad:
                continue
            acc = grads.get(nid)
            grads[nid] = gi if acc is None else acc + gi

    for nid, g in grads.items():
        t = tape.nodes[nid]
        if nid not in tape._produced and t.requires_grad:
            t.grad = g


def check_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# elementwise ops


def _as_operands(a, b, op):
    """Resolve the restricted broadcast rule; returns (a, b_or_scalar, mode)."""
    if not isinstance(a, Tensor):
        raise TypeError(f"{op}: first operand must be a Tensor")
    if isinstance(b, Tensor):
        if b.shape == a.shape:
            return a, b, "same"
        if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
            return a, b, "bias"
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not match "
                         "(only equal shapes, a trailing-channel vector, or a scalar broadcast)")
    if np.isscalar(b):
        return a, float(b), "scalar"
    raise TypeError(f"{op}: second operand must be a Tensor or scalar")


def _reduce_to_bias(g, ndim):
    # gradient of a trailing-channel operand: sum out all leading axes
    return g.sum(axis=tuple(range(ndim - 1))) if ndim > 1 else g


def add(a, b):
    a, b, mode = _as_operands(a, b, "add")
    if mode == "scalar":
        out = Tensor(a.data + b)
        return record_op("add", (a,), out, lambda g: (g,))
    out = Tensor(a.data + b.data)

    def bwd(g):
        gb = g if mode == "same" else _reduce_to_bias(g, a.ndim)
        return g, gb

    return record_op("add", (a, b), out, bwd)


def sub(a, b):
    a, b, mode = _as_operands(a, b, "sub")
    if mode == "scalar":
        out = Tensor(a.data - b)
        return record_op("sub", (a,), out, lambda g: (g,))
    out = Tensor(a.data - b.data)

    def bwd(g):
        gb = -g if mode == "same" else -_reduce_to_bias(g, a.ndim)
        return g, gb

    return record_op("sub", (a, b), out, bwd)


def mul(a, b):
    a, b, mode = _as_operands(a, b, "mul")
    if mode == "scalar":
        out = Tensor(a.data * b)
        return record_op("mul", (a,), out, lambda g: (g * b,))
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g * bd
        gb = g * ad
        if mode == "bias":
            gb = _reduce_to_bias(gb, a.ndim)
        return ga, gb

    return record_op("mul", (a, b), out, bwd)


def div(a, b):
    a, b, mode = _as_operands(a, b, "div")
    if mode == "scalar":
        if b == 0.0:
            raise NumericsError("div: scalar divisor is zero")
        out = Tensor(a.data / b)
        return record_op("div", (a,), out, lambda g: (g / b,))
    if np.any(b.data == 0.0):
        raise NumericsError("div: divisor contains zeros")
    out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        if mode == "bias":
            gb = _reduce_to_bias(gb, a.ndim)
        return ga, gb

    return record_op("div", (a, b), out, bwd)


def neg(a):
    out = Tensor(-a.data)
    return record_op("neg", (a,), out, lambda g: (-g,))


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b):
    """Batched matrix product (..., M, K) @ (..., K, P).

    Leading batch extents must be equal; alternatively either operand may
    be plain 2-D and is applied across all batches of the other.
    """
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {tuple(A.shape)} and {tuple(B.shape)}")
    if A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {tuple(A.shape)} vs {tuple(B.shape)}")
    if A.ndim > 2 and B.ndim > 2 and A.shape[:-2] != B.shape[:-2]:
        raise ShapeError(f"matmul batch extents differ: {tuple(A.shape)} vs {tuple(B.shape)}")
    out = Tensor(A @ B)

    def bwd(g):
        ga = g @ B.swapaxes(-1, -2)
        if A.ndim == 2 and ga.ndim > 2:
            ga = ga.reshape(-1, *ga.shape[-2:]).sum(axis=0)
        gb = A.swapaxes(-1, -2) @ g
        if B.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *gb.shape[-2:]).sum(axis=0)
        return ga, gb

    return record_op("matmul", (a, b), out, bwd)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    norm = tuple(ax + ndim if ax < 0 else ax for ax in axes)
    for ax in norm:
        if not 0 <= ax < ndim:
            raise ShapeError(f"reduce: axis {ax} out of range for ndim {ndim}")
    if len(set(norm)) != len(norm):
        raise ShapeError(f"reduce: duplicate axes {axes}")
    return norm


def reduce(a, axes=None, kind="sum", keepdims=False):
    """Reduce over `axes` (None = all; empty tuple = identity).

    kind is one of sum|mean|max. The max gradient flows to the first
    argmax of each reduced group, first in flat (row-major) order.
    """
    if kind not in ("sum", "mean", "max"):
        raise ValueError(f"reduce: unknown kind {kind!r}")
    if axes is not None and not isinstance(axes, int) and len(axes) == 0:
        return a
    axes_n = _normalize_axes(axes, a.ndim)
    ad = a.data

    if kind in ("sum", "mean"):
        out_data = ad.sum(axis=axes_n, keepdims=keepdims)
        count = 1
        for ax in axes_n:
            count *= ad.shape[ax]
        if kind == "mean":
            out_data = out_data / count
        out = Tensor(out_data)

        def bwd(g):
            gg = g if keepdims else np.expand_dims(g, axes_n)
            gg = np.broadcast_to(gg, ad.shape)
            return ((gg / count) if kind == "mean" else gg.copy(),)

        return record_op(kind, (a,), out, bwd)

    # max: move reduced axes (ascending) to the back so that the flat
    # argmax of each group is the lowest flat index of the original array
    axes_s = tuple(sorted(axes_n))
    kept = tuple(ax for ax in range(a.ndim) if ax not in axes_s)
    moved = np.moveaxis(ad, axes_s, range(len(kept), a.ndim))
    kept_shape = moved.shape[: len(kept)]
    flat = moved.reshape(kept_shape + (-1,))
    arg = flat.argmax(axis=-1)
    out_flat = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out_data = out_flat
    if keepdims:
        out_data = np.expand_dims(out_flat, axes_s)
    out = Tensor(out_data)

    def bwd(g):
        gflat = g if not keepdims else g.squeeze(axis=axes_s)
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, arg[..., None], gflat[..., None], axis=-1)
        gx = gx.reshape(moved.shape)
        return (np.moveaxis(gx, range(len(kept), a.ndim), axes_s),)

    return record_op("max", (a,), out, bwd)


def reduce_sum(a, axes=None, keepdims=False):
    return reduce(a, axes, "sum", keepdims)


def reduce_mean(a, axes=None, keepdims=False):
    return reduce(a, axes, "mean", keepdims)


def reduce_max(a, axes=None, keepdims=False):
    return reduce(a, axes, "max", keepdims)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, new_shape):
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {tuple(a.shape)} as {new_shape} (element count differs)")
    old_shape = a.shape
    out = Tensor(a.data.reshape(new_shape))
    return record_op("reshape", (a,), out, lambda g: (g.reshape(old_shape),))


def permute(a, order):
    order = tuple(int(ax) for ax in order)
    if sorted(order) != list(range(a.ndim)):
        raise ShapeError(f"permute: {order} is not a permutation of axes for ndim {a.ndim}")
    inverse = np.argsort(order)
    out = Tensor(np.ascontiguousarray(a.data.transpose(order)))
    return record_op("permute", (a,), out, lambda g: (np.ascontiguousarray(g.transpose(inverse)),))
