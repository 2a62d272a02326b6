"""
Differentiable kernels

Each op is a `Function` subclass plus a lowercase wrapper. Spatial tensors
are channels-last, either [H, W, C] or [B, H, W, C]. Apart from adding a
tensor whose shape equals the trailing dimensions of the other operand,
nothing broadcasts implicitly: use `broadcast_to` or `scale` for the rest.
"""

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError
from .profiler import record_op
from .tensor import Function, Tensor, current_rng

Scalar = Union[int, float]
PadWidth = Sequence[Tuple[int, int]]

GELU_COEF = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def _coerce(value: Union[Tensor, Scalar, np.ndarray], like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _is_trailing(small: Tuple[int, ...], big: Tuple[int, ...]) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _binary_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if _is_trailing(b.shape, a.shape):
        return a.shape
    if _is_trailing(a.shape, b.shape):
        return b.shape
    raise ShapeError(
        f"{op}: shapes {a.shape} and {b.shape} differ and neither is a trailing-dimension "
        f"suffix of the other; use broadcast_to for other broadcasts"
    )


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` (leading axes and size-1 axes)"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_batched(x: np.ndarray, op: str) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{op} expects [H, W, C] or [B, H, W, C], got shape {x.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------
class Add(Function):
    def forward(self, a, b):
        self.a_shape, self.b_shape = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return _reduce_to(grad, self.a_shape), _reduce_to(grad, self.b_shape)


class Sub(Function):
    def forward(self, a, b):
        self.a_shape, self.b_shape = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return _reduce_to(grad, self.a_shape), -_reduce_to(grad, self.b_shape)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _reduce_to(grad * self.b, self.a.shape), _reduce_to(grad * self.a, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Scale(Function):
    """Multiply by a constant array (dropout masks, pooling corrections)"""

    def forward(self, a, factor=None):
        self.factor = factor
        return (a * factor).astype(a.dtype, copy=False)

    def backward(self, grad):
        return ((grad * self.factor).astype(grad.dtype, copy=False),)


def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    b = _coerce(b, a)
    _binary_shape(a, b, "add")
    return Add.apply(a, b)


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    b = _coerce(b, a)
    _binary_shape(a, b, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    b = _coerce(b, a)
    _binary_shape(a, b, "mul")
    return Mul.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def scale(a: Tensor, factor: Union[np.ndarray, Scalar]) -> Tensor:
    """
    Multiply `a` by a constant that is not differentiated

    `factor` may broadcast against `a` in any numpy-compatible way; this is
    the explicit form of broadcasting for constants.
    """
    factor = np.asarray(factor, dtype=a.dtype)
    try:
        np.broadcast_shapes(factor.shape, a.shape)
    except ValueError as exc:
        raise ShapeError(f"scale: factor of shape {factor.shape} does not broadcast to {a.shape}") from exc
    if np.broadcast_shapes(factor.shape, a.shape) != a.shape:
        raise ShapeError(f"scale: factor of shape {factor.shape} would enlarge {a.shape}")
    return Scale.apply(a, factor=factor)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------
class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class GELU(Function):
    """tanh approximation"""

    def forward(self, x):
        self.x = x
        self.t = np.tanh(GELU_COEF * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        dinner = GELU_COEF * (1.0 + 3 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner),)


class Sigmoid(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------
def _norm_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _norm_axes(axis, x.ndim)
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Sum):
    def forward(self, x, axis=None, keepdims=False):
        out = super().forward(x, axis=axis, keepdims=keepdims)
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        return np.asarray(out / self.count, dtype=x.dtype)

    def backward(self, grad):
        (g,) = super().backward(grad)
        return (g / self.count,)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def global_avg_pool(x: Tensor) -> Tensor:
    """[H, W, C] -> [C] or [B, H, W, C] -> [B, C]"""
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool expects [H, W, C] or [B, H, W, C], got {x.shape}")
    return mean(x, axis=(-3, -2))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------
class Reshape(Function):
    def forward(self, x, shape=None):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Permute(Function):
    def forward(self, x, axes=None):
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(x, axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.transpose(grad, self.inverse)),)


class Concat(Function):
    def forward(self, *xs, axis=0):
        self.axis = axis
        self.sizes = [x.shape[axis] for x in xs]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class GetItem(Function):
    def forward(self, x, index=None):
        self.shape, self.dtype, self.index = x.shape, x.dtype, index
        return np.array(x[index], copy=True)

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        idx = self.index if isinstance(self.index, tuple) else (self.index,)
        if any(isinstance(i, (np.ndarray, list)) for i in idx):
            np.add.at(out, self.index, grad)
        else:
            out[self.index] += grad
        return (out,)


class Take(Function):
    def forward(self, x, indices=None, axis=0):
        self.shape, self.indices, self.axis = x.shape, indices, axis
        return np.take(x, indices, axis=axis)

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(np.moveaxis(out, self.axis, 0), self.indices, np.moveaxis(grad, self.axis, 0))
        return (out,)


class Pad(Function):
    def forward(self, x, pad_width=None, value=0.0):
        self.slices = tuple(slice(b, b + n) for (b, _), n in zip(pad_width, x.shape))
        return np.pad(x, pad_width, mode="constant", constant_values=value)

    def backward(self, grad):
        return (np.ascontiguousarray(grad[self.slices]),)


class BroadcastTo(Function):
    def forward(self, x, shape=None):
        self.shape = x.shape
        return np.ascontiguousarray(np.broadcast_to(x, shape))

    def backward(self, grad):
        return (_reduce_to(grad, self.shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    known = int(np.prod([s for s in shape if s != -1]))
    if -1 not in shape and known != x.size or (-1 in shape and (known == 0 or x.size % known)):
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}")
    return Reshape.apply(x, shape=shape)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of the {x.ndim} axes of {x.shape}")
    return Permute.apply(x, axes=axes)


def transpose(x: Tensor, axis1: int = -2, axis2: int = -1) -> Tensor:
    axes = list(range(x.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return permute(x, axes)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    ref = xs[0].shape
    axis = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(x.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat along axis {axis}: {ref} and {x.shape} disagree off-axis")
    return Concat.apply(*xs, axis=axis)


def getitem(x: Tensor, index) -> Tensor:
    return GetItem.apply(x, index=index)


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather `indices` (1-D) along `axis`; repeated indices accumulate in backward"""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ShapeError(f"take expects 1-D indices, got shape {indices.shape}")
    axis = axis % x.ndim
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[axis]):
        raise ShapeError(f"take: indices out of range for axis {axis} of extent {x.shape[axis]}")
    return Take.apply(x, indices=indices, axis=axis)


def pad(x: Tensor, pad_width: PadWidth, value: float = 0.0) -> Tensor:
    pad_width = tuple((int(b), int(a)) for b, a in pad_width)
    if len(pad_width) != x.ndim:
        raise ShapeError(f"pad: {len(pad_width)} pad pairs for a {x.ndim}-d tensor")
    if all(b == 0 and a == 0 for b, a in pad_width):
        return x
    return Pad.apply(x, pad_width=pad_width, value=value)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        target = np.broadcast_shapes(x.shape, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {x.shape} cannot broadcast to {shape}") from exc
    if target != shape:
        raise ShapeError(f"broadcast_to: {x.shape} cannot broadcast to {shape}")
    if x.shape == shape:
        return x
    return BroadcastTo.apply(x, shape=shape)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------
class MatMul(Function):
    def forward(self, a, b, tag=None):
        self.a, self.b = a, b
        out = np.matmul(a, b)
        record_op("matmul", int(np.prod(a.shape[:-1])) * a.shape[-1] * b.shape[-1], tag)
        return out

    def backward(self, grad):
        a, b = self.a, self.b
        da = np.matmul(grad, np.swapaxes(b, -1, -2))
        if b.ndim == 2:
            db = a.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
        else:
            db = np.matmul(np.swapaxes(a, -1, -2), grad)
        return da, db


def matmul(a: Tensor, b: Tensor, tag: Optional[str] = None) -> Tensor:
    """
    Matrix product over the last two axes

    `b` is either a 2-D matrix shared across all leading axes of `a`, or has
    exactly the same leading axes as `a`.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch extents disagree: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b, tag=tag)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, tag: Optional[str] = None) -> Tensor:
    """x[..., in] @ weight[in, out] + bias[out]"""
    if x.ndim == 1:
        out = matmul(reshape(x, (1, -1)), weight, tag=tag)
        out = reshape(out, (weight.shape[-1],))
    else:
        out = matmul(x, weight, tag=tag)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# softmax and losses
# ---------------------------------------------------------------------------
class Softmax(Function):
    def forward(self, x, axis=-1, mask=None):
        self.axis = axis
        if mask is None:
            shifted = x - x.max(axis=axis, keepdims=True)
            e = np.exp(shifted)
        else:
            peak = np.max(np.where(mask, x, -np.inf), axis=axis, keepdims=True)
            peak = np.where(np.isfinite(peak), peak, 0.0)
            e = np.where(mask, np.exp(np.where(mask, x - peak, 0.0)), 0.0)
        total = e.sum(axis=axis, keepdims=True)
        self.out = (e / np.where(total > 0, total, 1.0)).astype(x.dtype, copy=False)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Numerically stable softmax

    `mask` (bool, broadcastable to x) marks the entries that take part;
    masked entries get probability 0 and a fully masked slice is all zeros.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError as exc:
            raise ShapeError(f"softmax: mask {mask.shape} does not broadcast to {x.shape}") from exc
    return Softmax.apply(x, axis=axis, mask=mask)


class CrossEntropy(Function):
    def forward(self, logits, labels=None, valid=None):
        k = logits.shape[-1]
        flat = logits.reshape(-1, k)
        lab = labels.reshape(-1)
        keep = valid.reshape(-1)
        peak = flat.max(axis=1, keepdims=True)
        e = np.exp(flat - peak)
        total = e.sum(axis=1, keepdims=True)
        lse = np.log(total) + peak
        probs = e / total
        safe = np.where(keep, lab, 0)
        picked = flat[np.arange(flat.shape[0]), safe]
        self.count = max(int(keep.sum()), 1)
        loss = ((lse[:, 0] - picked) * keep).sum() / self.count
        grad = probs
        grad[np.arange(flat.shape[0]), safe] -= 1.0
        grad *= keep[:, None]
        self.grad_logits = (grad / self.count).reshape(logits.shape).astype(logits.dtype, copy=False)
        return np.asarray(loss, dtype=logits.dtype)

    def backward(self, grad):
        return (self.grad_logits * grad,)


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: Optional[int] = 255) -> Tensor:
    """
    Mean softmax cross-entropy over the non-ignored positions

    Args:
        logits: [..., K] unnormalized scores
        labels: integer class ids with the leading shape of `logits`
        ignore_index: label value excluded from the loss

    Returns:
        0-d tensor; 0 when every position is ignored
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: labels {labels.shape} vs logits {logits.shape}")
    valid = np.ones(labels.shape, dtype=bool) if ignore_index is None else labels != ignore_index
    k = logits.shape[-1]
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise ValueError(
            f"cross_entropy: label {int(labels[bad].reshape(-1)[0])} is outside [0, {k}) "
            f"and is not the ignore index {ignore_index}"
        )
    return CrossEntropy.apply(logits, labels=labels.astype(np.int64), valid=valid)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------
def _normalize_backward(dxhat: np.ndarray, xhat: np.ndarray, inv: np.ndarray, axes, n: int) -> np.ndarray:
    return (inv / n) * (
        n * dxhat
        - dxhat.sum(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
    )


class LayerNormFn(Function):
    def forward(self, x, gamma, beta, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv
        self.gamma = gamma
        return (self.xhat * gamma + beta).astype(x.dtype, copy=False)

    def backward(self, grad):
        lead = tuple(range(grad.ndim - 1))
        dxhat = grad * self.gamma
        dx = _normalize_backward(dxhat, self.xhat, self.inv, -1, self.xhat.shape[-1])
        return dx, (grad * self.xhat).sum(axis=lead), grad.sum(axis=lead)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} for input {x.shape}")
    return LayerNormFn.apply(x, gamma, beta, eps=eps)


class BatchNormFn(Function):
    def forward(self, x, gamma, beta, running_mean=None, running_var=None,
                training=True, momentum=0.1, eps=1e-5):
        axes = tuple(range(x.ndim - 1))
        self.axes, self.training, self.gamma = axes, training, gamma
        if training:
            n = int(np.prod([x.shape[a] for a in axes]))
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            unbiased = var * n / max(n - 1, 1)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
            self.n = n
        else:
            mu, var = running_mean, running_var
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv
        return (self.xhat * gamma + beta).astype(x.dtype, copy=False)

    def backward(self, grad):
        dxhat = grad * self.gamma
        if self.training:
            dx = _normalize_backward(dxhat, self.xhat, self.inv, self.axes, self.n)
        else:
            dx = dxhat * self.inv
        return dx, (grad * self.xhat).sum(axis=self.axes), grad.sum(axis=self.axes)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """
    Batch norm over every axis but the last (channels)

    In training mode the running statistics are updated in place.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or running_mean.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels vs parameters of shape {gamma.shape}")
    return BatchNormFn.apply(
        x, gamma, beta, running_mean=running_mean, running_var=running_var,
        training=training, momentum=momentum, eps=eps,
    )


# ---------------------------------------------------------------------------
# convolution, resize, pooling
# ---------------------------------------------------------------------------
def _out_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


class Conv2dFn(Function):
    def forward(self, x, w, stride=1, padding=0, groups=1, tag=None):
        x, squeeze = _as_batched(x, "conv2d")
        kh, kw, cpg, cout = w.shape
        b, h, wd, _ = x.shape
        ho, wo = _out_extent(h, kh, stride, padding), _out_extent(wd, kw, stride, padding)
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        self.xp, self.w, self.squeeze = xp, w, squeeze
        self.stride, self.padding, self.groups = stride, padding, groups
        self.out_hw = (ho, wo)
        depthwise = groups > 1 and cpg == 1 and cout == groups
        self.depthwise = depthwise
        out = np.zeros((b, ho, wo, cout), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
                if groups == 1:
                    out += np.tensordot(xs, w[i, j], axes=([3], [0]))
                elif depthwise:
                    out += xs * w[i, j, 0]
                else:
                    wg = w[i, j].reshape(cpg, groups, cout // groups)
                    xg = xs.reshape(b, ho, wo, groups, cpg)
                    out += np.einsum("nhwgc,cgo->nhwgo", xg, wg).reshape(b, ho, wo, cout)
        record_op("conv", b * ho * wo * kh * kw * cpg * cout, tag)
        return out[0] if squeeze else out

    def backward(self, grad):
        g = grad[None] if self.squeeze else grad
        xp, w, s, groups = self.xp, self.w, self.stride, self.groups
        kh, kw, cpg, cout = w.shape
        b = xp.shape[0]
        ho, wo = self.out_hw
        dxp = np.zeros_like(xp, dtype=g.dtype)
        dw = np.zeros_like(w, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                window = (slice(None), slice(i, i + s * ho, s), slice(j, j + s * wo, s), slice(None))
                xs = xp[window]
                if groups == 1:
                    dxp[window] += np.tensordot(g, w[i, j], axes=([3], [1]))
                    dw[i, j] = np.tensordot(xs, g, axes=([0, 1, 2], [0, 1, 2]))
                elif self.depthwise:
                    dxp[window] += g * w[i, j, 0]
                    dw[i, j, 0] = (xs * g).sum(axis=(0, 1, 2))
                else:
                    wg = w[i, j].reshape(cpg, groups, cout // groups)
                    gg = g.reshape(b, ho, wo, groups, cout // groups)
                    xg = xs.reshape(b, ho, wo, groups, cpg)
                    dxp[window] += np.einsum("nhwgo,cgo->nhwgc", gg, wg).reshape(xs.shape)
                    dw[i, j] = np.einsum("nhwgc,nhwgo->cgo", xg, gg).reshape(cpg, cout)
        p = self.padding
        dx = dxp[:, p:dxp.shape[1] - p, p:dxp.shape[2] - p, :]
        dx = np.ascontiguousarray(dx[0] if self.squeeze else dx)
        return dx, dw


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1, tag: Optional[str] = None) -> Tensor:
    """
    2-D cross-correlation, channels-last

    Args:
        x: [H, W, C_in] or [B, H, W, C_in]
        kernel: [kh, kw, C_in / groups, C_out]
        bias: optional [C_out]
        stride, padding: symmetric zero padding and stride on both axes
        groups: channel groups; depth-wise is groups == C_in == C_out
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d expects [H, W, C] or [B, H, W, C], got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [kh, kw, C_in/groups, C_out], got {kernel.shape}")
    cin, (kh, kw, cpg, cout) = x.shape[-1], kernel.shape
    if groups < 1 or cin % groups or cout % groups or cpg * groups != cin:
        raise ShapeError(
            f"conv2d: invalid grouping, input channels {cin}, groups {groups}, kernel {kernel.shape}"
        )
    h, w = x.shape[-3], x.shape[-2]
    if _out_extent(h, kh, stride, padding) < 1 or _out_extent(w, kw, stride, padding) < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    out = Conv2dFn.apply(x, kernel, stride=stride, padding=padding, groups=groups, tag=tag)
    return out if bias is None else add(out, bias)


def _interp_matrix(out_size: int, in_size: int, dtype) -> np.ndarray:
    """Rows of half-pixel bilinear weights (align_corners=False)"""
    m = np.zeros((out_size, in_size), dtype=np.float64)
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    lam = src - i0
    rows = np.arange(out_size)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m.astype(dtype)


class BilinearResize(Function):
    def forward(self, x, out_h=None, out_w=None):
        x, squeeze = _as_batched(x, "bilinear_resize")
        h, w = x.shape[1], x.shape[2]
        self.squeeze = squeeze
        self.mh = None if out_h == h else _interp_matrix(out_h, h, x.dtype)
        self.mw = None if out_w == w else _interp_matrix(out_w, w, x.dtype)
        out = x
        if self.mh is not None:
            out = np.einsum("oh,bhwc->bowc", self.mh, out)
        if self.mw is not None:
            out = np.einsum("pw,bhwc->bhpc", self.mw, out)
        if out is x:
            out = x.copy()
        return out[0] if squeeze else out

    def backward(self, grad):
        g = grad[None] if self.squeeze else grad
        if self.mw is not None:
            g = np.einsum("pw,bhpc->bhwc", self.mw, g)
        if self.mh is not None:
            g = np.einsum("oh,bowc->bhwc", self.mh, g)
        return (np.ascontiguousarray(g[0] if self.squeeze else g),)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel centres; same-size input is copied exactly"""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: target {out_h}x{out_w} must be positive")
    return BilinearResize.apply(x, out_h=int(out_h), out_w=int(out_w))


class Pool2d(Function):
    def forward(self, x, window=2, stride=2, mode="avg"):
        x, squeeze = _as_batched(x, "pool2d")
        b, h, w, c = x.shape
        ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
        self.shape, self.squeeze = x.shape, squeeze
        self.window, self.stride, self.mode, self.out_hw = window, stride, mode, (ho, wo)
        stack = np.stack([
            x[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
            for i in range(window) for j in range(window)
        ])
        if mode == "avg":
            out = stack.mean(axis=0)
        else:
            self.arg = stack.argmax(axis=0)
            out = np.take_along_axis(stack, self.arg[None], axis=0)[0]
        return out[0] if squeeze else out

    def backward(self, grad):
        g = grad[None] if self.squeeze else grad
        dx = np.zeros(self.shape, dtype=g.dtype)
        k, s = self.window, self.stride
        ho, wo = self.out_hw
        for n, (i, j) in enumerate((i, j) for i in range(k) for j in range(k)):
            window = (slice(None), slice(i, i + s * ho, s), slice(j, j + s * wo, s), slice(None))
            if self.mode == "avg":
                dx[window] += g / (k * k)
            else:
                dx[window] += g * (self.arg == n)
        return (dx[0] if self.squeeze else dx,)


def pool2d(x: Tensor, window: int, stride: Optional[int] = None, mode: str = "avg") -> Tensor:
    """Average or max pooling over square windows (no padding)"""
    stride = window if stride is None else stride
    if mode not in ("avg", "max"):
        raise ValueError(f"pool2d: unsupported mode '{mode}' (expected 'avg' or 'max')")
    if window > x.shape[-3] or window > x.shape[-2]:
        raise ShapeError(f"pool2d: window {window} exceeds spatial extents {x.shape[-3:-1]}")
    return Pool2d.apply(x, window=int(window), stride=int(stride), mode=mode)


# ---------------------------------------------------------------------------
# stochastic regularizers
# ---------------------------------------------------------------------------
def dropout(x: Tensor, p: float, training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or for p == 0"""
    if not training or p <= 0.0:
        return x
    keep = current_rng().random(x.shape) >= p
    return scale(x, keep / (1.0 - p))


def drop_path(x: Tensor, p: float, training: bool) -> Tensor:
    """Drop whole samples of a residual branch (axis 0 is the batch)"""
    if not training or p <= 0.0:
        return x
    keep = current_rng().random(x.shape[0]) >= p
    mask = (keep / (1.0 - p)).reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return scale(x, mask)


__all__: List[str] = [
    "add", "sub", "mul", "neg", "scale", "relu", "gelu", "sigmoid", "exp", "sum", "mean",
    "global_avg_pool", "reshape", "permute", "transpose", "concat", "getitem", "take",
    "pad", "broadcast_to", "matmul", "linear", "softmax", "cross_entropy", "layer_norm",
    "batch_norm", "conv2d", "bilinear_resize", "pool2d", "dropout", "drop_path",
]
