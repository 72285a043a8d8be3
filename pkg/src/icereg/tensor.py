"""Dense tensors with reverse-mode automatic differentiation.

The op set is exactly what the regression networks need: elementwise
arithmetic, 2-d (cross-correlation) and depthwise convolution, ReLU, batch
normalization, max pooling, global average pooling, dense layers, channel
concatenation, residual addition, and MAE loss.

Ops record themselves on the active ``Tape`` (if any); ``backward`` replays
the tape in reverse, accumulating gradients additively into ``Tensor.grad``.
No op mutates its inputs, and every op validates that its output is finite.
Accumulations run in a fixed order, so identical inputs give bit-identical
outputs run to run.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericsError


class Tensor:
    """Dense n-d array plus a gradient slot. Data is never mutated by ops."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, dtype=None, name: str = ""):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"


class Tape:
    """Ordered record of executed ops; reverse replay computes gradients."""

    def __init__(self):
        self._entries: list[tuple[str, Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self):
        return len(self._entries)

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def record(self, kind: str, out: Tensor, backward_fn: Callable[[np.ndarray], None]):
        self._entries.append((kind, out, backward_fn))

    def backward(self, loss: Tensor):
        """Seed loss with gradient 1 and propagate through the tape."""
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        _accumulate(loss, np.ones_like(loss.data))
        for kind, out, backward_fn in reversed(self._entries):
            if out.grad is not None:
                backward_fn(out.grad)


_active: list[Tape] = []


def _record(kind: str, inputs: Sequence[Tensor], out: Tensor,
            backward_fn: Callable[[np.ndarray], None]):
    if not np.all(np.isfinite(out.data)):
        raise NumericsError(f"{kind} produced non-finite values")
    if _active:
        _active[-1].record(kind, out, backward_fn)
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def gradients(loss: Tensor, tape: Tape, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Backward pass; parameters unreachable from the loss get zeros."""
    tape.backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# ---------------------------------------------------------------------------
# elementwise arithmetic

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast up to g's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast")
    if np.broadcast_shapes(a.shape, b.shape) != a.shape:
        raise DimensionError(
            f"{kind}: result shape must equal first operand shape {a.shape}, "
            f"second operand has {b.shape}")
    if kind == "add":
        out = Tensor(a.data + b.data)

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, _unbroadcast(g, b.shape))
    elif kind == "sub":
        out = Tensor(a.data - b.data)

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, _unbroadcast(-g, b.shape))
    elif kind == "mul":
        out = Tensor(a.data * b.data)

        def bwd(g):
            _accumulate(a, g * b.data)
            _accumulate(b, _unbroadcast(g * a.data, b.shape))
    else:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    return _record(kind, (a, b), out, bwd)


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    return _binary(kind, a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary("mul", a, b)


def residual_add(x: Tensor, fx: Tensor) -> Tensor:
    if x.shape != fx.shape:
        raise DimensionError(f"residual_add: shapes {x.shape} and {fx.shape} differ")
    return _binary("add", x, fx)


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(np.array(x.data.sum(), dtype=x.dtype).reshape(()))

    def bwd(g):
        _accumulate(x, np.full_like(x.data, g.reshape(-1)[0]))

    return _record("sum", (x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.dtype))

    def bwd(g):
        _accumulate(x, g * mask)

    return _record("relu", (x,), out, bwd)


# ---------------------------------------------------------------------------
# convolutions

def _pad2d(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _conv_out_dim(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor],
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip), zero padding.

    x: [B,C,H,W], weight: [O,C,Kh,Kw], bias: [O] or None.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input/weight, got {x.shape}/{weight.shape}")
    B, C, H, W = x.shape
    O, Cw, Kh, Kw = weight.shape
    if C != Cw:
        raise DimensionError(f"conv2d channel mismatch: input has {C}, weight expects {Cw}")
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    if Kh > H + 2 * pad or Kw > W + 2 * pad:
        raise DimensionError(
            f"conv2d kernel {Kh}x{Kw} larger than padded input {H + 2*pad}x{W + 2*pad}")
    Ho = _conv_out_dim(H, Kh, stride, pad)
    Wo = _conv_out_dim(W, Kw, stride, pad)

    xp = _pad2d(x.data, pad)
    out = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    # one gemm per kernel offset, in fixed (i, j) order
    for i in range(Kh):
        for j in range(Kw):
            patch = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
            out += np.tensordot(patch, weight.data[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (O,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({O},)")
        out = out + bias.data[None, :, None, None]
    result = Tensor(out)

    def bwd(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight.data)
        for i in range(Kh):
            for j in range(Kw):
                patch = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
                dw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        _accumulate(x, dx)
        _accumulate(weight, dw)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv2d", inputs, result, bwd)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel convolution; weight [C,1,Kh,Kw]."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(
            f"depthwise_conv2d expects 4-d input/weight, got {x.shape}/{weight.shape}")
    B, C, H, W = x.shape
    Cw, one, Kh, Kw = weight.shape
    if Cw != C or one != 1:
        raise DimensionError(
            f"depthwise_conv2d weight shape {weight.shape} incompatible with {C} channels")
    if stride < 1:
        raise ContractError(f"depthwise_conv2d stride must be >= 1, got {stride}")
    if Kh > H + 2 * pad or Kw > W + 2 * pad:
        raise DimensionError(
            f"depthwise_conv2d kernel {Kh}x{Kw} larger than padded input")
    Ho = _conv_out_dim(H, Kh, stride, pad)
    Wo = _conv_out_dim(W, Kw, stride, pad)

    xp = _pad2d(x.data, pad)
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    for i in range(Kh):
        for j in range(Kw):
            patch = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
            out += patch * weight.data[None, :, 0, i, j, None, None]
    result = Tensor(out)

    def bwd(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight.data)
        for i in range(Kh):
            for j in range(Kw):
                patch = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
                dw[:, 0, i, j] = (g * patch).sum(axis=(0, 2, 3))
                dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    g * weight.data[None, :, 0, i, j, None, None]
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        _accumulate(x, dx)
        _accumulate(weight, dw)

    return _record("depthwise_conv2d", (x, weight), result, bwd)


# ---------------------------------------------------------------------------
# pooling

def maxpool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Windowed maximum; -inf padding; ties route gradient to the first index."""
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2d expects 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    if k > H + 2 * pad or k > W + 2 * pad:
        raise DimensionError(f"maxpool2d window {k} larger than padded input")
    Ho = _conv_out_dim(H, k, stride, pad)
    Wo = _conv_out_dim(W, k, stride, pad)

    xp = _pad2d(x.data, pad, value=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :Ho, :Wo]  # [B,C,Ho,Wo,k,k]
    flat = windows.reshape(B, C, Ho, Wo, k * k)
    idx = flat.argmax(axis=-1)  # first max in row-major window order
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    result = Tensor(np.ascontiguousarray(out_data))

    def bwd(g):
        dxp = np.zeros_like(xp)
        for p in range(k * k):
            i, j = divmod(p, k)
            contrib = g * (idx == p)
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += contrib
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        _accumulate(x, dx)

    return _record("maxpool2d", (x,), result, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C], mean over the spatial dims."""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))

    def bwd(g):
        _accumulate(x, np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy())

    return _record("global_avg_pool", (x,), out, bwd)


# ---------------------------------------------------------------------------
# batch normalization

class RunningStats:
    """Per-channel running mean/var for one normalization layer."""

    __slots__ = ("mean", "var", "momentum")

    def __init__(self, channels: int, momentum: float = 0.9, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats,
                mode: str = "train", eps: float = 1e-5) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"batchnorm2d expects 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(
            f"batchnorm2d gamma/beta shapes {gamma.shape}/{beta.shape} != ({C},)")
    if mode not in ("train", "eval"):
        raise ContractError(f"batchnorm2d mode must be 'train' or 'eval', got {mode!r}")

    if mode == "train":
        n = B * H * W
        if n < 2:
            raise ContractError(
                f"batchnorm2d train mode needs B*H*W >= 2, got {n}")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased
        m = state.momentum
        state.mean = (m * state.mean + (1 - m) * mean).astype(state.mean.dtype)
        state.var = (m * state.var + (1 - m) * var).astype(state.var.dtype)
    else:
        mean = state.mean.astype(x.dtype)
        var = state.var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])

    def bwd(g):
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _accumulate(beta, g.sum(axis=(0, 2, 3)))
        gs = g * gamma.data[None, :, None, None]
        if mode == "train":
            n = B * H * W
            mean_gs = gs.mean(axis=(0, 2, 3))
            mean_gs_xhat = (gs * xhat).mean(axis=(0, 2, 3))
            dx = inv_std[None, :, None, None] * (
                gs - mean_gs[None, :, None, None]
                - xhat * mean_gs_xhat[None, :, None, None])
        else:
            dx = gs * inv_std[None, :, None, None]
        _accumulate(x, dx.astype(x.dtype))

    return _record("batchnorm2d", (x, gamma, beta), out, bwd)


# ---------------------------------------------------------------------------
# dense, concat, loss

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[B,N] @ weight[M,N]^T + bias[M] -> [B,M]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError(f"dense expects 2-d input/weight, got {x.shape}/{weight.shape}")
    B, N = x.shape
    M, Nw = weight.shape
    if N != Nw:
        raise DimensionError(f"dense inner dims disagree: input {N} vs weight {Nw}")
    if bias.shape != (M,):
        raise DimensionError(f"dense bias shape {bias.shape} != ({M},)")
    out = Tensor(x.data @ weight.data.T + bias.data)

    def bwd(g):
        _accumulate(x, g @ weight.data)
        _accumulate(weight, g.T @ x.data)
        _accumulate(bias, g.sum(axis=0))

    return _record("dense", (x, weight, bias), out, bwd)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ContractError("concat_channels requires at least one tensor")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.data.ndim != 4 or len(ref) != 4:
            raise DimensionError("concat_channels expects 4-d tensors")
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise DimensionError(
                f"concat_channels non-channel dims differ: {ref} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def bwd(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            _accumulate(t, g[:, lo:hi])

    return _record("concat_channels", tuple(xs), out, bwd)


def mae_loss(pred: Tensor, target: Tensor, k: int = 27) -> Tensor:
    """Mean over the batch of per-sample sum_i |p_i - t_i| / k."""
    if pred.shape != target.shape:
        raise DimensionError(f"mae_loss shapes differ: {pred.shape} vs {target.shape}")
    if pred.data.ndim != 2:
        raise DimensionError(f"mae_loss expects [B,K] inputs, got {pred.shape}")
    B, K = pred.shape
    if K != k:
        raise ContractError(f"mae_loss expects {k} outputs per sample, got {K}")
    diff = pred.data - target.data
    out = Tensor(np.array(np.abs(diff).sum() / (K * B), dtype=pred.dtype).reshape(()))

    def bwd(g):
        scale = g.reshape(-1)[0] / (K * B)
        _accumulate(pred, np.sign(diff) * scale)
        _accumulate(target, -np.sign(diff) * scale)

    return _record("mae_loss", (pred, target), out, bwd)
