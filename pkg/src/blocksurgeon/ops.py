"""Differentiable primitives over BCHW tensors.

Every function takes and returns :class:`~blocksurgeon.tensor.Tensor` and
records a vector-Jacobian product on the active tape. The only broadcast
supported is a ``(B' , C', 1, 1)`` operand against a ``(B, C, H, W)`` one,
with ``B'`` in ``{1, B}`` and ``C'`` in ``{1, C}``.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, SliceGrad, Tensor, record


def _check4(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what} expects a BCHW tensor, got shape {x.shape}")


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _unpad(a: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return a
    return a[:, :, padding:-padding, padding:-padding]


def _shift(xp: np.ndarray, i: int, j: int, ho: int, wo: int, stride: int) -> np.ndarray:
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; ``kernel`` is ``(O, I, K, K)``."""
    _check4(x, "conv2d")
    if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d kernel must be (O, I, K, K), got {kernel.shape}")
    out_c, in_c, k, _ = kernel.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {in_c}")
    if bias.shape != (out_c,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({out_c},)")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    b = x.shape[0]
    xp = _pad(x.data, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < k or wp < k:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    wmat = kernel.data.reshape(out_c, in_c * k * k)

    if k == 1 and stride == 1:
        cols = xp.reshape(b, in_c, ho * wo)
    else:
        # columns ordered (c, i, j) to match the kernel's row-major layout
        cols = np.empty((b, in_c, k, k, ho, wo))
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = _shift(xp, i, j, ho, wo, stride)
        cols = cols.reshape(b, in_c * k * k, ho * wo)
    out = np.matmul(wmat, cols) + bias.data[None, :, None]
    out = out.reshape(b, out_c, ho, wo)

    def vjp(g):
        gr = g.reshape(b, out_c, ho * wo)
        gk = np.matmul(gr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        dcols = np.matmul(wmat.T, gr)
        if k == 1 and stride == 1:
            dxp = dcols.reshape(xp.shape)
        else:
            dcols = dcols.reshape(b, in_c, k, k, ho, wo)
            dxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    _shift(dxp, i, j, ho, wo, stride)[...] += dcols[:, :, i, j]
        return _unpad(dxp, padding), gk, gr.sum(axis=(0, 2))

    return record(Tensor(out), (x, kernel, bias), vjp)


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Per-channel convolution; ``kernel`` is ``(C, 1, K, K)``, stride 1."""
    _check4(x, "depthwise_conv2d")
    c = x.shape[1]
    if kernel.data.ndim != 4 or kernel.shape[0] != c or kernel.shape[1] != 1 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"depthwise_conv2d: kernel {kernel.shape} incompatible with {c} channels")
    if bias.shape != (c,):
        raise ShapeError(f"depthwise_conv2d: bias shape {bias.shape}, expected ({c},)")
    if padding < 0:
        raise ShapeError(f"depthwise_conv2d: invalid padding={padding}")
    k = kernel.shape[2]
    xp = _pad(x.data, padding)
    if xp.shape[2] < k or xp.shape[3] < k:
        raise ShapeError(f"depthwise_conv2d: padded input smaller than kernel {k}")
    ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    kk = kernel.data[:, 0]
    out = np.zeros((x.shape[0], c, ho, wo))
    for i in range(k):
        for j in range(k):
            out += _shift(xp, i, j, ho, wo, 1) * kk[None, :, i, j, None, None]
    out += bias.data[None, :, None, None]

    def vjp(g):
        gk = np.empty((c, 1, k, k))
        dxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                gk[:, 0, i, j] = np.einsum("bchw,bchw->c", g, _shift(xp, i, j, ho, wo, 1))
                _shift(dxp, i, j, ho, wo, 1)[...] += g * kk[None, :, i, j, None, None]
        return _unpad(dxp, padding), gk, g.sum(axis=(0, 2, 3))

    return record(Tensor(out), (x, kernel, bias), vjp)


def layer_norm_channels(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each pixel's channel vector, then apply a per-channel affine map."""
    _check4(x, "layer_norm_channels")
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = x.shape[1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise ShapeError(f"layer_norm_channels: gain/offset must be ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data[None, :, None, None] * xhat + offset.data[None, :, None, None]

    def vjp(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        go = g.sum(axis=(0, 2, 3))
        dxhat = g * gain.data[None, :, None, None]
        gx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return gx, gg, go

    return record(Tensor(out), (x, gain, offset), vjp)


def simple_gate(x: Tensor) -> Tensor:
    """Product of the first and second channel halves."""
    _check4(x, "simple_gate")
    c2 = x.shape[1]
    if c2 % 2:
        raise ShapeError(f"simple_gate needs an even channel count, got {c2}")
    c = c2 // 2
    a, b = x.data[:, :c], x.data[:, c:]
    out = a * b

    def vjp(g):
        return (np.concatenate([g * b, g * a], axis=1),)

    return record(Tensor(out), (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    _check4(x, "global_avg_pool")
    n = x.shape[2] * x.shape[3]
    out = x.data.sum(axis=(2, 3), keepdims=True) / n

    def vjp(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return record(Tensor(out), (x,), vjp)


def _broadcast_ok(a: Tensor, b: Tensor) -> bool:
    if a.shape == b.shape:
        return True
    if a.data.ndim != 4 or b.data.ndim != 4:
        return False
    return (b.shape[0] in (1, a.shape[0]) and b.shape[1] in (1, a.shape[1])
            and b.shape[2] == 1 and b.shape[3] == 1)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _operands(a: Tensor, b: Tensor, op: str) -> tuple[Tensor, Tensor, bool]:
    if _broadcast_ok(a, b):
        return a, b, False
    if _broadcast_ok(b, a):
        return b, a, True
    raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    big, small, swapped = _operands(a, b, "add")
    out = big.data + small.data

    def vjp(g):
        gs = _reduce_to(g, small.shape)
        return (gs, g) if swapped else (g, gs)

    return record(Tensor(out), (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    big, small, swapped = _operands(a, b, "mul")
    out = big.data * small.data

    def vjp(g):
        gb = g * small.data
        gs = _reduce_to(g * big.data, small.shape)
        return (gs, gb) if swapped else (gb, gs)

    return record(Tensor(out), (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(Tensor(a.data * c), (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    """Rectifier; the derivative at exactly 0 is taken as 0."""
    mask = a.data > 0
    return record(Tensor(np.where(mask, a.data, 0.0)), (a,), lambda g: (g * mask,))


def elementwise(kind: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scale":
        return scale(a, b)
    if kind == "relu":
        return relu(a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check4(x, "upsample_nearest2x")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        b, c, h, w = x.shape
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return record(Tensor(out), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    return record(Tensor(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences; both operands are differentiable."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        gp = (2.0 * float(g) / n) * diff
        return gp, -gp

    return record(Tensor(np.mean(diff * diff)), (pred, target), vjp)


def view(flat: Tensor, start: int, shape: tuple[int, ...]) -> Tensor:
    """A reshaped copy of ``flat[start:start + prod(shape)]``."""
    n = int(np.prod(shape))
    src = flat.data.reshape(-1)
    if start < 0 or start + n > src.size:
        raise ShapeError(f"view [{start}, {start + n}) outside tensor of {src.size}")
    out = src[start:start + n].reshape(shape).copy()
    return record(Tensor(out), (flat,), lambda g: (SliceGrad(start, g),))
