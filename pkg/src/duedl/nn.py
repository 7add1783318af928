"""Spatial ops on ``[N, C, H, W]`` tensors: convolution, pooling, upsampling, dropout."""
import numpy as np

from . import kernels
from .tensor import Tensor, _make, as_tensor


def conv2d(x, kernel, stride=1, padding=0):
    """Cross-correlation of ``x[N,C,H,W]`` with ``kernel[F,C,kh,kw]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"channel mismatch: input {c}, kernel {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel extents must be odd")
    if stride < 1:
        raise ValueError("stride must be positive")
    span_h, span_w = h + 2 * padding - kh, w + 2 * padding - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ValueError(f"non-integral output extent for input {h}x{w}, kernel {kh}x{kw}, "
                         f"stride {stride}, padding {padding}")
    ho, wo = span_h // stride + 1, span_w // stride + 1

    cols = kernels.im2col(np.ascontiguousarray(x.data), kh, kw, stride, padding)  # [C*kh*kw, N*Ho*Wo]
    wmat = kernel.data.reshape(f, -1)
    out = np.ascontiguousarray((wmat @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
        gk = (g2 @ cols.T).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(wmat.T @ g2, x.shape, kh, kw, stride, padding)
        return gx, gk

    return _make(out, (x, kernel), bw, "conv2d")


def maxpool2(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError("maxpool2 expects [N,C,H,W]")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"maxpool2 needs even spatial extents, got {x.shape[2:]}")
    out, idx = kernels.maxpool2_forward(np.ascontiguousarray(x.data))
    return _make(out, (x,), lambda g: (kernels.maxpool2_backward(np.ascontiguousarray(g), idx),),
                 "maxpool2")


def nearest_upsample2(x):
    x = as_tensor(x)
    if x.ndim < 2:
        raise ValueError("nearest_upsample2 expects at least 2 dims")
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def bw(g):
        h, w = g.shape[-2] // 2, g.shape[-1] // 2
        return (g.reshape(g.shape[:-2] + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _make(out, (x,), bw, "upsample2")


def dropout(x, rate, rng=None, training=True):
    """Inverted dropout: survivors scaled by ``1/(1-rate)``; eval mode returns ``x`` itself."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    scale = np.where(rng.random(x.shape) >= rate, 1.0 / (1.0 - rate), 0.0)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def add_bias(x, bias):
    """Add a per-channel ``bias[C]`` to ``x[N,C,H,W]``."""
    x, bias = as_tensor(x), as_tensor(bias)
    out = x.data + bias.data[None, :, None, None]
    return _make(out, (x, bias), lambda g: (g, g.sum(axis=(0, 2, 3))), "add_bias")


def standardize(x, eps=1e-6):
    """Per-sample zero mean, unit variance over ``[C,H,W]`` of ``x[N,C,H,W]``."""
    x = as_tensor(x)
    axes = (1, 2, 3)
    centered = x.data - x.data.mean(axis=axes, keepdims=True)
    scale = np.sqrt(np.mean(centered * centered, axis=axes, keepdims=True) + eps)
    y = centered / scale

    def bw(g):
        return ((g - g.mean(axis=axes, keepdims=True)
                 - y * np.mean(g * y, axis=axes, keepdims=True)) / scale,)

    return _make(y, (x,), bw, "standardize")


__all__ = ["Tensor", "conv2d", "maxpool2", "nearest_upsample2", "dropout", "add_bias", "standardize"]
