"""Pure-numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or when ``DUEDL_KERNELS=python``.
"""
import numpy as np

NAME = "python"


def im2col(x, kh, kw, stride, padding):
    """Unfold ``x[N,C,H,W]`` into columns ``[C*kh*kw, N*Ho*Wo]``."""
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xt = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=np.float64)
    for i in range(kh):
        ie = i + stride * ho
        for j in range(kw):
            je = j + stride * wo
            cols[:, i, j] = xt[:, :, i:ie:stride, j:je:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(cols, shape, kh, kw, stride, padding):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``shape``."""
    n, c, h, w = shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for i in range(kh):
        ie = i + stride * ho
        for j in range(kw):
            je = j + stride * wo
            out[:, :, i:ie:stride, j:je:stride] += cols[:, i, j]
    out = out.transpose(1, 0, 2, 3)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def maxpool2_forward(x):
    """2x2/2 max pooling. Returns ``(out, argmax)`` with argmax in 0..3 (row-major, first wins)."""
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def maxpool2_backward(grad, idx):
    n, c, ho, wo = grad.shape
    blocks = np.zeros((n, c, ho, wo, 4), dtype=np.float64)
    np.put_along_axis(blocks, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    blocks = blocks.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(blocks.reshape(n, c, 2 * ho, 2 * wo))


def edt_sq(features):
    """Squared Euclidean distance from every pixel to the nearest True pixel.

    Two passes: a column sweep for the 1-D distance, then an exact per-row
    minimisation. Pixels get ``inf`` when ``features`` is empty.
    """
    features = np.asarray(features, dtype=bool)
    h, w = features.shape
    inf = np.inf
    g = np.where(features, 0.0, inf)
    for y in range(1, h):
        g[y] = np.minimum(g[y], g[y - 1] + 1.0)
    for y in range(h - 2, -1, -1):
        g[y] = np.minimum(g[y], g[y + 1] + 1.0)
    cols = np.arange(w, dtype=np.float64)
    dx2 = (cols[:, None] - cols[None, :]) ** 2
    return np.min(dx2[None, :, :] + (g * g)[:, None, :], axis=-1)
