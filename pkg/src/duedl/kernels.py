"""Kernel backend selection.

The compiled extension is preferred; set ``DUEDL_KERNELS=python`` to force the
numpy fallback (or ``cython`` to fail loudly when the extension is missing).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def _select():
    want = os.environ.get("DUEDL_KERNELS", "").strip().lower()
    if want == "python":
        return _pykernels
    if want == "cython":
        if _ckernels is None:
            raise ImportError("DUEDL_KERNELS=cython but duedl._ckernels is not built")
        return _ckernels
    return _ckernels if _ckernels is not None else _pykernels


backend = _select()


def use(name):
    """Switch the active backend at runtime (used by tests and the benchmark)."""
    global backend
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}")
    backend = BACKENDS[name]
    return backend


def im2col(x, kh, kw, stride, padding):
    return backend.im2col(x, kh, kw, stride, padding)


def col2im(cols, shape, kh, kw, stride, padding):
    return backend.col2im(cols, shape, kh, kw, stride, padding)


def maxpool2_forward(x):
    return backend.maxpool2_forward(x)


def maxpool2_backward(grad, idx):
    return backend.maxpool2_backward(grad, idx)


def edt_sq(features):
    return backend.edt_sq(features)
