"""Log-gamma, digamma and trigamma for positive arguments.

Each uses the upward recurrence to lift the argument to ``x >= 10`` and then
an asymptotic series; absolute error is below 1e-12 on (0, 100].
Also provides tape-aware versions for use inside losses.
"""
import math

import numpy as np

from .tensor import NumericError, _make, as_tensor

_SHIFT = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _positive(x, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)) or not np.all(np.isfinite(x)):
        raise NumericError(f"{name}: argument must be finite and > 0")
    return x


def _lift(x):
    """Return ``(z, steps)`` with ``z = x + steps >= 10``."""
    steps = np.maximum(np.ceil(_SHIFT - x), 0.0)
    return x + steps, steps.astype(np.int64)


def log_gamma(x):
    x = _positive(x, "log_gamma")
    z, steps = _lift(x)
    corr = np.zeros_like(x)
    for k in range(int(steps.max(initial=0))):
        active = steps > k
        corr = corr + np.where(active, np.log(np.where(active, x + k, 1.0)), 0.0)
    r = 1.0 / z
    r2 = r * r
    series = r * (1.0 / 12 + r2 * (-1.0 / 360 + r2 * (1.0 / 1260 + r2 * (
        -1.0 / 1680 + r2 * (1.0 / 1188 + r2 * (-691.0 / 360360 + r2 / 156))))))
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series - corr
    return out if out.ndim else float(out)


def digamma(x):
    x = _positive(x, "digamma")
    z, steps = _lift(x)
    corr = np.zeros_like(x)
    for k in range(int(steps.max(initial=0))):
        active = steps > k
        corr = corr + np.where(active, 1.0 / np.where(active, x + k, 1.0), 0.0)
    r2 = 1.0 / (z * z)
    series = r2 * (1.0 / 12 + r2 * (-1.0 / 120 + r2 * (1.0 / 252 + r2 * (
        -1.0 / 240 + r2 * (1.0 / 132 + r2 * (-691.0 / 32760 + r2 / 12))))))
    out = np.log(z) - 0.5 / z - series - corr
    return out if out.ndim else float(out)


def trigamma(x):
    x = _positive(x, "trigamma")
    z, steps = _lift(x)
    corr = np.zeros_like(x)
    for k in range(int(steps.max(initial=0))):
        active = steps > k
        xk = np.where(active, x + k, 1.0)
        corr = corr + np.where(active, 1.0 / (xk * xk), 0.0)
    r = 1.0 / z
    r2 = r * r
    series = r * r2 * (1.0 / 6 + r2 * (-1.0 / 30 + r2 * (1.0 / 42 + r2 * (
        -1.0 / 30 + r2 * (5.0 / 66 + r2 * (-691.0 / 2730 + r2 * 7.0 / 6))))))
    out = r + 0.5 * r2 + series + corr
    return out if out.ndim else float(out)


def lgamma_t(a):
    """Tape-aware log-gamma; derivative is digamma."""
    a = as_tensor(a)
    out = np.asarray(log_gamma(a.data), dtype=np.float64)
    return _make(out, (a,), lambda g: (g * digamma(a.data),), "lgamma")


def digamma_t(a):
    """Tape-aware digamma; derivative is trigamma."""
    a = as_tensor(a)
    out = np.asarray(digamma(a.data), dtype=np.float64)
    return _make(out, (a,), lambda g: (g * trigamma(a.data),), "digamma")
