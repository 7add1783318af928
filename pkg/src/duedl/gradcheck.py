"""Central finite-difference checks for tape gradients."""
import numpy as np

from . import tensor as T


def numerical_grad(fn, inputs, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. each tensor in ``inputs`` (perturbed in place)."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat, gflat = t.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(fn, inputs):
    for t in inputs:
        t.zero_grad()
    T.backward(fn())
    return [t.grad.copy() for t in inputs]


def relative_error(a, b):
    """``||a - b|| / max(||a||, ||b||)`` over all arrays jointly."""
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check(fn, inputs, h=1e-5):
    """Relative error between tape and finite-difference gradients."""
    return relative_error(analytic_grad(fn, inputs), numerical_grad(fn, inputs, h))
