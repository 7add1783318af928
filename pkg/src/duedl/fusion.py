"""Reduced Dempster combination of two per-pixel subjective opinions."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .evidence import CLASS_AXIS

CONFLICT_EPS = 1e-12


class DegenerateConflictError(T.NumericError):
    """Total conflict between the two opinions (C -> 1) at some pixel."""


class DegenerateCertaintyError(T.NumericError):
    """A fused opinion with zero uncertainty cannot be mapped back to evidence."""


def _with_class_axis(u):
    return T.reshape(u, u.shape[:-2] + (1,) + u.shape[-2:])


def _without_class_axis(u):
    return T.reshape(u, u.shape[:-3] + u.shape[-2:])


@dataclass(frozen=True)
class FusedOpinion:
    belief: T.Tensor        # [..., K, H, W]
    uncertainty: T.Tensor   # [..., H, W]
    conflict: np.ndarray    # [..., H, W], diagnostics only

    @property
    def num_classes(self):
        return self.belief.shape[CLASS_AXIS]


def fuse(b1, u1, b2, u2):
    """Combine two opinions with Dempster's rule.

    The conflict ``sum_{n != m} b1_n b2_m`` is evaluated as
    ``(sum b1)(sum b2) - sum b1*b2``. The result stays on the tape.
    """
    b1, u1, b2, u2 = (T.as_tensor(t) for t in (b1, u1, b2, u2))
    if b1.shape != b2.shape or u1.shape != u2.shape:
        raise ValueError("opinion shapes differ between branches")
    if b1.shape[:-3] + b1.shape[-2:] != u1.shape:
        raise ValueError(f"belief {b1.shape} and uncertainty {u1.shape} disagree")
    u1k, u2k = _with_class_axis(u1), _with_class_axis(u2)

    s1 = T.reduce_sum(b1, axis=CLASS_AXIS, keepdims=True)
    s2 = T.reduce_sum(b2, axis=CLASS_AXIS, keepdims=True)
    agree = T.reduce_sum(b1 * b2, axis=CLASS_AXIS, keepdims=True)
    conflict = s1 * s2 - agree
    bad = conflict.data >= 1.0 - CONFLICT_EPS
    if np.any(bad):
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DegenerateConflictError(f"total conflict at pixel index {where}")
    scale = 1.0 / (1.0 - conflict)
    belief = scale * (b1 * b2 + b1 * u2k + b2 * u1k)
    unc = scale * (u1k * u2k)
    return FusedOpinion(belief, _without_class_axis(unc), _without_class_axis(conflict).data.copy())


def fused_dirichlet(f, num_classes=None):
    """Map a fused opinion back to ``(evidence, strength, alpha, prob)``.

    ``strength`` is returned without the class axis.
    """
    k = float(num_classes if num_classes is not None else f.num_classes)
    if np.any(f.uncertainty.data <= 0):
        raise DegenerateCertaintyError("fused uncertainty is zero; evidence would be infinite")
    uk = _with_class_axis(f.uncertainty)
    evidence = k * f.belief / uk
    strength = k / uk
    alpha = evidence + 1.0
    prob = alpha / strength
    return evidence, _without_class_axis(strength), alpha, prob


def hard_pseudo_labels(prob):
    """Per-pixel argmax over classes, detached from the tape (ties -> lowest index)."""
    return T.argmax(prob, axis=CLASS_AXIS).astype(np.int64)
