"""Dirichlet evidence maps.

Evidence tensors are laid out ``[..., K, H, W]`` (class axis third from the
end), so the same code serves single images and batches. Per-pixel scalars
(strength, uncertainty) keep a singleton class axis ``[..., 1, H, W]`` while
inside the graph; the public accessors squeeze it.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T

CLASS_AXIS = -3


@dataclass(frozen=True)
class EvidenceMap:
    """Non-negative per-class evidence ``e`` and the Dirichlet it parameterises.

    All derived views are recomputed from ``evidence`` on access.
    """

    evidence: T.Tensor

    def __post_init__(self):
        e = self.evidence.data
        if e.ndim < 3:
            raise ValueError("evidence must be [..., K, H, W]")
        if np.any(e < 0):
            raise ValueError("evidence must be non-negative")

    @property
    def num_classes(self):
        return self.evidence.shape[CLASS_AXIS]

    @property
    def alpha(self):
        return self.evidence + 1.0

    def strength_k(self):
        """``S`` with the class axis kept (``[..., 1, H, W]``), tape-connected."""
        return T.reduce_sum(self.evidence, axis=CLASS_AXIS, keepdims=True) + float(self.num_classes)

    @property
    def strength(self):
        return _squeeze(self.strength_k())

    @property
    def belief(self):
        return self.evidence / self.strength_k()

    @property
    def uncertainty(self):
        return _squeeze(float(self.num_classes) / self.strength_k())

    @property
    def prob(self):
        return self.alpha / self.strength_k()


def _squeeze(t):
    shape = t.shape[:-3] + t.shape[-2:]
    return T.reshape(t, shape)


def evidence_from_logits(raw):
    """Softplus activation of raw network output into an :class:`EvidenceMap`."""
    raw = T.as_tensor(raw)
    if not np.all(np.isfinite(raw.data)):
        raise T.NumericError("raw network output is not finite")
    return EvidenceMap(T.softplus(raw))


def belief_and_uncertainty(em):
    """Belief mass ``e/S`` and uncertainty mass ``K/S``."""
    return em.belief, em.uncertainty


def expected_prob(em):
    """Expected class probability ``alpha/S`` of the Dirichlet."""
    return em.prob
