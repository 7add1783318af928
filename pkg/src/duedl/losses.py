"""Training objectives for scribble-supervised evidential segmentation.

Partial losses only see annotated pixels; by default they are averaged over
the annotated pixel count (``reduction="mean"``), ``reduction="sum"`` gives
the raw per-pixel sum instead.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .evidence import CLASS_AXIS
from .special import digamma_t, lgamma_t

DICE_EPS = 1e-5


class EmptyScribbleError(ValueError):
    """A partial loss was asked to average over zero annotated pixels."""


@dataclass(frozen=True)
class ScribbleMask:
    """Sparse labels ``[..., H, W]``: ``0..K-1`` annotated, ``K`` unlabeled."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.size and (lab.min() < 0 or lab.max() > self.num_classes):
            raise ValueError(f"scribble labels must lie in 0..{self.num_classes}")

    @property
    def sentinel(self):
        return self.num_classes

    @property
    def annotated(self):
        return np.asarray(self.labels) != self.num_classes

    @property
    def count(self):
        return int(self.annotated.sum())

    def onehot(self):
        """``y[..., K, H, W]`` with all-zero columns at unlabeled pixels."""
        return onehot(self.labels, self.num_classes)


def onehot(labels, num_classes):
    labels = np.asarray(labels)
    classes = np.arange(num_classes).reshape((num_classes, 1, 1))
    return (labels[..., None, :, :] == classes).astype(np.float64)


@dataclass(frozen=True)
class LossConfig:
    beta: float = 10.0
    lambda_u: float = 0.3
    step: float = 0
    reduction: str = "mean"
    ecl_scope: str = "all"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.lambda_u < 0:
            raise ValueError("lambda_u must be non-negative")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.ecl_scope not in ("all", "unlabeled"):
            raise ValueError("ecl_scope must be 'all' or 'unlabeled'")

    @property
    def anneal(self):
        """KL annealing weight ``min(1, t / beta)``."""
        return min(1.0, max(0.0, self.step / self.beta))


def _mask_k(scribble):
    return scribble.annotated[..., None, :, :].astype(np.float64)


def _denominator(scribble, reduction):
    n = scribble.count
    if n == 0:
        raise EmptyScribbleError("scribble has no annotated pixels")
    return float(n) if reduction == "mean" else 1.0


def _with_class_axis(s):
    return T.reshape(s, s.shape[:-2] + (1,) + s.shape[-2:])


def partial_mse(p, strength, scribble, reduction="mean"):
    """Squared error plus Dirichlet variance term, over annotated pixels."""
    denom = _denominator(scribble, reduction)
    y = scribble.onehot()
    sk = _with_class_axis(T.as_tensor(strength))
    err = T.square(y - p)
    var = p * (1.0 - p) / (sk + 1.0)
    return T.reduce_sum((err + var) * _mask_k(scribble)) / denom


def kl_to_uniform(alpha_hat):
    """``KL(Dir(alpha_hat) || Dir(1))`` per pixel, class axis reduced away."""
    k = alpha_hat.shape[CLASS_AXIS]
    s = T.reduce_sum(alpha_hat, axis=CLASS_AXIS, keepdims=True)
    log_norm = lgamma_t(s) - T.reduce_sum(lgamma_t(alpha_hat), axis=CLASS_AXIS, keepdims=True)
    log_norm = log_norm - float(np.sum(np.log(np.arange(1, k))))  # ln Gamma(K)
    digamma_terms = (alpha_hat - 1.0) * (digamma_t(alpha_hat) - digamma_t(s))
    return log_norm + T.reduce_sum(digamma_terms, axis=CLASS_AXIS, keepdims=True)


def partial_kl(alpha, scribble, reduction="mean"):
    """KL of the misleading-evidence Dirichlet to the uniform one, annotated pixels only.

    The true-class entry of alpha is replaced by 1 before the KL. Only the
    annotated pixels are gathered, so unlabeled pixels contribute exactly 0.
    """
    alpha = T.as_tensor(alpha)
    if np.any(alpha.data < 1.0):
        raise T.NumericError("Dirichlet parameters must be >= 1")
    denom = _denominator(scribble, reduction)
    k = scribble.num_classes
    labels = np.asarray(scribble.labels).reshape((-1,) + alpha.shape[-2:])
    alpha = T.reshape(alpha, (labels.shape[0], k) + alpha.shape[-2:])
    n, h, w = np.nonzero(labels != k)
    picked = T.reshape(T.getitem(alpha, (n, slice(None), h, w)), (-1, k, 1, 1))  # [M, K, 1, 1]
    y = onehot(labels[n, h, w].reshape(-1, 1, 1), k)
    alpha_hat = picked * (1.0 - y) + y
    return T.reduce_sum(kl_to_uniform(alpha_hat)) / denom


def partial_edl(p, strength, alpha, scribble, cfg):
    loss = partial_mse(p, strength, scribble, cfg.reduction)
    lam = cfg.anneal
    if lam > 0:
        loss = loss + lam * partial_kl(alpha, scribble, cfg.reduction)
    return loss


def partial_cross_entropy(p, scribble, reduction="mean"):
    denom = _denominator(scribble, reduction)
    y = scribble.onehot()
    ann = scribble.annotated[..., None, :, :]
    # unlabeled pixels are lifted to 1 so log stays in-domain; their weight is 0
    p_true = T.reduce_sum(p * y, axis=CLASS_AXIS, keepdims=True) + (~ann).astype(np.float64)
    return -T.reduce_sum(T.log(p_true)) / denom


def dice_loss(pred, target, pixel_mask=None):
    """``1 - mean_c (2 sum pred*t + eps) / (sum pred + sum t + eps)``.

    Sums run over every axis except the class axis; ``pixel_mask`` (``[..., H, W]``)
    optionally restricts which pixels take part.
    """
    pred = T.as_tensor(pred)
    k = pred.shape[CLASS_AXIS]
    t = onehot(target, k)
    if pixel_mask is not None:
        m = np.asarray(pixel_mask, dtype=np.float64)[..., None, :, :]
        pred = pred * m
        t = t * m
    axes = tuple(ax for ax in range(pred.ndim) if ax != pred.ndim + CLASS_AXIS)
    inter = T.reduce_sum(pred * t, axis=axes)
    denom = T.reduce_sum(pred, axis=axes) + t.sum(axis=axes)
    per_class = (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)
    return 1.0 - T.reduce_mean(per_class)


def consistency_loss(p1, p2, pseudo, pixel_mask=None):
    """Mean Dice loss of each branch against the fused hard pseudo labels."""
    pseudo = np.asarray(pseudo)
    return 0.5 * (dice_loss(p1, pseudo, pixel_mask) + dice_loss(p2, pseudo, pixel_mask))


@dataclass(frozen=True)
class BranchOutput:
    """Dirichlet quantities of one branch (or of the fused opinion)."""

    prob: T.Tensor      # [..., K, H, W]
    strength: T.Tensor  # [..., H, W]
    alpha: T.Tensor     # [..., K, H, W]


def supervised_loss(branch, scribble, cfg, kind="edl"):
    if kind == "edl":
        return partial_edl(branch.prob, branch.strength, branch.alpha, scribble, cfg)
    if kind == "ce":
        return partial_cross_entropy(branch.prob, scribble, cfg.reduction)
    raise ValueError(f"unknown supervised loss {kind!r}")


def joint_loss(branch1, branch2, fused, scribble, pseudo, cfg, kind="edl", parts=None):
    """``L_s + lambda_u * L_ECL`` with ``L_s`` the mean over both branches and the fusion.

    When ``parts`` is a dict it receives the detached component values.
    """
    terms = [supervised_loss(b, scribble, cfg, kind) for b in (branch1, branch2, fused)]
    l_s = (terms[0] + terms[1] + terms[2]) / 3.0
    total = l_s
    l_ecl = None
    if cfg.lambda_u > 0:
        mask = ~scribble.annotated if cfg.ecl_scope == "unlabeled" else None
        l_ecl = consistency_loss(branch1.prob, branch2.prob, pseudo, mask)
        total = l_s + cfg.lambda_u * l_ecl
    if parts is not None:
        parts["l_s"] = l_s.item()
        parts["l_ecl"] = l_ecl.item() if l_ecl is not None else 0.0
        parts["lambda_t"] = cfg.anneal
    return total
