"""Segmentation and uncertainty metrics: Dice, ASSD, ECE, UEO.

The ``*_bruteforce`` functions are direct, slow restatements of each
definition and exist as test oracles for the fast paths.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels

ECE_BINS = 10
UEO_THRESHOLDS = tuple(round(0.01 * i, 2) for i in range(1, 100))


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


# ---------------------------------------------------------------------------
# Dice
# ---------------------------------------------------------------------------

def dice_score(pred, truth, num_classes):
    """Dice of each foreground class ``1..K-1``; a class absent from both maps scores 1."""
    _check_shapes(pred, truth)
    pred, truth = np.asarray(pred), np.asarray(truth)
    out = []
    for c in range(1, num_classes):
        p, t = pred == c, truth == c
        denom = p.sum() + t.sum()
        out.append(1.0 if denom == 0 else 2.0 * np.logical_and(p, t).sum() / denom)
    return out


def binary_dice(a, b):
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    denom = a.sum() + b.sum()
    return 1.0 if denom == 0 else 2.0 * np.logical_and(a, b).sum() / denom


# ---------------------------------------------------------------------------
# ASSD
# ---------------------------------------------------------------------------

def boundary(region):
    """Pixels of ``region`` with at least one 8-neighbour outside it (the image border counts as outside)."""
    region = np.asarray(region, bool)
    h, w = region.shape
    padded = np.zeros((h + 2, w + 2), bool)
    padded[1:-1, 1:-1] = region
    interior = region.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                interior &= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return region & ~interior


def _cap(shape, cap):
    return math.hypot(*shape) if cap is None else float(cap)


def assd(pred, truth, c, cap=None):
    """Average symmetric surface distance (pixels) of class ``c``.

    Both maps empty of ``c`` gives 0; exactly one empty gives ``cap``
    (default: the image diagonal).
    """
    _check_shapes(pred, truth)
    bp, bt = boundary(np.asarray(pred) == c), boundary(np.asarray(truth) == c)
    if not bp.any() and not bt.any():
        return 0.0
    if not bp.any() or not bt.any():
        return _cap(bp.shape, cap)
    d_to_t = np.sqrt(kernels.edt_sq(bt))[bp]
    d_to_p = np.sqrt(kernels.edt_sq(bp))[bt]
    return 0.5 * (d_to_t.mean() + d_to_p.mean())


def assd_bruteforce(pred, truth, c, cap=None):
    bp = np.argwhere(boundary(np.asarray(pred) == c))
    bt = np.argwhere(boundary(np.asarray(truth) == c))
    if len(bp) == 0 and len(bt) == 0:
        return 0.0
    if len(bp) == 0 or len(bt) == 0:
        return _cap(np.shape(pred), cap)

    def directed(src, dst):
        total = 0.0
        for y0, x0 in src:
            total += min(math.hypot(y0 - y1, x0 - x1) for y1, x1 in dst)
        return total / len(src)

    return 0.5 * (directed(bp, bt) + directed(bt, bp))


# ---------------------------------------------------------------------------
# ECE
# ---------------------------------------------------------------------------

def ece(prob, truth, bins=ECE_BINS):
    """Expected calibration error with equal-width confidence bins over (0, 1]."""
    prob = np.asarray(prob)
    k = prob.shape[0]
    flat = prob.reshape(k, -1)
    truth = np.asarray(truth).reshape(-1)
    if flat.shape[1] != truth.size:
        raise ValueError("probability map and labels disagree in size")
    conf = flat.max(axis=0)
    correct = (flat.argmax(axis=0) == truth).astype(np.float64)
    upper = np.arange(1, bins + 1) / bins
    idx = np.minimum(np.searchsorted(upper, conf, side="left"), bins - 1)
    acc = np.bincount(idx, weights=correct, minlength=bins)
    cs = np.bincount(idx, weights=conf, minlength=bins)
    return float(np.sum(np.abs(acc - cs)) / conf.size)


def ece_bruteforce(prob, truth, bins=ECE_BINS):
    prob = np.asarray(prob)
    k = prob.shape[0]
    flat = prob.reshape(k, -1)
    truth = np.asarray(truth).reshape(-1)
    n = truth.size
    members = [[] for _ in range(bins)]
    for i in range(n):
        conf = max(flat[:, i])
        pred = int(np.argmax(flat[:, i]))
        b = 0
        while b < bins - 1 and not conf <= (b + 1) / bins:
            b += 1
        members[b].append((conf, pred == truth[i]))
    total = 0.0
    for m in members:
        if m:
            acc = sum(ok for _, ok in m) / len(m)
            conf = sum(cf for cf, _ in m) / len(m)
            total += len(m) / n * abs(acc - conf)
    return total


# ---------------------------------------------------------------------------
# UEO
# ---------------------------------------------------------------------------

def ueo(u, pred, truth, thresholds=UEO_THRESHOLDS):
    """Best Dice over ``thresholds`` between ``u > tau`` and the error map ``pred != truth``."""
    _check_shapes(pred, truth)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    err = (np.asarray(pred) != np.asarray(truth)).reshape(-1)
    taus = np.asarray(thresholds, dtype=np.float64)
    u_all = np.sort(u)
    u_err = np.sort(u[err])
    n_unc = u_all.size - np.searchsorted(u_all, taus, side="right")
    n_both = u_err.size - np.searchsorted(u_err, taus, side="right")
    denom = n_unc + err.sum()
    dice = np.where(denom == 0, 1.0, 2.0 * n_both / np.maximum(denom, 1))
    return float(dice.max())


def ueo_bruteforce(u, pred, truth, thresholds=UEO_THRESHOLDS):
    err = np.asarray(pred) != np.asarray(truth)
    return max(binary_dice(np.asarray(u) > tau, err) for tau in thresholds)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    dice: list
    mean_dice: float
    assd: list
    mean_assd: float
    ece: float
    ueo: float
    count: int
    config: dict = field(default_factory=dict)
    per_sample: list = field(default_factory=list, repr=False)

    def to_dict(self, per_sample=False):
        d = asdict(self)
        if not per_sample:
            d.pop("per_sample")
        return d

    def to_json(self, path, per_sample=False):
        with open(path, "w") as fh:
            json.dump(self.to_dict(per_sample), fh, indent=1)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("dice", "mean_dice", "assd", "mean_assd", "ece", "ueo",
                                        "count", "config")}, per_sample=d.get("per_sample", []))


def sample_metrics(prob, u, labels, truth, num_classes, bins=ECE_BINS, thresholds=UEO_THRESHOLDS,
                   cap=None):
    return {
        "dice": dice_score(labels, truth, num_classes),
        "assd": [assd(labels, truth, c, cap) for c in range(1, num_classes)],
        "ece": ece(prob, truth, bins),
        "ueo": ueo(u, labels, truth, thresholds),
    }


def aggregate(rows, num_classes, config=None, ids=None):
    """Average per-sample rows: over samples first, then over classes."""
    if not rows:
        raise ValueError("cannot evaluate an empty split")
    dice = np.mean([r["dice"] for r in rows], axis=0)
    dist = np.mean([r["assd"] for r in rows], axis=0)
    per_sample = [dict(r, id=i) for r, i in zip(rows, ids or [None] * len(rows))]
    return EvalReport(
        dice=[float(v) for v in dice], mean_dice=float(dice.mean()),
        assd=[float(v) for v in dist], mean_assd=float(dist.mean()),
        ece=float(np.mean([r["ece"] for r in rows])),
        ueo=float(np.mean([r["ueo"] for r in rows])),
        count=len(rows), config=dict(config or {}), per_sample=per_sample)


def evaluate(model_or_predictions, samples, bins=ECE_BINS, thresholds=UEO_THRESHOLDS, cap=None,
             batch_size=8):
    """Evaluate a model (anything with ``inference``) or precomputed ``(p, u, labels)`` triples."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    k = samples[0].num_classes
    if hasattr(model_or_predictions, "inference"):
        preds = []
        for i in range(0, len(samples), batch_size):
            batch = np.stack([s.image for s in samples[i:i + batch_size]])
            p, u, lab = model_or_predictions.inference(batch)
            preds.extend(zip(p, u, lab))
    else:
        preds = list(model_or_predictions)
    if len(preds) != len(samples):
        raise ValueError("number of predictions does not match number of samples")
    rows = [sample_metrics(p, u, lab, s.mask, k, bins, thresholds, cap)
            for (p, u, lab), s in zip(preds, samples)]
    config = {"ece_bins": bins, "ueo_thresholds": [thresholds[0], thresholds[-1], len(thresholds)],
              "assd_connectivity": 8, "assd_empty_cap": "diagonal" if cap is None else cap,
              "aggregation": "per-sample mean, then class mean"}
    return aggregate(rows, k, config, [s.id for s in samples])
