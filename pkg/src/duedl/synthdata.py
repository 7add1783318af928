"""Synthetic cardiac-like scribble datasets.

Each image holds a bright left-ventricle blob (class 3), the myocardium ring
around it (class 2) and a right-ventricle blob beside it (class 1) on a
textured background (class 0). Scribbles are thin seeded random walks inside
each region. The ``ood`` flag shifts intensities, contrast and shape
statistics.

On disk a dataset is ``manifest.json`` plus ``samples/<id>.{img,scr,msk}.tnsr``.
"""
import hashlib
import json
import math
import os
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import tnsr
from .losses import ScribbleMask

MANIFEST_VERSION = 1

# class index -> (mean intensity in-distribution, mean intensity OOD)
CLASS_MEANS = {
    0: (0.12, 0.32),
    1: (0.62, 0.42),
    2: (0.38, 0.56),
    3: (0.88, 0.68),
}


class DatasetError(ValueError):
    """Missing files, inconsistent manifest, or invalid sample content."""


@dataclass
class ScribbleSample:
    image: np.ndarray        # [1, H, W] float64 in [0, 1]
    scribble: ScribbleMask   # labels [H, W], sentinel K when unlabeled
    mask: np.ndarray         # [H, W] dense ground truth
    id: str

    @property
    def num_classes(self):
        return self.scribble.num_classes


@dataclass
class DatasetManifest:
    num_classes: int
    splits: dict
    generator: dict
    samples: dict = field(default_factory=dict, repr=False)
    version: int = MANIFEST_VERSION

    def split(self, name):
        if name not in self.splits:
            raise DatasetError(f"no split named {name!r}")
        return [self.samples[i] for i in self.splits[name]]


@dataclass(frozen=True)
class GeneratorParams:
    lv_radius: tuple = (7.0, 11.0)
    myo_thickness: tuple = (3.0, 5.0)
    rv_radius: tuple = (6.0, 10.0)
    axis_ratio: tuple = (0.75, 1.0)
    texture_amp: float = 0.05
    noise_std: float = 0.03
    coverage: tuple = (0.01, 0.05)


OOD_PARAMS = GeneratorParams(axis_ratio=(0.5, 0.8), texture_amp=0.09, noise_std=0.05)


def _ellipse(h, w, cy, cx, ry, rx, theta):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(theta), math.sin(theta)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def _geometry(rng, h, w, k, params):
    """Dense label map with up to three structures; later classes paint over earlier ones."""
    mask = np.zeros((h, w), dtype=np.uint8)
    scale = min(h, w) / 64.0
    cy = h / 2 + rng.uniform(-0.08, 0.08) * h
    cx = w / 2 + rng.uniform(-0.04, 0.12) * w
    ratio = rng.uniform(*params.axis_ratio)
    theta = rng.uniform(0, math.pi)
    lv = rng.uniform(*params.lv_radius) * scale
    myo = rng.uniform(*params.myo_thickness) * scale
    outer = _ellipse(h, w, cy, cx, (lv + myo) * ratio, lv + myo, theta)
    if k >= 4:
        rv = rng.uniform(*params.rv_radius) * scale
        phi = math.pi + rng.uniform(-0.5, 0.5)
        dist = lv + myo + 0.45 * rv
        ry, rx = cy + dist * math.sin(phi), cx + dist * math.cos(phi)
        mask[_ellipse(h, w, ry, rx, rv * rng.uniform(0.8, 1.2), rv * 1.3, phi)] = 1
    if k >= 3:
        mask[outer] = k - 2
    mask[_ellipse(h, w, cy, cx, lv * ratio, lv, theta)] = k - 1
    return mask


def _render(rng, mask, k, ood, params):
    h, w = mask.shape
    means = np.array([CLASS_MEANS[_class_role(c, k)][1 if ood else 0] for c in range(k)])
    img = means[mask]
    img = ndimage.gaussian_filter(img, 0.7, mode="reflect")
    texture = ndimage.gaussian_filter(rng.normal(size=(h, w)), 3.0, mode="wrap")
    texture *= params.texture_amp / max(texture.std(), 1e-12)
    img = img + texture + rng.normal(0.0, params.noise_std, size=(h, w))
    return np.clip(img, 0.0, 1.0)[None]


def _class_role(c, k):
    """Map label ``c`` of a K-class problem onto the 4-class intensity table."""
    if c == 0:
        return 0
    return c + (4 - k)


def _random_walk(rng, allowed, start, length, step_sigma=0.35):
    h, w = allowed.shape
    path = np.zeros_like(allowed)
    y, x = float(start[0]), float(start[1])
    path[start] = True
    heading = rng.uniform(0, 2 * math.pi)
    count, stalls = 1, 0
    while count < length and stalls < 4 * length:
        heading += rng.normal(0.0, step_sigma)
        moved = False
        for turn in (0.0, 0.6, -0.6, 1.2, -1.2, 2.0, -2.0, math.pi):
            ny, nx = y + math.sin(heading + turn), x + math.cos(heading + turn)
            iy, ix = int(round(ny)), int(round(nx))
            if 0 <= iy < h and 0 <= ix < w and allowed[iy, ix]:
                heading += turn
                y, x = ny, nx
                moved = True
                break
        if not moved:
            stalls += 1
            continue
        iy, ix = int(round(y)), int(round(x))
        if not path[iy, ix]:
            path[iy, ix] = True
            count += 1
        else:
            stalls += 1
    return path


def _scribbles(rng, mask, k, params):
    h, w = mask.shape
    labels = np.full((h, w), k, dtype=np.uint8)
    lo, hi = params.coverage
    budget = rng.uniform(lo + 0.005, hi - 0.015) * h * w
    present = [c for c in range(k) if np.any(mask == c)]
    areas = {c: int(np.sum(mask == c)) for c in present}
    for c in present:
        region = mask == c
        allowed = ndimage.binary_erosion(region, iterations=3 if c == 0 else 1, border_value=0)
        if not allowed.any():
            allowed = region
        # start from a deep interior point so the walk has room
        depth = ndimage.distance_transform_edt(allowed)
        cand = np.argwhere(depth >= 0.6 * depth.max())
        start = tuple(cand[rng.integers(len(cand))])
        share = 0.4 if c == 0 else 0.6 / max(len(present) - 1, 1)
        length = max(3, int(budget * share))
        length = min(length, max(1, int(0.6 * areas[c])))
        walk = _random_walk(rng, allowed, start, length)
        labels[walk] = c
    return labels


def generate_sample(seed, index, h=64, w=64, k=4, ood=False, params=None):
    params = params or (OOD_PARAMS if ood else GeneratorParams())
    rng = np.random.default_rng([seed, index, int(ood)])
    mask = _geometry(rng, h, w, k, params)
    image = _render(rng, mask, k, ood, params)
    scribble = ScribbleMask(_scribbles(rng, mask, k, params), k)
    return ScribbleSample(image, scribble, mask, f"s{index:05d}")


def generate(seed, n_samples, h=64, w=64, k=4, ood=False, n_val=None, n_test=None, divisor=8):
    """Build an in-memory dataset with ``n_samples`` train plus val/test splits.

    Validation and test splits default to ``n_samples // 5`` each.
    """
    if k < 2 or k > 4:
        raise DatasetError("the generator supports 2..4 classes")
    if h < 32 or w < 32 or h % divisor or w % divisor:
        raise DatasetError(f"image size {h}x{w} must be >= 32 and divisible by {divisor}")
    if n_samples < 1:
        raise DatasetError("need at least one training sample")
    n_val = max(1, n_samples // 5) if n_val is None else n_val
    n_test = max(1, n_samples // 5) if n_test is None else n_test
    samples = {}
    splits = {}
    start = 0
    for name, n in (("train", n_samples), ("val", n_val), ("test", n_test)):
        ids = []
        for i in range(start, start + n):
            s = generate_sample(seed, i, h, w, k, ood)
            samples[s.id] = s
            ids.append(s.id)
        splits[name] = ids
        start += n
    gen = {"seed": int(seed), "shape_family": "cardiac-ellipses", "ood": bool(ood),
           "size": [h, w], "corruption": None}
    return DatasetManifest(k, splits, gen, samples)


def class_intensity_means(manifest):
    """Mean image intensity per dense class over all samples."""
    sums = np.zeros(manifest.num_classes)
    counts = np.zeros(manifest.num_classes)
    for s in manifest.samples.values():
        for c in range(manifest.num_classes):
            sel = s.mask == c
            sums[c] += s.image[0][sel].sum()
            counts[c] += sel.sum()
    return sums / np.maximum(counts, 1)


# ---------------------------------------------------------------------------
# augmentation and corruption
# ---------------------------------------------------------------------------

def apply_transform(sample, rot90=0, flip=False):
    def t(a):
        a = np.rot90(a, rot90, axes=(-2, -1))
        if flip:
            a = a[..., ::-1]
        return np.ascontiguousarray(a)

    return ScribbleSample(t(sample.image), ScribbleMask(t(sample.scribble.labels), sample.num_classes),
                          t(sample.mask), sample.id)


def augment(sample, rng):
    """Random multiple-of-90 rotation and horizontal flip, applied to all three maps."""
    return apply_transform(sample, int(rng.integers(4)), bool(rng.integers(2)))


def _sample_rng(seed, sample_id):
    return np.random.default_rng([int(seed), zlib.crc32(sample_id.encode())])


def gaussian_kernel1d(std):
    radius = max(1, math.ceil(3.0 * std))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / std) ** 2)
    return k / k.sum()


def corrupt(sample, kind, sigma, seed=0):
    """Gaussian ``noise`` (sigma in intensity units, then clamp) or ``blur`` (sigma * width pixels)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    img = sample.image
    if kind == "noise":
        out = np.clip(img + _sample_rng(seed, sample.id).normal(0.0, sigma, size=img.shape), 0.0, 1.0)
    elif kind == "blur":
        k = gaussian_kernel1d(sigma * img.shape[-1])
        out = ndimage.correlate1d(img, k, axis=-1, mode="reflect")
        out = ndimage.correlate1d(out, k, axis=-2, mode="reflect")
    else:
        raise ValueError(f"unknown corruption kind {kind!r}")
    return replace(sample, image=out)


def corrupt_dataset(manifest, kind, sigma, seed=0):
    samples = {i: corrupt(s, kind, sigma, seed) for i, s in manifest.samples.items()}
    gen = dict(manifest.generator, corruption={"kind": kind, "sigma": float(sigma), "seed": int(seed)})
    return DatasetManifest(manifest.num_classes, {k: list(v) for k, v in manifest.splits.items()},
                           gen, samples)


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------

def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write(manifest, directory):
    os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
    files = {}
    for sid, s in manifest.samples.items():
        entry = {}
        for part, arr in (("img", s.image), ("scr", s.scribble.labels), ("msk", s.mask)):
            rel = f"samples/{sid}.{part}.tnsr"
            path = os.path.join(directory, rel)
            tnsr.save(path, arr)
            entry[part] = {"path": rel, "sha256": _sha256(path)}
        files[sid] = entry
    doc = {"version": manifest.version, "num_classes": manifest.num_classes,
           "splits": manifest.splits, "generator": manifest.generator, "files": files}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1)


def read(directory):
    """Load and validate a dataset directory written by :func:`write`."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise DatasetError(f"no manifest.json in {directory}")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {doc.get('version')!r}")
    k = int(doc["num_classes"])
    splits = doc["splits"]
    seen = set()
    for name, ids in splits.items():
        dup = seen.intersection(ids)
        if dup:
            raise DatasetError(f"split {name!r} overlaps another split: {sorted(dup)[:3]}")
        seen.update(ids)
    samples = {}
    for sid in sorted(seen):
        entry = doc["files"].get(sid)
        if entry is None:
            raise DatasetError(f"sample {sid!r} has no file entry")
        arrays = {}
        for part in ("img", "scr", "msk"):
            fpath = os.path.join(directory, entry[part]["path"])
            if not os.path.exists(fpath):
                raise DatasetError(f"sample {sid!r}: missing file {entry[part]['path']}")
            if _sha256(fpath) != entry[part]["sha256"]:
                raise DatasetError(f"sample {sid!r}: checksum mismatch for {entry[part]['path']}")
            try:
                arrays[part] = tnsr.load(fpath)
            except tnsr.FormatError as exc:
                raise DatasetError(f"sample {sid!r}: {exc}") from None
        img, scr, msk = arrays["img"], arrays["scr"], arrays["msk"]
        if img.ndim != 3 or img.shape[0] != 1 or scr.shape != img.shape[1:] or msk.shape != scr.shape:
            raise DatasetError(f"sample {sid!r}: inconsistent shapes {img.shape}, {scr.shape}, {msk.shape}")
        if scr.max(initial=0) > k:
            raise DatasetError(f"sample {sid!r}: scribble value exceeds sentinel {k}")
        if msk.max(initial=0) >= k:
            raise DatasetError(f"sample {sid!r}: mask value out of range")
        if img.min() < 0 or img.max() > 1:
            raise DatasetError(f"sample {sid!r}: intensities outside [0, 1]")
        ann = scr != k
        if np.any(scr[ann] != msk[ann]):
            raise DatasetError(f"sample {sid!r}: scribble disagrees with mask")
        samples[sid] = ScribbleSample(img, ScribbleMask(scr, k), msk, sid)
    return DatasetManifest(k, splits, doc["generator"], samples, doc["version"])
