"""Dual-branch UNet: one encoder, one decoder applied to clean and to dropout-perturbed features."""
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import tnsr
from . import tensor as T
from .evidence import evidence_from_logits
from .nn import add_bias, conv2d, dropout, maxpool2, nearest_upsample2, standardize

CHECKPOINT_FORMAT = "duedl-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 1
    num_classes: int = 4
    base_width: int = 8
    depth: int = 3
    dropout_rate: float = 0.5
    dropout_scope: str = "all-skips"
    input_norm: str = "standardize"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.dropout_scope not in ("all-skips", "bottleneck"):
            raise ValueError("dropout_scope must be 'all-skips' or 'bottleneck'")
        if self.input_norm not in ("standardize", "none"):
            raise ValueError("input_norm must be 'standardize' or 'none'")
        if self.depth < 1 or self.base_width < 1 or self.num_classes < 2:
            raise ValueError("invalid network geometry")

    def width(self, level):
        return self.base_width * 2 ** level


@dataclass
class DualOutput:
    raw1: T.Tensor
    raw2: T.Tensor


def layer_shapes(cfg):
    """Ordered ``name -> kernel shape`` for every conv; biases follow each kernel."""
    shapes = {}
    cin = cfg.in_channels
    for lvl in range(cfg.depth):
        w = cfg.width(lvl)
        shapes[f"enc{lvl}.conv1"] = (w, cin, 3, 3)
        shapes[f"enc{lvl}.conv2"] = (w, w, 3, 3)
        cin = w
    wb = cfg.width(cfg.depth)
    shapes["mid.conv1"] = (wb, cin, 3, 3)
    shapes["mid.conv2"] = (wb, wb, 3, 3)
    for lvl in reversed(range(cfg.depth)):
        w = cfg.width(lvl)
        shapes[f"dec{lvl}.up"] = (w, cfg.width(lvl + 1), 3, 3)
        shapes[f"dec{lvl}.conv1"] = (w, 2 * w, 3, 3)
        shapes[f"dec{lvl}.conv2"] = (w, w, 3, 3)
    shapes["head"] = (cfg.num_classes, cfg.width(0), 1, 1)
    return shapes


class DualNet:
    def __init__(self, config=None):
        self.config = config or NetConfig()
        self.rng = np.random.default_rng(self.config.seed)
        init = np.random.default_rng([self.config.seed, 1])
        self.params = {}
        for name, shape in layer_shapes(self.config).items():
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / fan_in)
            self.params[name + ".w"] = T.Tensor(init.uniform(-bound, bound, size=shape),
                                                requires_grad=True, name=name + ".w")
            self.params[name + ".b"] = T.Tensor(np.zeros(shape[0]), requires_grad=True,
                                                name=name + ".b")

    # -- layers -----------------------------------------------------------
    def _conv(self, name, x, relu=True):
        k = self.params[name + ".w"]
        pad = k.shape[-1] // 2
        y = add_bias(conv2d(x, k, 1, pad), self.params[name + ".b"])
        return T.relu(y) if relu else y

    def _block(self, prefix, x):
        return self._conv(prefix + ".conv2", self._conv(prefix + ".conv1", x))

    def encode(self, x):
        if self.config.input_norm == "standardize":
            x = standardize(x)
        skips = []
        for lvl in range(self.config.depth):
            x = self._block(f"enc{lvl}", x)
            skips.append(x)
            x = maxpool2(x)
        return skips, self._block("mid", x)

    def decode(self, skips, bottom):
        x = bottom
        for lvl in reversed(range(self.config.depth)):
            x = self._conv(f"dec{lvl}.up", nearest_upsample2(x))
            x = T.concat([x, skips[lvl]], axis=1)
            x = self._block(f"dec{lvl}", x)
        return self._conv("head", x, relu=False)

    # -- public -----------------------------------------------------------
    def _as_batch(self, image):
        x = T.as_tensor(image)
        single = x.ndim == 3
        if single:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected [N,{self.config.in_channels},H,W] or "
                             f"[{self.config.in_channels},H,W], got {image.shape}")
        div = 2 ** self.config.depth
        if x.shape[2] % div or x.shape[3] % div:
            raise ValueError(f"spatial extents {x.shape[2:]} not divisible by {div}")
        return x, single

    def forward(self, image, training=True, rng=None):
        """Run both branches. Branch 2 sees dropout on the encoder features in training mode."""
        x, single = self._as_batch(image)
        rng = rng if rng is not None else self.rng
        rate = self.config.dropout_rate
        skips, bottom = self.encode(x)
        raw1 = self.decode(skips, bottom)
        if self.config.dropout_scope == "all-skips":
            skips2 = [dropout(s, rate, rng, training) for s in skips]
        else:
            skips2 = skips
        raw2 = self.decode(skips2, dropout(bottom, rate, rng, training))
        if single:
            raw1, raw2 = T.reshape(raw1, raw1.shape[1:]), T.reshape(raw2, raw2.shape[1:])
        return DualOutput(raw1, raw2)

    __call__ = forward

    def inference(self, image):
        """Branch-1 prediction: ``(prob, uncertainty, labels)`` as numpy arrays."""
        x, single = self._as_batch(T.Tensor(T.as_tensor(image).data))
        skips, bottom = self.encode(x)
        raw = self.decode(skips, bottom)
        em = evidence_from_logits(raw)
        p, u = em.prob.data, em.uncertainty.data
        labels = np.argmax(p, axis=-3)
        if single:
            p, u, labels = p[0], u[0], labels[0]
        return p, u, labels

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays):
        for k, v in arrays.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    # -- checkpoints ------------------------------------------------------
    def save_checkpoint(self, path):
        """Write ``index.json`` plus concatenated TNSR blobs (``params.tnsr``) into ``path``."""
        os.makedirs(path, exist_ok=True)
        index = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                 "config": asdict(self.config), "params": {},
                 "rng_state": _jsonable(self.rng.bit_generator.state)}
        blob = bytearray()
        for name, p in self.params.items():
            enc = tnsr.encode(p.data)
            index["params"][name] = {"offset": len(blob), "length": len(enc), "shape": list(p.shape)}
            blob += enc
        with open(os.path.join(path, "params.tnsr"), "wb") as fh:
            fh.write(blob)
        with open(os.path.join(path, "index.json"), "w") as fh:
            json.dump(index, fh, indent=1)

    def load_checkpoint(self, path):
        """Load parameters saved by :meth:`save_checkpoint`; nothing changes unless all checks pass."""
        index, arrays = _read_checkpoint(path)
        cfg = NetConfig(**index["config"])
        if _arch(cfg) != _arch(self.config):
            raise ConfigMismatchError(f"checkpoint config {cfg} does not match network {self.config}")
        for name, p in self.params.items():
            if name not in arrays or arrays[name].shape != p.shape:
                raise ConfigMismatchError(f"parameter {name!r} missing or misshapen in checkpoint")
        self.load_arrays(arrays)
        self.config = cfg
        self.rng.bit_generator.state = index["rng_state"]
        return self

    @classmethod
    def from_checkpoint(cls, path):
        index, _ = _read_checkpoint(path)
        return cls(NetConfig(**index["config"])).load_checkpoint(path)


def _arch(cfg):
    return (cfg.in_channels, cfg.num_classes, cfg.base_width, cfg.depth, cfg.input_norm)


def _jsonable(state):
    return json.loads(json.dumps(state))


def _read_checkpoint(path):
    try:
        with open(os.path.join(path, "index.json")) as fh:
            index = json.load(fh)
        with open(os.path.join(path, "params.tnsr"), "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise tnsr.FormatError(f"incomplete checkpoint at {path}: {exc.filename}") from None
    except json.JSONDecodeError as exc:
        raise tnsr.FormatError(f"unreadable checkpoint index: {exc}") from None
    if index.get("format") != CHECKPOINT_FORMAT or index.get("version") != CHECKPOINT_VERSION:
        raise tnsr.FormatError("unknown checkpoint format or version")
    arrays = {}
    for name, meta in index["params"].items():
        arr, end = tnsr.decode(blob, meta["offset"])
        if end - meta["offset"] != meta["length"] or list(arr.shape) != meta["shape"]:
            raise tnsr.FormatError(f"checkpoint entry {name!r} is inconsistent with its index")
        arrays[name] = arr
    return index, arrays
