"""Training loop, SGD, and the clean / robustness / OOD / ablation protocols."""
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import metrics, synthdata
from . import tensor as T
from .dualnet import DualNet, NetConfig
from .evidence import evidence_from_logits
from .fusion import fuse, fused_dirichlet, hard_pseudo_labels
from .losses import BranchOutput, LossConfig, ScribbleMask, joint_loss

log = logging.getLogger(__name__)

ROBUSTNESS_SIGMAS = (0.05, 0.1, 0.15)
ABLATION_MODELS = {
    "Model1": {"loss": "ce", "fusion": "mean"},
    "Model2": {"loss": "edl", "fusion": "mean"},
    "Model3": {"loss": "edl", "fusion": "dempster"},
}


class TrainingDiverged(T.NumericError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    beta: float = 10.0
    lambda_u: float = 0.3
    seed: int = 0
    fusion: str = "dempster"
    loss: str = "edl"
    ecl_scope: str = "all"
    dropout_scope: str = "all-skips"
    anneal_unit: str = "epoch"
    reduction: str = "mean"
    dropout_rate: float = 0.5
    base_width: int = 8
    depth: int = 3
    input_norm: str = "standardize"
    augment: bool = True
    grad_clip: float = 5.0
    lr_schedule: str = "poly"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive or None")
        checks = {"fusion": ("dempster", "mean"), "loss": ("edl", "ce"),
                  "ecl_scope": ("all", "unlabeled"), "anneal_unit": ("epoch", "iteration"),
                  "dropout_scope": ("all-skips", "bottleneck"), "reduction": ("mean", "sum"),
                  "lr_schedule": ("constant", "poly")}
        for name, allowed in checks.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def net_config(self, num_classes):
        return NetConfig(in_channels=1, num_classes=num_classes, base_width=self.base_width,
                         depth=self.depth, dropout_rate=self.dropout_rate,
                         dropout_scope=self.dropout_scope, input_norm=self.input_norm,
                         seed=self.seed)


@dataclass
class RunRecord:
    config: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_dice: float = float("nan")
    checkpoint: str = None
    seconds: float = 0.0

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1)


def sgd_step(params, grads, velocities, lr, momentum=0.9, weight_decay=1e-4):
    """In place: ``v = momentum*v + (g + wd*p)``; ``p -= lr*v``."""
    for p, g, v in zip(params, grads, velocities):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch in sgd_step: {p.shape}, {g.shape}, {v.shape}")
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def poly_lr(base, iteration, total, power=0.9):
    return base * (1.0 - iteration / total) ** power


class SGD:
    def __init__(self, params, lr, momentum=0.9, weight_decay=1e-4):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        sgd_step([p.data for p in self.params], [p.grad for p in self.params], self.velocity,
                 self.lr, self.momentum, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def _branch(em):
    return BranchOutput(em.prob, em.strength, em.alpha)


def training_step(net, images, scribble, cfg, step):
    """One forward pass of both branches, fusion and the joint loss. Returns ``(loss, parts)``."""
    out = net.forward(images, training=True)
    em1, em2 = evidence_from_logits(out.raw1), evidence_from_logits(out.raw2)
    br1, br2 = _branch(em1), _branch(em2)
    parts = {}
    if cfg.fusion == "dempster":
        fused = fuse(em1.belief, em1.uncertainty, em2.belief, em2.uncertainty)
        _, s_f, a_f, p_f = fused_dirichlet(fused)
        brf = BranchOutput(p_f, s_f, a_f)
        u1, u2 = em1.uncertainty.data, em2.uncertainty.data
        parts["mean_u_fused"] = float(fused.uncertainty.data.mean())
        parts["mean_min_u"] = float(np.minimum(u1, u2).mean())
    else:
        brf = BranchOutput((br1.prob + br2.prob) * 0.5, (br1.strength + br2.strength) * 0.5,
                           (br1.alpha + br2.alpha) * 0.5)
    pseudo = hard_pseudo_labels(brf.prob)
    lcfg = LossConfig(beta=cfg.beta, lambda_u=cfg.lambda_u, step=step,
                      reduction=cfg.reduction, ecl_scope=cfg.ecl_scope)
    loss = joint_loss(br1, br2, brf, scribble, pseudo, lcfg, kind=cfg.loss, parts=parts)
    return loss, parts


def _val_dice(net, samples, batch_size):
    scores = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        _, _, labels = net.inference(np.stack([s.image for s in chunk]))
        for lab, s in zip(labels, chunk):
            scores.append(np.mean(metrics.dice_score(lab, s.mask, s.num_classes)))
    return float(np.mean(scores))


def train(cfg, dataset, out_dir=None, progress=None):
    """Train a dual-branch network on ``dataset['train']``; returns ``(net, RunRecord)``.

    Model selection keeps the parameters with the best mean validation Dice.
    """
    t0 = time.perf_counter()
    train_set = dataset.split("train")
    val_set = dataset.split("val") if dataset.splits.get("val") else []
    k = dataset.num_classes
    net = DualNet(cfg.net_config(k))
    opt = SGD(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    record = RunRecord(config=asdict(cfg))
    best = None
    iteration = 0
    total_iterations = cfg.epochs * -(-len(train_set) // cfg.batch_size)
    for epoch in range(cfg.epochs):
        te = time.perf_counter()
        order = rng.permutation(len(train_set))
        sums = {"l_total": 0.0, "l_s": 0.0, "l_ecl": 0.0, "mean_u_fused": 0.0, "mean_min_u": 0.0}
        max_norm = 0.0
        batches = 0
        lam = 0.0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_set[i] for i in order[start:start + cfg.batch_size]]
            if cfg.augment:
                chunk = [synthdata.augment(s, rng) for s in chunk]
            images = np.stack([s.image for s in chunk])
            scribble = ScribbleMask(np.stack([s.scribble.labels for s in chunk]), k)
            step = epoch if cfg.anneal_unit == "epoch" else iteration
            try:
                loss, parts = training_step(net, images, scribble, cfg, step)
                opt.zero_grad()
                T.backward(loss)
                max_norm = max(max_norm, clip_grad_norm(opt.params, cfg.grad_clip))
                if cfg.lr_schedule == "poly":
                    opt.lr = poly_lr(cfg.lr, iteration, total_iterations)
                opt.step()
            except T.NumericError as exc:
                raise TrainingDiverged(f"non-finite values at epoch {epoch}, batch {batches}: {exc}") from exc
            for name in parts:
                if name in sums:
                    sums[name] += parts[name]
            sums["l_total"] += loss.item()
            lam = parts["lambda_t"]
            batches += 1
            iteration += 1
        row = {"epoch": epoch, **{n: v / batches for n, v in sums.items()}, "lambda_t": lam,
               "max_grad_norm": max_norm}
        if cfg.fusion != "dempster":
            row.pop("mean_u_fused")
            row.pop("mean_min_u")
        if val_set:
            row["val_dice"] = _val_dice(net, val_set, cfg.batch_size)
            if best is None or row["val_dice"] > best[0]:
                best = (row["val_dice"], epoch, net.state_arrays())
        row["seconds"] = time.perf_counter() - te
        record.epochs.append(row)
        log.info("epoch %d loss %.5f val_dice %s", epoch, row["l_total"], row.get("val_dice"))
        if progress:
            progress(row)
    if best is not None:
        record.best_val_dice, record.best_epoch = best[0], best[1]
        net.load_arrays(best[2])
    record.seconds = time.perf_counter() - t0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "checkpoint")
        net.save_checkpoint(ckpt)
        record.checkpoint = ckpt
        record.to_json(os.path.join(out_dir, "run.json"))
    return net, record


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------

def _write(report, path):
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        report.to_json(path)


def evaluate_split(net, dataset, split="test"):
    return metrics.evaluate(net, dataset.split(split))


def run_protocol(kind, train_set, test_sets, cfg, out_dir=None, net=None, noise_kind="noise"):
    """Run one experiment protocol and return a dict of :class:`EvalReport` (or rows for ablation).

    ``test_sets`` maps names to datasets; ``clean`` and ``robustness`` default to
    the training dataset's own test split, ``ood`` requires ``test_sets['ood']``.
    """
    test_sets = dict(test_sets or {})
    sub = (lambda name: os.path.join(out_dir, name)) if out_dir else (lambda name: None)
    if kind == "ablation":
        rows = {}
        for name, switch in ABLATION_MODELS.items():
            mcfg = replace(cfg, **switch)
            model, _ = train(mcfg, train_set, sub(name))
            noisy = synthdata.corrupt_dataset(test_sets.get("clean", train_set), noise_kind, 0.1, cfg.seed)
            rows[name] = {"config": switch,
                          "clean": evaluate_split(model, test_sets.get("clean", train_set)).to_dict(),
                          "sigma=0.1": evaluate_split(model, noisy).to_dict()}
        if out_dir:
            with open(os.path.join(out_dir, "ablation.json"), "w") as fh:
                json.dump(rows, fh, indent=1)
        return rows
    if net is None:
        net, _ = train(cfg, train_set, sub("model"))
    if kind == "clean":
        rep = evaluate_split(net, test_sets.get("clean", train_set))
        _write(rep, sub("report.json"))
        return {"clean": rep}
    if kind == "robustness":
        base = test_sets.get("clean", train_set)
        out = {}
        for sigma in ROBUSTNESS_SIGMAS:
            rep = evaluate_split(net, synthdata.corrupt_dataset(base, noise_kind, sigma, cfg.seed))
            out[f"sigma={sigma}"] = rep
            _write(rep, sub(f"report_sigma{sigma}.json"))
        return out
    if kind == "ood":
        if "ood" not in test_sets:
            raise ValueError("ood protocol needs an 'ood' test dataset")
        rep = evaluate_split(net, test_sets["ood"])
        _write(rep, sub("report_ood.json"))
        return {"ood": rep}
    raise ValueError(f"unknown protocol {kind!r}")
