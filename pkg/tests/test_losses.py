import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duedl import gradcheck
from duedl import tensor as T
from duedl.evidence import EvidenceMap, evidence_from_logits
from duedl.fusion import fuse, fused_dirichlet, hard_pseudo_labels
from duedl.losses import (BranchOutput, EmptyScribbleError, LossConfig, ScribbleMask, consistency_loss,
                          dice_loss, joint_loss, kl_to_uniform, onehot, partial_cross_entropy,
                          partial_edl, partial_kl, partial_mse)

DERIVED = json.loads((Path(__file__).parent / "data" / "derived_examples.json").read_text())


def random_scribble(rng, k, shape, frac=0.3):
    labels = rng.integers(0, k, size=shape)
    labels[rng.random(shape) > frac] = k
    labels.reshape(-1)[0] = 0
    return ScribbleMask(labels, k)


def branch(raw):
    em = evidence_from_logits(raw)
    return BranchOutput(em.prob, em.strength, em.alpha)


class TestPartialMSE:
    def test_worked_example(self):
        em = EvidenceMap(T.Tensor(np.array([1.0, 0.0]).reshape(2, 1, 1)))
        loss = partial_mse(em.prob, em.strength, ScribbleMask(np.array([[0]]), 2))
        assert loss.item() == pytest.approx(DERIVED["partial_mse_one_pixel"]["loss"]["float"], abs=1e-15)
        assert loss.item() == pytest.approx(1 / 3, abs=1e-15)

    def test_infinite_evidence_limit(self):
        em = EvidenceMap(T.Tensor(np.array([1e12, 0.0]).reshape(2, 1, 1)))
        loss = partial_mse(em.prob, em.strength, ScribbleMask(np.array([[0]]), 2))
        assert loss.item() < 1e-11

    def test_empty_scribble(self):
        em = EvidenceMap(T.Tensor(np.ones((2, 2, 2))))
        with pytest.raises(EmptyScribbleError):
            partial_mse(em.prob, em.strength, ScribbleMask(np.full((2, 2), 2), 2))

    def test_sum_reduction(self):
        rng = np.random.default_rng(0)
        em = EvidenceMap(T.Tensor(rng.uniform(0, 3, size=(3, 4, 4))))
        s = random_scribble(rng, 3, (4, 4))
        mean = partial_mse(em.prob, em.strength, s).item()
        total = partial_mse(em.prob, em.strength, s, reduction="sum").item()
        assert total == pytest.approx(mean * s.count, rel=1e-14)


class TestPartialKL:
    def test_worked_example(self):
        alpha = T.Tensor(np.array([5.0, 3.0]).reshape(2, 1, 1))
        kl = partial_kl(alpha, ScribbleMask(np.array([[0]]), 2)).item()
        assert kl == pytest.approx(DERIVED["partial_kl_two_class"]["kl"]["float"], abs=1e-12)
        assert kl == pytest.approx(math.log(3) - 2 / 3, abs=1e-12)

    def test_uniform_is_zero(self):
        alpha = T.Tensor(np.array([7.0, 1.0, 1.0]).reshape(3, 1, 1))
        assert abs(partial_kl(alpha, ScribbleMask(np.array([[0]]), 3)).item()) < 1e-12

    def test_domain(self):
        with pytest.raises(T.NumericError):
            partial_kl(T.Tensor(np.full((2, 1, 1), 0.5)), ScribbleMask(np.array([[0]]), 2))

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.floats(1.0, 50.0), min_size=2, max_size=5))
    def test_nonnegative(self, alpha_hat):
        a = T.Tensor(np.asarray(alpha_hat).reshape(-1, 1, 1))
        assert kl_to_uniform(a).item() >= -1e-12


def dense_partial_kl(alpha, labels, k):
    """Per-pixel loop reference for the partial KL (mean over annotated pixels)."""
    import mpmath
    total, count = 0.0, 0
    a = alpha.reshape((-1, k) + alpha.shape[-2:])
    lab = labels.reshape((-1,) + labels.shape[-2:])
    for n in range(a.shape[0]):
        for y in range(a.shape[2]):
            for x in range(a.shape[3]):
                if lab[n, y, x] == k:
                    continue
                ah = [1.0 if j == lab[n, y, x] else float(a[n, j, y, x]) for j in range(k)]
                s = sum(ah)
                v = mpmath.loggamma(s) - mpmath.loggamma(k) - sum(mpmath.loggamma(c) for c in ah)
                v += sum((c - 1) * (mpmath.digamma(c) - mpmath.digamma(s)) for c in ah)
                total += float(v)
                count += 1
    return total / count


class TestPartialKLReference:
    @pytest.mark.parametrize("shape", [(4, 5, 6), (2, 4, 5, 6)])
    def test_matches_pixel_loop(self, shape):
        rng = np.random.default_rng(11)
        alpha = 1.0 + rng.uniform(0, 5, size=shape)
        labels = rng.integers(0, 4, size=shape[:-3] + shape[-2:])
        labels[rng.random(labels.shape) > 0.4] = 4
        labels.reshape(-1)[0] = 2
        got = partial_kl(T.Tensor(alpha), ScribbleMask(labels, 4)).item()
        assert got == pytest.approx(dense_partial_kl(alpha, labels, 4), rel=1e-11)


class TestMaskedInvariance:
    @pytest.mark.parametrize("loss", ["mse", "kl", "ce"])
    def test_unlabeled_pixels_do_not_matter(self, loss):
        rng = np.random.default_rng(5)
        s = random_scribble(rng, 4, (6, 6))
        raw = rng.uniform(-2, 2, size=(4, 6, 6))
        other = raw.copy()
        other[:, ~s.annotated] = rng.uniform(-5, 5, size=(4, int((~s.annotated).sum())))

        def value(r):
            em = evidence_from_logits(T.Tensor(r))
            if loss == "mse":
                return partial_mse(em.prob, em.strength, s).item()
            if loss == "kl":
                return partial_kl(em.alpha, s).item()
            return partial_cross_entropy(em.prob, s).item()

        assert value(raw) == value(other)


class TestPartialEDL:
    def test_annealing(self):
        assert LossConfig(step=0).anneal == 0.0
        assert LossConfig(beta=10, step=10).anneal == 1.0
        assert LossConfig(beta=10, step=25).anneal == 1.0
        assert LossConfig(beta=10, step=3).anneal == pytest.approx(0.3)
        values = [LossConfig(step=t).anneal for t in range(30)]
        assert values == sorted(values)

    def test_composition(self):
        rng = np.random.default_rng(1)
        em = EvidenceMap(T.Tensor(rng.uniform(0, 3, size=(3, 4, 4))))
        s = random_scribble(rng, 3, (4, 4))
        mse = partial_mse(em.prob, em.strength, s).item()
        kl = partial_kl(em.alpha, s).item()
        assert partial_edl(em.prob, em.strength, em.alpha, s, LossConfig(step=0)).item() == mse
        got = partial_edl(em.prob, em.strength, em.alpha, s, LossConfig(step=4)).item()
        assert got == pytest.approx(mse + 0.4 * kl, rel=1e-14)


def dice_oracle(pred, target, eps=1e-5):
    k = pred.shape[0]
    scores = []
    for c in range(k):
        inter = psum = tsum = 0.0
        for y in range(target.shape[0]):
            for x in range(target.shape[1]):
                t = 1.0 if target[y, x] == c else 0.0
                inter += pred[c, y, x] * t
                psum += pred[c, y, x]
                tsum += t
        scores.append((2 * inter + eps) / (psum + tsum + eps))
    return 1.0 - sum(scores) / k


class TestDice:
    def test_perfect(self):
        target = np.random.default_rng(0).integers(0, 3, size=(5, 5))
        assert dice_loss(T.Tensor(onehot(target, 3)), target).item() < 1e-4

    def test_disjoint_class(self):
        target = np.zeros((4, 4), int)
        target[:2] = 1
        pred = np.zeros((2, 4, 4))
        pred[1, 2:] = 1.0
        pred[0, :2] = 1.0
        loss = dice_loss(T.Tensor(pred), target).item()
        assert loss == pytest.approx(1.0, abs=1e-5)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            pred = rng.dirichlet(np.ones(4), size=(6, 7)).transpose(2, 0, 1)
            target = rng.integers(0, 4, size=(6, 7))
            assert dice_loss(T.Tensor(pred), target).item() == pytest.approx(dice_oracle(pred, target), abs=1e-12)

    def test_consistency(self):
        rng = np.random.default_rng(3)
        pseudo = rng.integers(0, 4, size=(6, 6))
        oh = T.Tensor(onehot(pseudo, 4))
        assert consistency_loss(oh, oh, pseudo).item() < 1e-4
        p1 = rng.dirichlet(np.ones(4), size=(6, 6)).transpose(2, 0, 1)
        p2 = rng.dirichlet(np.ones(4), size=(6, 6)).transpose(2, 0, 1)
        a = consistency_loss(T.Tensor(p1), T.Tensor(p2), pseudo).item()
        b = consistency_loss(T.Tensor(p2), T.Tensor(p1), pseudo).item()
        assert a == b
        assert a == pytest.approx(0.5 * (dice_oracle(p1, pseudo) + dice_oracle(p2, pseudo)), abs=1e-12)


class TestCrossEntropy:
    def test_values(self):
        s = ScribbleMask(np.array([[0, 1], [2, 2]]), 2)
        p = np.zeros((2, 2, 2))
        p[0, 0, 0] = p[1, 0, 1] = 1.0
        p[:, 1, :] = 0.5
        assert partial_cross_entropy(T.Tensor(p), s).item() == 0.0
        assert partial_cross_entropy(T.Tensor(np.full((4, 2, 2), 0.25)),
                                     ScribbleMask(np.array([[0, 3], [1, 4]]), 4)).item() == pytest.approx(math.log(4))

    def test_matches_scan(self):
        rng = np.random.default_rng(4)
        p = rng.dirichlet(np.ones(3), size=(5, 5)).transpose(2, 0, 1)
        s = random_scribble(rng, 3, (5, 5))
        vals = [-math.log(p[s.labels[y, x], y, x]) for y in range(5) for x in range(5) if s.labels[y, x] < 3]
        assert partial_cross_entropy(T.Tensor(p), s).item() == pytest.approx(sum(vals) / len(vals), rel=1e-13)


class TestJoint:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.s = random_scribble(rng, 4, (6, 6))
        self.raw = [rng.uniform(-2, 2, size=(4, 6, 6)) for _ in range(2)]

    def test_lambda_zero(self):
        b1, b2 = branch(T.Tensor(self.raw[0])), branch(T.Tensor(self.raw[1]))
        pseudo = hard_pseudo_labels(b1.prob)
        cfg0 = LossConfig(lambda_u=0.0, step=5)
        l_s = sum(partial_edl(b.prob, b.strength, b.alpha, self.s, cfg0).item() for b in (b1, b2, b1)) / 3
        assert joint_loss(b1, b2, b1, self.s, pseudo, cfg0).item() == pytest.approx(l_s, rel=1e-14)
        cfg = LossConfig(lambda_u=0.3, step=5)
        ecl = consistency_loss(b1.prob, b2.prob, pseudo).item()
        assert joint_loss(b1, b2, b1, self.s, pseudo, cfg).item() == pytest.approx(l_s + 0.3 * ecl, rel=1e-13)

    def test_identical_branches_collapse(self):
        b = branch(T.Tensor(self.raw[0]))
        cfg = LossConfig(lambda_u=0.0, step=3)
        single = partial_edl(b.prob, b.strength, b.alpha, self.s, cfg).item()
        assert joint_loss(b, b, b, self.s, hard_pseudo_labels(b.prob), cfg).item() == pytest.approx(single, rel=1e-14)

    def test_unlabeled_scope(self):
        b1, b2 = branch(T.Tensor(self.raw[0])), branch(T.Tensor(self.raw[1]))
        pseudo = hard_pseudo_labels(b1.prob)
        all_px = joint_loss(b1, b2, b1, self.s, pseudo, LossConfig(ecl_scope="all")).item()
        unl = joint_loss(b1, b2, b1, self.s, pseudo, LossConfig(ecl_scope="unlabeled")).item()
        assert all_px != unl


class TestLossGradients:
    """Tape gradients of every loss w.r.t. raw logits vs central differences, 4 classes, 6x6."""

    def setup_method(self):
        rng = np.random.default_rng(7)
        self.s = random_scribble(rng, 4, (6, 6))
        self.r1 = T.Tensor(rng.uniform(-2, 2, size=(4, 6, 6)), requires_grad=True)
        self.r2 = T.Tensor(rng.uniform(-2, 2, size=(4, 6, 6)), requires_grad=True)
        self.pseudo = rng.integers(0, 4, size=(6, 6))

    @pytest.mark.parametrize("name", ["mse", "kl", "edl", "ce", "dice", "ecl", "joint", "joint_mean"])
    def test_gradcheck(self, name):
        s, pseudo = self.s, self.pseudo
        cfg = LossConfig(step=4, lambda_u=0.3)

        def f():
            b1, b2 = branch(self.r1), branch(self.r2)
            if name == "mse":
                return partial_mse(b1.prob, b1.strength, s)
            if name == "kl":
                return partial_kl(b1.alpha, s)
            if name == "edl":
                return partial_edl(b1.prob, b1.strength, b1.alpha, s, cfg)
            if name == "ce":
                return partial_cross_entropy(b1.prob, s)
            if name == "dice":
                return dice_loss(b1.prob, pseudo)
            if name == "ecl":
                return consistency_loss(b1.prob, b2.prob, pseudo)
            if name == "joint":
                e1, e2 = evidence_from_logits(self.r1), evidence_from_logits(self.r2)
                fo = fuse(e1.belief, e1.uncertainty, e2.belief, e2.uncertainty)
                _, sf, af, pf = fused_dirichlet(fo)
                return joint_loss(b1, b2, BranchOutput(pf, sf, af), s, pseudo, cfg)
            fm = BranchOutput((b1.prob + b2.prob) * 0.5, (b1.strength + b2.strength) * 0.5,
                              (b1.alpha + b2.alpha) * 0.5)
            return joint_loss(b1, b2, fm, s, pseudo, cfg, kind="ce")

        inputs = [self.r1] if name in ("mse", "kl", "edl", "ce", "dice") else [self.r1, self.r2]
        assert gradcheck.check(f, inputs) < 1e-4
