import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from duedl import gradcheck
from duedl import tensor as T
from duedl.evidence import EvidenceMap, belief_and_uncertainty, evidence_from_logits, expected_prob
from duedl.fusion import (DegenerateCertaintyError, DegenerateConflictError, fuse, fused_dirichlet,
                          hard_pseudo_labels)

DERIVED = json.loads((Path(__file__).parent / "data" / "derived_examples.json").read_text())


def pixel(values):
    return T.Tensor(np.asarray(values, dtype=np.float64).reshape(-1, 1, 1))


def floats(d):
    return [x["float"] for x in d] if isinstance(d, list) else d["float"]


def random_opinion(rng, k, shape, vacuous_frac=0.0):
    """Random valid opinion: Dirichlet split of mass over K beliefs + uncertainty."""
    mass = rng.dirichlet(np.ones(k + 1), size=shape)
    mass[..., -1] = np.maximum(mass[..., -1], 1e-6)
    mass /= mass.sum(axis=-1, keepdims=True)
    b = np.moveaxis(mass[..., :k], -1, -3)
    u = mass[..., k]
    return b, u


class TestEvidence:
    def test_vacuous_limit(self):
        em = evidence_from_logits(T.Tensor(np.full((4, 2, 2), -100.0)))
        np.testing.assert_allclose(em.evidence.data, 0.0, atol=1e-40)
        np.testing.assert_allclose(em.uncertainty.data, 1.0, atol=1e-12)
        np.testing.assert_allclose(em.prob.data, 0.25, atol=1e-12)

    def test_zero_logits(self):
        em = evidence_from_logits(T.Tensor(np.zeros((3, 2, 2))))
        np.testing.assert_allclose(em.evidence.data, np.log(2), rtol=1e-15)

    def test_k4_worked_example(self):
        ref = DERIVED["evidence_k4"]
        em = EvidenceMap(pixel([3, 0, 0, 0]))
        np.testing.assert_allclose(em.alpha.data.ravel(), floats(ref["alpha"]), rtol=1e-15)
        assert em.strength.item() == pytest.approx(floats(ref["S"]), rel=1e-15)
        np.testing.assert_allclose(em.belief.data.ravel(), floats(ref["b"]), rtol=1e-15)
        assert em.uncertainty.item() == pytest.approx(floats(ref["u"]), rel=1e-15)
        np.testing.assert_allclose(em.prob.data.ravel(), floats(ref["p"]), rtol=1e-15)

    def test_belief_examples(self):
        b, u = belief_and_uncertainty(EvidenceMap(pixel([0, 0, 0, 0])))
        np.testing.assert_array_equal(b.data.ravel(), 0.0)
        assert u.item() == 1.0
        ref = DERIVED["belief_uniform_evidence"]
        b, u = belief_and_uncertainty(EvidenceMap(pixel([1, 1, 1, 1])))
        np.testing.assert_allclose(b.data.ravel(), floats(ref["b"]))
        assert u.item() == pytest.approx(floats(ref["u"]))

    def test_prob_examples(self):
        np.testing.assert_allclose(expected_prob(EvidenceMap(pixel([0, 0]))).data.ravel(), [0.5, 0.5])
        ref = DERIVED["prob_k2"]
        np.testing.assert_allclose(expected_prob(EvidenceMap(pixel([8, 0]))).data.ravel(), floats(ref["p"]))

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            EvidenceMap(pixel([1, -1]))
        with pytest.raises(T.NumericError):
            evidence_from_logits(T.Tensor(np.array([np.nan, 0.0]).reshape(2, 1, 1)))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 2, 2), elements=st.floats(0, 1e6)))
    def test_normalisation(self, e):
        em = EvidenceMap(T.Tensor(e))
        b, u = belief_and_uncertainty(em)
        np.testing.assert_allclose(b.data.sum(axis=0) + u.data, 1.0, atol=1e-9)
        np.testing.assert_allclose(em.prob.data.sum(axis=0), 1.0, atol=1e-9)
        assert np.all(em.prob.data > 0)
        assert np.all((u.data > 0) & (u.data <= 1))
        np.testing.assert_allclose(em.strength.data, e.sum(axis=0) + 3, rtol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (4,), elements=st.floats(0, 100)), st.integers(0, 3), st.floats(1e-3, 10))
    def test_monotonicity(self, e, j, delta):
        base = EvidenceMap(pixel(e))
        bumped = e.copy()
        bumped[j] += delta
        more = EvidenceMap(pixel(bumped))
        assert more.prob.data.ravel()[j] > base.prob.data.ravel()[j]
        assert more.uncertainty.item() < base.uncertainty.item()

    def test_prob_sum_has_zero_gradient(self):
        raw = T.Tensor(np.random.default_rng(0).uniform(-2, 2, size=(4, 3, 3)), requires_grad=True)
        fd = gradcheck.numerical_grad(lambda: T.reduce_sum(evidence_from_logits(raw).prob), [raw])[0]
        assert np.abs(fd).max() < 1e-9
        T.backward(T.reduce_sum(evidence_from_logits(raw).prob))
        assert np.abs(raw.grad).max() < 1e-12


class TestFusion:
    def test_vacuous_identity(self):
        rng = np.random.default_rng(0)
        b1, u1 = random_opinion(rng, 4, (5, 5))
        f = fuse(T.Tensor(b1), T.Tensor(u1), T.Tensor(np.zeros_like(b1)), T.Tensor(np.ones_like(u1)))
        np.testing.assert_array_equal(f.belief.data, b1)
        np.testing.assert_array_equal(f.uncertainty.data, u1)

    def test_worked_example(self):
        ref = DERIVED["dempster_two_class"]
        f = fuse(pixel([0.6, 0.0]), T.Tensor([[0.4]]), pixel([0.0, 0.6]), T.Tensor([[0.4]]))
        assert f.conflict.item() == pytest.approx(floats(ref["C"]), abs=1e-15)
        np.testing.assert_allclose(f.belief.data.ravel(), floats(ref["b"]), atol=1e-15)
        assert f.uncertainty.item() == pytest.approx(floats(ref["u"]), abs=1e-15)
        e, s, a, p = fused_dirichlet(f, 2)
        np.testing.assert_allclose(e.data.ravel(), floats(ref["e"]), atol=1e-12)
        assert s.item() == pytest.approx(floats(ref["S"]))
        np.testing.assert_allclose(a.data.ravel(), floats(ref["alpha"]), atol=1e-12)
        np.testing.assert_allclose(p.data.ravel(), floats(ref["p"]), atol=1e-15)

    def test_fused_dirichlet_vacuous(self):
        f = fuse(pixel([0, 0, 0, 0]), T.Tensor([[1.0]]), pixel([0, 0, 0, 0]), T.Tensor([[1.0]]))
        e, s, a, p = fused_dirichlet(f, 4)
        np.testing.assert_array_equal(e.data.ravel(), 0)
        assert s.item() == 4
        np.testing.assert_array_equal(a.data.ravel(), 1)
        np.testing.assert_allclose(p.data.ravel(), 0.25)

    def test_properties_randomised(self):
        rng = np.random.default_rng(1)
        b1, u1 = random_opinion(rng, 4, (100, 100))
        b2, u2 = random_opinion(rng, 4, (100, 100))
        f12 = fuse(T.Tensor(b1), T.Tensor(u1), T.Tensor(b2), T.Tensor(u2))
        f21 = fuse(T.Tensor(b2), T.Tensor(u2), T.Tensor(b1), T.Tensor(u1))
        np.testing.assert_allclose(f12.belief.data, f21.belief.data, atol=1e-12)
        np.testing.assert_allclose(f12.uncertainty.data, f21.uncertainty.data, atol=1e-12)
        np.testing.assert_allclose(f12.belief.data.sum(axis=0) + f12.uncertainty.data, 1.0, atol=1e-9)
        assert np.all(f12.uncertainty.data <= np.minimum(u1, u2) + 1e-12)
        assert np.all((f12.conflict >= 0) & (f12.conflict < 1))
        e, s, a, p = fused_dirichlet(f12)
        em = EvidenceMap(e)
        np.testing.assert_allclose(em.belief.data, f12.belief.data, atol=1e-9)
        np.testing.assert_allclose(em.uncertainty.data, f12.uncertainty.data, atol=1e-9)

    def test_conflict_guard(self):
        with pytest.raises(DegenerateConflictError, match="pixel"):
            fuse(pixel([1.0, 0.0]), T.Tensor([[0.0]]), pixel([0.0, 1.0]), T.Tensor([[0.0]]))

    def test_zero_uncertainty_guard(self):
        f = fuse(pixel([1.0, 0.0]), T.Tensor([[0.0]]), pixel([1.0, 0.0]), T.Tensor([[0.0]]))
        with pytest.raises(DegenerateCertaintyError):
            fused_dirichlet(f)

    def test_fusion_is_differentiable(self):
        rng = np.random.default_rng(2)
        r1 = T.Tensor(rng.uniform(-2, 2, size=(3, 2, 2)), requires_grad=True)
        r2 = T.Tensor(rng.uniform(-2, 2, size=(3, 2, 2)), requires_grad=True)
        w = rng.normal(size=(3, 2, 2))

        def f():
            e1, e2 = evidence_from_logits(r1), evidence_from_logits(r2)
            fo = fuse(e1.belief, e1.uncertainty, e2.belief, e2.uncertainty)
            return T.reduce_sum(fused_dirichlet(fo)[3] * w)

        assert gradcheck.check(f, [r1, r2]) < 1e-5


class TestPseudoLabels:
    def test_examples(self):
        assert hard_pseudo_labels(pixel([0.9, 0.05, 0.03, 0.02])).item() == 0
        assert hard_pseudo_labels(pixel([0.25] * 4)).item() == 0

    def test_matches_scan(self):
        rng = np.random.default_rng(4)
        p = rng.dirichlet(np.ones(4), size=(2, 7, 9)).transpose(0, 3, 1, 2)
        p[0, :, 0, 0] = [0.3, 0.3, 0.2, 0.2]
        labels = hard_pseudo_labels(T.Tensor(p))
        for n in range(2):
            for y in range(7):
                for x in range(9):
                    col = list(p[n, :, y, x])
                    best = 0
                    for j in range(1, 4):
                        if col[j] > col[best]:
                            best = j
                    assert labels[n, y, x] == best

    def test_detached(self):
        p = T.Tensor(np.full((2, 1, 1), 0.5), requires_grad=True)
        assert isinstance(hard_pseudo_labels(p), np.ndarray)
