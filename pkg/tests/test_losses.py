"""Margin softmax loss tests.

Exercises the margin adjustment, the stable loss evaluation, gradient
structure at the similarity level, batch/single consistency, and the
logit-level closed form for prototype rows.
"""

import numpy as np
import pytest

from epl.errors import (
    ConfigError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    InvalidShapeError,
)
from epl.linalg import make_rng, random_unit_rows
from epl.losses import (
    LossConfig,
    adjust_positive,
    batch_loss,
    loss_from_similarities,
    prototype_grad_closed_form,
    prototype_loss,
)

GAMMA = 64.0
MARGIN = 0.4


class TestLossConfig:
    """Constructor validation."""

    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.gamma == GAMMA
        assert cfg.margin == MARGIN
        assert cfg.margin_mode == "cosine"

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            LossConfig(gamma=0.0)
        with pytest.raises(ConfigError):
            LossConfig(margin=-0.1)
        with pytest.raises(ConfigError):
            LossConfig(margin_mode="additive")
        with pytest.raises(ConfigError):
            LossConfig(margin=np.pi / 2, margin_mode="angular")


class TestAdjustPositive:
    """Margin adjustment value and derivative."""

    def test_none_is_identity(self):
        cfg = LossConfig(margin=0.3, margin_mode="none")
        s = np.array([-0.5, 0.0, 0.9])
        adj, dadj = adjust_positive(s, cfg)
        np.testing.assert_array_equal(adj, s)
        np.testing.assert_array_equal(dadj, np.ones(3))

    def test_cosine_subtracts_margin(self):
        cfg = LossConfig(margin=MARGIN, margin_mode="cosine")
        s = np.array([-0.5, 0.0, 0.9])
        adj, dadj = adjust_positive(s, cfg)
        np.testing.assert_allclose(adj, s - MARGIN, rtol=1e-15)
        np.testing.assert_array_equal(dadj, np.ones(3))

    def test_angular_known_angle(self):
        """cos(pi/3 + pi/6) = 0 with derivative sin(pi/2)/sin(pi/3)."""
        cfg = LossConfig(margin=np.pi / 6, margin_mode="angular")
        adj, dadj = adjust_positive(np.array([0.5]), cfg)
        np.testing.assert_allclose(adj[0], 0.0, atol=1e-15)
        np.testing.assert_allclose(dadj[0], 1.0 / np.sin(np.pi / 3), rtol=1e-12)

    def test_angular_matches_trig_inside_clamp(self):
        cfg = LossConfig(margin=0.25, margin_mode="angular")
        rng = np.random.default_rng(42)
        s = rng.uniform(-0.99, 0.99, size=1000)
        adj, dadj = adjust_positive(s, cfg)
        theta = np.arccos(s)
        np.testing.assert_allclose(adj, np.cos(theta + 0.25), rtol=1e-12)
        np.testing.assert_allclose(
            dadj, np.sin(theta + 0.25) / np.sin(theta), rtol=1e-12)

    def test_angular_clamped_derivative_zero(self):
        cfg = LossConfig(margin=0.25, margin_mode="angular")
        adj, dadj = adjust_positive(np.array([1.0, -1.0]), cfg)
        assert np.isfinite(adj).all()
        np.testing.assert_array_equal(dadj, np.zeros(2))


class TestLossFromSimilarities:
    """Similarity-level loss and gradient."""

    def test_symmetric_pair_gives_log_two(self):
        """Margin-adjusted positive equal to the negative leaves log 2."""
        cfg = LossConfig(gamma=GAMMA, margin=MARGIN, margin_mode="cosine")
        loss, _ = loss_from_similarities(np.array([0.9, 0.5]), 0, cfg)
        np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-15)

    def test_saturated_loss_stays_positive(self):
        """A fully separated pair keeps a tiny but nonzero loss."""
        cfg = LossConfig(gamma=GAMMA, margin=0.0, margin_mode="none")
        loss, _ = loss_from_similarities(np.array([1.0, -1.0]), 0, cfg)
        np.testing.assert_allclose(loss, np.log1p(np.exp(-128.0)), rtol=1e-12)
        assert loss > 0.0

    def test_two_class_gradient_hand_value(self):
        """At the symmetric point each logit carries gamma/2."""
        cfg = LossConfig(gamma=GAMMA, margin=MARGIN, margin_mode="cosine")
        _, grad = loss_from_similarities(np.array([0.9, 0.5]), 0, cfg)
        np.testing.assert_allclose(grad, [-32.0, 32.0], rtol=1e-12)

    def test_gradient_sums_to_zero_when_dadj_is_one(self):
        """Positive and negative coefficients balance for unit dadj."""
        rng = np.random.default_rng(3)
        for mode in ("none", "cosine"):
            cfg = LossConfig(gamma=GAMMA, margin=MARGIN, margin_mode=mode)
            for _ in range(50):
                sims = rng.uniform(-1, 1, size=6)
                label = int(rng.integers(6))
                _, grad = loss_from_similarities(sims, label, cfg)
                np.testing.assert_allclose(grad.sum(), 0.0,
                                           atol=1e-12 * np.abs(grad).max())

    def test_loss_increases_with_margin(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            sims = rng.uniform(-0.8, 0.8, size=5)
            label = int(rng.integers(5))
            losses = [
                loss_from_similarities(
                    sims, label,
                    LossConfig(gamma=8.0, margin=m, margin_mode="cosine"))[0]
                for m in (0.0, 0.2, 0.4)
            ]
            assert losses[0] < losses[1] < losses[2]

    def test_label_out_of_range(self):
        cfg = LossConfig()
        with pytest.raises(IndexOutOfRangeError):
            loss_from_similarities(np.array([0.1, 0.2]), 2, cfg)

    def test_matrix_rejected(self):
        with pytest.raises(InvalidShapeError):
            loss_from_similarities(np.ones((2, 2)), 0, LossConfig())


class TestBatchLoss:
    """Batch evaluation against per-sample evaluation."""

    def _draw(self, rng, b=5, n=6, d=8):
        feats = rng.normal(size=(b, d)) * rng.uniform(0.5, 2.0)
        labels = rng.integers(0, n, size=b)
        protos = rng.normal(size=(n, d))
        return feats, labels, protos

    def test_batch_is_mean_of_singles(self):
        cfg = LossConfig()
        rng = np.random.default_rng(42)
        for _ in range(20):
            feats, labels, protos = self._draw(rng)
            b = feats.shape[0]
            loss, gf, gw = batch_loss(feats, labels, protos, cfg)
            singles = [prototype_loss(feats[k], int(labels[k]), protos, cfg)
                       for k in range(b)]
            np.testing.assert_allclose(
                loss, np.mean([s.loss for s in singles]), rtol=1e-12)
            for k in range(b):
                np.testing.assert_allclose(
                    gf[k], singles[k].grad_feature / b, rtol=1e-10, atol=1e-14)
            np.testing.assert_allclose(
                gw, sum(s.grad_prototypes for s in singles) / b,
                rtol=1e-10, atol=1e-14)

    def test_scale_invariance_of_loss(self):
        """The loss reads cosines only, so feature scale cannot move it."""
        cfg = LossConfig()
        rng = np.random.default_rng(1)
        feats, labels, protos = self._draw(rng)
        l1, _, _ = batch_loss(feats, labels, protos, cfg)
        l2, _, _ = batch_loss(feats * 7.5, labels, protos * 0.3, cfg)
        np.testing.assert_allclose(l1, l2, rtol=1e-12)

    def test_validation_battery(self):
        cfg = LossConfig()
        rng = np.random.default_rng(2)
        feats, labels, protos = self._draw(rng)
        with pytest.raises(IndexOutOfRangeError):
            batch_loss(feats, labels + 10, protos, cfg)
        with pytest.raises(DimensionMismatchError):
            batch_loss(feats[:, :-1], labels, protos, cfg)
        with pytest.raises(InvalidShapeError):
            batch_loss(feats, labels[:-1], protos, cfg)


class TestPrototypeGradClosedForm:
    """Logit-level closed form for unit inputs."""

    def _draw(self, rng, n=6, d=8):
        x = random_unit_rows(1, d, rng)[0]
        w = random_unit_rows(n, d, rng)
        label = int(rng.integers(n))
        return x, w, label

    def test_rows_proportional_to_feature(self):
        cfg = LossConfig()
        rng = make_rng(0, 300)
        for _ in range(25):
            x, w, label = self._draw(rng)
            g = prototype_grad_closed_form(x, label, w, cfg)
            # Every row must be coeff_j * x: verify colinearity exactly.
            coeff = g @ x
            np.testing.assert_allclose(g, coeff[:, None] * x[None, :],
                                       rtol=1e-12, atol=1e-18)

    def test_label_row_negates_rest(self):
        """For unit dadj the labeled row is minus the sum of the others."""
        cfg = LossConfig(margin_mode="cosine")
        rng = make_rng(1, 300)
        for _ in range(25):
            x, w, label = self._draw(rng)
            g = prototype_grad_closed_form(x, label, w, cfg)
            others = np.delete(g, label, axis=0).sum(axis=0)
            np.testing.assert_allclose(g[label], -others, rtol=1e-12, atol=1e-18)

    def test_matches_similarity_gradient(self):
        """Rows equal dL/dsims times the feature, mode by mode."""
        rng = make_rng(2, 300)
        for mode in ("none", "cosine", "angular"):
            cfg = LossConfig(margin=0.3, margin_mode=mode)
            for _ in range(10):
                x, w, label = self._draw(rng)
                g = prototype_grad_closed_form(x, label, w, cfg)
                _, dsims = loss_from_similarities(w @ x, label, cfg)
                np.testing.assert_allclose(g, dsims[:, None] * x[None, :],
                                           rtol=1e-12, atol=1e-18)

    def test_saturated_label_row_keeps_precision(self):
        """A near-one softmax must not cancel the labeled coefficient."""
        cfg = LossConfig(gamma=GAMMA, margin=0.0, margin_mode="none")
        # Positive almost aligned, negatives far: p_pos saturates toward 1.
        x = np.zeros(4)
        x[0] = 1.0
        w = np.vstack([x, -np.eye(4)[1], -np.eye(4)[2]])
        g = prototype_grad_closed_form(x, 0, w, cfg)
        coeff = g @ x
        # dL/ds_pos = -gamma * sum_j p_j over negatives, all of size e^-64.
        expected = -GAMMA * 2.0 * np.exp(-64.0)
        np.testing.assert_allclose(coeff[0], expected, rtol=1e-12)
