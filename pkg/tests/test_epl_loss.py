"""Combined loss tests.

Verifies the shared-softmax structure over learned and empirical logits,
the detached adaptive margin, the empirical-only term, and consistency
with the plain margin loss when the empirical sum is disabled.
"""

import numpy as np
import pytest

from epl.bank import BankConfig, EmpiricalPrototypeBank
from epl.epl_loss import (
    EplConfig,
    adaptive_margin,
    batch_epl_loss,
    combined_loss_from_similarities,
    epl_loss,
    epr_loss,
)
from epl.errors import ConfigError, DimensionMismatchError
from epl.linalg import make_rng, random_unit_rows
from epl.losses import LossConfig, batch_loss


def _draw(rng, b=4, n=5, d=7):
    feats = rng.normal(size=(b, d)) * rng.uniform(0.5, 2.0)
    labels = rng.integers(0, n, size=b)
    protos = rng.normal(size=(n, d))
    bank = EmpiricalPrototypeBank(random_unit_rows(n, d, rng), BankConfig())
    return feats, labels, protos, bank


class TestEplConfig:
    """Constructor validation."""

    def test_defaults(self):
        cfg = EplConfig()
        assert cfg.tau == 1.0 / 64.0
        assert cfg.beta == 0.7
        assert cfg.ep_enabled and cfg.adaptive_margin

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            EplConfig(tau=0.0)
        with pytest.raises(ConfigError):
            EplConfig(beta=-0.1)
        with pytest.raises(ConfigError):
            EplConfig(beta=1.5)


class TestAdaptiveMargin:
    """m_x = s / tau."""

    def test_hand_values(self):
        assert adaptive_margin(0.5, 1.0 / 64.0) == 32.0
        assert adaptive_margin(-0.25, 0.5) == -0.5
        assert adaptive_margin(0.0, 0.1) == 0.0

    def test_invalid_tau(self):
        with pytest.raises(ConfigError):
            adaptive_margin(0.5, 0.0)


class TestCombinedLossFromSimilarities:
    """Similarity-level combined loss."""

    def test_two_class_frozen_instance(self):
        """Loss equals log(1 + e^0 + e^3.84) for a hand-built pair."""
        cfg = EplConfig()
        s_w = np.array([0.9, 0.5])
        s_e = np.array([0.8, 0.3])
        loss, _, _ = combined_loss_from_similarities(s_w, s_e, 0, cfg)
        # Learned leg: gamma=64, cosine margin 0.4 makes the adjusted
        # positive 0.5, so the negative delta is exactly 0. Empirical leg:
        # anchor (1-beta)*0.8/tau = 15.36, negative 0.3/tau = 19.2.
        expected = np.log(1.0 + np.exp(0.0) + np.exp(3.84))
        np.testing.assert_allclose(loss, expected, rtol=1e-12)

    def test_ep_disabled_reduces_to_margin_loss(self):
        """Without the empirical sum the loss and gradients match exactly."""
        cfg = EplConfig(ep_enabled=False)
        rng = make_rng(0, 90)
        for _ in range(25):
            s_w = rng.uniform(-1, 1, size=6)
            s_e = rng.uniform(-1, 1, size=6)
            label = int(rng.integers(6))
            loss_c, gw, ge = combined_loss_from_similarities(s_w, s_e, label, cfg)
            from epl.losses import loss_from_similarities
            loss_p, grad_p = loss_from_similarities(s_w, label, cfg.base)
            np.testing.assert_array_equal(loss_c, loss_p)
            np.testing.assert_array_equal(gw, grad_p)
            np.testing.assert_array_equal(ge, np.zeros(6))

    def test_margin_substitution_identity(self):
        """Scaling the positive empirical logit by (1-beta) with the margin
        off reproduces the adaptive-margin loss value."""
        cfg = EplConfig()
        rng = make_rng(1, 90)
        for _ in range(25):
            s_w = rng.uniform(-1, 1, size=5)
            s_e = rng.uniform(-1, 1, size=5)
            label = int(rng.integers(5))
            loss_a, _, _ = combined_loss_from_similarities(s_w, s_e, label, cfg)
            s_sub = s_e.copy()
            s_sub[label] = (1.0 - cfg.beta) * s_e[label]
            loss_s, _, _ = combined_loss_from_similarities(
                s_w, s_sub, label, cfg, ep_margin=0.0)
            np.testing.assert_allclose(loss_a, loss_s, rtol=1e-12)

    def test_detached_margin_gradient_ratio(self):
        """The positive empirical coefficient keeps the full 1/tau scale:
        against the substituted form the ratio is 1/(1-beta) = 10/3."""
        cfg = EplConfig()
        rng = make_rng(2, 90)
        for _ in range(25):
            s_w = rng.uniform(-1, 1, size=5)
            s_e = rng.uniform(-1, 1, size=5)
            label = int(rng.integers(5))
            _, _, ge_a = combined_loss_from_similarities(s_w, s_e, label, cfg)
            s_sub = s_e.copy()
            s_sub[label] = (1.0 - cfg.beta) * s_e[label]
            _, _, ge_s = combined_loss_from_similarities(
                s_w, s_sub, label, cfg, ep_margin=0.0)
            # Chain rule for the substituted variable adds a (1-beta) factor.
            ratio = ge_a[label] / ((1.0 - cfg.beta) * ge_s[label])
            np.testing.assert_allclose(ratio, 10.0 / 3.0, rtol=1e-12)

    def test_explicit_margin_matches_adaptive(self):
        """Passing m_x = beta * s_pos / tau reproduces the adaptive path."""
        cfg = EplConfig()
        rng = make_rng(3, 90)
        s_w = rng.uniform(-1, 1, size=4)
        s_e = rng.uniform(-1, 1, size=4)
        label = 1
        loss_a, gwa, gea = combined_loss_from_similarities(s_w, s_e, label, cfg)
        m = cfg.beta * s_e[label] / cfg.tau
        loss_e, gwe, gee = combined_loss_from_similarities(
            s_w, s_e, label, cfg, ep_margin=m)
        np.testing.assert_array_equal(loss_a, loss_e)
        np.testing.assert_array_equal(gwa, gwe)
        np.testing.assert_array_equal(gea, gee)


class TestBatchEplLoss:
    """Feature-level batched combined loss."""

    def test_batch_is_mean_of_singles(self):
        cfg = EplConfig()
        rng = make_rng(4, 90)
        for _ in range(10):
            feats, labels, protos, bank = _draw(rng)
            b = feats.shape[0]
            loss, gf, gw = batch_epl_loss(feats, labels, protos, bank, cfg)
            singles = [epl_loss(feats[k], int(labels[k]), protos, bank, cfg)
                       for k in range(b)]
            np.testing.assert_allclose(
                loss, np.mean([s.loss for s in singles]), rtol=1e-12)
            for k in range(b):
                np.testing.assert_allclose(
                    gf[k], singles[k].grad_feature / b, rtol=1e-10, atol=1e-14)
            np.testing.assert_allclose(
                gw, sum(s.grad_prototypes for s in singles) / b,
                rtol=1e-10, atol=1e-14)

    def test_ep_disabled_matches_batch_loss_bitwise(self):
        """use of the combined path without the empirical sum is free."""
        cfg = EplConfig(ep_enabled=False)
        rng = make_rng(5, 90)
        feats, labels, protos, bank = _draw(rng)
        l1, gf1, gw1 = batch_epl_loss(feats, labels, protos, bank, cfg)
        l2, gf2, gw2 = batch_loss(feats, labels, protos, cfg.base)
        assert l1 == l2
        np.testing.assert_array_equal(gf1, gf2)
        np.testing.assert_array_equal(gw1, gw2)

    def test_bank_rows_accepted_raw(self):
        """The bank argument may be the row matrix itself."""
        cfg = EplConfig()
        rng = make_rng(6, 90)
        feats, labels, protos, bank = _draw(rng)
        l1, gf1, gw1 = batch_epl_loss(feats, labels, protos, bank, cfg)
        l2, gf2, gw2 = batch_epl_loss(feats, labels, protos, bank.prototypes, cfg)
        assert l1 == l2
        np.testing.assert_array_equal(gf1, gf2)
        np.testing.assert_array_equal(gw1, gw2)

    def test_bank_never_written(self):
        cfg = EplConfig()
        rng = make_rng(7, 90)
        feats, labels, protos, bank = _draw(rng)
        before = bank.prototypes.copy()
        batch_epl_loss(feats, labels, protos, bank, cfg)
        np.testing.assert_array_equal(bank.prototypes, before)
        assert bank.update_count.sum() == 0

    def test_class_count_mismatch(self):
        cfg = EplConfig()
        rng = make_rng(8, 90)
        feats, labels, protos, _ = _draw(rng)
        small = EmpiricalPrototypeBank(random_unit_rows(3, 7, rng), BankConfig())
        with pytest.raises(DimensionMismatchError):
            batch_epl_loss(feats, labels, protos, small, cfg)


class TestEprLoss:
    """Empirical-term-only loss."""

    def test_matches_margin_free_loss_at_inverse_tau(self):
        rng = make_rng(9, 90)
        _, _, _, bank = _draw(rng)
        x = rng.normal(size=7) * 2.0
        out = epr_loss(x, 1, bank)
        cfg = LossConfig(gamma=64.0, margin=0.0, margin_mode="none")
        loss, gf, _ = batch_loss(x[None, :], [1], bank.prototypes, cfg)
        assert out.loss == loss
        np.testing.assert_array_equal(out.grad_feature, gf[0])

    def test_bank_rows_carry_no_gradient(self):
        rng = make_rng(10, 90)
        _, _, _, bank = _draw(rng)
        out = epr_loss(rng.normal(size=7), 2, bank)
        assert out.grad_prototypes.shape == bank.prototypes.shape
        assert not out.grad_prototypes.any()

    def test_invalid_tau(self):
        rng = make_rng(11, 90)
        _, _, _, bank = _draw(rng)
        with pytest.raises(ConfigError):
            epr_loss(np.ones(7), 0, bank, tau=-1.0)
