"""Empirical prototype bank tests.

Covers the blend-coefficient activations, one frozen end-to-end update,
fixed-point and unit-norm invariants, sequential collision handling, and
the maintenance switches.
"""

import numpy as np
import pytest

from epl.bank import (
    ACTIVATIONS,
    BankConfig,
    EmpiricalPrototypeBank,
    init_bank,
    update_coefficient,
)
from epl.errors import (
    ConfigError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    InvalidShapeError,
)
from epl.linalg import make_rng, random_unit_rows, random_unit_vector


class TestUpdateCoefficient:
    """alpha = activation(similarity)."""

    def test_identity(self):
        for s in (-1.0, -0.25, 0.0, 0.7, 1.0):
            assert update_coefficient(s, "identity") == s

    def test_relu(self):
        assert update_coefficient(-0.3, "relu") == 0.0
        assert update_coefficient(0.0, "relu") == 0.0
        assert update_coefficient(0.6, "relu") == 0.6

    def test_sigmoid(self):
        np.testing.assert_allclose(update_coefficient(0.0, "sigmoid"), 0.5, rtol=1e-15)
        np.testing.assert_allclose(
            update_coefficient(1.0, "sigmoid"), 1.0 / (1.0 + np.exp(-1.0)), rtol=1e-15)

    def test_sigmoid_shifted(self):
        np.testing.assert_allclose(
            update_coefficient(1.0, "sigmoid_shifted"), 0.5, rtol=1e-15)
        np.testing.assert_allclose(
            update_coefficient(0.0, "sigmoid_shifted"),
            1.0 / (1.0 + np.exp(1.0)), rtol=1e-15)

    def test_softsign(self):
        assert update_coefficient(0.0, "softsign") == 0.0
        np.testing.assert_allclose(update_coefficient(1.0, "softsign"), 0.5, rtol=1e-15)
        np.testing.assert_allclose(update_coefficient(-1.0, "softsign"), -0.5, rtol=1e-15)
        np.testing.assert_allclose(update_coefficient(0.5, "softsign"), 1.0 / 3.0, rtol=1e-15)
        np.testing.assert_allclose(update_coefficient(0.6, "softsign"), 0.6 / 1.6, rtol=1e-15)

    def test_softsign_range_on_cosine_grid(self):
        """On valid cosines the softsign coefficient stays in [-1/2, 1/2]."""
        s = np.linspace(-1.0, 1.0, 2001)
        a = np.array([update_coefficient(v, "softsign") for v in s])
        assert a.min() >= -0.5 and a.max() <= 0.5

    def test_retention_grows_with_similarity(self):
        """Every activation keeps at least as much history when s rises."""
        s = np.linspace(-1.0, 1.0, 201)
        for name in ACTIVATIONS:
            a = np.array([update_coefficient(v, name) for v in s])
            assert (np.diff(a) >= 0.0).all()

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            update_coefficient(0.0, "tanh")


class TestBankUpdate:
    """Single-row blend semantics."""

    def test_frozen_softsign_blend(self):
        """row [1,0] and feature [3,4]: s=0.6, alpha=0.375, unit blend."""
        bank = EmpiricalPrototypeBank(np.array([[1.0, 0.0]]),
                                      BankConfig(activation="softsign"))
        new_row = bank.update(0, np.array([3.0, 4.0]))
        np.testing.assert_allclose(
            new_row, [0.8320502943378437, 0.5547001962252291], rtol=1e-15)
        np.testing.assert_array_equal(bank.prototypes[0], new_row)
        assert bank.update_count[0] == 1

    def test_frozen_blend_without_renormalize(self):
        """Same instance, raw blend: alpha*row + (1-alpha)*x_hat."""
        bank = EmpiricalPrototypeBank(
            np.array([[1.0, 0.0]]),
            BankConfig(activation="softsign", renormalize=False))
        new_row = bank.update(0, np.array([3.0, 4.0]))
        np.testing.assert_allclose(new_row, [0.75, 0.5], rtol=1e-14)

    def test_fixed_point_all_activations(self):
        """A feature equal to its row leaves the row unchanged."""
        rng = make_rng(0, 77)
        for name in ACTIVATIONS:
            row = random_unit_vector(8, rng)
            bank = EmpiricalPrototypeBank(row[None, :].copy(),
                                          BankConfig(activation=name))
            new_row = bank.update(0, row * 2.5)
            np.testing.assert_allclose(new_row, row, rtol=0, atol=1e-12)

    def test_unit_norms_over_many_updates(self):
        """Renormalized rows stay unit over 10^4 random updates."""
        rng = make_rng(0, 78)
        bank = init_bank(5, 8, BankConfig(activation="softsign"), rng)
        for _ in range(10000):
            label = int(rng.integers(5))
            bank.update(label, rng.normal(size=8))
        np.testing.assert_allclose(
            np.linalg.norm(bank.prototypes, axis=1), 1.0, rtol=0, atol=1e-12)
        assert bank.update_count.sum() == 10000

    def test_updates_touch_only_their_row(self):
        rng = make_rng(0, 79)
        bank = init_bank(4, 6, BankConfig(), rng)
        before = bank.prototypes.copy()
        bank.update(2, rng.normal(size=6))
        untouched = [0, 1, 3]
        np.testing.assert_array_equal(bank.prototypes[untouched], before[untouched])
        assert not np.array_equal(bank.prototypes[2], before[2])

    def test_copy_is_independent(self):
        rng = make_rng(0, 80)
        bank = init_bank(3, 5, BankConfig(), rng)
        dup = bank.copy()
        bank.update(0, rng.normal(size=5))
        assert not np.array_equal(dup.prototypes[0], bank.prototypes[0])
        assert dup.update_count[0] == 0

    def test_validation(self):
        bank = init_bank(3, 5, BankConfig(), make_rng(0, 81))
        with pytest.raises(IndexOutOfRangeError):
            bank.update(3, np.ones(5))
        with pytest.raises(DimensionMismatchError):
            bank.update(0, np.ones(4))
        with pytest.raises(InvalidShapeError):
            EmpiricalPrototypeBank(np.ones(5), BankConfig())
        with pytest.raises(ConfigError):
            BankConfig(activation="gelu")


class TestBatchUpdate:
    """Sequential batch semantics and the master switch."""

    def test_matches_sequential_updates(self):
        rng = make_rng(0, 82)
        feats = rng.normal(size=(12, 6))
        labels = rng.integers(0, 3, size=12)
        batch_bank = init_bank(3, 6, BankConfig(), make_rng(0, 83))
        seq_bank = batch_bank.copy()
        batch_bank.batch_update(feats, labels)
        for k in range(12):
            seq_bank.update(int(labels[k]), feats[k])
        np.testing.assert_array_equal(batch_bank.prototypes, seq_bank.prototypes)
        np.testing.assert_array_equal(batch_bank.update_count, seq_bank.update_count)

    def test_same_class_collisions_chain(self):
        """Two same-class features: the second sees the first's row state."""
        rng = make_rng(0, 84)
        bank = init_bank(2, 5, BankConfig(), make_rng(0, 85))
        x1, x2 = rng.normal(size=(2, 5))
        expected = bank.copy()
        r1 = expected.update(0, x1)
        assert not np.array_equal(r1, expected.prototypes[1])
        expected.update(0, x2)
        bank.batch_update(np.stack([x1, x2]), [0, 0])
        np.testing.assert_array_equal(bank.prototypes, expected.prototypes)
        assert bank.update_count[0] == 2

    def test_disabled_is_noop(self):
        rng = make_rng(0, 86)
        bank = init_bank(3, 5, BankConfig(update_enabled=False), rng)
        before = bank.prototypes.copy()
        bank.batch_update(rng.normal(size=(8, 5)), rng.integers(0, 3, size=8))
        np.testing.assert_array_equal(bank.prototypes, before)
        assert bank.update_count.sum() == 0

    def test_batch_validation(self):
        bank = init_bank(3, 5, BankConfig(), make_rng(0, 87))
        with pytest.raises(DimensionMismatchError):
            bank.batch_update(np.ones((2, 4)), [0, 1])
        with pytest.raises(InvalidShapeError):
            bank.batch_update(np.ones((2, 5)), [0])


class TestInitBank:
    """Random initialization contract."""

    def test_unit_rows_and_zero_counters(self):
        bank = init_bank(7, 9, BankConfig(), make_rng(5, 2))
        assert bank.prototypes.shape == (7, 9)
        np.testing.assert_allclose(
            np.linalg.norm(bank.prototypes, axis=1), 1.0, rtol=1e-12)
        assert bank.update_count.tolist() == [0] * 7

    def test_deterministic(self):
        a = init_bank(4, 6, BankConfig(), make_rng(1, 2))
        b = init_bank(4, 6, BankConfig(), make_rng(1, 2))
        np.testing.assert_array_equal(a.prototypes, b.prototypes)

    def test_invalid_sizes(self):
        with pytest.raises(InvalidShapeError):
            init_bank(0, 5, BankConfig(), make_rng(0))
        with pytest.raises(InvalidShapeError):
            init_bank(3, 1, BankConfig(), make_rng(0))
