"""Forward-updated bank of empirical class prototypes.

Each class keeps one row that tracks a running estimate of its feature
direction. On every update the incoming feature is L2-normalized and
blended into the row:

    row <- alpha * row + (1 - alpha) * x_hat,   alpha = activation(s)

where s is the cosine similarity between x_hat and the current row. Rows
are re-normalized after the blend when configured. Updates happen only on
the forward path; nothing here participates in backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    InvalidShapeError,
)
from .linalg import as_f64, cosine_similarity, l2_normalize, random_unit_rows

ACTIVATIONS = ("identity", "relu", "sigmoid", "sigmoid_shifted", "softsign")


@dataclass(frozen=True)
class BankConfig:
    """Blend-coefficient activation and row maintenance switches.

    activation: one of identity, relu, sigmoid, sigmoid_shifted (sigmoid of
        s - 1), softsign (s / (1 + |s|)).
    renormalize: re-normalize a row to unit length after each blend.
    update_enabled: master switch honored by batch_update; update() itself
        is the unconditional primitive.
    """

    activation: str = "softsign"
    renormalize: bool = True
    update_enabled: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


def update_coefficient(s: float, activation: str) -> float:
    """alpha = activation(s) for the blend above."""
    s = float(s)
    if activation == "identity":
        return s
    if activation == "relu":
        return max(0.0, s)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-s))
    if activation == "sigmoid_shifted":
        return 1.0 / (1.0 + np.exp(-(s - 1.0)))
    if activation == "softsign":
        return s / (1.0 + abs(s))
    raise ConfigError(f"unknown activation {activation!r}")


class EmpiricalPrototypeBank:
    """One empirical prototype row per class plus per-row update counters."""

    def __init__(self, prototypes, config: BankConfig, update_count=None):
        p = as_f64(prototypes).copy()
        if p.ndim != 2:
            raise InvalidShapeError(f"prototypes must be 2-d, got {p.shape}")
        self.prototypes = p
        self.config = config
        if update_count is None:
            self.update_count = np.zeros(p.shape[0], dtype=np.int64)
        else:
            self.update_count = np.asarray(update_count, dtype=np.int64).copy()
            if self.update_count.shape != (p.shape[0],):
                raise InvalidShapeError("update_count length != class count")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def copy(self) -> "EmpiricalPrototypeBank":
        return EmpiricalPrototypeBank(self.prototypes, self.config, self.update_count)

    def update(self, label: int, x) -> np.ndarray:
        """Blend one feature into its class row; returns the new row.

        This primitive always applies; the update_enabled switch is honored
        one level up in batch_update.
        """
        if not 0 <= label < self.num_classes:
            raise IndexOutOfRangeError(f"label {label} outside [0, {self.num_classes})")
        x = as_f64(x)
        if x.shape != (self.dim,):
            raise DimensionMismatchError(f"feature shape {x.shape} != ({self.dim},)")
        x_hat = l2_normalize(x)
        row = self.prototypes[label]
        s = cosine_similarity(x_hat, row)
        alpha = update_coefficient(s, self.config.activation)
        new_row = alpha * row + (1.0 - alpha) * x_hat
        if self.config.renormalize:
            new_row = l2_normalize(new_row)
        self.prototypes[label] = new_row
        self.update_count[label] += 1
        return new_row.copy()

    def batch_update(self, features, labels):
        """Apply update() sequentially in batch order; no-op when disabled.

        Same-class collisions within the batch chain through the row state
        left by the previous update.
        """
        if not self.config.update_enabled:
            return
        f = as_f64(features)
        labels = np.asarray(labels, dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != self.dim:
            raise DimensionMismatchError(f"batch shape {f.shape} != (*, {self.dim})")
        if labels.shape != (f.shape[0],):
            raise InvalidShapeError("labels length != batch size")
        for k in range(f.shape[0]):
            self.update(int(labels[k]), f[k])


def init_bank(num_classes: int, dim: int, config: BankConfig,
              rng: np.random.Generator) -> EmpiricalPrototypeBank:
    """Bank with random unit rows and zeroed counters."""
    if num_classes < 1:
        raise InvalidShapeError(f"num_classes must be >= 1, got {num_classes}")
    if dim < 2:
        raise InvalidShapeError(f"dim must be >= 2, got {dim}")
    return EmpiricalPrototypeBank(random_unit_rows(num_classes, dim, rng), config)
