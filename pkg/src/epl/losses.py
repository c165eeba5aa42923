"""Prototype softmax losses over cosine similarities, with analytic gradients.

The loss for a sample of class i against prototype rows W is

    L = log(1 + sum_{j != i} exp(g*s_j) / exp(g*adj(s_i)))

where s_j is the cosine similarity to row j, g is the inverse-temperature
scale, and adj applies the configured margin to the positive similarity
(identity, s - m, or cos(arccos(s) + m)).

Two gradient conventions coexist on purpose:

* prototype_loss / batch_loss differentiate the full chain, including the
  normalization inside the cosine, for raw (unnormalized) features and
  prototype rows. This is what training uses.
* prototype_grad_closed_form works at the logit level: similarities are
  treated as plain dot products of already-normalized inputs, so the result
  is the textbook softmax form (p - onehot) * g scaled onto the feature.

All exponentials go through max-subtraction; exponents up to +-128 at the
default scale stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    InvalidShapeError,
)
from .linalg import as_f64, normalize_rows

ACOS_CLAMP = 1e-7

MARGIN_MODES = ("none", "cosine", "angular")


@dataclass(frozen=True)
class LossConfig:
    """Scale and margin for the prototype term.

    gamma: inverse temperature applied to every cosine logit, > 0.
    margin: margin m, >= 0; ignored when margin_mode is "none".
    margin_mode: "none", "cosine" (subtract m from the positive similarity)
        or "angular" (add m to the positive angle; requires m < pi/2).
    """

    gamma: float = 64.0
    margin: float = 0.4
    margin_mode: str = "cosine"

    def __post_init__(self):
        if self.margin_mode not in MARGIN_MODES:
            raise ConfigError(f"unknown margin_mode {self.margin_mode!r}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma!r}")
        if self.margin < 0.0:
            raise ConfigError(f"margin must be >= 0, got {self.margin!r}")
        if self.margin_mode == "angular" and not self.margin < np.pi / 2:
            raise ConfigError("angular margin must be < pi/2")


@dataclass
class LossOutput:
    loss: float
    grad_feature: np.ndarray
    grad_prototypes: np.ndarray


def adjust_positive(s_pos, cfg: LossConfig):
    """Margin-adjusted positive similarity and its derivative d(adj)/ds.

    Vectorized over s_pos. For the angular mode the arccos argument is
    clamped to [-1 + 1e-7, 1 - 1e-7]; inside the clamp the derivative is
    sin(theta + m) / sin(theta), at the clamp it is 0.
    """
    s_pos = np.asarray(s_pos, dtype=np.float64)
    if cfg.margin_mode == "none":
        return s_pos.copy(), np.ones_like(s_pos)
    if cfg.margin_mode == "cosine":
        return s_pos - cfg.margin, np.ones_like(s_pos)
    c = np.clip(s_pos, -1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP)
    theta = np.arccos(c)
    adjusted = np.cos(theta + cfg.margin)
    inside = np.abs(s_pos) < 1.0 - ACOS_CLAMP
    with np.errstate(divide="ignore", invalid="ignore"):
        deriv = np.where(inside, np.sin(theta + cfg.margin) / np.sin(theta), 0.0)
    return adjusted, deriv


def _check_labels(labels: np.ndarray, num_classes: int):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise IndexOutOfRangeError(f"label {int(bad)} outside [0, {num_classes})")


def _stable_loss_rows(deltas: np.ndarray) -> np.ndarray:
    """log(1 + sum_k exp(deltas_k)) per row, exact for tiny sums.

    Rows may contain -inf entries (terms that are absent); the implicit
    "+ 1" reference term is handled here, not in deltas.
    """
    m = np.maximum(np.max(deltas, axis=1), 0.0)
    s = np.exp(deltas - m[:, None]).sum(axis=1)
    small = m <= 0.0
    out = np.empty(deltas.shape[0])
    out[small] = np.log1p(s[small])
    out[~small] = m[~small] + np.log(np.exp(-m[~small]) + s[~small])
    return out


def _softmax_terms(deltas: np.ndarray):
    """exp(deltas_k) / (1 + sum exp(deltas)) per row, stable."""
    m = np.maximum(np.max(deltas, axis=1), 0.0)
    e = np.exp(deltas - m[:, None])
    total = np.exp(-m) + e.sum(axis=1)
    return e / total[:, None]


def loss_from_similarities(sims, label: int, cfg: LossConfig):
    """Loss and dL/dsims for one sample with similarities as free variables."""
    sims = as_f64(sims)
    if sims.ndim != 1:
        raise InvalidShapeError(f"expected a similarity vector, got {sims.shape}")
    n = sims.shape[0]
    _check_labels(np.asarray([label]), n)
    adjusted, dadj = adjust_positive(sims[label], cfg)
    deltas = cfg.gamma * (sims - adjusted)
    deltas[label] = -np.inf
    loss = float(_stable_loss_rows(deltas[None, :])[0])
    p = _softmax_terms(deltas[None, :])[0]
    grad = cfg.gamma * p
    grad[label] = -cfg.gamma * float(dadj) * p.sum()
    return loss, grad


def _grad_features_from_coeff(coeff, sims, feat_hat, feat_norms, proto_hat):
    """Chain dL/dsims into dL/d(raw features); sums over prototypes."""
    row_w = (coeff * sims).sum(axis=1)
    return (coeff @ proto_hat - row_w[:, None] * feat_hat) / feat_norms[:, None]


def _grad_prototypes_from_coeff(coeff, sims, feat_hat, proto_hat, proto_norms):
    """Chain dL/dsims into dL/d(raw prototype rows); sums over the batch."""
    col_w = (coeff * sims).sum(axis=0)
    return (coeff.T @ feat_hat - col_w[:, None] * proto_hat) / proto_norms[:, None]


def _validate_batch(features, labels, prototypes):
    f = as_f64(features)
    w = as_f64(prototypes)
    labels = np.asarray(labels, dtype=np.int64)
    if f.ndim != 2 or w.ndim != 2:
        raise InvalidShapeError("features and prototypes must be 2-d")
    if f.shape[0] == 0:
        raise InvalidShapeError("empty batch")
    if labels.shape != (f.shape[0],):
        raise InvalidShapeError(
            f"labels shape {labels.shape} does not match batch {f.shape[0]}"
        )
    if f.shape[1] != w.shape[1]:
        raise DimensionMismatchError(
            f"feature dim {f.shape[1]} != prototype dim {w.shape[1]}"
        )
    _check_labels(labels, w.shape[0])
    return f, labels, w


def batch_loss(features, labels, prototypes, cfg: LossConfig):
    """Mean loss over a batch plus averaged gradients.

    Returns (loss, grad_features (B, d), grad_prototypes (N, d)); gradients
    are for the raw inputs, with the cosine normalization differentiated.
    """
    f, labels, w = _validate_batch(features, labels, prototypes)
    b = f.shape[0]
    rows = np.arange(b)
    fh, fn = normalize_rows(f)
    wh, wn = normalize_rows(w)
    sims = np.clip(fh @ wh.T, -1.0, 1.0)
    s_pos = sims[rows, labels]
    adjusted, dadj = adjust_positive(s_pos, cfg)
    deltas = cfg.gamma * (sims - adjusted[:, None])
    deltas[rows, labels] = -np.inf
    losses = _stable_loss_rows(deltas)
    p = _softmax_terms(deltas)
    coeff = cfg.gamma * p
    coeff[rows, labels] = -cfg.gamma * dadj * p.sum(axis=1)
    grad_f = _grad_features_from_coeff(coeff, sims, fh, fn, wh) / b
    grad_w = _grad_prototypes_from_coeff(coeff, sims, fh, wh, wn) / b
    return float(losses.mean()), grad_f, grad_w


def prototype_loss(x, label: int, prototypes, cfg: LossConfig) -> LossOutput:
    """Single-sample loss; equals batch_loss on a batch of one."""
    x = as_f64(x)
    if x.ndim != 1:
        raise InvalidShapeError(f"expected a feature vector, got {x.shape}")
    loss, grad_f, grad_w = batch_loss(x[None, :], [label], prototypes, cfg)
    return LossOutput(loss, grad_f[0], grad_w)


def prototype_grad_closed_form(x, label: int, prototypes, cfg: LossConfig):
    """Per-row dL/dW at the logit level, for pre-normalized x and rows.

    With p = softmax over the margin-adjusted logits, the labeled row gets
    (p_pos - 1) * dadj * gamma * x and every other row p_j * gamma * x.
    The labeled coefficient is evaluated as the negated sum of the others,
    which equals (p_pos - 1) exactly in reals but keeps full relative
    precision when p_pos saturates toward 1.
    Inputs are taken as given; no normalization is applied or differentiated.
    """
    x = as_f64(x)
    f, labels, w = _validate_batch(x[None, :], [label], prototypes)
    sims = w @ x
    adjusted, dadj = adjust_positive(sims[label], cfg)
    deltas = cfg.gamma * (sims - float(adjusted))
    deltas[label] = -np.inf
    p = _softmax_terms(deltas[None, :])[0]
    coeff = cfg.gamma * p
    coeff[label] = -cfg.gamma * float(dadj) * p.sum()
    return coeff[:, None] * x[None, :]
