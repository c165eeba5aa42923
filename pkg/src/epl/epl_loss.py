"""Combined loss over learned and empirical prototypes.

For a sample of class i with cosine similarities s to the learned rows W
and t to the empirical bank rows, the combined loss is one log over
2(N-1) + 1 terms:

    L = log(1 + sum_{j != i} exp(r*t_j - a)
              + sum_{j != i} exp(g*s_j - g*adj(s_i)))

with r = 1/tau, a = r*t_i - beta*m_x the empirical positive logit, and
m_x = r*t_i evaluated once per sample and then treated as a constant. The
forward value of a is therefore (1 - beta)*r*t_i, while its derivative in
t_i stays r: the margin shrinks the logit without shrinking the pull. The
bank never receives gradients; the feature receives them through both
similarity sets, the learned rows only through theirs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bank import EmpiricalPrototypeBank
from .errors import ConfigError, DimensionMismatchError, InvalidShapeError
from .linalg import as_f64, normalize_rows
from .losses import (
    LossConfig,
    LossOutput,
    _grad_features_from_coeff,
    _grad_prototypes_from_coeff,
    _softmax_terms,
    _stable_loss_rows,
    _validate_batch,
    adjust_positive,
    batch_loss,
)


@dataclass(frozen=True)
class EplConfig:
    """Scales and switches for the combined loss.

    tau: temperature of the empirical term; logits are scaled by 1/tau.
    beta: fraction of the adaptive margin subtracted from the empirical
        positive logit, in [0, 1].
    base: LossConfig for the learned-prototype term.
    ep_enabled: include the empirical similarity sum at all.
    adaptive_margin: subtract beta*m_x from the empirical positive logit;
        when off the margin is 0.
    """

    tau: float = 1.0 / 64.0
    beta: float = 0.7
    base: LossConfig = field(default_factory=LossConfig)
    ep_enabled: bool = True
    adaptive_margin: bool = True

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ConfigError(f"tau must be > 0, got {self.tau!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta!r}")


def adaptive_margin(s_pos_e: float, tau: float) -> float:
    """m_x = s_pos_e / tau; callers treat the value as gradient-inert."""
    if not tau > 0.0:
        raise ConfigError(f"tau must be > 0, got {tau!r}")
    return float(s_pos_e) / tau


def combined_loss_from_similarities(s_w, s_e, label: int, cfg: EplConfig,
                                    ep_margin: float | None = None):
    """Loss and gradients with both similarity vectors as free variables.

    Returns (loss, dL/ds_w, dL/ds_e). ep_margin overrides the quantity
    subtracted from the empirical positive logit; None computes
    beta * adaptive_margin(s_e[label]) per the config switches. Either way
    the margin contributes no gradient terms, which is the whole point.
    """
    s_w = as_f64(s_w)
    s_e = as_f64(s_e)
    if s_w.shape != s_e.shape or s_w.ndim != 1:
        raise DimensionMismatchError(
            f"similarity shapes {s_w.shape} and {s_e.shape} must match, 1-d"
        )
    loss, gw, ge = _combined_core(
        s_w[None, :], s_e[None, :], np.asarray([label], dtype=np.int64), cfg,
        ep_margin=None if ep_margin is None else np.asarray([ep_margin]),
    )
    return float(loss[0]), gw[0], ge[0]


def _combined_core(sims_w, sims_e, labels, cfg: EplConfig, ep_margin=None):
    """Batched loss over similarity matrices; returns per-sample rows.

    sims_w, sims_e: (B, N); labels: (B,). Returns (losses (B,),
    dL/dsims_w (B, N), dL/dsims_e (B, N)).
    """
    b, n = sims_w.shape
    rows = np.arange(b)
    gamma = cfg.base.gamma
    inv_tau = 1.0 / cfg.tau

    s_pos = sims_w[rows, labels]
    adjusted, dadj = adjust_positive(s_pos, cfg.base)
    dw = gamma * (sims_w - adjusted[:, None])
    dw[rows, labels] = -np.inf

    if cfg.ep_enabled:
        t_pos = sims_e[rows, labels]
        if ep_margin is None:
            margin = cfg.beta * inv_tau * t_pos if cfg.adaptive_margin else 0.0
        else:
            margin = np.asarray(ep_margin, dtype=np.float64)
        anchor = inv_tau * t_pos - margin
        de = inv_tau * sims_e - np.asarray(anchor).reshape(b, 1)
        de[rows, labels] = -np.inf
    else:
        de = np.full((b, n), -np.inf)

    deltas = np.hstack([de, dw])
    losses = _stable_loss_rows(deltas)
    terms = _softmax_terms(deltas)
    q = terms[:, :n]
    r = terms[:, n:]

    coeff_e = inv_tau * q
    coeff_e[rows, labels] = -inv_tau * q.sum(axis=1)
    coeff_w = gamma * r
    coeff_w[rows, labels] = -gamma * dadj * r.sum(axis=1)
    return losses, coeff_w, coeff_e


def _validate_bank(bank, dim: int):
    proto = bank.prototypes if isinstance(bank, EmpiricalPrototypeBank) else as_f64(bank)
    if proto.ndim != 2:
        raise InvalidShapeError(f"bank rows must be 2-d, got {proto.shape}")
    if proto.shape[1] != dim:
        raise DimensionMismatchError(f"bank dim {proto.shape[1]} != {dim}")
    return proto


def batch_epl_loss(features, labels, prototypes, bank, cfg: EplConfig,
                   ep_margin=None):
    """Mean combined loss over a batch plus averaged gradients.

    Accepts the bank object or its row matrix; rows are read, never
    written. Returns (loss, grad_features (B, d), grad_prototypes (N, d))
    where grad_prototypes covers the learned rows only. ep_margin is a
    per-sample override of the detached margin, used by finite-difference
    checks to hold m_x at its base-point value.
    """
    f, labels, w = _validate_batch(features, labels, prototypes)
    e = _validate_bank(bank, f.shape[1])
    if e.shape[0] != w.shape[0]:
        raise DimensionMismatchError(
            f"bank classes {e.shape[0]} != prototype classes {w.shape[0]}"
        )
    bsz = f.shape[0]
    fh, fn = normalize_rows(f)
    wh, wn = normalize_rows(w)
    eh, _ = normalize_rows(e)
    sims_w = np.clip(fh @ wh.T, -1.0, 1.0)
    sims_e = np.clip(fh @ eh.T, -1.0, 1.0)
    losses, coeff_w, coeff_e = _combined_core(sims_w, sims_e, labels, cfg,
                                              ep_margin=ep_margin)
    grad_f = (
        _grad_features_from_coeff(coeff_w, sims_w, fh, fn, wh)
        + _grad_features_from_coeff(coeff_e, sims_e, fh, fn, eh)
    ) / bsz
    grad_w = _grad_prototypes_from_coeff(coeff_w, sims_w, fh, wh, wn) / bsz
    return float(losses.mean()), grad_f, grad_w


def epl_loss(x, label: int, prototypes, bank, cfg: EplConfig) -> LossOutput:
    """Single-sample combined loss; equals batch_epl_loss on a batch of one."""
    x = as_f64(x)
    if x.ndim != 1:
        raise InvalidShapeError(f"expected a feature vector, got {x.shape}")
    loss, grad_f, grad_w = batch_epl_loss(x[None, :], [label], prototypes, bank, cfg)
    return LossOutput(loss, grad_f[0], grad_w)


def epr_loss(x, label: int, bank, tau: float = 1.0 / 64.0) -> LossOutput:
    """Empirical-term-only loss: bank rows as prototypes at scale 1/tau.

    Structurally the margin-free prototype loss; grad_prototypes is
    identically zero because the bank takes no gradient.
    """
    if not tau > 0.0:
        raise ConfigError(f"tau must be > 0, got {tau!r}")
    proto = bank.prototypes if isinstance(bank, EmpiricalPrototypeBank) else as_f64(bank)
    x = as_f64(x)
    if x.ndim != 1:
        raise InvalidShapeError(f"expected a feature vector, got {x.shape}")
    cfg = LossConfig(gamma=1.0 / tau, margin=0.0, margin_mode="none")
    loss, grad_f, _ = batch_loss(x[None, :], [label], proto, cfg)
    return LossOutput(loss, grad_f[0], np.zeros(np.asarray(proto).shape))
