"""Finite-difference verification of every analytic gradient path.

Central differences with h = 1e-6 against the analytic gradients, reported
as max-norm relative error. Instances are drawn from seeded streams;
draws whose encoder pre-activations sit within 1e-4 of a rectifier kink
are rejected and redrawn, so no checked coordinate straddles a kink.
Combined-loss draws are additionally rejected while the gradient carried
by the learned-prototype sum is too small for finite differences to
resolve against the loss value's own rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import BankConfig, init_bank
from .encoder import backward, forward, init_encoder
from .epl_loss import (
    EplConfig,
    batch_epl_loss,
    combined_loss_from_similarities,
    epr_loss,
)
from .linalg import make_rng, random_unit_rows
from .losses import (
    LossConfig,
    LossOutput,
    prototype_grad_closed_form,
    prototype_loss,
)

FD_STEP = 1e-6
KINK_MARGIN = 1e-4

ENCODER_DIMS = (8, 16, 8)
NUM_CLASSES = 4


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""
    metric: str = "worst rel err"

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}  {self.name}: {self.metric} {self.worst:.3e} "
                f"(tol {self.tolerance:.1e}) {self.detail}".rstrip())


def central_difference(f, x, h: float = FD_STEP) -> np.ndarray:
    """Elementwise central differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat = out.ravel()
    base = x.copy()
    bflat = base.ravel()
    for i in range(bflat.size):
        orig = bflat[i]
        bflat[i] = orig + h
        hi = f(base)
        bflat[i] = orig - h
        lo = f(base)
        bflat[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return out


def rel_error(a, b) -> float:
    """Max-norm relative disagreement with an absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-10)
    return float(np.max(np.abs(a - b)) / denom)


def _draw_instance(seed: int, idx: int, salt: int = 0):
    """Encoder, input, prototypes, bank rows, label; kink-free by redraw."""
    for attempt in range(64):
        rng = make_rng(seed, 100, idx, salt * 64 + attempt)
        enc = init_encoder(ENCODER_DIMS, rng)
        x_in = rng.standard_normal((1, ENCODER_DIMS[0]))
        _, cache = forward(enc, x_in)
        gap = min(np.min(np.abs(z)) for z in cache.pre_activations[:-1])
        if gap < KINK_MARGIN:
            continue
        w = random_unit_rows(NUM_CLASSES, ENCODER_DIMS[-1], rng) \
            * rng.uniform(0.5, 2.0, (NUM_CLASSES, 1))
        bank_rows = random_unit_rows(NUM_CLASSES, ENCODER_DIMS[-1], rng)
        label = int(rng.integers(NUM_CLASSES))
        return enc, x_in, w, bank_rows, label
    raise RuntimeError("could not draw a kink-free instance")


def _loss_fn(kind: str):
    """(value_fn, grads_fn) pairs over (x, w, bank_rows, label)."""
    if kind == "proto_none":
        cfg = LossConfig(gamma=64.0, margin=0.0, margin_mode="none")
        return (lambda x, w, e, i: prototype_loss(x, i, w, cfg).loss,
                lambda x, w, e, i: prototype_loss(x, i, w, cfg))
    if kind == "proto_cosine":
        cfg = LossConfig(gamma=64.0, margin=0.4, margin_mode="cosine")
        return (lambda x, w, e, i: prototype_loss(x, i, w, cfg).loss,
                lambda x, w, e, i: prototype_loss(x, i, w, cfg))
    if kind == "proto_angular":
        cfg = LossConfig(gamma=64.0, margin=0.4, margin_mode="angular")
        return (lambda x, w, e, i: prototype_loss(x, i, w, cfg).loss,
                lambda x, w, e, i: prototype_loss(x, i, w, cfg))
    if kind == "epr":
        return (lambda x, w, e, i: epr_loss(x, i, e).loss,
                lambda x, w, e, i: epr_loss(x, i, e))
    if kind == "epl":
        cfg = EplConfig()
        return (lambda x, w, e, i: _epl_value(x, i, w, e, cfg),
                lambda x, w, e, i: _epl_output(x, i, w, e, cfg))
    raise ValueError(kind)


def _epl_value(x, label, w, bank_rows, cfg):
    loss, _, _ = batch_epl_loss(x[None, :], [label], w, bank_rows, cfg)
    return loss


def _epl_output(x, label, w, bank_rows, cfg):
    loss, gf, gw = batch_epl_loss(x[None, :], [label], w, bank_rows, cfg)
    return LossOutput(loss, gf[0], gw)


def _epl_frozen_fns(x0, bank_rows0, label0):
    """Value/grad functions with m_x pinned to the base-point similarity."""
    cfg = EplConfig()
    x_hat = x0 / np.linalg.norm(x0)
    row = bank_rows0[label0]
    t_pos = float(np.clip(x_hat @ (row / np.linalg.norm(row)), -1.0, 1.0))
    frozen = np.asarray([cfg.beta * (1.0 / cfg.tau) * t_pos])

    def value_fn(x, w, e, i):
        loss, _, _ = batch_epl_loss(x[None, :], [i], w, e, cfg, ep_margin=frozen)
        return loss

    def grads_fn(x, w, e, i):
        loss, gf, gw = batch_epl_loss(x[None, :], [i], w, e, cfg)
        return LossOutput(loss, gf[0], gw)

    return value_fn, grads_fn


LOSS_KINDS = ("proto_none", "proto_cosine", "proto_angular", "epr", "epl")


def check_loss_gradients(kind: str, instances: int = 100, seed: int = 0,
                         tolerance: float = 1e-5) -> CheckResult:
    """FD vs analytic gradients w.r.t. features, encoder params, and W.

    For the combined loss the finite differences are taken with the
    detached margin frozen at its base-point value; the analytic gradient
    is defined for exactly that function. Combined-loss instances are
    also redrawn while the learned-prototype sum is so dominated by the
    empirical sum that its gradient falls below 0.05 in max norm: central
    differences of a loss of size O(100) carry roundoff near 1e-7, so
    smaller entries are not resolvable at h = 1e-6.
    """
    value_fn, grads_fn = _loss_fn(kind)
    worst = 0.0
    for idx in range(instances):
        for salt in range(64):
            enc, x_in, w, bank_rows, label = _draw_instance(seed, idx, salt)
            feats, cache = forward(enc, x_in)
            x = feats[0]
            if kind == "epl":
                value_fn, grads_fn = _epl_frozen_fns(x, bank_rows, label)
            out = grads_fn(x, w, bank_rows, label)
            if kind != "epl" or np.max(np.abs(out.grad_prototypes)) >= 0.05:
                break
        else:
            raise RuntimeError("could not draw a resolvable instance")

        fd_x = central_difference(lambda v: value_fn(v, w, bank_rows, label), x)
        worst = max(worst, rel_error(fd_x, out.grad_feature))

        if kind != "epr":
            fd_w = central_difference(lambda v: value_fn(x, v, bank_rows, label), w)
            worst = max(worst, rel_error(fd_w, out.grad_prototypes))

        # Encoder parameters through the full chain.
        param_grads, _ = backward(enc, cache, out.grad_feature[None, :])
        for k in range(len(enc.weights)):
            def f_w(wmat, k=k):
                saved = enc.weights[k]
                enc.weights[k] = wmat
                v = value_fn(forward(enc, x_in)[0][0], w, bank_rows, label)
                enc.weights[k] = saved
                return v
            fd = central_difference(f_w, enc.weights[k])
            worst = max(worst, rel_error(fd, param_grads[k][0]))
            def f_b(bvec, k=k):
                saved = enc.biases[k]
                enc.biases[k] = bvec
                v = value_fn(forward(enc, x_in)[0][0], w, bank_rows, label)
                enc.biases[k] = saved
                return v
            fd = central_difference(f_b, enc.biases[k])
            worst = max(worst, rel_error(fd, param_grads[k][1]))
    return CheckResult(f"grad/{kind}", worst <= tolerance, worst, tolerance,
                       f"({instances} instances)")


def check_closed_form(instances: int = 100, seed: int = 0,
                      fd_tolerance: float = 1e-6,
                      backprop_tolerance: float = 1e-8) -> CheckResult:
    """Closed-form rows vs generic logit-level backprop and FD."""
    cfg = LossConfig(gamma=64.0, margin=0.4, margin_mode="cosine")
    worst_bp = 0.0
    worst_fd = 0.0
    for idx in range(instances):
        rng = make_rng(seed, 200, idx)
        x = random_unit_rows(1, 8, rng)[0]
        w = random_unit_rows(NUM_CLASSES, 8, rng)
        label = int(rng.integers(NUM_CLASSES))
        closed = prototype_grad_closed_form(x, label, w, cfg)

        # Generic backprop: dL/dz = p - onehot over margin-adjusted logits,
        # then dz_j/dW_j = gamma * x for every row. The label component is
        # taken as -(sum of the other p's), equal to p_label - 1 in reals
        # but free of cancellation when p_label saturates toward 1.
        s = w @ x
        z = cfg.gamma * s
        z[label] = cfg.gamma * (s[label] - cfg.margin)
        e = np.exp(z - z.max())
        p = e / e.sum()
        dz = p.copy()
        dz[label] = -float(np.delete(p, label).sum())
        generic = (cfg.gamma * dz)[:, None] * x[None, :]
        worst_bp = max(worst_bp, rel_error(closed, generic))

        def restricted(wmat):
            # log1p form so saturated instances stay FD-resolvable.
            sims = wmat @ x
            zz = cfg.gamma * sims
            zz[label] = cfg.gamma * (sims[label] - cfg.margin)
            deltas = np.delete(zz - zz[label], label)
            mm = max(float(deltas.max()), 0.0)
            if mm == 0.0:
                return float(np.log1p(np.exp(deltas).sum()))
            return float(mm + np.log(np.exp(-mm) + np.exp(deltas - mm).sum()))
        worst_fd = max(worst_fd, rel_error(closed, central_difference(restricted, w)))
    passed = worst_bp <= backprop_tolerance and worst_fd <= fd_tolerance
    return CheckResult("grad/closed_form", passed, worst_fd, fd_tolerance,
                       f"(backprop rel err {worst_bp:.3e} vs tol "
                       f"{backprop_tolerance:.1e}, {instances} instances)")


def check_positive_row_monotonicity() -> CheckResult:
    """|coefficient on the labeled row| grows strictly as s_pos drops.

    The coefficient is gamma * (1 - p_pos); near saturation 1 - p_pos is
    not representable, so strictness is asserted on p_pos itself, which is
    computed to full relative precision.
    """
    cfg = LossConfig(gamma=64.0, margin=0.4, margin_mode="cosine")
    rng = make_rng(7, 300)
    d = 8
    x = random_unit_rows(1, d, rng)[0]
    u = random_unit_rows(1, d, rng)[0]
    u = u - (u @ x) * x
    u = u / np.linalg.norm(u)
    negatives = random_unit_rows(NUM_CLASSES - 1, d, rng)
    mags, p_values = [], []
    for t in (0.9, 0.7, 0.5, 0.3, 0.1):
        w_pos = t * x + np.sqrt(1.0 - t * t) * u
        w = np.vstack([w_pos, negatives])
        grad = prototype_grad_closed_form(x, 0, w, cfg)
        mags.append(float(np.linalg.norm(grad[0])))
        z = cfg.gamma * (w @ x)
        z[0] = cfg.gamma * (t - cfg.margin)
        e = np.exp(z - z.max())
        p_values.append(float(e[0] / e.sum()))
    strict = all(b < a for a, b in zip(p_values, p_values[1:]))
    return CheckResult("grad/positive_row_monotonicity", strict,
                       mags[-1] - mags[0], 0.0,
                       f"(coefficient norms {[f'{m:.4g}' for m in mags]})",
                       metric="magnitude spread")


def check_detach(seed: int = 0, tolerance: float = 1e-6,
                 ratio_tolerance: float = 0.01) -> CheckResult:
    """Detached-margin gradient semantics of the combined loss.

    The analytic d(loss)/d(s_pos_e) must match FD with the margin frozen,
    and differ from FD with the margin substituted by the factor
    1 / (1 - beta).
    """
    cfg = EplConfig()  # beta = 0.7
    rng = make_rng(seed, 400)
    n = 6
    worst = 0.0
    worst_ratio = 0.0
    for _ in range(20):
        # Keep the learned-prototype term quiet and the empirical term
        # alive so the slopes are resolvable by finite differences.
        label = int(rng.integers(n))
        s_w = rng.uniform(-0.9, -0.5, n)
        s_w[label] = 0.9
        s_e = rng.uniform(-0.4, 0.4, n)
        s_e[label] = rng.uniform(0.3, 0.7)
        _, _, ge = combined_loss_from_similarities(s_w, s_e, label, cfg)
        frozen_margin = cfg.beta * (1.0 / cfg.tau) * s_e[label]

        def frozen(t):
            se = s_e.copy()
            se[label] = t
            loss, _, _ = combined_loss_from_similarities(
                s_w, se, label, cfg, ep_margin=frozen_margin)
            return loss

        def substituted(t):
            se = s_e.copy()
            se[label] = t
            loss, _, _ = combined_loss_from_similarities(
                s_w, se, label, cfg,
                ep_margin=cfg.beta * (1.0 / cfg.tau) * t)
            return loss

        t0 = s_e[label]
        fd_frozen = (frozen(t0 + FD_STEP) - frozen(t0 - FD_STEP)) / (2 * FD_STEP)
        fd_sub = (substituted(t0 + FD_STEP) - substituted(t0 - FD_STEP)) / (2 * FD_STEP)
        worst = max(worst, rel_error(np.asarray(fd_frozen),
                                     np.asarray(ge[label])))
        ratio = fd_frozen / fd_sub
        worst_ratio = max(worst_ratio,
                          abs(ratio - 1.0 / (1.0 - cfg.beta)) * (1.0 - cfg.beta))
    passed = worst <= tolerance and worst_ratio <= ratio_tolerance
    return CheckResult("grad/detached_margin", passed, worst, tolerance,
                       f"(ratio off by {worst_ratio:.2%} of 1/(1-beta))")


def check_encoder_backward(instances: int = 20, seed: int = 0,
                           tolerance: float = 1e-6) -> CheckResult:
    """backward() vs FD under a fixed random linear readout."""
    worst = 0.0
    for idx in range(instances):
        enc, x_in, _, _, _ = _draw_instance(seed + 1, idx)
        rng = make_rng(seed, 500, idx)
        readout = rng.standard_normal((1, ENCODER_DIMS[-1]))
        feats, cache = forward(enc, x_in)
        param_grads, grad_in = backward(enc, cache, readout)
        def value():
            return float((forward(enc, x_in)[0] * readout).sum())
        for k in range(len(enc.weights)):
            def f_w(wmat, k=k):
                saved = enc.weights[k]
                enc.weights[k] = wmat
                v = value()
                enc.weights[k] = saved
                return v
            worst = max(worst, rel_error(central_difference(f_w, enc.weights[k]),
                                         param_grads[k][0]))
        def f_x(xmat):
            return float((forward(enc, xmat)[0] * readout).sum())
        worst = max(worst, rel_error(central_difference(f_x, x_in), grad_in))
    return CheckResult("grad/encoder_backward", worst <= tolerance, worst,
                       tolerance, f"({instances} instances)")


def run_all(instances: int = 100, seed: int = 0) -> list:
    """Every check, acceptance-grade instance counts by default."""
    results = [
        check_loss_gradients(kind, instances=instances, seed=seed)
        for kind in LOSS_KINDS
    ]
    results.append(check_closed_form(instances=instances, seed=seed))
    results.append(check_positive_row_monotonicity())
    results.append(check_detach(seed=seed))
    results.append(check_encoder_backward(instances=max(5, instances // 5),
                                          seed=seed))
    return results
