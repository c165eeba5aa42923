"""Training loop, learning-rate schedules, SGD, and checkpointing.

Step order inside an epoch is fixed: seeded shuffle, then per batch
forward -> bank update (only once the combined loss is active) -> loss ->
backward -> SGD on the encoder parameters and the learned prototype rows.
Before epl_start_epoch the loop trains on the pure learned-prototype term
and leaves the bank untouched.

Randomness is split into named PCG64 streams derived from the config seed
(see make_rng): 0 encoder init, 1 prototype init, 2 bank init, (4, epoch)
the per-epoch shuffle, 5 verification pairs. Resuming from a checkpoint
replays the identical streams, so an interrupted run is bit-exact.

A checkpoint is a directory: manifest.json describes shapes, the config
digest and the rng position; each array lives in a sibling .f64 file of
raw little-endian float64 values in C order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bank import BankConfig, EmpiricalPrototypeBank, init_bank
from .data import Dataset, make_verification_pairs
from .encoder import MlpEncoder, backward, forward, init_encoder
from .epl_loss import EplConfig, batch_epl_loss
from .errors import (
    ConfigError,
    DigestMismatchError,
    FormatError,
    InvalidShapeError,
    VersionMismatchError,
)
from .evaluate import embed, pair_scores, rank1_identification, tar_at_far
from .linalg import make_rng, normalize_rows, random_unit_rows
from .losses import LossConfig, batch_loss

CHECKPOINT_FORMAT = "epl-checkpoint"
CHECKPOINT_VERSION = 1

METRIC_COLUMNS = ("epoch", "loss", "lr", "tar_far2", "tar_far3", "rank1")

STREAM_ENCODER = 0
STREAM_PROTOTYPES = 1
STREAM_BANK = 2
STREAM_SPLIT = 3
STREAM_SHUFFLE = 4
STREAM_PAIRS = 5


@dataclass(frozen=True)
class Schedule:
    kind: str = "step"  # "step" or "polynomial"
    milestones: tuple = (16, 24)
    factor: float = 0.1
    power: float = 2.0

    def __post_init__(self):
        if self.kind not in ("step", "polynomial"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "step":
            ms = tuple(int(m) for m in self.milestones)
            if list(ms) != sorted(ms):
                raise ConfigError("milestones must be ascending")
            object.__setattr__(self, "milestones", ms)
            if not self.factor > 0.0:
                raise ConfigError("factor must be > 0")
        else:
            if not self.power > 0.0:
                raise ConfigError("power must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Schedule = field(default_factory=Schedule)
    epl_start_epoch: int = 4
    seed: int = 0
    use_epl: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    epl: EplConfig = field(default_factory=EplConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    encoder_hidden: tuple = (64,)
    embed_dim: int = 32

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr0 > 0.0:
            raise ConfigError("lr0 must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epl_start_epoch < 0:
            raise ConfigError("epl_start_epoch must be >= 0")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")
        object.__setattr__(self, "encoder_hidden",
                           tuple(int(h) for h in self.encoder_hidden))


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for an epoch index, 0 <= epoch <= epochs.

    step: lr0 * factor ** (number of milestones <= epoch).
    polynomial: lr0 * (1 - epoch/epochs) ** power.
    """
    if not 0 <= epoch <= cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    s = cfg.schedule
    if s.kind == "step":
        hits = sum(1 for m in s.milestones if m <= epoch)
        return cfg.lr0 * s.factor ** hits
    if cfg.epochs == 0:
        return cfg.lr0
    return cfg.lr0 * (1.0 - epoch / cfg.epochs) ** s.power


def sgd_step(param, grad, buf, lr: float, momentum: float, weight_decay: float):
    """One momentum-SGD update; returns (new_param, new_buf).

    buf <- momentum * buf + grad + weight_decay * param
    param <- param - lr * buf
    """
    buf = momentum * buf + grad + weight_decay * param
    return param - lr * buf, buf


@dataclass
class Checkpoint:
    encoder: MlpEncoder
    prototypes: np.ndarray
    bank: EmpiricalPrototypeBank
    momentum_buffers: dict
    epoch: int  # next epoch to run
    config_digest: str
    seed: int


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list  # one dict per epoch, METRIC_COLUMNS keys


def config_digest(cfg: TrainConfig) -> str:
    """Stable sha256 over the training-relevant configuration."""
    payload = {
        "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr0": cfg.lr0,
        "momentum": cfg.momentum, "weight_decay": cfg.weight_decay,
        "schedule": [cfg.schedule.kind, list(cfg.schedule.milestones),
                     cfg.schedule.factor, cfg.schedule.power],
        "epl_start_epoch": cfg.epl_start_epoch, "seed": cfg.seed,
        "use_epl": cfg.use_epl,
        "loss": [cfg.loss.gamma, cfg.loss.margin, cfg.loss.margin_mode],
        "epl": [cfg.epl.tau, cfg.epl.beta, cfg.epl.ep_enabled,
                cfg.epl.adaptive_margin, cfg.epl.base.gamma,
                cfg.epl.base.margin, cfg.epl.base.margin_mode],
        "bank": [cfg.bank.activation, cfg.bank.renormalize,
                 cfg.bank.update_enabled],
        "encoder_hidden": list(cfg.encoder_hidden), "embed_dim": cfg.embed_dim,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _init_state(ds: Dataset, cfg: TrainConfig) -> Checkpoint:
    dims = [ds.inputs.shape[1], *cfg.encoder_hidden, cfg.embed_dim]
    encoder = init_encoder(dims, make_rng(cfg.seed, STREAM_ENCODER))
    prototypes = random_unit_rows(ds.num_classes, cfg.embed_dim,
                                  make_rng(cfg.seed, STREAM_PROTOTYPES))
    bank = init_bank(ds.num_classes, cfg.embed_dim, cfg.bank,
                     make_rng(cfg.seed, STREAM_BANK))
    bufs = {"prototypes": np.zeros_like(prototypes)}
    for k, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        bufs[f"w{k}"] = np.zeros_like(w)
        bufs[f"b{k}"] = np.zeros_like(b)
    return Checkpoint(encoder, prototypes, bank, bufs, 0,
                      config_digest(cfg), cfg.seed)


def _epoch_metrics(state: Checkpoint, train_ds, eval_ds, pairs, epoch,
                   mean_loss, lr):
    row = {"epoch": epoch, "loss": mean_loss, "lr": lr,
           "tar_far2": float("nan"), "tar_far3": float("nan"),
           "rank1": float("nan")}
    if eval_ds is None:
        return row
    probe = embed(state.encoder, eval_ds)
    genuine, impostor = pairs
    g = pair_scores(probe, genuine)
    s = pair_scores(probe, impostor)
    row["tar_far2"], _ = tar_at_far(g, s, 1e-2)
    row["tar_far3"], _ = tar_at_far(g, s, 1e-3)
    gallery_emb = embed(state.encoder, train_ds)
    cents = np.stack([
        gallery_emb.features[gallery_emb.labels == c].mean(axis=0)
        for c in range(train_ds.num_classes)
    ])
    cents, _ = normalize_rows(cents)
    row["rank1"] = rank1_identification(probe, cents,
                                        np.arange(train_ds.num_classes))
    return row


def train(ds: Dataset, cfg: TrainConfig, eval_ds: Dataset | None = None,
          pairs_per_kind: int = 2000, resume: Checkpoint | None = None,
          stop_epoch: int | None = None) -> TrainResult:
    """Run (or continue) training; returns the checkpoint and metrics rows.

    eval_ds adds per-epoch verification/identification columns computed on
    a fixed seeded pair set. stop_epoch truncates the run after that many
    epochs so the returned checkpoint can be resumed later; resume picks up
    from a checkpoint produced under the same config digest.
    """
    digest = config_digest(cfg)
    if resume is not None:
        if resume.config_digest != digest:
            raise DigestMismatchError(
                f"checkpoint digest {resume.config_digest[:12]} != config {digest[:12]}"
            )
        state = resume
    else:
        state = _init_state(ds, cfg)
    if len(ds) == 0:
        raise InvalidShapeError("cannot train on an empty dataset")

    pairs = None
    if eval_ds is not None:
        pairs = make_verification_pairs(eval_ds, pairs_per_kind,
                                        make_rng(cfg.seed, STREAM_PAIRS))
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    metrics = []
    m = len(ds)
    for epoch in range(state.epoch, end):
        lr = lr_at(cfg, epoch)
        order = make_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(m)
        loss_sum = 0.0
        epl_active = cfg.use_epl and epoch >= cfg.epl_start_epoch
        for lo in range(0, m, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x = ds.inputs[idx]
            y = ds.labels[idx]
            feats, cache = forward(state.encoder, x)
            if epl_active:
                state.bank.batch_update(feats, y)
                loss, gfeat, gproto = batch_epl_loss(feats, y, state.prototypes,
                                                     state.bank, cfg.epl)
            else:
                loss, gfeat, gproto = batch_loss(feats, y, state.prototypes,
                                                 cfg.loss)
            param_grads, _ = backward(state.encoder, cache, gfeat)
            for k, (dw, db) in enumerate(param_grads):
                state.encoder.weights[k], state.momentum_buffers[f"w{k}"] = sgd_step(
                    state.encoder.weights[k], dw, state.momentum_buffers[f"w{k}"],
                    lr, cfg.momentum, cfg.weight_decay)
                state.encoder.biases[k], state.momentum_buffers[f"b{k}"] = sgd_step(
                    state.encoder.biases[k], db, state.momentum_buffers[f"b{k}"],
                    lr, cfg.momentum, 0.0)
            state.prototypes, state.momentum_buffers["prototypes"] = sgd_step(
                state.prototypes, gproto, state.momentum_buffers["prototypes"],
                lr, cfg.momentum, cfg.weight_decay)
            loss_sum += loss * idx.size
        state.epoch = epoch + 1
        metrics.append(_epoch_metrics(state, ds, eval_ds, pairs, epoch,
                                      loss_sum / m, lr))
    return TrainResult(state, metrics)


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write manifest.json plus one raw little-endian .f64 file per array."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    arrays = {"prototypes": ck.prototypes, "bank": ck.bank.prototypes}
    for k, (w, b) in enumerate(zip(ck.encoder.weights, ck.encoder.biases)):
        arrays[f"encoder_w{k}"] = w
        arrays[f"encoder_b{k}"] = b
    for name, buf in ck.momentum_buffers.items():
        arrays[f"momentum_{name}"] = buf
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": ck.epoch,
        "config_digest": ck.config_digest,
        "rng": {"seed": ck.seed, "next_epoch": ck.epoch,
                "generator": "PCG64", "streams": "derived via SeedSequence"},
        "encoder_layers": len(ck.encoder.weights),
        "bank_config": {
            "activation": ck.bank.config.activation,
            "renormalize": ck.bank.config.renormalize,
            "update_enabled": ck.bank.config.update_enabled,
        },
        "bank_update_count": [int(c) for c in ck.bank.update_count],
        "arrays": {},
    }
    for name, arr in arrays.items():
        fname = f"{name}.f64"
        manifest["arrays"][name] = {"file": fname, "shape": list(arr.shape)}
        (root / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint directory; verifies format, version, file sizes."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FormatError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise VersionMismatchError(f"format {manifest.get('format')!r} unsupported")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"version {manifest.get('version')!r} unsupported")
    arrays = {}
    for name, meta in manifest["arrays"].items():
        shape = tuple(int(v) for v in meta["shape"])
        blob = (root / meta["file"]).read_bytes()
        expect = int(np.prod(shape)) * 8
        if len(blob) != expect:
            raise FormatError(
                f"{meta['file']}: {len(blob)} bytes, expected {expect}"
            )
        arrays[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
    layers = int(manifest["encoder_layers"])
    try:
        encoder = MlpEncoder(
            [arrays[f"encoder_w{k}"] for k in range(layers)],
            [arrays[f"encoder_b{k}"] for k in range(layers)],
        )
        prototypes = arrays["prototypes"]
        bc = manifest["bank_config"]
        bank = EmpiricalPrototypeBank(
            arrays["bank"],
            BankConfig(bc["activation"], bc["renormalize"], bc["update_enabled"]),
            manifest["bank_update_count"],
        )
    except KeyError as exc:
        raise FormatError(f"manifest missing array {exc}") from exc
    bufs = {name[len("momentum_"):]: arr for name, arr in arrays.items()
            if name.startswith("momentum_")}
    return Checkpoint(encoder, prototypes, bank, bufs,
                      int(manifest["epoch"]), manifest["config_digest"],
                      int(manifest["rng"]["seed"]))


def metrics_to_csv(rows) -> str:
    """Render metric rows with deterministic repr-precision formatting."""
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        cells = []
        for col in METRIC_COLUMNS:
            v = row[col]
            cells.append(str(int(v)) if col == "epoch" else f"{float(v):.17g}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_metrics_csv(rows, path) -> None:
    Path(path).write_text(metrics_to_csv(rows))
