"""Run configuration: strict JSON in, fully defaulted dataclasses out.

Unknown keys are rejected by name so typos fail loudly instead of being
ignored. Every default is documented in the README table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .bank import BankConfig
from .data import SyntheticSpec
from .epl_loss import EplConfig
from .errors import ConfigError, InvalidSpecError
from .losses import LossConfig
from .train import Schedule, TrainConfig


@dataclass(frozen=True)
class EvalOptions:
    test_fraction: float = 0.3
    pairs_per_kind: int = 2000
    far_values: tuple = (1e-2, 1e-3)
    top_k: int = 3

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.pairs_per_kind < 1:
            raise ConfigError("pairs_per_kind must be >= 1")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        object.__setattr__(self, "far_values",
                           tuple(float(f) for f in self.far_values))


@dataclass(frozen=True)
class RunConfig:
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    out: str | None = None


_SECTION_KEYS = {
    "data": ("num_classes", "samples_per_class", "input_dim", "noise_sigma",
             "hard_fraction", "hard_pull", "seed"),
    "encoder": ("hidden_dims", "embed_dim"),
    "loss": ("gamma", "margin", "margin_mode"),
    "epl": ("tau", "beta", "ep_enabled", "adaptive_margin"),
    "bank": ("activation", "renormalize", "update_enabled"),
    "train": ("epochs", "batch_size", "lr0", "momentum", "weight_decay",
              "schedule", "epl_start_epoch", "seed", "use_epl"),
    "schedule": ("kind", "milestones", "factor", "power"),
    "eval": ("test_fraction", "pairs_per_kind", "far_values", "top_k"),
}


def _check_keys(section: str, obj: dict):
    if not isinstance(obj, dict):
        raise ConfigError(f"section '{section}' must be an object")
    allowed = _SECTION_KEYS[section]
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section '{section}'")


def _build(section: str, obj: dict, cls, **extra):
    _check_keys(section, obj)
    try:
        return cls(**obj, **extra)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc
    except InvalidSpecError as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


def parse_config(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    known = ("data", "encoder", "loss", "epl", "bank", "train", "eval", "out")
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' at top level")

    data = _build("data", dict(doc.get("data", {})), SyntheticSpec)
    loss = _build("loss", dict(doc.get("loss", {})), LossConfig)
    epl_obj = dict(doc.get("epl", {}))
    _check_keys("epl", epl_obj)
    try:
        epl = EplConfig(base=loss, **epl_obj)
    except TypeError as exc:
        raise ConfigError(f"section 'epl': {exc}") from exc
    bank = _build("bank", dict(doc.get("bank", {})), BankConfig)

    enc_obj = dict(doc.get("encoder", {}))
    _check_keys("encoder", enc_obj)
    hidden = tuple(enc_obj.get("hidden_dims", (64,)))
    embed_dim = int(enc_obj.get("embed_dim", 32))

    train_obj = dict(doc.get("train", {}))
    _check_keys("train", train_obj)
    sched_obj = dict(train_obj.pop("schedule", {}))
    _check_keys("schedule", sched_obj)
    if "milestones" in sched_obj:
        sched_obj["milestones"] = tuple(sched_obj["milestones"])
    try:
        schedule = Schedule(**sched_obj)
        train = TrainConfig(schedule=schedule, loss=loss, epl=epl, bank=bank,
                            encoder_hidden=hidden, embed_dim=embed_dim,
                            **train_obj)
    except TypeError as exc:
        raise ConfigError(f"section 'train': {exc}") from exc

    evl = _build("eval", dict(doc.get("eval", {})), EvalOptions)
    out = doc.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("'out' must be a string path")
    return RunConfig(data=data, train=train, eval=evl, out=out)


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    """Effective configuration as a JSON-ready document (for run records)."""
    t = cfg.train
    return {
        "data": {
            "num_classes": cfg.data.num_classes,
            "samples_per_class": cfg.data.samples_per_class,
            "input_dim": cfg.data.input_dim,
            "noise_sigma": cfg.data.noise_sigma,
            "hard_fraction": cfg.data.hard_fraction,
            "hard_pull": cfg.data.hard_pull,
            "seed": cfg.data.seed,
        },
        "encoder": {"hidden_dims": list(t.encoder_hidden),
                    "embed_dim": t.embed_dim},
        "loss": {"gamma": t.loss.gamma, "margin": t.loss.margin,
                 "margin_mode": t.loss.margin_mode},
        "epl": {"tau": t.epl.tau, "beta": t.epl.beta,
                "ep_enabled": t.epl.ep_enabled,
                "adaptive_margin": t.epl.adaptive_margin},
        "bank": {"activation": t.bank.activation,
                 "renormalize": t.bank.renormalize,
                 "update_enabled": t.bank.update_enabled},
        "train": {
            "epochs": t.epochs, "batch_size": t.batch_size, "lr0": t.lr0,
            "momentum": t.momentum, "weight_decay": t.weight_decay,
            "schedule": {"kind": t.schedule.kind,
                         "milestones": list(t.schedule.milestones),
                         "factor": t.schedule.factor,
                         "power": t.schedule.power},
            "epl_start_epoch": t.epl_start_epoch, "seed": t.seed,
            "use_epl": t.use_epl,
        },
        "eval": {"test_fraction": cfg.eval.test_fraction,
                 "pairs_per_kind": cfg.eval.pairs_per_kind,
                 "far_values": list(cfg.eval.far_values),
                 "top_k": cfg.eval.top_k},
        "out": cfg.out,
    }


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Copy with the seed overridden in both the data and train sections."""
    doc = config_to_dict(cfg)
    doc["data"]["seed"] = int(seed)
    doc["train"]["seed"] = int(seed)
    return parse_config(doc)
