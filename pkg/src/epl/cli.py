"""Command line interface.

Subcommands: gen-data, train, eval, analyze, gradcheck, sweep. Every run
echoes its effective configuration into the output directory, and every
report that writes delimited output renders a figure next to it.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 verification-suite failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import plots
from .bank import init_bank
from .config import (
    RunConfig,
    config_to_dict,
    load_config,
    parse_config,
    with_seed,
)
from .data import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    make_verification_pairs,
    save_dataset,
    split_dataset,
)
from .errors import CheckFailedError, ConfigError, EplError
from .evaluate import (
    centroid_alignment,
    embed,
    pair_scores,
    rank1_identification,
    tar_at_far,
    top_k_negative_similarities,
)
from .gradcheck import run_all
from .linalg import make_rng, normalize_rows
from .train import (
    STREAM_PAIRS,
    STREAM_SPLIT,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _resolve_out(args, cfg: RunConfig) -> Path:
    out = getattr(args, "out", None) or cfg.out
    if not out:
        raise ConfigError("no output directory: pass --out or set 'out'")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    doc = config_to_dict(cfg)
    (out_dir / "config.json").write_text(json.dumps(doc, indent=2) + "\n")


def _dataset_for(args, cfg: RunConfig):
    if getattr(args, "dataset", None):
        return load_dataset(args.dataset)
    return generate_synthetic(cfg.data)


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    ds = generate_synthetic(cfg.data)
    out = Path(args.out) if args.out else None
    if out is None:
        raise ConfigError("gen-data needs --out for the dataset file")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} samples ({ds.num_classes} classes) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out_dir = _resolve_out(args, cfg)
    _echo_config(cfg, out_dir)
    full = _dataset_for(args, cfg)
    train_ds, eval_ds = split_dataset(full, cfg.eval.test_fraction,
                                      make_rng(cfg.train.seed, STREAM_SPLIT))
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(train_ds, cfg.train, eval_ds=eval_ds,
                   pairs_per_kind=cfg.eval.pairs_per_kind, resume=resume)
    write_metrics_csv(result.metrics, out_dir / "metrics.csv")
    save_checkpoint(result.checkpoint, out_dir / "checkpoint")
    plots.save_training_curves(result.metrics, out_dir / "training_curves.png")
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {result.checkpoint.epoch} epochs; "
          f"final loss {last.get('loss', float('nan')):.4f}, "
          f"TAR@FAR=1e-2 {last.get('tar_far2', float('nan')):.4f}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out_dir = _resolve_out(args, cfg)
    _echo_config(cfg, out_dir)
    ck = load_checkpoint(args.checkpoint)
    ds = _dataset_for(args, cfg)
    emb = embed(ck.encoder, ds)
    genuine, impostor = make_verification_pairs(
        ds, cfg.eval.pairs_per_kind, make_rng(cfg.train.seed, STREAM_PAIRS))
    g = pair_scores(emb, genuine)
    s = pair_scores(emb, impostor)
    points = []
    for far in cfg.eval.far_values:
        tar, threshold = tar_at_far(g, s, far)
        points.append({"far": far, "tar": tar, "threshold": threshold})
    cents = np.stack([emb.features[emb.labels == c].mean(axis=0)
                      for c in range(ds.num_classes)])
    cents, _ = normalize_rows(cents)
    rank1 = rank1_identification(emb, cents, np.arange(ds.num_classes))
    report = {"tar_at_far": points, "rank1": rank1,
              "num_samples": len(ds), "num_classes": ds.num_classes}
    (out_dir / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    plots.save_tar_curve(points, out_dir / "tar_curve.png")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_run_config(args)
    out_dir = _resolve_out(args, cfg) / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)
    ck = load_checkpoint(args.checkpoint)
    ds = _dataset_for(args, cfg)
    emb = embed(ck.encoder, ds)

    values, summary = top_k_negative_similarities(emb, ck.prototypes,
                                                  cfg.eval.top_k)
    lines = ["bin_low,bin_high,count"]
    for k in range(summary.counts.size):
        lines.append(f"{summary.bin_edges[k]:.2f},{summary.bin_edges[k + 1]:.2f},"
                     f"{int(summary.counts[k])}")
    (out_dir / "negative_similarity_histogram.csv").write_text(
        "\n".join(lines) + "\n")
    plots.save_similarity_histogram(
        summary, out_dir / "negative_similarity_histogram.png",
        label=f"top-{cfg.eval.top_k} negative cosine")

    align_w = centroid_alignment(emb, ck.prototypes, use_normal_only=True)
    series = {"learned": list(align_w)}
    align_lines = ["class,learned_alignment,bank_alignment"]
    has_bank = ck.bank.update_count.sum() > 0
    align_b = (centroid_alignment(emb, ck.bank.prototypes, use_normal_only=True)
               if has_bank else None)
    for c in range(align_w.size):
        cell = f"{align_b[c]:.17g}" if align_b is not None else ""
        align_lines.append(f"{c},{align_w[c]:.17g},{cell}")
    (out_dir / "centroid_alignment.csv").write_text("\n".join(align_lines) + "\n")
    if align_b is not None:
        series["bank"] = list(align_b)
    plots.save_alignment_figure(series, out_dir / "centroid_alignment.png")

    report = {
        "negative_similarity": {"peak": summary.peak, "mean": summary.mean,
                                "top_k": cfg.eval.top_k},
        "centroid_alignment": {
            "learned_mean": float(align_w.mean()),
            "bank_mean": float(align_b.mean()) if align_b is not None else None,
        },
    }
    (out_dir / "summary.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    print(f"analysis written to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_all(instances=args.instances, seed=args.seed or 0)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    if failed:
        raise CheckFailedError(f"{len(failed)} of {len(results)} checks failed")
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def _run_cell(cfg: RunConfig, axis: str, value) -> dict:
    full = generate_synthetic(cfg.data)
    train_ds, eval_ds = split_dataset(full, cfg.eval.test_fraction,
                                      make_rng(cfg.train.seed, STREAM_SPLIT))
    result = train(train_ds, cfg.train, eval_ds=eval_ds,
                   pairs_per_kind=cfg.eval.pairs_per_kind)
    last = result.metrics[-1]
    return {"axis": axis, "value": value, "loss": last["loss"],
            "tar_far2": last["tar_far2"], "rank1": last["rank1"]}


def cmd_sweep(args) -> int:
    from .bank import ACTIVATIONS

    cfg = _load_run_config(args)
    out_dir = _resolve_out(args, cfg)
    _echo_config(cfg, out_dir)
    base = config_to_dict(cfg)
    rows = []
    for activation in ACTIVATIONS:
        doc = json.loads(json.dumps(base))
        doc["bank"]["activation"] = activation
        rows.append(_run_cell(parse_config(doc), "activation", activation))
        print(f"activation={activation}: TAR@FAR=1e-2 {rows[-1]['tar_far2']:.4f}")
    for beta in (0.5, 0.6, 0.7, 0.8, 0.9):
        doc = json.loads(json.dumps(base))
        doc["epl"]["beta"] = beta
        rows.append(_run_cell(parse_config(doc), "beta", beta))
        print(f"beta={beta}: TAR@FAR=1e-2 {rows[-1]['tar_far2']:.4f}")
    lines = ["axis,value,loss,tar_far2,rank1"]
    for r in rows:
        lines.append(f"{r['axis']},{r['value']},{r['loss']:.17g},"
                     f"{r['tar_far2']:.17g},{r['rank1']:.17g}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    plots.save_sweep_figure(rows, out_dir / "sweep.png")
    print(f"wrote {len(rows)} sweep rows to {out_dir / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epl",
        description="Discriminative embedding training with empirical "
                    "prototypes on synthetic hypersphere data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, checkpoint=False, out=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int,
                       help="override the data and train seeds")
        if out:
            p.add_argument("--out", help="output directory")
        if dataset:
            p.add_argument("--dataset",
                           help="dataset file (default: generate from config)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and log metrics")
    common(p, dataset=True)
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="verification and identification metrics")
    common(p, dataset=True, checkpoint=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze",
                       help="negative-similarity histogram and alignment")
    common(p, dataset=True, checkpoint=True)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config", help="accepted for symmetry; not consulted")
    p.add_argument("--seed", type=int, help="instance stream seed")
    p.add_argument("--instances", type=int, default=100,
                   help="instances per gradient check")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep",
                       help="activation and beta sweeps, one row per cell")
    common(p, dataset=False)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailedError as exc:
        print(f"error: check: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (EplError, OSError) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
