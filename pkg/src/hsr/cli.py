"""Command-line pipeline: prepare | train | eval | check.

Config precedence is defaults < config file (--config, key=value lines)
< command-line flags; the fully resolved configuration is logged to the
run's meta output with per-key provenance.  HSR_LOG selects verbosity
(error / info / debug).  Exit codes: 0 ok, 2 input error,
3 checkpoint/dataset compatibility error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data as datamod
from . import evaluate
from .checks import SUITES, run_suites
from .errors import CompatibilityError, NumericError
from .model import (
    attention_matrix,
    config_from_header,
    load_checkpoint,
    save_checkpoint,
    score_pairs,
    score_pairs_exact,
)
from .training import TrainConfig, coerce_config, train_model

log = logging.getLogger("hsr")

CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))


def _setup_logging() -> None:
    name = os.environ.get("HSR_LOG", "info").lower()
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def read_config_file(path) -> dict[str, str]:
    """Flat key=value text; '#' starts a comment."""
    updates: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}: line {lineno}: expected key=value")
        key, value = text.split("=", 1)
        updates[key.strip()] = value.strip()
    return updates


def resolve_config(args) -> tuple[TrainConfig, dict[str, str]]:
    """defaults < config file < flags; returns (config, per-key provenance)."""
    provenance = {name: "default" for name in CONFIG_KEYS}
    cfg = TrainConfig()
    if getattr(args, "config", None):
        file_updates = read_config_file(args.config)
        cfg = coerce_config(file_updates, cfg)
        for key in file_updates:
            provenance[key] = f"config file {args.config}"
    flag_updates = {}
    for name in CONFIG_KEYS:
        value = getattr(args, name, None)
        if value is not None:
            flag_updates[name] = str(value)
    cfg = coerce_config(flag_updates, cfg)
    for key in flag_updates:
        provenance[key] = "command line"
    return cfg, provenance


def write_run_meta(path, cfg: TrainConfig, provenance: dict[str, str]) -> None:
    lines = [f"{name}={value}  # {provenance.get(name, 'default')}"
             for name, value in cfg.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--lr", type=float, help="learning rate")
    parser.add_argument("--dim", type=int, help="embedding dimension")
    parser.add_argument("--lambda", dest="lam", type=float,
                        help="social-loss weight (0 disables the social task)")
    parser.add_argument("--tau", type=float, help="attention softmax temperature")
    parser.add_argument("--layers", type=int, help="aggregation layers")
    parser.add_argument("--batch", type=int, help="mini-batch size")
    parser.add_argument("--curvature", dest="c", type=float, help="ball curvature")
    parser.add_argument("--gamma", type=float, help="social influence coefficient")
    parser.add_argument("--fd-r", dest="fd_r", type=float, help="decoder offset")
    parser.add_argument("--fd-t", dest="fd_t", type=float, help="decoder temperature")
    parser.add_argument("--leaky-slope", dest="leaky_slope", type=float)
    parser.add_argument("--ball-eps", dest="ball_eps", type=float)
    parser.add_argument("--k-max", dest="k_max", type=int,
                        help="neighbor cap per user per epoch")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--patience", type=int, help="early-stop patience (epochs)")
    parser.add_argument("--geometry", choices=("hyperbolic", "euclidean"))
    parser.add_argument("--attention", choices=("on", "mean"),
                        help="'mean' replaces attention with uniform weights")
    parser.add_argument("--threshold", type=float, help="positive-rating threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsr",
        description="Hyperbolic social recommender pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_prep = sub.add_parser("prepare", help="ingest raw files into a dataset directory")
    p_prep.add_argument("--ratings", help="ratings file: 'user item rating' lines")
    p_prep.add_argument("--trust", help="trust file: 'user user' lines")
    p_prep.add_argument("--synthetic", metavar="USERS,ITEMS,EXPONENT",
                        help="generate a synthetic dataset instead of ingesting files")
    p_prep.add_argument("--outdir", required=True)
    p_prep.add_argument("--ratios", default="7:1:2", help="train:val:test split ratios")
    p_prep.add_argument("--symmetrize", action="store_true",
                        help="treat trust edges as undirected")
    p_prep.add_argument("--seed", type=int, default=42)
    p_prep.add_argument("--threads", type=int, default=1)
    p_prep.add_argument("--config", help="key=value config file (threshold)")
    p_prep.add_argument("--threshold", type=float, help="positive-rating threshold")

    p_train = sub.add_parser("train", help="train a model on a prepared dataset")
    p_train.add_argument("dataset", help="dataset directory from 'prepare'")
    p_train.add_argument("--outdir", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--threads", type=int, default=1)
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--outdir", required=True)
    p_eval.add_argument("--seed", type=int, default=42)
    p_eval.add_argument("--threads", type=int, default=1)
    p_eval.add_argument("--repeats", type=int, default=1,
                        help="average ranking metrics over this many candidate draws")
    p_eval.add_argument("--n-neg", dest="n_neg", type=int, default=500,
                        help="sampled unrated candidates per user")
    p_eval.add_argument("--ks", default="5,10,15,20", help="comma-separated K grid")
    p_eval.add_argument("--bins", action="store_true", help="sparsity-binned metrics")
    p_eval.add_argument("--hierarchy", action="store_true",
                        help="origin-distance groups vs social degree")
    p_eval.add_argument("--attention-user", type=int, default=None,
                        help="export first-layer attention rows for this user")
    p_eval.add_argument("--attention-items", default=None,
                        help="comma-separated item ids for the attention export")
    p_eval.add_argument("--exact-agg", action="store_true",
                        help="debug: score via sequential Mobius aggregation (no attention)")
    p_eval.add_argument("--geometry", choices=("hyperbolic", "euclidean"), default=None)
    p_eval.add_argument("--attention", choices=("on", "mean"), default=None)
    p_eval.add_argument("--leaky-slope", dest="leaky_slope", type=float, default=None)

    p_check = sub.add_parser("check", help="run the built-in verification suites")
    p_check.add_argument("--suite", action="append", choices=sorted(SUITES),
                         help="run only this suite (repeatable); default: all")
    p_check.add_argument("--tolerance", type=float, default=None,
                         help="override the suite tolerance")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--threads", type=int, default=1)
    return parser


def cmd_prepare(args) -> int:
    cfg_updates = read_config_file(args.config) if args.config else {}
    threshold = args.threshold
    if threshold is None:
        threshold = float(cfg_updates.get("threshold", TrainConfig().threshold))
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 10]))
    if args.synthetic:
        parts = args.synthetic.split(",")
        if len(parts) != 3:
            raise ValueError("--synthetic expects USERS,ITEMS,EXPONENT")
        num_users, num_items, exponent = int(parts[0]), int(parts[1]), float(parts[2])
        dataset = datamod.synth_generate(num_users, num_items, exponent, rng)
    else:
        if not args.ratings or not args.trust:
            raise ValueError("prepare needs --ratings and --trust (or --synthetic)")
        raw = datamod.ingest(args.ratings, args.trust)
        dataset = datamod.preprocess(raw, threshold, rng, symmetrize=args.symmetrize)
    ratios = tuple(float(r) for r in args.ratios.split(":"))
    dataset.seed = args.seed
    dataset = datamod.split(dataset, ratios, np.random.default_rng(
        np.random.SeedSequence([args.seed, 11])))
    datamod.save_dataset(dataset, args.outdir)
    counts = [int(np.sum(dataset.records[:, 3] == s)) for s in range(3)]
    print(f"users        {dataset.num_users}")
    print(f"items        {dataset.num_items}")
    print(f"interactions {dataset.num_interactions}")
    print(f"relations    {dataset.num_relations}")
    print(f"records      {len(dataset.records)} "
          f"(train {counts[0]} / val {counts[1]} / test {counts[2]})")
    print(f"written to   {args.outdir}")
    return 0


def cmd_train(args) -> int:
    dataset = datamod.load_dataset(args.dataset)
    cfg, provenance = resolve_config(args)
    if args.seed is not None:
        cfg.seed = args.seed
        provenance["seed"] = "command line"
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_run_meta(outdir / "run_meta.txt", cfg, provenance)
    log_path = outdir / "training_log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,train_loss,val_auc,val_acc\n")

        def hook(stats, params):
            fh.write(f"{stats.epoch},{stats.train_loss:.10f},"
                     f"{stats.val_auc:.10f},{stats.val_acc:.10f}\n")
            fh.flush()

        result = train_model(dataset, cfg, epoch_hook=hook)
    ckpt = outdir / "checkpoint.ckpt"
    save_checkpoint(ckpt, result.params, cfg.to_model_config())
    if result.aborted:
        log.error("training aborted on non-finite loss; last-good checkpoint kept at %s", ckpt)
        return 4
    print(f"trained {len(result.history)} epochs; "
          f"best val AUC {result.best_val_auc:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint   {ckpt}")
    print(f"training log {log_path}")
    return 0


def _eval_model_config(args, header):
    overrides = {}
    meta_path = Path(args.checkpoint).parent / "run_meta.txt"
    if meta_path.exists():
        meta = read_config_file(meta_path)
        for key in ("geometry", "attention", "leaky_slope"):
            if key in meta:
                overrides[key] = meta[key] if key != "leaky_slope" else float(meta[key])
    for key in ("geometry", "attention", "leaky_slope"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return config_from_header(header, **overrides)


def cmd_eval(args) -> int:
    params, header = load_checkpoint(args.checkpoint)
    dataset = datamod.load_dataset(args.dataset)
    if params.num_users != dataset.num_users or params.num_items != dataset.num_items:
        raise CompatibilityError(
            f"checkpoint is for {params.num_users} users x {params.num_items} items, "
            f"dataset has {dataset.num_users} x {dataset.num_items}")
    cfg = _eval_model_config(args, header)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    if args.exact_agg:
        def score_fn(users, items):
            return score_pairs_exact(users, items, params, dataset.social, cfg)
    else:
        def score_fn(users, items):
            return score_pairs(users, items, params, dataset.social, cfg)

    report = evaluate.MetricReport()
    test_rows = dataset.records_for(datamod.TEST)
    if len(test_rows):
        scores = score_fn(test_rows[:, 0], test_rows[:, 1])
        labels = test_rows[:, 2]
        report.accuracy = evaluate.accuracy(scores, labels)
        try:
            report.auc = evaluate.auc(scores, labels)
        except ValueError:
            log.warning("eval: test split is single-class; AUC undefined")

    ks = tuple(int(k) for k in args.ks.split(","))
    repeats = max(1, args.repeats)
    topk_runs = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 20, r]))
        topk_runs.append(evaluate.topk_eval(score_fn, dataset, ks, args.n_neg, rng))
    report.precision_at = {k: float(np.mean([t.precision_at[k] for t in topk_runs]))
                           for k in ks}
    report.recall_at = {k: float(np.mean([t.recall_at[k] for t in topk_runs]))
                        for k in ks}
    report.users_evaluated = topk_runs[0].users_evaluated
    evaluate.write_metrics_csv(outdir / "metrics.csv", report)

    if report.auc is not None:
        print(f"CTR      AUC {report.auc:.4f}  ACC {report.accuracy:.4f} "
              f"({len(test_rows)} test records)")
    for k in ks:
        print(f"top-{k:<3} P {report.precision_at[k]:.4f}  R {report.recall_at[k]:.4f}")
    print(f"ranking  {report.users_evaluated} users, {repeats} repeat(s), "
          f"{args.n_neg} sampled candidates")

    if args.bins:
        bins = evaluate.sparsity_bins(dataset)
        evaluate.score_bins(bins, dataset, score_fn)
        evaluate.write_bins_csv(outdir / "bins.csv", bins)
        for b in bins:
            auc_s = f"{b.auc:.4f}" if b.auc is not None else "n/a"
            print(f"bin {b.index}: {len(b.users)} users, "
                  f"[{b.min_interactions},{b.max_interactions}] interactions, AUC {auc_s}")
    if args.hierarchy:
        groups = evaluate.hierarchy_analysis(params.user_emb, dataset.social, cfg)
        evaluate.write_hierarchy_csv(outdir / "hierarchy.csv", groups)
        for g in groups:
            print(f"group {g.index}: avg social degree {g.avg_social_degree:.2f}, "
                  f"avg origin distance {g.avg_origin_distance:.4f}")
    if args.attention_user is not None:
        user = args.attention_user
        if args.attention_items:
            items = [int(t) for t in args.attention_items.split(",")]
        else:
            items = sorted(dataset.test_positive_sets()[user])[:3] or [0]
        nbrs, rows = attention_matrix(params, dataset.social, cfg, user, items)
        evaluate.write_attention_csv(outdir / f"attention_{user}.csv", nbrs, items, rows)
        print(f"attention rows for user {user} over items {items} "
              f"-> attention_{user}.csv")
    print(f"reports in {outdir}")
    return 0


def cmd_check(args) -> int:
    results = run_suites(args.suite, seed=args.seed, tol=args.tolerance)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 4 if failed else 0


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) != 1:
        log.warning("--threads %d requested; execution is single-threaded "
                    "(full determinism)", args.threads)
    handlers = {"prepare": cmd_prepare, "train": cmd_train,
                "eval": cmd_eval, "check": cmd_check}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except CompatibilityError as exc:
        log.error("%s", exc)
        return 3
    except NumericError as exc:
        log.error("%s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
