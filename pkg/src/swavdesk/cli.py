"""Command-line entry point: ``swavdesk {train,eval,ablate,sinkhorn-bench}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .assignment import KMeansConfig, SinkhornConfig, sinkhorn_codes, spherical_kmeans
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint, state_from_checkpoint,
                         state_to_checkpoint, encoder_from_checkpoint, prototypes_from_checkpoint)
from .config import config_hash, format_config, help_text, load_config
from .data import KIND_IMAGE, DatasetFormatError, load_dataset, split
from .evaluation import EvalReport, collapse_diagnostics, knn_classify, linear_probe, nmi
from .experiments import ABLATION_SUITES, prepare_data, raw_knn_baseline, run_variant
from .augmentation import resize_bilinear
from .model import encode_forward
from .numerics import ConfigError, DegenerateInputError, Rng, SwavError, softmax_rows
from .training import init_state, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("swavdesk")


class UsageError(Exception):
    """Bad input detected by the CLI itself; maps to exit code 2."""


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return _json_value(v.item())
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def dumps(obj) -> str:
    return json.dumps(_json_value(obj), sort_keys=True, allow_nan=False)


@contextlib.contextmanager
def thread_limit(n: int | None):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _read_metrics(path: Path, upto_epoch: int) -> list[str]:
    if not path.exists():
        return []
    keep = []
    for line in path.read_text().splitlines():
        if line.strip() and json.loads(line)["epoch"] <= upto_epoch:
            keep.append(line)
    return keep


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace_train(seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    data = prepare_data(cfg).train

    metrics_path = out / "metrics.jsonl"
    timing_path = out / "timing.jsonl"
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.config_hash != chash:
            raise UsageError(f"checkpoint {args.resume} was written for a different config "
                             f"(hash {ck.config_hash:016x}, config {chash:016x})")
        state = state_from_checkpoint(ck, cfg.train)
        if args.seed is not None and args.seed != state.cfg.seed:
            log.warning("--seed %d ignored on resume; checkpoint seed is %d", args.seed, state.cfg.seed)
        if state.input_dim != init_state(state.cfg, data.subset(np.arange(min(len(data), 2)))).input_dim:
            raise UsageError("checkpoint input dimension does not match the dataset")
        lines = _read_metrics(metrics_path, ck.epoch)
        metrics_path.write_text("".join(line + "\n" for line in lines))
        log.info("resuming at epoch %d", state.epoch)
    else:
        state = None
        metrics_path.write_text("")
        timing_path.write_text("")
    (out / "config.txt").write_text(format_config(cfg))

    history = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
    clock = [time.perf_counter()]

    def on_epoch(st, metrics):
        now = time.perf_counter()
        with metrics_path.open("a") as f:
            f.write(dumps(metrics) + "\n")
        with timing_path.open("a") as f:
            f.write(dumps({"epoch": metrics["epoch"], "wall_seconds": now - clock[0]}) + "\n")
        clock[0] = now
        history.append(_json_value(metrics))
        e = metrics["epoch"]
        if cfg.checkpoint_every > 0 and (e + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_epoch{e:04d}.swck", state_to_checkpoint(st, chash))

    with thread_limit(args.threads):
        state, _ = train(cfg.train, data, state=state, callback=on_epoch)
    save_checkpoint(out / "final.swck", state_to_checkpoint(state, chash))
    if not args.no_plots and history:
        from .plotting import training_curves

        training_curves(history, out / "training_curves.png")
    print(dumps({"epochs": state.epoch, "final_loss": history[-1]["loss"] if history else None,
                 "checkpoint": str(out / "final.swck")}))
    return EXIT_OK


def _eval_inputs(ds, input_dim: int) -> np.ndarray:
    if ds.kind == KIND_IMAGE:
        c = ds.x.shape[1]
        size = math.isqrt(input_dim // c) if input_dim % c == 0 else 0
        if size < 1 or c * size * size != input_dim:
            raise UsageError(f"checkpoint expects {input_dim} inputs, incompatible with {c}-channel images")
        return np.stack([resize_bilinear(img, size, size).reshape(-1) for img in ds.x])
    if ds.x.shape[1] != input_dim:
        raise UsageError(f"dimension mismatch: checkpoint expects {input_dim} features, dataset has {ds.x.shape[1]}")
    return ds.x


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    if ds.labels is None:
        raise UsageError(f"dataset {args.dataset} has no labels")
    encoder = encoder_from_checkpoint(ck)
    x = _eval_inputs(ds, int(ck.arrays["meta.input_dim"][0]))
    with thread_limit(args.threads):
        z, rep, _ = encode_forward(encoder, x)
        tr, te = split(ds.labels, (0.75, 0.25), Rng(args.split_seed, "eval/split"))
        y = ds.labels
        report = EvalReport()
        for k in args.knn:
            report.knn_acc[k] = knn_classify(rep[tr], y[tr], rep[te], y[te], k)
        if args.linear:
            report.linear_acc = linear_probe(rep[tr], y[tr], rep[te], y[te])
        heads = prototypes_from_checkpoint(ck)
        codes = []
        if heads:
            codes = [softmax_rows(z @ heads[0].c, args.tau)]
            clusters = np.argmax(z @ heads[0].c, axis=1)
        else:
            km = spherical_kmeans(rep, KMeansConfig(k=int(np.unique(y).size), seed=args.split_seed))
            clusters = km.assignments
        report.nmi = nmi(clusters, y)
        ent, std, flag = collapse_diagnostics(codes, rep)
        report.code_mean_entropy = ent if codes else None
        report.feature_std = std
        report.collapse_flag = flag
    print(dumps(report.to_dict()))
    return EXIT_OK


CSV_FIELDS = ["suite", "variant", "overrides", "knn_acc", "knn_accs", "collapse", "final_loss", "raw_baseline"]


def cmd_ablate(args) -> int:
    if args.suite not in ABLATION_SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(ABLATION_SUITES)}")
    cfg = load_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg)
    baseline = raw_knn_baseline(data)
    seeds = [cfg.train.seed + s for s in range(args.seeds)]
    rows = []
    with thread_limit(args.threads):
        for name, overrides in ABLATION_SUITES[args.suite]:
            summary = run_variant(cfg.train.replace(**overrides), data, seeds)
            log.info("%s: knn %.4f collapse %s", name, summary["knn_acc"], summary["collapse"])
            rows.append({
                "suite": args.suite,
                "variant": name,
                "overrides": ";".join(f"{k}={v}" for k, v in overrides.items()),
                "knn_acc": f"{summary['knn_acc']:.6f}",
                "knn_accs": ";".join(f"{a:.6f}" for a in summary["knn_accs"]),
                "collapse": str(summary["collapse"]).lower(),
                "final_loss": f"{summary['final_loss']:.6f}",
                "raw_baseline": f"{baseline:.6f}",
            })
    csv_path = out / f"ablation_{args.suite}.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    if not args.no_plots:
        from .plotting import ablation_bars

        ablation_bars([{"variant": r["variant"], "knn_acc": float(r["knn_acc"]), "collapse": r["collapse"] == "true"}
                       for r in rows], out / f"ablation_{args.suite}.png", baseline, args.suite)
    sys.stdout.write(csv_path.read_text())
    return EXIT_OK


def cmd_sinkhorn_bench(args) -> int:
    if min(args.rows, args.cols, args.iters, args.repeats) < 1:
        raise UsageError("rows, cols, iters and repeats must be positive")
    scores = Rng(args.seed, "bench").uniform(-1.0, 1.0, (args.rows, args.cols))
    cfg = SinkhornConfig(eps=args.eps, niters=args.iters)
    samples = []
    with thread_limit(args.threads):
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            sinkhorn_codes(scores, cfg)
            samples.append((time.perf_counter() - t0) * 1e3)
    print(dumps({
        "rows": args.rows, "cols": args.cols, "iters": args.iters, "repeats": args.repeats,
        "samples_ms": samples, "median_ms": float(np.median(samples)), "min_ms": float(np.min(samples)),
    }))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="swavdesk", description="Online-clustering self-supervised learning at desk scale.",
                                epilog=help_text(), formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file", epilog=help_text(), formatter_class=fmt)
    t.add_argument("config")
    t.add_argument("--resume", metavar="CKPT")
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", default="run")
    t.add_argument("--threads", type=int)
    t.add_argument("--no-plots", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a labelled SSLD dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--knn", type=int, nargs="+", default=[20], metavar="K")
    e.add_argument("--linear", action="store_true", help="also fit a linear probe")
    e.add_argument("--tau", type=float, default=0.1, help="temperature for the code-entropy diagnostic")
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid and write a CSV table")
    a.add_argument("suite", help=f"one of: {', '.join(ABLATION_SUITES)}")
    a.add_argument("config")
    a.add_argument("--out-dir", default="ablations")
    a.add_argument("--seeds", type=int, default=1, help="seeds per variant; the median is reported")
    a.add_argument("--threads", type=int)
    a.add_argument("--no-plots", action="store_true")
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("sinkhorn-bench", help="time sinkhorn_codes on random scores")
    b.add_argument("rows", type=int)
    b.add_argument("cols", type=int)
    b.add_argument("iters", type=int)
    b.add_argument("repeats", type=int)
    b.add_argument("--eps", type=float, default=0.05)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int)
    b.set_defaults(func=cmd_sinkhorn_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ArithmeticError, DegenerateInputError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, CheckpointError, DatasetFormatError, SwavError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
