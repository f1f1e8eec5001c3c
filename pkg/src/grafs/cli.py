"""Command-line interface.

Subcommands:

    search     run the activation search per a config file, one output set
               per seed (activation JSON, event log, formula text, figure)
    retrain    train a model from scratch with a chosen activation and
               report per-seed test metrics with mean +- standard error
    plot-grid  sample an activation on an even grid (CSV + PNG)
    schedule   dump the drop schedule for a (start, end) round range
    gradcheck  run the finite-difference suite over all ops

Exit codes: 0 success, 1 runtime failure (e.g. divergence), 2 usage or
config errors. The GRAFS_THREADS environment variable caps --parallel.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cell import CellError, DiscreteActivation
from .config import ConfigError, load_config
from .data import DataError
from .formulas import canonical_formula_id, eval_discovered
from .gradcheck import DEFAULT_TOLERANCE, run_gradcheck
from .models import ModelError, build_model, evaluate, mean_and_sem, site_fn_for
from .ops import OpError, canonical_baseline, eval_baseline
from .schedule import ScheduleError, build_shrink_schedule
from .search import SearchDivergence, fit, run_grafs

__all__ = ["main"]


class UsageError(Exception):
    pass


def _activation_from_spec(spec):
    """Resolve an activation argument: JSON file path, published formula id,
    or baseline name. Returns (label, plain evaluator, site-able object)."""
    path = Path(spec)
    if path.is_file():
        try:
            act = DiscreteActivation.from_json(path.read_text(encoding="utf-8"))
        except (CellError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot parse activation file {spec}: {exc}") from None
        return path.stem, act.eval, act
    try:
        fid = canonical_formula_id(spec)
        return fid, lambda x: eval_discovered(fid, x), fid
    except KeyError:
        pass
    try:
        name = canonical_baseline(spec)
        return name, lambda x: eval_baseline(name, x), name
    except OpError:
        raise UsageError(
            f"activation {spec!r} is neither a file, a published formula id, "
            f"nor a baseline name"
        ) from None


def _prepare_out_dir(path, force):
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty; pass --force to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_figure(fig, path):
    fig.savefig(path, dpi=120)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _apply_overrides(args, config):
    if args.seed is not None:
        config.values["seeds"] = [int(s) for s in args.seed.split(",")]
    if args.out is not None:
        config.values["out.dir"] = args.out


def _search_one_seed(config, seed, out_dir):
    dataset = config.build_dataset()
    trainval, _ = config.train_test_split(dataset)
    spec = config.model_spec(dataset)
    search_cfg = config.search_config(seed)
    run_id = f"{config.digest[:12]}-seed{seed}"
    activation, run = run_grafs(search_cfg, spec, trainval, run_id=run_id)

    out = Path(out_dir)
    (out / f"activation_seed{seed}.json").write_text(activation.to_json() + "\n",
                                                     encoding="utf-8")
    (out / f"formula_seed{seed}.txt").write_text(activation.formula + "\n", encoding="utf-8")
    with open(out / f"events_seed{seed}.ndjson", "w", encoding="utf-8") as fh:
        meta = {"meta": {"config_digest": config.digest, "tool_version": __version__,
                         "seed": seed}}
        fh.write(json.dumps(meta) + "\n")
        for event in run.events:
            fh.write(json.dumps(event) + "\n")

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    rounds = [e["round"] for e in run.events]
    ax.plot(rounds, [e["train_loss"] for e in run.events], label="train")
    ax.plot(rounds, [e["val_loss"] for e in run.events], label="validation")
    ax.set_xlabel("round")
    ax.set_ylabel("loss")
    ax.set_title(f"seed {seed}: {activation.formula[:60]}")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, out / f"search_seed{seed}.png")
    plt.close(fig)
    return str(out / f"activation_seed{seed}.json")


def cmd_search(args):
    config = load_config(args.config)
    _apply_overrides(args, config)
    out = _prepare_out_dir(config.out_dir, args.force)
    seeds = config.seeds
    workers = args.parallel
    cap = os.environ.get("GRAFS_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            paths = list(pool.map(_search_one_seed, [config] * len(seeds), seeds,
                                  [out] * len(seeds)))
    else:
        paths = [_search_one_seed(config, seed, out) for seed in seeds]
    for p in paths:
        print(p)
    return 0


def cmd_retrain(args):
    config = load_config(args.config)
    _apply_overrides(args, config)
    label, _, siteable = _activation_from_spec(args.activation)
    out = _prepare_out_dir(config.out_dir, args.force)

    dataset = config.build_dataset()
    trainval, test = config.train_test_split(dataset)
    spec = config.model_spec(dataset)
    opt_spec = config.retrain_optimizer()
    site_fn = site_fn_for(siteable)

    accs, losses = [], []
    for seed in config.seeds:
        model = build_model(spec, seed=seed)
        fit(model, trainval, site_fn, opt_spec,
            rounds=config["retrain.rounds"], batch_size=config["retrain.batch_size"],
            seed=seed, grad_accum=config["retrain.grad_accum"])
        acc, loss = evaluate(model, test, siteable)
        accs.append(acc * 100.0)
        losses.append(loss)

    acc_mean, acc_sem = mean_and_sem(accs)
    loss_mean, loss_sem = mean_and_sem(losses)
    sem_txt = f"{acc_sem:.3f}" if acc_sem is not None else "n/a"

    with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("seed,test_accuracy_pct,test_loss\n")
        for seed, acc, loss in zip(config.seeds, accs, losses):
            fh.write(f"{seed},{float(acc)!r},{float(loss)!r}\n")
    report = (
        f"{label}  {acc_mean:.3f} +- {sem_txt}  "
        f"(loss {loss_mean:.4f})  seeds={list(config.seeds)}\n"
    )
    (out / "report.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(config.seeds, accs, zorder=3)
    ax.axhline(acc_mean, linestyle="--", linewidth=1)
    if acc_sem is not None:
        ax.axhspan(acc_mean - acc_sem, acc_mean + acc_sem, alpha=0.2)
    ax.set_xlabel("seed")
    ax.set_ylabel("test accuracy [%]")
    ax.set_title(label)
    fig.tight_layout()
    _save_figure(fig, out / "metrics.png")
    plt.close(fig)
    return 0


def cmd_plot_grid(args):
    if args.n < 2:
        raise UsageError(f"--n must be at least 2, got {args.n}")
    if not args.lo < args.hi:
        raise UsageError(f"--lo must be below --hi, got {args.lo} >= {args.hi}")
    label, fn, _ = _activation_from_spec(args.activation)
    xs = np.linspace(args.lo, args.hi, args.n)
    ys = np.asarray(fn(xs), dtype=np.float64)

    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("x,f\n")
        for x, y in zip(xs, ys):
            fh.write(f"{float(x)!r},{float(y)!r}\n")

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(xs, ys)
    ax.set_xlabel("x")
    ax.set_ylabel("f(x)")
    ax.set_title(label)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, out_csv.with_suffix(".png"))
    plt.close(fig)
    print(out_csv)
    return 0


def cmd_schedule(args):
    sched = build_shrink_schedule(start=args.start, end=args.end)
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("epoch,drops\n")
        for epoch in sorted(sched):
            fh.write(f"{epoch},{sched[epoch]}\n")

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = sorted(sched)
    ax.bar(epochs, [sched[e] for e in epochs])
    ax.set_xlabel("round")
    ax.set_ylabel("ops dropped")
    ax.set_title(f"shrink schedule, rounds {args.start}..{args.end} "
                 f"(total {sum(sched.values())})")
    fig.tight_layout()
    _save_figure(fig, out_csv.with_suffix(".png"))
    plt.close(fig)
    print(out_csv)
    return 0


def cmd_gradcheck(args):
    report, ok = run_gradcheck(points=args.points)
    width = max(len(k) for k in report)
    for name, err in report.items():
        flag = "ok " if err < DEFAULT_TOLERANCE else "FAIL"
        print(f"{flag} {name:<{width}} max rel err {err:.3e}")
    if not ok:
        bad = [k for k, v in report.items() if v >= DEFAULT_TOLERANCE]
        print(f"gradient check FAILED for: {', '.join(bad)}", file=sys.stderr)
        return 1
    print(f"all {len(report)} checks passed (tolerance {DEFAULT_TOLERANCE:g})")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="grafs",
        description="gradient-based activation function search",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the bi-level search per config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", help="comma-separated seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--force", action="store_true", help="reuse a non-empty output directory")
    p.add_argument("--parallel", type=int, default=1, metavar="N",
                   help="worker processes for independent seeds")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("retrain", help="train from scratch with a fixed activation")
    p.add_argument("--config", required=True)
    p.add_argument("--activation", required=True,
                   help="activation JSON file, formula id (e.g. F_RN_4), or baseline name")
    p.add_argument("--seed", help="comma-separated seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("plot-grid", help="sample an activation on an even grid")
    p.add_argument("--activation", required=True)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="CSV path; PNG lands beside it")
    p.set_defaults(fn=cmd_plot_grid)

    p = sub.add_parser("schedule", help="dump the drop schedule as CSV")
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser("gradcheck", help="finite-difference check of all derivatives")
    p.add_argument("--points", type=int, default=50)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, ScheduleError, DataError, ModelError, OpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SearchDivergence, CellError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
