"""Command-line entry point: ``q3r train|truncate|sweep|recover|eval``.

Exit codes: 0 success, 1 usage, 2 data/config error, 3 numerical failure.
The output directory comes from ``--out``, else ``$Q3R_OUTPUT_DIR``, else the
config (or the checkpoint's directory for ``truncate``/``eval``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from q3r.harness import checkpoint, report
from q3r.harness.config import ConfigError, load_config, render_config
from q3r.harness.experiment import matrix_diagnostics, train
from q3r.harness.recovery import run_matrix_recovery
from q3r.harness.sweep import GridError, parse_grid, run_sweep
from q3r.optim import NumericalError, OptimizerConfig
from q3r.tinynet import evaluate
from q3r.truncation import truncate_and_eval

ENV_OUTPUT = "Q3R_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("q3r")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args, fallback) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(ENV_OUTPUT):
        return Path(os.environ[ENV_OUTPUT])
    return Path(fallback)


def _retentions(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x.rstrip("%")) / (100 if x.endswith("%") else 1) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad retention list {text!r}") from None
    if not vals or any(not 0 < v for v in vals):
        raise UsageError(f"retention list {text!r} must hold positive numbers")
    return vals


def _train_log_rows(result) -> list[dict]:
    rows = []
    for r in result.log:
        rows.append({**r, "eval_accuracy": r["eval_accuracy"] if r["eval_accuracy"] is not None else 0.0})
    return rows


def cmd_train(args) -> int:
    cfg, recovery = load_config(args.config)
    out = _out_dir(args, cfg.output_dir)
    if cfg.task == "matrix_recover":
        rep = run_matrix_recovery(
            recovery.d1, recovery.d2, recovery.rank, recovery.oversample, cfg.optimizer.lam,
            cfg.optimizer, r_target=cfg.optimizer.target.rank, iterations=recovery.iterations, seed=cfg.seed,
        )
        path = report.write_csv(out / "recovery.csv", report.RECOVERY, [_recovery_row(rep)])
        print(path)
        return EXIT_OK
    result = train(cfg)
    rows = _train_log_rows(result)
    paths = [report.write_csv(out / "train_log.csv", report.TRAIN_LOG, rows)]
    paths.append(report.write_csv(
        out / "timings.csv", report.TIMINGS, [{"phase": k, "seconds": v} for k, v in result.timings.items()]
    ))
    meta = {
        "method": cfg.method,
        "steps": str(result.steps),
        "eval_loss": repr(result.eval_loss),
        "eval_accuracy": repr(result.eval_accuracy),
    }
    paths.append(checkpoint.save(checkpoint.from_net(result.net, render_config(cfg), meta), out / "model.ckpt"))
    if not args.no_figures:
        from q3r.harness.plotting import plot_training

        paths.append(plot_training(rows, out / "train_log.png"))
    for p in paths:
        print(p)
    return EXIT_OK


def _load_net(path):
    ckpt = checkpoint.load(path)
    cfg, _, net = checkpoint.to_net(ckpt)
    from q3r.harness.data import gen_teacher_dataset

    _, held, _ = gen_teacher_dataset(cfg.data)
    return ckpt, cfg, net, held


def cmd_truncate(args) -> int:
    retentions = _retentions(args.retain)
    ckpt, cfg, net, held = _load_net(args.checkpoint)
    out = _out_dir(args, Path(args.checkpoint).parent)
    label = args.label or ckpt.meta.get("method", "model")
    reports = truncate_and_eval(net, [held], retentions, cfg.q3r_targets, "ce", cfg.include_head)
    metrics, matrices = report.truncation_rows(label, reports)
    stem = f"truncation_{args.label}" if args.label else "truncation"
    paths = [
        report.write_csv(out / f"{stem}.csv", report.TRUNCATION, metrics),
        report.write_csv(out / f"{stem}_matrices.csv", report.TRUNCATION_MATRICES, matrices),
    ]
    if not args.no_figures:
        from q3r.harness.plotting import plot_truncation

        paths.append(plot_truncation(metrics, out / f"{stem}.png"))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = parse_grid(args.grid)
    cfg, _ = load_config(args.config)
    if cfg.task == "matrix_recover":
        raise ConfigError(f"{args.config}: sweeps need a network task, not matrix_recover")
    out = _out_dir(args, cfg.output_dir)
    rows = run_sweep(cfg, grid)
    paths = [report.write_csv(out / "sweep.csv", report.SWEEP, rows)]
    if not args.no_figures:
        from q3r.harness.plotting import plot_sweep

        paths.append(plot_sweep(rows, out / "sweep.png"))
    for p in paths:
        print(p)
    failed = sum(1 for r in rows if r["status"] != "ok")
    if failed:
        log.warning("%d sweep rows belong to failed cells", failed)
    return EXIT_OK


def _recovery_row(rep) -> dict:
    return {
        "d1": rep.d1, "d2": rep.d2, "rank": rep.rank, "measurements": rep.measurements,
        "lambda": rep.lam, "iterations": rep.iterations, "rel_error": rep.rel_error,
        "tail_ratio": rep.tail_ratio, "residual": rep.residual, "final_eps": rep.final_eps,
    }


def cmd_recover(args) -> int:
    opt = OptimizerConfig(alpha=args.alpha, eta=args.eta, period=args.period, delta=args.delta)
    rep = run_matrix_recovery(
        args.d1, args.d2, args.rank, args.oversample, args.lam, opt,
        r_target=args.r_target, iterations=args.iterations, seed=args.seed, tol=args.tol,
    )
    out = _out_dir(args, "runs/recover")
    print(report.write_csv(out / "recovery.csv", report.RECOVERY, [_recovery_row(rep)]))
    print(f"rel_error={rep.rel_error:.3e} tail_ratio={rep.tail_ratio:.6f} iterations={rep.iterations}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt, cfg, net, held = _load_net(args.checkpoint)
    loss, acc = evaluate(net, [held], "ce")
    print("metric,value")
    print(f"loss,{loss!r}")
    print(f"accuracy,{acc!r}")
    for d in matrix_diagnostics(net, cfg):
        print(f"tail_ratio[{d['matrix']}],{d['tail_ratio']!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="q3r", description="Low-rank training with Q3R: train, truncate, sweep, recover, eval.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, figures=True):
        sp.add_argument("--out", help=f"output directory (overrides ${ENV_OUTPUT} and the config)")
        if figures:
            sp.add_argument("--no-figures", action="store_true", help="write CSVs only")

    sp = sub.add_parser("train", help="train a network from an INI config")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("truncate", help="truncate a checkpoint at several retention levels")
    sp.add_argument("checkpoint")
    sp.add_argument("--retain", default="0.05,0.10,0.15,0.20,0.30,0.40,1.0", help="comma list, e.g. 0.1,0.2 or 10%%,20%%")
    sp.add_argument("--label", help="run label; also suffixes the output file names")
    common(sp)
    sp.set_defaults(func=cmd_truncate)

    sp = sub.add_parser("sweep", help="train and truncate over a lambda / T / r_target grid")
    sp.add_argument("config")
    sp.add_argument("--grid", required=True, help="e.g. 'lambda=0.001,0.01;T=5,25,100;r_target=0.2'")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("recover", help="low-rank matrix recovery from Gaussian measurements")
    sp.add_argument("--d1", type=int, required=True)
    sp.add_argument("--d2", type=int, required=True)
    sp.add_argument("--rank", type=int, required=True)
    sp.add_argument("--oversample", type=float, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--r-target", type=int, default=None, help="defaults to --rank")
    sp.add_argument("--iterations", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=0.001)
    sp.add_argument("--eta", type=float, default=3.0)
    sp.add_argument("--delta", type=float, default=1e-8)
    sp.add_argument("--period", type=int, default=5)
    sp.add_argument("--tol", type=float, default=0.0, help="stop once the relative change falls below this")
    common(sp, figures=False)
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on its held-out split")
    sp.add_argument("checkpoint")
    sp.set_defaults(func=cmd_eval, out=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return args.func(args)
    except (UsageError, GridError) as exc:
        print(f"q3r: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"q3r: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (checkpoint.CheckpointError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"q3r: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
