"""Command-line entry points: teacher, train, eval, order-check, sweep."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from gasolve.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from gasolve.config import (
    Config,
    config_echo,
    load_config,
    make_mixture,
    make_schedule,
    make_teacher,
    make_train_config,
)
from gasolve.dataset import generate_dataset, load_dataset, save_dataset
from gasolve.errors import CheckpointError, ConfigError, TrainingDivergedError
from gasolve.gsolver import gs_rollout
from gasolve.metrics import convergence_order, endpoint_error, energy_distance, w2_gaussian
from gasolve.training import STREAM_EVAL_PRIOR, stream, train_gas, train_gs

METRIC_COLUMNS = [
    "iteration", "distill_loss", "adv_loss", "disc_objective",
    "grad_norm_pre_clip", "wallclock_ms",
]

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_DIVERGED = 3


def _out_dir(cfg: Config, args) -> str:
    out = args.out if args.out is not None else cfg.get("out.dir")
    if out is None:
        raise ConfigError("out.dir", "no output directory (set out.dir or pass --out)")
    os.makedirs(out, exist_ok=True)
    return out


def _write_metrics(path, records, diagnostic: str | None = None):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec[k] for k in METRIC_COLUMNS})
        if diagnostic is not None:
            fh.write(f"# {diagnostic}\n")


def cmd_teacher(args) -> int:
    cfg = load_config(args.config)
    cfg.require("problem.d", "teacher.samples")
    model = make_mixture(cfg)
    schedule = make_schedule(cfg)
    teacher_cfg = make_teacher(cfg)
    seed = int(args.seed) if args.seed is not None else cfg.get_or_default("train.seed")
    ds = generate_dataset(model, schedule, teacher_cfg, cfg["teacher.samples"], seed)
    out = _out_dir(cfg, args)
    path = os.path.join(out, "dataset.csv")
    save_dataset(path, ds, teacher_cfg)
    print(f"wrote {path} ({ds.n_rows} rows, d={ds.d})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg.require("problem.d", "student.N")
    model = make_mixture(cfg)
    schedule = make_schedule(cfg)
    n_steps = cfg["student.N"]
    mode = args.mode if args.mode is not None else cfg.get_or_default("student.mode")
    train_cfg = make_train_config(cfg, seed=args.seed)
    ds = load_dataset(args.data)
    if ds.d != model.d:
        raise ConfigError("problem.d", f"dataset dimension {ds.d} != problem dimension {model.d}")
    out = _out_dir(cfg, args)
    metrics_path = os.path.join(out, "metrics.csv")
    echo = {line.split(" = ")[0]: line.split(" = ", 1)[1] for line in config_echo(cfg)}
    echo["student.mode"] = mode
    echo["train.seed"] = str(train_cfg.seed)
    try:
        if mode == "gas":
            result = train_gas(model, schedule, train_cfg, ds, n_steps)
        else:
            result = train_gs(model, schedule, train_cfg, ds, n_steps)
    except TrainingDivergedError as exc:
        _write_metrics(metrics_path, [], diagnostic=f"diverged: {exc}")
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_metrics(metrics_path, result.records)
    ckpt = Checkpoint(
        config=echo,
        iteration=result.iteration,
        n_steps=n_steps,
        params=result.params,
        ema_params=result.ema_params,
        adam=result.adam,
        disc_weights=None if result.disc is None else result.disc.weights,
        disc_adam=result.disc_adam,
    )
    ckpt_path = os.path.join(out, "checkpoint.txt")
    save_checkpoint(ckpt_path, ckpt)
    print(f"wrote {ckpt_path} and {metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    cfg.require("problem.d")
    model = make_mixture(cfg)
    schedule = make_schedule(cfg)
    ckpt = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    if ds.d != model.d:
        raise ConfigError("problem.d", f"dataset dimension {ds.d} != problem dimension {model.d}")
    params = ckpt.ema_params  # evaluation always uses the EMA shadow
    student_val = gs_rollout(model, schedule, params, ds.x_T)
    rows = [("endpoint_error", endpoint_error(student_val, ds.teacher))]

    n_samples = cfg.get_or_default("eval.samples")
    seed = int(args.seed) if args.seed is not None else cfg.get_or_default("train.seed")
    rng = stream(seed, STREAM_EVAL_PRIOR)
    sigma_T = float(schedule.sigma(schedule.T))
    x_T = sigma_T * rng.standard_normal((n_samples, model.d))
    pushforward = gs_rollout(model, schedule, params, x_T)
    rows.append(("energy_distance", energy_distance(pushforward, ds.teacher)))
    if model.n_components == 1:
        mu_hat = pushforward.mean(axis=0)
        var_hat = pushforward.var(axis=0)
        target_var = np.full(model.d, model.variances[0] + schedule.delta**2)
        rows.append(
            ("w2_gaussian", w2_gaussian(mu_hat, var_hat, model.means[0], target_var))
        )
    out = _out_dir(cfg, args)
    path = os.path.join(out, "eval.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, f"{value:.17g}"])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_order_check(args) -> int:
    cfg = load_config(args.config)
    cfg.require("problem.d")
    model = make_mixture(cfg)
    schedule = make_schedule(cfg)
    rng = stream(cfg.get_or_default("train.seed"), STREAM_EVAL_PRIOR)
    x_T = float(schedule.sigma(schedule.T)) * rng.standard_normal(model.d)
    out = _out_dir(cfg, args)
    path = os.path.join(out, "orders.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["solver", "order", "residual"])
        for kind in ("euler", "dpmpp3m", "rk4"):
            est = convergence_order(kind, model, schedule, x_T)
            writer.writerow([kind, f"{est.order:.6f}", f"{est.residual:.6f}"])
            print(f"{kind}: order {est.order:.3f} (residual {est.residual:.3f})")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    cfg.require("problem.d", "student.N", "sweep.w_adv")
    model = make_mixture(cfg)
    schedule = make_schedule(cfg)
    ds = load_dataset(args.data)
    n_steps = cfg["student.N"]
    out = _out_dir(cfg, args)
    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w_adv", "endpoint_error", "final_distill_loss"])
        for w_adv in cfg["sweep.w_adv"]:
            train_cfg = replace(make_train_config(cfg, seed=args.seed), w_adv=float(w_adv))
            result = train_gas(model, schedule, train_cfg, ds, n_steps)
            err = endpoint_error(
                gs_rollout(model, schedule, result.ema_params, ds.x_T), ds.teacher
            )
            writer.writerow([f"{w_adv:g}", f"{err:.17g}",
                             f"{result.records[-1]['distill_loss']:.17g}"])
            print(f"w_adv={w_adv:g}: endpoint_error={err:.6f}")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gasolve",
        description="Train and evaluate learnable multistep PF-ODE samplers "
        "on analytic mixture testbeds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, ckpt=False):
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--out", default=None, help="output directory (overrides out.dir)")
        p.add_argument("--seed", default=None, type=int, help="override train.seed")
        if data:
            p.add_argument("--data", required=True, help="teacher dataset file")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint file")

    common(sub.add_parser("teacher", help="generate a paired teacher dataset"))
    p_train = sub.add_parser("train", help="train the learned solver")
    common(p_train, data=True)
    p_train.add_argument("--mode", choices=("gs", "gas"), default=None,
                         help="override student.mode")
    common(sub.add_parser("eval", help="evaluate a checkpoint"), data=True, ckpt=True)
    common(sub.add_parser("order-check", help="measure solver convergence orders"))
    common(sub.add_parser("sweep", help="sweep adversarial weights"), data=True)
    return parser


_COMMANDS = {
    "teacher": cmd_teacher,
    "train": cmd_train,
    "eval": cmd_eval,
    "order-check": cmd_order_check,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
