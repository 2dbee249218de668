"""Command-line interface.

Every subcommand also accepts ``--config FILE``: a JSON object whose keys
are the long option names of that subcommand (dashes or underscores).
Values from the file replace the built-in defaults and explicit flags
override the file.

Exit codes: 0 success, 2 input error, 3 numerical failure (or more than
10% failed replicates).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import asdict, replace

import numpy as np

from .dataio import (InputError, _fmt, atomic_write, config_to_dict, load_fit, read_dataset, read_truth, save_fit,
                     write_dataset, write_truth)
from .dnn import NetConfig
from .em import EmConfig, NumericalFailure, fit
from .inference import covariance
from .likelihood import loglik, survival_callable, survival_matrix
from .metrics import MetricReport, ibs, mse_survival, relative_error
from .simulate import SimConfig, generate, true_survival_fn
from .study import PROFILES, StudyConfig, format_report, holdout_split, r_grid, replicate_study, select_r, tune

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
FAIL_FRACTION = 0.10

log = logging.getLogger("deepict")


# -- shared option groups --------------------------------------------------

def _add_fit_options(p):
    p.add_argument("--r", type=float, default=0.0, help="transformation parameter (0 = PH, 1 = PO)")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--degree", type=int, default=3, help="I-spline degree")
    p.add_argument("--n-interior", type=int, default=3, help="interior knots")
    p.add_argument("--knots", choices=("quantile", "uniform"), default="quantile")
    p.add_argument("--freeze-phi", action="store_true", help="fit the linear-effects model (phi = 0)")
    p.add_argument("--hidden", type=int, default=2, help="hidden layers")
    p.add_argument("--width", type=int, default=50, help="neurons per hidden layer")
    p.add_argument("--l1", type=float, default=0.01)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--epochs", type=int, default=20, help="SGD epochs per EM iteration")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--loss-scale", choices=("full", "sum", "mean"), default="sum")
    p.add_argument("--seed", type=int, default=0)


def _em_config(args, d: int) -> EmConfig:
    net = None
    if not args.freeze_phi:
        net = NetConfig(widths=(d,) + (args.width,) * args.hidden + (1,), l1_penalty=args.l1, learning_rate=args.lr,
                        batch_size=args.batch_size, epochs_per_em_step=args.epochs, dropout_rate=args.dropout,
                        loss_scale=args.loss_scale)
    return EmConfig(r=args.r, max_iters=args.max_iters, tol=args.tol, net_config=net, degree=args.degree,
                    n_interior=args.n_interior, knot_placement=args.knots)


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    if path is None or path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        atomic_write(path, buf.getvalue())


# -- commands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = SimConfig(n=args.n, case=args.case, r_true=args.r, seed=args.seed, lambda_slope=args.slope)
    ds = generate(cfg)
    write_dataset(args.out, ds.data)
    if args.truth:
        meta = asdict(cfg)
        meta["beta_true"] = list(cfg.beta_true)
        meta["split"] = {k: v.tolist() for k, v in ds.split.items()}
        write_truth(args.truth, ds.t_true, ds.phi_true, meta)
    print(f"wrote {ds.data.n} rows to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = read_dataset(args.data)
    cfg = _em_config(args, data.d)
    if args.tune:
        if cfg.net_config is None:
            raise InputError("--tune needs the network (drop --freeze-phi)")
        if args.validation:
            train, val = data, read_dataset(args.validation)
        else:
            tr, va = holdout_split(data.n, args.seed)
            train, val = data.subset(tr), data.subset(va)
        res, table = tune(train, val, cfg, seed=args.seed)
        for row in table:
            log.info("tune %s", row)
        data = train
    else:
        res = fit(data, cfg, seed=args.seed)
    if not res.converged:
        warnings.warn(f"EM stopped at the iteration cap ({res.n_iter}) before meeting tol", RuntimeWarning)
    if args.se:
        res.covariance = covariance(data, res)
    save_fit(args.out, res)
    summary = {"beta": res.beta.tolist(), "loglik": res.loglik, "n_iter": res.n_iter, "converged": res.converged}
    if res.covariance is not None:
        summary["se"] = res.covariance.se.tolist()
    print(json.dumps(summary))
    return EXIT_OK


def _time_grid(args, data):
    if args.times:
        t = np.array([float(v) for v in args.times.split(",")])
    else:
        t_max = args.t_max if args.t_max is not None else float(np.max(data.finite_times()))
        t = np.linspace(0.0, t_max, args.n_times)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise InputError("prediction times must be finite and nonnegative")
    return t


def cmd_predict(args) -> int:
    res = load_fit(args.artifact)
    data = read_dataset(args.data)
    t = _time_grid(args, data)
    S = survival_matrix(res.params, data.X, data.W, t)
    rows = ((i, tk, S[i, k]) for i in range(data.n) for k, tk in enumerate(t))
    _write_rows(args.out, ["subject", "t", "survival"], rows)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    res = load_fit(args.artifact)
    data = read_dataset(args.data)
    t_true, phi_true, meta = read_truth(args.truth)
    if t_true.size != data.n:
        raise InputError(f"truth sidecar has {t_true.size} rows, dataset has {data.n}")
    idx = np.arange(data.n)
    if args.part != "all":
        if "split" not in meta:
            raise InputError("truth sidecar carries no split; use --part all")
        idx = np.asarray(meta["split"][args.part], dtype=int)
    sim_keys = {"n", "case", "r_true", "beta_true", "lambda_slope", "gap_mean", "study_length", "seed"}
    sim = SimConfig(**{k: v for k, v in meta.items() if k in sim_keys})
    sub = data.subset(idx)
    surv_hat = survival_callable(res.params, sub.X, sub.W)
    re = relative_error(res.params.phi(sub.W), phi_true[idx]) if res.params.net is not None else float("nan")
    surv_true = true_survival_fn(sim, sub.X, sub.W)
    report = MetricReport(
        re_phi=re,
        mse_surv=mse_survival(surv_hat, surv_true, t_true[idx], t_max=sim.study_length),
        ibs=ibs(surv_hat, sub.L, sub.R),
    )
    out = dict(report.formatted(), MSE=report.mse_surv, MSE_full=mse_survival(surv_hat, surv_true, t_true[idx]),
               loglik=loglik(res.params, sub), n=int(idx.size))
    text = json.dumps(out, sort_keys=True) + "\n"
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_replicate(args) -> int:
    profile = PROFILES[args.profile]
    replicates = args.replicates if args.replicates is not None else profile["replicates"]
    args.hidden = len(profile["hidden"]) if args.hidden is None else args.hidden
    args.width = profile["hidden"][0] if args.width is None else args.width
    d = SimConfig(case=args.case).d
    cfg = StudyConfig(case=args.case, n=args.n, r=args.r, replicates=replicates, master_seed=args.master_seed,
                      fit=_em_config(args, d), compute_se=not args.no_se, tune=args.tune, workers=args.workers)
    rows, agg = replicate_study(cfg)
    atomic_write(args.out, format_report(cfg, rows, agg))
    print(json.dumps(agg, sort_keys=True))
    if agg["n_failed"] > FAIL_FRACTION * len(rows):
        log.error("%d of %d replicates failed", agg["n_failed"], len(rows))
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_select_r(args) -> int:
    data = read_dataset(args.data)
    if args.validation:
        train, val = data, read_dataset(args.validation)
    else:
        tr, va = holdout_split(data.n, args.seed)
        train, val = data.subset(tr), data.subset(va)
    if args.grid:
        grid = [float(v) for v in args.grid.split(",")]
    else:
        grid = r_grid(args.grid_start, args.grid_stop, args.grid_step)
    if not grid or any(r < 0 for r in grid):
        raise InputError("r grid must be nonempty and nonnegative")
    cfg = _em_config(args, data.d)
    chosen, table = select_r(train, val, grid, cfg, seed=args.seed, criterion=args.criterion)
    _write_rows(args.out, ["r", "validation_loglik", "ibs", "status"],
                ([row["r"], row["validation_loglik"], row["ibs"], row["status"]] for row in table))
    print(json.dumps({"r": chosen, "criterion": args.criterion}), file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepict", description="Deep partially linear transformation models for interval-censored data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset and its truth sidecar")
    p.add_argument("--case", type=int, default=1, choices=range(1, 7))
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--slope", type=float, default=None, help="baseline hazard slope (default by case)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None, help="truth sidecar path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model to a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="artifact path (JSON)")
    _add_fit_options(p)
    p.add_argument("--tune", action="store_true", help="grid-search the network by validation loglik")
    p.add_argument("--validation", default=None, help="validation CSV for --tune (default: 20%% holdout)")
    p.add_argument("--se", action="store_true", help="profile-likelihood standard errors")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="survival curves from a fitted artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--data", required=True, help="CSV supplying the covariates")
    p.add_argument("--times", default=None, help="comma-separated times")
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--n-times", type=int, default=50)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RE, MSE and IBS against a truth sidecar")
    p.add_argument("--artifact", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--part", choices=("all", "train", "validation", "test"), default="all")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replicate", help="Monte-Carlo replicate study")
    p.add_argument("--case", type=int, default=1, choices=range(1, 7))
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--master-seed", type=int, default=2024)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-se", action="store_true")
    p.add_argument("--tune", action="store_true")
    p.add_argument("--out", required=True)
    _add_fit_options(p)
    p.set_defaults(func=cmd_replicate, hidden=None, width=None)

    p = sub.add_parser("select-r", help="choose r over a grid by validation loglik or IBS")
    p.add_argument("--data", required=True)
    p.add_argument("--validation", default=None, help="validation CSV (default: 20%% holdout)")
    p.add_argument("--grid", default=None, help="comma-separated r values")
    p.add_argument("--grid-start", type=float, default=0.0)
    p.add_argument("--grid-stop", type=float, default=5.0)
    p.add_argument("--grid-step", type=float, default=0.1)
    p.add_argument("--criterion", choices=("loglik", "ibs"), default="loglik")
    p.add_argument("--out", default="-")
    _add_fit_options(p)
    p.set_defaults(func=cmd_select_r)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="JSON file of option defaults")
    return parser


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from ``--config``; explicit flags still win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config file: {exc}") from None
    if not isinstance(values, dict):
        raise InputError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InputError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.trace:
            print("loglik trace: " + json.dumps([float(v) for v in exc.trace]), file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
