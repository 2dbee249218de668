"""Monte-Carlo replicate studies, r-grid selection and network tuning."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .dataio import config_to_dict
from .dnn import NetConfig
from .em import EmConfig, FitResult, NumericalFailure, fit
from .inference import covariance
from .likelihood import Design, IntervalData, subject_loglik, survival_callable
from .metrics import ibs, mse_survival, relative_error
from .simulate import SimConfig, generate, true_survival_fn

log = logging.getLogger(__name__)

PROFILES = {
    "desk": {"replicates": 50, "hidden": (50, 50)},
    "paper": {"replicates": 200, "hidden": (50, 50)},
}

TUNE_GRID = {"n_hidden": (2, 3), "l1_penalty": (0.01, 0.05), "learning_rate": (1e-4, 3e-4)}


def derive_seeds(master: int, count: int) -> list:
    """Independent ``(data_seed, fit_seed)`` pairs from one master seed."""
    children = np.random.SeedSequence(master).spawn(count)
    return [tuple(int(v) for v in c.generate_state(2)) for c in children]


def validation_loglik(result: FitResult, data: IntervalData) -> float:
    terms, _ = subject_loglik(result.params, data, Design(data, result.params.basis))
    return float(np.sum(terms))


def holdout_split(n: int, seed: int, frac: float = 0.2):
    """Deterministic ``(train_idx, holdout_idx)`` partition."""
    perm = np.random.default_rng(seed).permutation(n)
    k = max(1, int(round(frac * n)))
    return np.sort(perm[k:]), np.sort(perm[:k])


def tune(train: IntervalData, validation: IntervalData, base: EmConfig, seed: int = 0, grid: Optional[dict] = None):
    """Grid search over layers, L1 penalty and learning rate by validation log-likelihood.

    Returns ``(best_fit, table)``; ``table`` lists every trial.
    """
    grid = TUNE_GRID if grid is None else grid
    if base.net_config is None:
        raise ValueError("tuning needs a network configuration")
    width = base.net_config.widths[1]
    table = []
    best, best_ll = None, -np.inf
    for n_hidden, l1, lr in itertools.product(grid["n_hidden"], grid["l1_penalty"], grid["learning_rate"]):
        widths = (train.d,) + (width,) * n_hidden + (1,)
        cfg = replace(base, net_config=replace(base.net_config, widths=widths, l1_penalty=l1, learning_rate=lr))
        row = {"n_hidden": n_hidden, "l1_penalty": l1, "learning_rate": lr}
        try:
            res = fit(train, cfg, seed=seed)
            row["validation_loglik"] = validation_loglik(res, validation)
        except (NumericalFailure, FloatingPointError) as exc:
            log.warning("tuning trial %s failed: %s", row, exc)
            row["validation_loglik"] = float("nan")
            res = None
        table.append(row)
        if res is not None and row["validation_loglik"] > best_ll:
            best, best_ll = res, row["validation_loglik"]
    if best is None:
        raise NumericalFailure("every tuning trial failed")
    return best, table


# -- replicate studies -----------------------------------------------------

@dataclass
class StudyConfig:
    case: int = 1
    n: int = 500
    r: float = 0.0
    replicates: int = 50
    master_seed: int = 2024
    fit: EmConfig = field(default_factory=EmConfig)
    compute_se: bool = True
    tune: bool = False
    workers: int = 1

    def echo(self) -> dict:
        d = asdict(self)
        d["fit"] = config_to_dict(self.fit)
        d.pop("workers")
        return d


def run_replicate(cfg: StudyConfig, index: int, data_seed: int, fit_seed: int) -> dict:
    """Simulate, fit on the training split, and score one replicate."""
    sim = SimConfig(n=cfg.n, case=cfg.case, r_true=cfg.r, seed=data_seed)
    row = {"replicate": index, "data_seed": data_seed, "fit_seed": fit_seed, "status": "ok"}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ds = generate(sim)
            train = ds.part("train")
            if cfg.tune:
                res, _ = tune(train, ds.part("validation"), cfg.fit, seed=fit_seed)
            else:
                res = fit(train, cfg.fit, seed=fit_seed)
            beta = res.params.beta
            se = np.full(beta.size, np.nan)
            if cfg.compute_se:
                se = covariance(train, res).se
            test = ds.split["test"]
            X, W = ds.data.X[test], ds.data.W[test]
            phi_hat = res.params.phi(W)
            surv_hat = survival_callable(res.params, X, W)
            surv_true = true_survival_fn(sim, X, W)
            row["RE"] = relative_error(phi_hat, ds.phi_true[test]) if res.params.net is not None else float("nan")
            # the baseline hazard is unidentified past the study end; MSE_full ignores that
            row["MSE"] = mse_survival(surv_hat, surv_true, ds.t_true[test], t_max=sim.study_length)
            row["MSE_full"] = mse_survival(surv_hat, surv_true, ds.t_true[test])
            row["IBS"] = ibs(surv_hat, ds.data.L[test], ds.data.R[test])
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        row["status"] = f"failed: {type(exc).__name__}"
        return row
    for j, (b, s, b0) in enumerate(zip(beta, se, sim.beta_true), start=1):
        row[f"beta{j}"] = float(b)
        row[f"se{j}"] = float(s)
        row[f"cover{j}"] = float(abs(b - b0) <= 1.96 * s) if np.isfinite(s) else float("nan")
    row["n_iter"] = res.n_iter
    row["converged"] = int(res.converged)
    row["loglik"] = res.loglik
    return row


def _run_replicate_star(args):
    return run_replicate(*args)


def aggregate(rows: list, beta_true) -> dict:
    """Bias, SSE, SEE and CP95 per coefficient plus mean RE / MSE over successful replicates."""
    ok = [r for r in rows if r["status"] == "ok"]
    agg = {"n_ok": len(ok), "n_failed": len(rows) - len(ok)}
    for j, b0 in enumerate(beta_true, start=1):
        est = np.array([r[f"beta{j}"] for r in ok])
        se = np.array([r[f"se{j}"] for r in ok])
        cov = np.array([r[f"cover{j}"] for r in ok])
        agg[f"Bias{j}"] = float(est.mean() - b0) if est.size else float("nan")
        agg[f"SSE{j}"] = float(est.std(ddof=1)) if est.size > 1 else float("nan")
        agg[f"SEE{j}"] = float(np.mean(se)) if se.size else float("nan")
        agg[f"CP95_{j}"] = float(np.mean(cov)) if cov.size else float("nan")
    for key in ("RE", "MSE", "MSE_full", "IBS"):
        vals = np.array([r[key] for r in ok], dtype=float)
        agg[key] = float(np.mean(vals)) if vals.size else float("nan")
    return agg


def replicate_study(cfg: StudyConfig):
    """Run all replicates (in a process pool when ``workers > 1``).

    Returns ``(rows, aggregate)`` with rows ordered by replicate index.
    """
    if cfg.replicates < 2:
        raise ValueError("a replicate study needs at least 2 replicates")
    seeds = derive_seeds(cfg.master_seed, cfg.replicates)
    jobs = [(cfg, i, ds, fs) for i, (ds, fs) in enumerate(seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_single_thread) as pool:
            rows = list(pool.map(_run_replicate_star, jobs))
    else:
        rows = [_run_replicate_star(j) for j in jobs]
    beta_true = SimConfig(case=cfg.case).beta_true
    return rows, aggregate(rows, beta_true)


def _single_thread():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


REPORT_COLUMNS = ["kind", "replicate", "data_seed", "fit_seed", "status", "beta1", "beta2", "se1", "se2",
                  "cover1", "cover2", "RE", "MSE", "MSEx100", "MSE_full", "IBS", "n_iter", "converged", "loglik"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_report(cfg: StudyConfig, rows: list, agg: dict) -> str:
    """Report CSV: a config-echo comment, one row per replicate, then
    Bias/SSE/SEE/CP95 rows (coefficient columns) and a mean row for RE/MSE/IBS."""
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        r = dict(r, kind="replicate")
        if "MSE" in r:
            r["MSEx100"] = 100.0 * r["MSE"]
        w.writerow([_cell(r.get(c)) for c in REPORT_COLUMNS])
    for stat, prefix in (("Bias", "Bias"), ("SSE", "SSE"), ("SEE", "SEE"), ("CP95", "CP95_")):
        r = {"kind": stat, "beta1": agg.get(f"{prefix}1"), "beta2": agg.get(f"{prefix}2")}
        w.writerow([_cell(r.get(c)) for c in REPORT_COLUMNS])
    r = {"kind": "mean", "RE": agg["RE"], "MSE": agg["MSE"], "MSEx100": 100.0 * agg["MSE"], "MSE_full": agg["MSE_full"],
         "IBS": agg["IBS"],
         "status": f"{agg['n_ok']} ok / {agg['n_failed']} failed"}
    w.writerow([_cell(r.get(c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


# -- transformation selection ----------------------------------------------

def r_grid(start: float = 0.0, stop: float = 5.0, step: float = 0.1) -> list:
    k = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(k + 1)]


def select_r(train: IntervalData, validation: IntervalData, grid, base: EmConfig, seed: int = 0,
             criterion: str = "loglik"):
    """Fit every ``r`` in ``grid`` and pick the best on the validation data.

    ``criterion`` is ``"loglik"`` (maximize) or ``"ibs"`` (minimize);
    ties go to the smaller ``r``.  Returns ``(chosen_r, table)``.
    """
    if criterion not in ("loglik", "ibs"):
        raise ValueError("criterion must be 'loglik' or 'ibs'")
    table = []
    for r in sorted(grid):
        row = {"r": float(r), "validation_loglik": float("nan"), "ibs": float("nan"), "status": "ok"}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = fit(train, replace(base, r=float(r)), seed=seed)
                row["validation_loglik"] = validation_loglik(res, validation)
                surv = survival_callable(res.params, validation.X, validation.W)
                row["ibs"] = ibs(surv, validation.L, validation.R)
        except (NumericalFailure, FloatingPointError, ValueError) as exc:
            row["status"] = f"failed: {type(exc).__name__}"
        table.append(row)
    ok = [row for row in table if row["status"] == "ok"]
    if not ok:
        raise NumericalFailure("every grid point failed")
    if criterion == "loglik":
        best = max(ok, key=lambda row: (row["validation_loglik"], -row["r"]))
    else:
        best = min(ok, key=lambda row: (row["ibs"], row["r"]))
    return best["r"], table


def default_fit_config(r: float = 0.0, n_hidden: int = 2, width: int = 50, d: int = 4, freeze_phi: bool = False,
                       **net_overrides) -> EmConfig:
    net = None if freeze_phi else NetConfig(widths=(d,) + (width,) * n_hidden + (1,), **net_overrides)
    return EmConfig(r=r, net_config=net)
