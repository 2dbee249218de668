"""Dataset CSV, truth sidecar, and fit-artifact serialization.

Dataset columns are ``L,R,censor,x1..xp,w1..wd`` with ``censor`` in
``{left, interval, right}`` and ``R = inf`` for right-censored rows.
Floats are written with ``repr`` so values survive a round trip exactly.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dnn import NetConfig, NeuralNet
from .em import EmConfig, FitResult
from .inference import CovarianceResult
from .likelihood import Censor, IntervalData, ModelParams
from .splines import SplineBasis
from .transform import TransformationFamily

ARTIFACT_VERSION = 1


class InputError(ValueError):
    """Malformed input file; ``row`` is 1-based counting the header."""

    def __init__(self, msg, row=None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


def _fmt(v) -> str:
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(data: IntervalData) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", "R", "censor"] + [f"x{j + 1}" for j in range(data.p)] + [f"w{j + 1}" for j in range(data.d)])
    names = {c.value: c.name.lower() for c in Censor}
    for i in range(data.n):
        w.writerow([_fmt(data.L[i]), _fmt(data.R[i]), names[int(data.censor[i])]]
                   + [_fmt(v) for v in data.X[i]] + [_fmt(v) for v in data.W[i]])
    return buf.getvalue()


def write_dataset(path, data: IntervalData) -> None:
    atomic_write(path, dataset_to_csv(data))


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_dataset(path) -> IntervalData:
    with open(path, newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("empty dataset file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["L", "R", "censor"]:
            raise InputError("header must start with L,R,censor", 1)
        xcols = [j for j, h in enumerate(header) if h.startswith("x")]
        wcols = [j for j, h in enumerate(header) if h.startswith("w")]
        if not xcols or not wcols:
            raise InputError("header needs x1.. and w1.. columns", 1)
        L, R, cen, X, W = [], [], [], [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"expected {len(header)} fields, got {len(row)}", rowno)
            try:
                l, r = float(row[0]), float(row[1])
                c = int(Censor.parse(row[2]))
                x = [float(row[j]) for j in xcols]
                w = [float(row[j]) for j in wcols]
                IntervalData([l], [r], [c], [x], [w])
            except ValueError as exc:
                raise InputError(str(exc), rowno) from None
            L.append(l)
            R.append(r)
            cen.append(c)
            X.append(x)
            W.append(w)
    if not L:
        raise InputError("dataset has no rows")
    return IntervalData(L, R, cen, np.array(X), np.array(W))


def write_truth(path, t_true, phi_true, meta: dict) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_true", "phi_true"])
    for t, p in zip(t_true, phi_true):
        w.writerow([_fmt(t), _fmt(p)])
    atomic_write(path, buf.getvalue())


def read_truth(path):
    """Returns ``(t_true, phi_true, meta)``."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            try:
                meta.update(json.loads(line[1:]))
            except json.JSONDecodeError:
                pass
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if [h.strip() for h in header] != ["t_true", "phi_true"]:
        raise InputError("truth sidecar header must be t_true,phi_true")
    rows = [(float(a), float(b)) for a, b in reader if a]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1], meta


# -- fit artifact ----------------------------------------------------------

def config_to_dict(config: EmConfig) -> dict:
    d = asdict(config)
    if config.net_config is not None:
        d["net_config"]["widths"] = list(config.net_config.widths)
    return d


def config_from_dict(d: dict) -> EmConfig:
    d = dict(d)
    net = d.pop("net_config", None)
    return EmConfig(net_config=None if net is None else NetConfig(**net), **d)


def fit_to_dict(fit: FitResult) -> dict:
    p = fit.params
    cov = fit.covariance
    return {
        "format": "deepict-fit",
        "version": ARTIFACT_VERSION,
        "r": p.fam.r,
        "beta": p.beta.tolist(),
        "gamma": p.gamma.tolist(),
        "basis": {"degree": p.basis.degree, "boundary": list(p.basis.boundary), "interior_knots": list(p.basis.interior_knots)},
        "net": None if p.net is None else {"widths": list(p.net.widths), "params": p.net.to_flat().tolist()},
        "loglik_trace": list(map(float, fit.loglik_trace)),
        "converged": bool(fit.converged),
        "n_iter": int(fit.n_iter),
        "floored_terms": int(fit.floored_terms),
        "degenerate_terms": int(fit.degenerate_terms),
        "sgd_rejections": int(fit.sgd_rejections),
        "covariance": None if cov is None else {"cov": np.asarray(cov.cov).tolist(), "se": np.asarray(cov.se).tolist(),
                                                 "info": np.asarray(cov.info_hat).tolist(), "h": float(cov.h_used)},
        "config": None if fit.config is None else config_to_dict(fit.config),
        "seed": fit.seed,
    }


def fit_from_dict(d: dict) -> FitResult:
    if d.get("format") != "deepict-fit":
        raise InputError("not a fit artifact")
    if d.get("version") != ARTIFACT_VERSION:
        raise InputError(f"unsupported artifact version {d.get('version')!r}")
    b = d["basis"]
    basis = SplineBasis(b["degree"], tuple(b["boundary"]), tuple(b["interior_knots"]))
    net = None if d["net"] is None else NeuralNet.from_flat(d["net"]["widths"], d["net"]["params"])
    params = ModelParams(np.array(d["beta"]), np.array(d["gamma"]), net, basis, TransformationFamily(d["r"]))
    cov = None
    if d.get("covariance") is not None:
        c = d["covariance"]
        cov = CovarianceResult(np.array(c["info"]), np.array(c["cov"]), np.array(c["se"]), c["h"])
    return FitResult(
        params=params,
        loglik_trace=list(d["loglik_trace"]),
        converged=d["converged"],
        n_iter=d["n_iter"],
        floored_terms=d["floored_terms"],
        degenerate_terms=d["degenerate_terms"],
        sgd_rejections=d.get("sgd_rejections", 0),
        seed=d.get("seed"),
        config=None if d.get("config") is None else config_from_dict(d["config"]),
        covariance=cov,
    )


def save_fit(path, fit: FitResult) -> None:
    atomic_write(path, json.dumps(fit_to_dict(fit), indent=1) + "\n")


def load_fit(path) -> FitResult:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"artifact is not valid JSON: {exc}") from None
    return fit_from_dict(d)
