"""Replicate harness aggregation, seeding and r selection."""
import csv
import io

import numpy as np
import pytest

from deepict.em import EmConfig
from deepict.simulate import SimConfig, generate
from deepict import study
from deepict.study import (StudyConfig, aggregate, derive_seeds, format_report, r_grid, replicate_study, select_r)


@pytest.fixture(scope="module")
def small_study():
    cfg = StudyConfig(n=150, replicates=4, fit=EmConfig(net_config=None), compute_se=True, master_seed=3)
    rows, agg = replicate_study(cfg)
    return cfg, rows, agg


def test_seeds_deterministic_and_distinct():
    a, b = derive_seeds(1, 10), derive_seeds(1, 10)
    assert a == b
    assert len({s for pair in a for s in pair}) == 20


def test_aggregate_recomputed_independently(small_study):
    cfg, rows, agg = small_study
    b1 = [r["beta1"] for r in rows]
    m = sum(b1) / len(b1)
    sse = (sum((v - m) ** 2 for v in b1) / (len(b1) - 1)) ** 0.5
    assert agg["SSE1"] == pytest.approx(sse, rel=1e-12)
    assert agg["Bias1"] == pytest.approx(m - 0.5, abs=1e-14)
    assert agg["SEE1"] == pytest.approx(np.mean([r["se1"] for r in rows]), rel=1e-14)
    cover = np.mean([abs(r["beta1"] - 0.5) <= 1.96 * r["se1"] for r in rows])
    assert agg["CP95_1"] == cover


def test_report_layout(small_study):
    cfg, rows, agg = small_study
    text = format_report(cfg, rows, agg)
    assert text.startswith("# config: {")
    body = list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))
    kinds = [r["kind"] for r in body]
    assert kinds == ["replicate"] * 4 + ["Bias", "SSE", "SEE", "CP95", "mean"]
    assert float(body[5]["beta1"]) == agg["SSE1"]


def test_failed_rows_excluded():
    rows = [{"status": "ok", "beta1": 0.6, "beta2": -0.5, "se1": 0.1, "se2": 0.1, "cover1": 1.0, "cover2": 1.0,
             "RE": 0.3, "MSE": 0.01, "MSE_full": 0.02, "IBS": 0.1},
            {"status": "ok", "beta1": 0.4, "beta2": -0.4, "se1": 0.1, "se2": 0.1, "cover1": 1.0, "cover2": 1.0,
             "RE": 0.5, "MSE": 0.02, "MSE_full": 0.03, "IBS": 0.2},
            {"status": "failed: NumericalFailure"}]
    agg = aggregate(rows, (0.5, -0.5))
    assert agg["n_ok"] == 2 and agg["n_failed"] == 1
    assert agg["Bias1"] == pytest.approx(0.0, abs=1e-15)
    assert agg["RE"] == pytest.approx(0.4)


def test_replicate_needs_two():
    with pytest.raises(ValueError):
        replicate_study(StudyConfig(replicates=1))


def test_r_grid_default():
    g = r_grid()
    assert len(g) == 51 and g[0] == 0.0 and g[-1] == 5.0 and g[26] == 2.6


def test_select_r_singleton_and_ties(monkeypatch):
    ds = generate(SimConfig(n=200, seed=1))
    train, val = ds.part("train"), ds.part("validation")
    base = EmConfig(net_config=None)
    r, table = select_r(train, val, [0.0], base)
    assert r == 0.0 and len(table) == 1
    monkeypatch.setattr(study, "validation_loglik", lambda res, data: -1.0)
    r, table = select_r(train, val, [2.0, 0.5, 1.0], base)
    assert r == 0.5 and [row["r"] for row in table] == [0.5, 1.0, 2.0]


def test_select_r_marks_failures(monkeypatch):
    ds = generate(SimConfig(n=200, seed=2))
    real_fit = study.fit

    def picky(data, cfg, seed=0):
        if cfg.r == 1.0:
            raise FloatingPointError("boom")
        return real_fit(data, cfg, seed=seed)

    monkeypatch.setattr(study, "fit", picky)
    r, table = select_r(ds.part("train"), ds.part("validation"), [0.0, 1.0], EmConfig(net_config=None))
    assert r == 0.0 and table[1]["status"].startswith("failed")


def test_tune_picks_best_row():
    from deepict.dnn import NetConfig

    ds = generate(SimConfig(n=150, seed=4))
    base = EmConfig(net_config=NetConfig(widths=(4, 8, 8, 1)), max_iters=3)
    grid = {"n_hidden": (1, 2), "l1_penalty": (0.01,), "learning_rate": (1e-4,)}
    best, table = study.tune(ds.part("train"), ds.part("validation"), base, grid=grid)
    assert len(table) == 2
    top = max(table, key=lambda r: r["validation_loglik"])
    assert best.params.net.widths == (4,) + (8,) * top["n_hidden"] + (1,)


@pytest.mark.slow
def test_select_r_prefers_true_po_model():
    """Data from the PO model (r = 1): grid {0, 1} picks r = 1 in at least 60% of 20 replicates."""
    from deepict.dnn import NetConfig

    base = EmConfig(net_config=NetConfig(widths=(4, 50, 50, 1)))
    picks = []
    for k in range(20):
        ds = generate(SimConfig(n=500, case=1, r_true=1.0, seed=7000 + k))
        r, _ = select_r(ds.part("train"), ds.part("validation"), [0.0, 1.0], base, seed=k)
        picks.append(r)
    assert np.mean(np.array(picks) == 1.0) >= 0.6
