"""Acceptance criteria. Each test prints one ``PASS``/``FAIL`` line with its wall time."""

from __future__ import annotations

import json
import time as clock
from contextlib import contextmanager
from datetime import date, time
from pathlib import Path

import numpy as np
import pytest

from asatx.attribution import (
    efficiency_check,
    exact_shapley,
    linear_contributions,
    monte_carlo_shapley,
)
from asatx.cli import main
from asatx.regression import HuberModel, backtest, fit_huber, fit_ols, persistence_forecast
from asatx.report import difference_curve, fixed, render
from asatx.synth import synthetic_series
from asatx.windowing import build_feature_vector, lag_labels

from conftest import CAL, coded_series, working_days
from test_regression import make_set

PUBLISHED_FIRST_ITERATION = (
    "f3:8:15 f4:8:30 f5:8:45 f6:9:00 f7:9:15 f8:9:30 f9:9:45 f10:10:00 f11:10:15 f12:10:30 "
    "f13:10:45 f14:11:00 f15:11:15 f16:11:30 f17:11:45 f18:12:00 f19:12:15 f20:12:30 f21:12:45 "
    "f22:13:00 f23:13:15 f24:13.30 f25:13:45 f26:14:00 f27:14:15 f28:14:30 f29:14:45 f30:15:00 "
    "f31:15:15 f32:15:30 f33:15:45 f34:16:00 f35:16:15 f36:16:30 f37:16:45 f38:17:00 f2:8:00"
).split()


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def check(number: int, title: str, budget_s: float):
        start = clock.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = clock.perf_counter() - start
            within = elapsed < budget_s
            status = "PASS" if ok and within else "FAIL"
            note = "" if within else f", over {budget_s:g} s budget"
            with capsys.disabled():
                print(f"\n{status} criterion {number}: {title} ({elapsed:.2f} s{note})")
        assert within, f"criterion {number} took {elapsed:.2f} s, budget {budget_s} s"

    return check


def linear_model(rng, M, scale=1.0):
    w = rng.normal(size=M) * scale
    return HuberModel(0, float(rng.normal() * 10), w, tuple(f"x{i}" for i in range(M)),
                      np.zeros(M), np.ones(M), 1.35, 10)


def pairwise_model(rng, M):
    C = np.triu(rng.normal(size=(M, M)), 1)
    b = rng.normal(size=M)

    def f(X):
        X = np.atleast_2d(X)
        return np.einsum("ni,ij,nj->n", X, C, X) + X @ b

    return f


def test_criterion_01_window_layout(criterion):
    with criterion(1, "window layout golden test", 1.0):
        days = working_days(date(2024, 10, 7), 3)
        series = coded_series(days)
        fv0 = build_feature_vector(series, days[2], 0, CAL)
        lags0 = fv0.rendered_labels[2:]
        # published listing without day offsets; its one '13.30' is a typo for 13:30
        expected = [tok.replace("13.30", "13:30") for tok in PUBLISHED_FIRST_ITERATION]
        expected_full = [f"{t.split(':', 1)[0]}_{'1' if k == 36 else '2'}D:{t.split(':', 1)[1]}"
                         for k, t in enumerate(expected)]
        assert list(lags0) == expected_full
        assert [lab.day_offset for lab in lag_labels(0, CAL)] == [2] * 36 + [1]
        fv7 = build_feature_vector(series, days[2], 7, CAL)
        assert fv7.rendered_labels[-1] == "f9_1D:9:45"
        assert "f37_2D:16:45" in fv7.rendered_labels


def test_criterion_02_efficiency_identity(criterion):
    with criterion(2, "linear efficiency identity on 100 models", 1.0):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(100):
            m = linear_model(rng, 39, scale=0.3)
            bg = 19 + 3 * rng.normal(size=(30, 39))
            x = 19 + 3 * rng.normal(size=39)
            a = linear_contributions(m, x, bg)
            f_x = float(m.intercept + m.weights @ x)
            res = efficiency_check(a, f_x, 1e-9)
            worst = max(worst, res.residual)
            assert res.passed
        assert worst <= 1e-9


def test_criterion_03_oracle_equivalence(criterion):
    with criterion(3, "exact = linear at M=6; MC within 3 SE in >= 95% of 40 trials", 30.0):
        rng = np.random.default_rng(3)
        m = linear_model(rng, 6)
        bg = rng.normal(size=(50, 6))
        x = rng.normal(size=6)
        np.testing.assert_allclose(exact_shapley(m, x, bg).phi, linear_contributions(m, x, bg).phi, atol=1e-9)

        hits = 0
        for trial in range(40):
            r = np.random.default_rng(1000 + trial)
            f = pairwise_model(r, 6)
            bg = r.normal(size=(50, 6))
            x = r.normal(size=6)
            exact = exact_shapley(f, x, bg)
            mc = monte_carlo_shapley(f, x, bg, n_permutations=2000, seed=trial)
            hits += bool(np.all(np.abs(mc.phi - exact.phi) <= 3 * mc.std_errors))
        assert hits >= 38, f"{hits}/40 trials within 3 SE"


def test_criterion_04_mc_convergence(criterion):
    with criterion(4, "MC error at 4n <= 0.7 x error at n (n=500, 20 seeds)", 60.0):
        rng = np.random.default_rng(4)
        f = pairwise_model(rng, 6)
        bg = rng.normal(size=(50, 6))
        x = rng.normal(size=6)
        exact = exact_shapley(f, x, bg).phi
        err_n, err_4n = [], []
        for seed in range(20):
            err_n.append(np.mean(np.abs(monte_carlo_shapley(f, x, bg, 500, seed=seed).phi - exact)))
            err_4n.append(np.mean(np.abs(monte_carlo_shapley(f, x, bg, 2000, seed=100 + seed).phi - exact)))
        ratio = np.mean(err_4n) / np.mean(err_n)
        assert ratio <= 0.7, f"ratio {ratio:.3f}"


def test_criterion_05_axioms(criterion):
    with criterion(5, "symmetry, dummy and additivity (exact 1e-9, MC 3 SE)", 10.0):
        rng = np.random.default_rng(5)
        col = rng.normal(size=60)
        bg = np.column_stack([col, col, rng.normal(size=(60, 3))])
        x = np.array([0.7, 0.7, -1.0, 0.4, 2.0])

        def sym(X):
            # symmetric in features 0 and 1, ignores feature 4
            return X[:, 0] * X[:, 1] + X[:, 0] + X[:, 1] + X[:, 2] * X[:, 3]

        ex = exact_shapley(sym, x, bg)
        mc = monte_carlo_shapley(sym, x, bg, 3000, seed=5)
        assert abs(ex.phi[0] - ex.phi[1]) <= 1e-9
        assert abs(mc.phi[0] - mc.phi[1]) <= 3 * np.hypot(mc.std_errors[0], mc.std_errors[1])
        assert abs(ex.phi[4]) <= 1e-9
        assert abs(mc.phi[4]) <= 3 * mc.std_errors[4]

        g, h = pairwise_model(rng, 5), pairwise_model(rng, 5)
        bg2, x2 = rng.normal(size=(40, 5)), rng.normal(size=5)
        total = exact_shapley(lambda X: g(X) + h(X), x2, bg2).phi
        parts = exact_shapley(g, x2, bg2).phi + exact_shapley(h, x2, bg2).phi
        np.testing.assert_allclose(total, parts, atol=1e-9)
        mc_total = monte_carlo_shapley(lambda X: g(X) + h(X), x2, bg2, 3000, seed=6)
        assert np.all(np.abs(mc_total.phi - parts) <= 3 * mc_total.std_errors)


def test_criterion_06_huber_robustness(criterion):
    with criterion(6, "Huber beats OLS under outliers in >= 18/20 seeds; delta=1e9 equals OLS", 5.0):
        wins = 0
        for seed in range(20):
            r = np.random.default_rng(600 + seed)
            x = r.uniform(-5, 5, 200)
            y = 2 * x + 1 + r.normal(scale=0.5, size=200)
            y[r.choice(200, 20, replace=False)] += 50
            m = fit_huber(make_set(x[:, None], y))
            _, w_ols = fit_ols(x[:, None], y)
            wins += abs(m.weights[0] - 2) < abs(w_ols[0] - 2)
        assert wins >= 18, f"{wins}/20"

        r = np.random.default_rng(61)
        x = r.uniform(-5, 5, 200)
        y = 2 * x + 1 + r.normal(scale=0.5, size=200)
        m = fit_huber(make_set(x[:, None], y), delta=1e9)
        b0, w = fit_ols(x[:, None], y)
        assert abs(m.intercept - b0) <= 1e-6 and abs(m.weights[0] - w[0]) <= 1e-6


def test_criterion_07_difference_curve(criterion):
    with criterion(7, "max difference 2.1 at 14:45", 1.0):
        true = np.full(37, 19.0)
        forecast = np.full(37, 19.0) + np.linspace(-0.4, 0.4, 37)
        k = CAL.slot_of(time(14, 45))
        true[k], forecast[k] = 20.1, 18.00
        stamps = [f"{t.hour}:{t.minute:02d}" for t in CAL.slot_times()]
        c = difference_curve(true, forecast, stamps)
        assert c.timestamps[c.argmax_slot] == "14:45"
        assert fixed(c.max_abs) == "2.100000"
        assert abs(c.max_abs - 2.1) <= 1e-12
        assert render(c, "csv").decode().splitlines()[-1] == "argmax,14:45,20.100000,18.000000,2.100000"


def pipeline(out: Path, *explain_args) -> None:
    assert main(["synth", "--out", str(out), "--days", "42", "--seed", "8"]) == 0
    assert main(["ingest", "--out", str(out), "--data", str(out / "raw.csv")]) == 0
    assert main(["train", "--out", str(out)]) == 0
    assert main(["explain", "--out", str(out), *explain_args]) == 0


def test_criterion_08_bundle_shape(criterion, tmp_path):
    with criterion(8, "explain bundle: 37 slices, 37-row top-2 table, 37x39 binary matrix", 30.0):
        pipeline(tmp_path)
        lines = (tmp_path / "series.csv").read_text().splitlines()
        assert (len(lines) - 1) // 37 == 30
        assert len(list((tmp_path / "slices").glob("slice_*.json"))) == 37
        table = (tmp_path / "top2_table.csv").read_text().splitlines()
        assert len(table) == 1 + 37
        matrix = [list(map(int, row.split(","))) for row in (tmp_path / "binary_matrix.csv").read_text().splitlines()]
        assert len(matrix) == 37 and all(len(r) == 39 and sum(r) == 2 for r in matrix)
        for path in (tmp_path / "slices").glob("slice_*.json"):
            doc = json.loads(path.read_text())
            assert abs(float(doc["contributions"][-1]["cumulative"]) - float(doc["prediction"])) <= 1e-6
        attrs = json.loads((tmp_path / "attributions.json").read_text())["slots"]
        assert len(attrs) == 37 and max(s["efficiency_residual"] for s in attrs) <= 1e-9


def test_criterion_09_determinism(criterion, tmp_path, monkeypatch):
    with criterion(9, "two full pipeline runs give byte-identical output directories", 60.0):
        trees = []
        for name in ("a", "b"):
            run_dir = tmp_path / name
            run_dir.mkdir()
            monkeypatch.chdir(run_dir)
            pipeline(Path("out"), "--method", "shapley_mc", "--n-permutations", "300", "--threads", "2",
                      "--seed", "17")
            root = run_dir / "out"
            trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
        assert trees[0].keys() == trees[1].keys() and len(trees[0]) > 80
        assert trees[0] == trees[1]


def test_criterion_10_forecast_sanity(criterion):
    with criterion(10, "per-slot walk-forward MAE beats persistence on >= 30/37 slots", 60.0):
        series = synthetic_series(560, seed=10)
        eval_days = series.days[-120:]
        res = backtest(series, eval_days, CAL, refit_every=30)
        ours = res.per_slot_mae()
        base = np.mean([np.abs(series.asat[series.index_of(d)] - persistence_forecast(series, d))
                        for d in eval_days], axis=0)
        wins = int(np.sum(ours < base))
        assert wins >= 30, f"{wins}/37 slots"
