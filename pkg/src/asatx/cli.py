"""Command-line pipeline: synth -> ingest -> train -> forecast/explain -> report.

Exit codes: 0 success, 1 configuration or other error, 2 ingest error,
3 insufficient training history, 4 missing preceding days for a forecast.
Every failure prints an ``error_code=<CODE> key=value ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attribution import Attribution, linear_contributions, monte_carlo_shapley, reduced_exact_shapley
from .config import RunConfig, load_config
from .errors import AsatError, ConfigError, IngestError, InsufficientHistory, MissingDay
from .ingest import RegularSeries, filter_operational, format_clock, parse_csv, read_series_csv, regularize, series_to_csv
from .regression import HuberModel, fit_models, forecast_day, model_for_slot
from .report import (
    binary_top_matrix,
    coefficient_distribution,
    difference_curve,
    make_slice,
    render,
    top_k_table,
)
from .synth import synthetic_observations, to_csv
from .windowing import build_training_set

log = logging.getLogger("asatx")

SERIES_FILE = "series.csv"
MODEL_DIR = "models"
MANIFEST = "manifest.json"
SLICE_DIR = "slices"
ATTRIBUTIONS = "attributions.json"


class CliError(Exception):
    def __init__(self, exc: AsatError, exit_code: int):
        self.exc = exc
        self.exit_code = exit_code


def _write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data.encode("utf-8") if isinstance(data, str) else data)


def _hhmm(t) -> str:
    return f"{t.hour:02d}{t.minute:02d}"


def _error_line(exc: AsatError) -> str:
    fields = [f"error_code={exc.code}"]
    for key in ("row", "column", "name", "day", "slot", "length", "ts", "needed", "have"):
        if hasattr(exc, key):
            v = getattr(exc, key)
            fields.append(f"{key}={v.isoformat() if hasattr(v, 'isoformat') else v}")
    return " ".join(fields)


def _json_dump(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


# -- subcommands -------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out: Path, days: int, start: date) -> Path:
    path = out / "raw.csv"
    _write(path, to_csv(synthetic_observations(days, start, cfg.seed)))
    log.info("wrote %s (%d calendar days)", path, days)
    return path


def cmd_ingest(cfg: RunConfig, out: Path) -> Path:
    if not cfg.data_path:
        raise ConfigError("no input data: set data.path or pass --data")
    obs = parse_csv(cfg.data_path, cfg.schema)
    series = regularize(filter_operational(obs, cfg.calendar), cfg.calendar, cfg.max_fill)
    path = out / SERIES_FILE
    _write(path, series_to_csv(series))
    n_imp = int(series.imputed.sum())
    log.info("wrote %s: %d operational days, %d imputed slots", path, len(series), n_imp)
    return path


def _load_series(cfg: RunConfig, out: Path, series_path: str | None) -> RegularSeries:
    return read_series_csv(series_path or out / SERIES_FILE, cfg.calendar)


def _training_window(cfg: RunConfig, series: RegularSeries) -> RegularSeries:
    if cfg.train_until is not None:
        series = series.before(cfg.train_until)
    if cfg.history_days is not None:
        series = series.last_days(cfg.history_days)
    return series


def cmd_train(cfg: RunConfig, out: Path, series_path: str | None = None) -> list[HuberModel]:
    series = _load_series(cfg, out, series_path)
    window = _training_window(cfg, series)
    models = fit_models(window, cfg.calendar, cfg.mode, cfg.huber_delta, cfg.huber_max_iter, cfg.huber_tol,
                        threads=cfg.threads)
    mdir = out / MODEL_DIR
    names = []
    for m in models:
        name = "model_pooled.json" if m.pooled else f"model_{_hhmm(cfg.calendar.slot_time(m.slot))}.json"
        _write(mdir / name, m.to_json())
        names.append(name)
    _write(mdir / MANIFEST, _json_dump({
        "mode": cfg.mode,
        "files": names,
        "train_until": None if cfg.train_until is None else cfg.train_until.isoformat(),
        "history_days": cfg.history_days,
        "first_day": window.days[0].isoformat(),
        "last_day": window.days[-1].isoformat(),
    }))
    dist = coefficient_distribution(models)
    _write(out / "coef_dist.csv", render(dist, "csv"))
    for fmt in ("json", "svg"):
        if fmt in cfg.formats:
            _write(out / f"coef_dist.{fmt}", render(dist, fmt))
    log.info("trained %d model(s) on %d days", len(models), len(window))
    return models


def _load_models(out: Path) -> tuple[list[HuberModel], dict]:
    mdir = out / MODEL_DIR
    manifest = json.loads((mdir / MANIFEST).read_text())
    return [HuberModel.from_json((mdir / name).read_text()) for name in manifest["files"]], manifest


def _target_day(series: RegularSeries, day: date | None) -> date:
    return day if day is not None else series.days[-1]


def cmd_forecast(cfg: RunConfig, out: Path, day: date | None, series_path: str | None = None) -> np.ndarray:
    series = _load_series(cfg, out, series_path)
    models, _ = _load_models(out)
    day = _target_day(series, day)
    fc = forecast_day(models, series, day, cfg.calendar)
    r = series.index_of(day)
    rows = ["slot,timestamp,forecast" + (",true" if r is not None else "")]
    for s, v in enumerate(fc.predicted):
        line = f"{s},{format_clock(cfg.calendar.slot_time(s))},{v:.6f}"
        if r is not None:
            line += f",{series.asat[r, s]:.6f}"
        rows.append(line)
    _write(out / "forecast.csv", "\n".join(rows) + "\n")
    return fc.predicted


def _slot_seed(seed: int, slot: int) -> int:
    return int(np.random.SeedSequence([seed, slot]).generate_state(1, np.uint64)[0])


def _explain_point(cfg: RunConfig, model: HuberModel, fv, bg: np.ndarray, slot: int) -> Attribution:
    if cfg.method == "linear":
        return linear_contributions(model, fv, bg)
    if cfg.method == "shapley_mc":
        return monte_carlo_shapley(model, fv, bg, cfg.n_permutations, _slot_seed(cfg.seed, slot), cfg.threads)
    return reduced_exact_shapley(model, fv, bg, cfg.feature_cap)


def write_bundle(cfg: RunConfig, out: Path, day: date, attrs: Sequence[Attribution], predicted: Sequence[float],
                 truth: Sequence[float] | None) -> dict:
    """Render slices, top-k table, binary matrix and (with truth) the difference curve."""
    cal = cfg.calendar
    slices = []
    residuals = []
    for s, (attr, pred) in enumerate(zip(attrs, predicted)):
        sl = make_slice(attr, pred, cal.slot_time(s))
        slices.append(sl)
        residuals.append(sl.residual)
        log.info("slice %s: efficiency residual %.3e (tol %.1e)", sl.timestamp_label, sl.residual, attr.tolerance())
        for fmt in cfg.formats:
            _write(out / SLICE_DIR / f"slice_{_hhmm(sl.forecast_timestamp)}.{fmt}", render(sl, fmt))
    table = top_k_table(slices, cfg.k)
    _write(out / f"top{cfg.k}_table.csv", render(table, "csv"))
    matrix = binary_top_matrix(slices)
    _write(out / "binary_matrix.csv", render(matrix, "csv"))
    if "svg" in cfg.formats:
        _write(out / "binary_matrix.svg", render(matrix, "svg"))
    summary = {"day": day.isoformat(), "n_slices": len(slices), "max_efficiency_residual": max(residuals)}
    if truth is not None:
        labels = [format_clock(cal.slot_time(s)) for s in range(len(truth))]
        curve = difference_curve(truth, predicted, labels)
        _write(out / "diff_curve.csv", render(curve, "csv"))
        for fmt in ("json", "svg"):
            if fmt in cfg.formats:
                _write(out / f"diff_curve.{fmt}", render(curve, fmt))
        summary.update(argmax_timestamp=labels[curve.argmax_slot], max_abs_diff=curve.max_abs)
    return summary


def cmd_explain(cfg: RunConfig, out: Path, day: date | None, series_path: str | None = None) -> dict:
    series = _load_series(cfg, out, series_path)
    models, manifest = _load_models(out)
    day = _target_day(series, day)
    fc = forecast_day(models, series, day, cfg.calendar)
    window = series
    if manifest.get("train_until"):
        window = window.before(date.fromisoformat(manifest["train_until"]))
    if manifest.get("history_days"):
        window = window.last_days(manifest["history_days"])
    attrs = []
    for s, fv in enumerate(fc.vectors):
        bg = build_training_set(window, s, cfg.calendar).X
        attrs.append(_explain_point(cfg, model_for_slot(models, s), fv, bg, s))
    r = series.index_of(day)
    truth = series.asat[r].tolist() if r is not None else None
    _write(out / ATTRIBUTIONS, _json_dump({
        "day": day.isoformat(),
        "truth": truth,
        "slots": [{"timestamp": format_clock(cfg.calendar.slot_time(s)), **a.to_dict()} for s, a in enumerate(attrs)],
    }))
    summary = write_bundle(cfg, out, day, attrs, fc.predicted.tolist(), truth)
    summary.update(method=cfg.method, seed=cfg.seed, threads=cfg.threads, n_permutations=cfg.n_permutations
                   if cfg.method == "shapley_mc" else None, mode=manifest.get("mode"))
    _write(out / "run_metadata.json", _json_dump({"version": __version__, "config": cfg.as_flat(), **summary}))
    return summary


def cmd_report(cfg: RunConfig, out: Path) -> dict:
    doc = json.loads((out / ATTRIBUTIONS).read_text())
    attrs = [Attribution.from_dict(s) for s in doc["slots"]]
    return write_bundle(cfg, out, date.fromisoformat(doc["day"]), attrs, [a.prediction for a in attrs],
                        doc.get("truth"))


# -- argument handling -------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides attribution.seed)")
    common.add_argument("--threads", type=int, help="worker cap (overrides threads)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="asatx", description="ASAT control-curve forecasting with Shapley explanations")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic raw sensor CSV")
    s.add_argument("--days", type=int, default=42, help="calendar days to generate")
    s.add_argument("--start", type=date.fromisoformat, default=date(2024, 9, 2))

    s = sub.add_parser("ingest", parents=[common], help="parse, filter and regularize raw CSV")
    s.add_argument("--data", help="raw CSV path (overrides data.path)")
    s.add_argument("--schema", help="ts=<col>,asat=<col>,at=<col>,rt=<col>")
    s.add_argument("--max-fill", type=int)

    for name, text in (("train", "fit per-slot (or pooled) Huber models"),
                       ("forecast", "forecast one day"),
                       ("explain", "forecast one day and explain every slot"),
                       ("report", "re-render the report bundle from saved attributions")):
        s = sub.add_parser(name, parents=[common], help=text)
        if name != "report":
            s.add_argument("--series", help=f"regularized series CSV (default <out>/{SERIES_FILE})")
        if name == "train":
            s.add_argument("--until", type=date.fromisoformat, help="train on days strictly before this date")
            s.add_argument("--pooled", action="store_true", help="fit one shared model for all slots")
        if name in ("forecast", "explain"):
            s.add_argument("--day", type=date.fromisoformat, help="target day (default: last day in series)")
        if name == "explain":
            s.add_argument("--method", choices=("linear", "shapley_exact", "shapley_mc"))
            s.add_argument("--n-permutations", type=int)
            s.add_argument("--feature-cap", type=int)
    return p


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    flag_keys = {
        "out": "output.dir", "seed": "attribution.seed", "threads": "threads", "data": "data.path",
        "schema": "data.schema", "max_fill": "ingest.max_fill", "until": "train.until",
        "method": "attribution.method", "n_permutations": "attribution.n_permutations",
        "feature_cap": "attribution.feature_cap",
    }
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v.isoformat() if isinstance(v, date) else str(v)
    if getattr(args, "pooled", False):
        overrides["mode"] = "pooled"
    return load_config(args.config, overrides)


def _run(args) -> object:
    cfg = _config_from_args(args)
    out = Path(cfg.out_dir)
    if args.command == "synth":
        return cmd_synth(cfg, out, args.days, args.start)
    if args.command == "ingest":
        try:
            return cmd_ingest(cfg, out)
        except IngestError as exc:
            raise CliError(exc, 2) from exc
    if args.command == "train":
        try:
            return cmd_train(cfg, out, args.series)
        except InsufficientHistory as exc:
            raise CliError(exc, 3) from exc
    if args.command in ("forecast", "explain"):
        fn = cmd_forecast if args.command == "forecast" else cmd_explain
        try:
            return fn(cfg, out, args.day, args.series)
        except MissingDay as exc:
            raise CliError(exc, 4) from exc
    return cmd_report(cfg, out)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _run(args)
    except CliError as err:
        print(_error_line(err.exc), file=sys.stderr)
        print(f"error: {err.exc}", file=sys.stderr)
        return err.exit_code
    except AsatError as exc:
        print(_error_line(exc), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error_code=FILE_NOT_FOUND path={exc.filename}", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
