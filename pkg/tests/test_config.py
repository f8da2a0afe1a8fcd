from __future__ import annotations

from datetime import date, time, timedelta

import pytest

from asatx.config import RunConfig, build_config, load_config, parse_config_text
from asatx.errors import ConfigError


def test_defaults():
    cfg = build_config({})
    assert cfg.method == "linear" and cfg.mode == "per_slot"
    assert cfg.huber_delta == 1.35 and cfg.n_permutations == 2000
    assert cfg.calendar.slots_per_day == 37


def test_parse_text_with_comments():
    text = "# run\nhuber.delta = 2.0  # wider\n\nattribution.method=shapley_mc\n"
    assert parse_config_text(text) == {"huber.delta": "2.0", "attribution.method": "shapley_mc"}


def test_bad_line():
    with pytest.raises(ConfigError):
        parse_config_text("huber.delta 2.0")


def test_all_keys(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("\n".join([
        "data.path = raw.csv",
        "data.schema = ts=time,asat=sat,at=oat,rt=rat",
        "calendar.day_start = 7:00",
        "calendar.day_end = 18:00",
        "calendar.resolution = 30",
        "calendar.working_days = mon,tue,wed,thu,fri,sat",
        "ingest.max_fill = 1",
        "huber.delta = 1.5",
        "huber.max_iter = 50",
        "huber.tol = 1e-6",
        "train.history_days = 60",
        "train.until = 2024-10-10",
        "attribution.method = shapley_exact",
        "attribution.feature_cap = 12",
        "attribution.n_permutations = 100",
        "attribution.seed = 7",
        "report.formats = csv,json",
        "report.k = 3",
        "mode = pooled",
        "output.dir = build",
        "threads = 4",
    ]))
    cfg = load_config(p)
    assert cfg.schema["ts"] == "time"
    assert cfg.calendar.day_start == time(7, 0) and cfg.calendar.resolution == timedelta(minutes=30)
    assert cfg.calendar.slots_per_day == 23 and 5 in cfg.calendar.working_days
    assert (cfg.max_fill, cfg.huber_max_iter, cfg.history_days) == (1, 50, 60)
    assert cfg.train_until == date(2024, 10, 10)
    assert (cfg.method, cfg.feature_cap, cfg.seed, cfg.k, cfg.threads) == ("shapley_exact", 12, 7, 3, 4)
    assert cfg.formats == ("csv", "json") and cfg.mode == "pooled" and cfg.out_dir == "build"


def test_overrides_win(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("huber.delta = 2.0\n")
    assert load_config(p, {"huber.delta": "3.0"}).huber_delta == 3.0


@pytest.mark.parametrize("values", [
    {"unknown.key": "1"},
    {"attribution.method": "lime"},
    {"attribution.method": "shapley_exact"},
    {"attribution.method": "shapley_exact", "attribution.feature_cap": "39"},
    {"mode": "global"},
    {"report.formats": "pdf"},
    {"huber.delta": "wide"},
    {"calendar.resolution": "7"},
    {"threads": "0"},
])
def test_invalid(values):
    with pytest.raises(ConfigError):
        build_config(values)


def test_as_flat_round_trip():
    cfg = build_config({"attribution.method": "shapley_mc", "attribution.seed": "42", "huber.tol": "1e-7"})
    flat = cfg.as_flat()
    again = build_config({k: v for k, v in flat.items()})
    assert again.as_flat() == flat
    assert isinstance(again, RunConfig)
