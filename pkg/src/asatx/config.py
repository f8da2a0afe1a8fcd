"""Flat ``key=value`` run configuration with dotted keys.

Example::

    # comments start with '#'
    data.path = raw.csv
    data.schema = ts=time,asat=sat,at=oat,rt=rat
    huber.delta = 1.35
    attribution.method = shapley_mc
    attribution.n_permutations = 2000
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, time, timedelta
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .ingest import DEFAULT_SCHEMA, OperationalCalendar, parse_schema

METHODS = ("linear", "shapley_exact", "shapley_mc")
MODES = ("per_slot", "pooled")
EXACT_FEATURE_CAP = 20
_WEEKDAYS = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4, "sat": 5, "sun": 6}


@dataclass
class RunConfig:
    data_path: str | None = None
    schema: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SCHEMA))
    calendar: OperationalCalendar = field(default_factory=OperationalCalendar)
    max_fill: int = 2
    huber_delta: float = 1.35
    huber_max_iter: int = 100
    huber_tol: float = 1e-8
    history_days: int | None = None
    train_until: date | None = None
    method: str = "linear"
    n_permutations: int = 2000
    seed: int = 0
    feature_cap: int | None = None
    formats: tuple[str, ...] = ("json", "csv", "svg")
    k: int = 2
    mode: str = "per_slot"
    out_dir: str = "out"
    threads: int = 1

    def validate(self) -> RunConfig:
        if self.method not in METHODS:
            raise ConfigError(f"attribution.method must be one of {', '.join(METHODS)}")
        if self.method == "shapley_exact" and (self.feature_cap is None or not 2 <= self.feature_cap <= EXACT_FEATURE_CAP):
            raise ConfigError(f"shapley_exact needs attribution.feature_cap between 2 and {EXACT_FEATURE_CAP}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        bad = [f for f in self.formats if f not in ("json", "csv", "svg")]
        if bad or not self.formats:
            raise ConfigError(f"unsupported report format(s): {', '.join(bad) or '(none)'}")
        if self.threads < 1 or self.n_permutations < 2 or self.max_fill < 0 or self.k < 1:
            raise ConfigError("threads, n_permutations, ingest.max_fill and report.k must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        return self

    def as_flat(self) -> dict[str, str]:
        cal = self.calendar
        return {
            "data.path": self.data_path or "",
            "data.schema": ",".join(f"{k}={v}" for k, v in self.schema.items()),
            "calendar.day_start": cal.day_start.strftime("%H:%M"),
            "calendar.day_end": cal.day_end.strftime("%H:%M"),
            "calendar.resolution": str(cal.step_minutes),
            "calendar.working_days": ",".join(str(d) for d in sorted(cal.working_days)),
            "ingest.max_fill": str(self.max_fill),
            "huber.delta": repr(self.huber_delta),
            "huber.max_iter": str(self.huber_max_iter),
            "huber.tol": repr(self.huber_tol),
            "train.history_days": "" if self.history_days is None else str(self.history_days),
            "train.until": "" if self.train_until is None else self.train_until.isoformat(),
            "attribution.method": self.method,
            "attribution.n_permutations": str(self.n_permutations),
            "attribution.seed": str(self.seed),
            "attribution.feature_cap": "" if self.feature_cap is None else str(self.feature_cap),
            "report.formats": ",".join(self.formats),
            "report.k": str(self.k),
            "mode": self.mode,
            "threads": str(self.threads),
        }


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"config line {lineno}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def _opt_int(v: str) -> int | None:
    return int(v) if v else None


def _clock(v: str) -> time:
    return time.fromisoformat(v if len(v.split(":")[0]) == 2 else "0" + v)


def _weekdays(v: str) -> frozenset[int]:
    days = set()
    for part in filter(None, (p.strip().lower() for p in v.split(","))):
        days.add(_WEEKDAYS[part[:3]] if part[:3] in _WEEKDAYS else int(part))
    return frozenset(days)


def _formats(v: str) -> tuple[str, ...]:
    return tuple(f.strip().lower() for f in v.split(",") if f.strip())


def build_config(values: Mapping[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply flat key/value pairs on top of ``base`` (defaults when omitted)."""
    cfg = base or RunConfig()
    cal = {
        "day_start": cfg.calendar.day_start,
        "day_end": cfg.calendar.day_end,
        "resolution": cfg.calendar.resolution,
        "working_days": cfg.calendar.working_days,
    }
    setters = {
        "data.path": lambda v: setattr(cfg, "data_path", v or None),
        "data.schema": lambda v: setattr(cfg, "schema", parse_schema(v)),
        "calendar.day_start": lambda v: cal.__setitem__("day_start", _clock(v)),
        "calendar.day_end": lambda v: cal.__setitem__("day_end", _clock(v)),
        "calendar.resolution": lambda v: cal.__setitem__("resolution", timedelta(minutes=int(v))),
        "calendar.working_days": lambda v: cal.__setitem__("working_days", _weekdays(v)),
        "ingest.max_fill": lambda v: setattr(cfg, "max_fill", int(v)),
        "huber.delta": lambda v: setattr(cfg, "huber_delta", float(v)),
        "huber.max_iter": lambda v: setattr(cfg, "huber_max_iter", int(v)),
        "huber.tol": lambda v: setattr(cfg, "huber_tol", float(v)),
        "train.history_days": lambda v: setattr(cfg, "history_days", _opt_int(v)),
        "train.until": lambda v: setattr(cfg, "train_until", date.fromisoformat(v) if v else None),
        "attribution.method": lambda v: setattr(cfg, "method", v),
        "attribution.n_permutations": lambda v: setattr(cfg, "n_permutations", int(v)),
        "attribution.seed": lambda v: setattr(cfg, "seed", int(v)),
        "attribution.feature_cap": lambda v: setattr(cfg, "feature_cap", _opt_int(v)),
        "report.formats": lambda v: setattr(cfg, "formats", _formats(v)),
        "report.k": lambda v: setattr(cfg, "k", int(v)),
        "mode": lambda v: setattr(cfg, "mode", v),
        "output.dir": lambda v: setattr(cfg, "out_dir", v),
        "threads": lambda v: setattr(cfg, "threads", int(v)),
    }
    for key, value in values.items():
        if key not in setters:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setters[key](value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    try:
        cfg.calendar = OperationalCalendar(**cal)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: str | Path | None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return build_config(values)
