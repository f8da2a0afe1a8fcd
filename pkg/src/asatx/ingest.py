"""Sensor CSV ingestion, operational-hours filtering and gap regularization."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta
from os import PathLike
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateTimestamp,
    EmptyInput,
    GapTooLarge,
    MalformedTimestamp,
    MissingColumn,
    NonNumericValue,
)

#: logical field -> CSV column name
DEFAULT_SCHEMA: dict[str, str] = {"ts": "ts", "asat": "asat", "at": "at", "rt": "rt_avg"}
_FIELDS = ("ts", "asat", "at", "rt")
_GRID_MINUTES = (0, 15, 30, 45)


@dataclass(frozen=True)
class Observation:
    timestamp: datetime
    asat: float
    ambient_temp: float
    room_temp_avg: float


@dataclass(frozen=True)
class OperationalCalendar:
    """Daily operating window of the air handling unit.

    Slots run from ``day_start`` to ``day_end`` inclusive at ``resolution``,
    so the defaults (08:00-17:00, 15 min) give 37 slots per day.
    """

    day_start: time = time(8, 0)
    day_end: time = time(17, 0)
    resolution: timedelta = timedelta(minutes=15)
    working_days: frozenset[int] = frozenset({0, 1, 2, 3, 4})

    def __post_init__(self):
        span = self._minutes(self.day_end) - self._minutes(self.day_start)
        res = self.resolution.total_seconds() / 60
        if span <= 0:
            raise ValueError("day_start must be before day_end")
        if res <= 0 or res != int(res) or span % int(res):
            raise ValueError("resolution must evenly divide the operating window")
        if not self.working_days or not set(self.working_days) <= set(range(7)):
            raise ValueError("working_days must be a non-empty subset of 0..6")
        object.__setattr__(self, "working_days", frozenset(self.working_days))

    @staticmethod
    def _minutes(t: time) -> int:
        return t.hour * 60 + t.minute

    @property
    def step_minutes(self) -> int:
        return int(self.resolution.total_seconds() // 60)

    @property
    def slots_per_day(self) -> int:
        span = self._minutes(self.day_end) - self._minutes(self.day_start)
        return span // self.step_minutes + 1

    def slot_time(self, slot: int) -> time:
        m = self._minutes(self.day_start) + slot * self.step_minutes
        return time(m // 60, m % 60)

    def slot_times(self) -> list[time]:
        return [self.slot_time(i) for i in range(self.slots_per_day)]

    def slot_of(self, t: time) -> int | None:
        """Slot index of a clock time, or None if it is off the operating grid."""
        if t.second or t.microsecond:
            return None
        offset = self._minutes(t) - self._minutes(self.day_start)
        if offset < 0 or offset % self.step_minutes:
            return None
        slot = offset // self.step_minutes
        return slot if slot < self.slots_per_day else None

    def is_working_day(self, d: date) -> bool:
        return d.weekday() in self.working_days

    def previous_operational_day(self, d: date) -> date:
        d = d - timedelta(days=1)
        while not self.is_working_day(d):
            d -= timedelta(days=1)
        return d


def format_clock(t: time) -> str:
    """``H:MM`` with an unpadded hour, e.g. ``9:45``."""
    return f"{t.hour}:{t.minute:02d}"


@dataclass(frozen=True)
class RegularSeries:
    """Gap-free operational series: one row of ``slots_per_day`` observations per day."""

    days: tuple[date, ...]
    values: tuple[tuple[Observation, ...], ...]
    imputed_flags: tuple[tuple[bool, ...], ...]
    calendar: OperationalCalendar = field(default_factory=OperationalCalendar)

    def __post_init__(self):
        n = self.calendar.slots_per_day
        if len(self.values) != len(self.days) or len(self.imputed_flags) != len(self.days):
            raise ValueError("days, values and imputed_flags must have equal length")
        for d, row, flags in zip(self.days, self.values, self.imputed_flags):
            if len(row) != n or len(flags) != n:
                raise ValueError(f"day {d} does not have {n} slots")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError("days must be strictly increasing")
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(self.days)})
        shape = (len(self.days), n)
        for name, attr in (("asat", "asat"), ("ambient", "ambient_temp"), ("room", "room_temp_avg")):
            arr = np.array([[getattr(o, attr) for o in row] for row in self.values], dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        imp = np.array(self.imputed_flags, dtype=bool).reshape(shape)
        imp.setflags(write=False)
        object.__setattr__(self, "imputed", imp)

    def __len__(self) -> int:
        return len(self.days)

    def index_of(self, d: date) -> int | None:
        return self._index.get(d)

    def __contains__(self, d: date) -> bool:
        return d in self._index

    def before(self, d: date) -> RegularSeries:
        """Sub-series of days strictly before ``d``."""
        k = sum(1 for x in self.days if x < d)
        return replace(self, days=self.days[:k], values=self.values[:k], imputed_flags=self.imputed_flags[:k])

    def last_days(self, n: int) -> RegularSeries:
        k = max(len(self.days) - n, 0)
        return replace(self, days=self.days[k:], values=self.values[k:], imputed_flags=self.imputed_flags[k:])


# -- parsing -----------------------------------------------------------------

def parse_schema(text: str) -> dict[str, str]:
    """Parse ``ts=<col>,asat=<col>,at=<col>,rt=<col>`` into a schema mapping."""
    schema = dict(DEFAULT_SCHEMA)
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, col = part.partition("=")
        key = key.strip()
        if not sep or key not in _FIELDS or not col.strip():
            raise ValueError(f"bad schema entry {part!r}; expected one of {', '.join(_FIELDS)}=<column>")
        schema[key] = col.strip()
    return schema


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    return data.decode("utf-8-sig")


def parse_timestamp(raw: str, row: int) -> datetime:
    try:
        ts = datetime.fromisoformat(raw.strip())
    except ValueError:
        raise MalformedTimestamp(row, raw) from None
    if ts.tzinfo is not None or ts.second or ts.microsecond or ts.minute not in _GRID_MINUTES:
        raise MalformedTimestamp(row, raw)
    return ts


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise NonNumericValue(row, column, raw) from None
    if not math.isfinite(v):
        raise NonNumericValue(row, column, raw)
    return v


def _read_rows(source, schema: Mapping[str, str] | None, extra: Sequence[str] = ()):
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    reader = csv.reader(io.StringIO(_read_text(source)))
    header = next(reader, None)
    if header is None:
        raise EmptyInput("no header row")
    header = [h.strip() for h in header]
    cols = {}
    for key in _FIELDS:
        name = schema[key]
        if name not in header:
            raise MissingColumn(name)
        cols[key] = header.index(name)
    extra_idx = {name: header.index(name) for name in extra if name in header}
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) < len(header):
            rec = rec + [""] * (len(header) - len(rec))
        yield lineno, rec, cols, schema, extra_idx


def _observation(lineno, rec, cols, schema) -> Observation:
    return Observation(
        timestamp=parse_timestamp(rec[cols["ts"]], lineno),
        asat=_parse_float(rec[cols["asat"]], lineno, schema["asat"]),
        ambient_temp=_parse_float(rec[cols["at"]], lineno, schema["at"]),
        room_temp_avg=_parse_float(rec[cols["rt"]], lineno, schema["rt"]),
    )


def parse_csv(source: bytes | BinaryIO | str | PathLike, schema: Mapping[str, str] | None = None) -> list[Observation]:
    """Parse a UTF-8 CSV with a header row into observations sorted by time.

    ``schema`` maps the logical fields ``ts``, ``asat``, ``at`` and ``rt`` to
    column names; unmapped fields fall back to :data:`DEFAULT_SCHEMA`. Row
    numbers in errors are 1-based file lines (the header is line 1).
    """
    out = [_observation(lineno, rec, cols, sch) for lineno, rec, cols, sch, _ in _read_rows(source, schema)]
    out.sort(key=lambda o: o.timestamp)
    for a, b in zip(out, out[1:]):
        if a.timestamp == b.timestamp:
            raise DuplicateTimestamp(b.timestamp)
    return out


def filter_operational(obs: Iterable[Observation], cal: OperationalCalendar | None = None) -> list[Observation]:
    cal = cal or OperationalCalendar()
    return [
        o for o in obs
        if cal.is_working_day(o.timestamp.date()) and cal.slot_of(o.timestamp.time()) is not None
    ]


def regularize(obs: Sequence[Observation], cal: OperationalCalendar | None = None, max_fill: int = 2) -> RegularSeries:
    """Lay observations onto the full slot grid of every covered day.

    Runs of up to ``max_fill`` missing slots are forward-filled from the
    preceding slot and flagged. A missing first slot has nothing to fill
    from and always raises :class:`GapTooLarge`, as does any longer run.
    Observations off the operating grid are ignored.
    """
    cal = cal or OperationalCalendar()
    if not obs:
        raise EmptyInput()
    n = cal.slots_per_day
    by_day: dict[date, dict[int, Observation]] = {}
    for o in obs:
        slot = cal.slot_of(o.timestamp.time())
        if slot is None:
            continue
        by_day.setdefault(o.timestamp.date(), {})[slot] = o
    if not by_day:
        raise EmptyInput("no observations on the operating grid")

    days, values, flags = [], [], []
    for d in sorted(by_day):
        present = by_day[d]
        row: list[Observation] = []
        imp: list[bool] = []
        s = 0
        while s < n:
            if s in present:
                row.append(present[s])
                imp.append(False)
                s += 1
                continue
            run = 0
            while s + run < n and (s + run) not in present:
                run += 1
            if s == 0 or run > max_fill:
                raise GapTooLarge(d, s, run)
            prev = row[-1]
            for k in range(run):
                ts = datetime.combine(d, cal.slot_time(s + k))
                row.append(replace(prev, timestamp=ts))
                imp.append(True)
            s += run
        days.append(d)
        values.append(tuple(row))
        flags.append(tuple(imp))
    return RegularSeries(tuple(days), tuple(values), tuple(flags), cal)


# -- canonical series file ---------------------------------------------------

SERIES_HEADER = ("ts", "asat", "at", "rt_avg", "imputed")


def series_to_csv(series: RegularSeries) -> bytes:
    """Canonical CSV for a regularized series; floats use shortest round-trip repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    for row, flags in zip(series.values, series.imputed_flags):
        for o, f in zip(row, flags):
            w.writerow([o.timestamp.isoformat(timespec="minutes"), repr(o.asat), repr(o.ambient_temp),
                        repr(o.room_temp_avg), int(f)])
    return buf.getvalue().encode("utf-8")


def read_series_csv(source, cal: OperationalCalendar | None = None) -> RegularSeries:
    """Inverse of :func:`series_to_csv`; the series must already be gap-free."""
    cal = cal or OperationalCalendar()
    obs, imputed = [], {}
    for lineno, rec, cols, sch, extra in _read_rows(source, None, extra=("imputed",)):
        o = _observation(lineno, rec, cols, sch)
        obs.append(o)
        if "imputed" in extra:
            imputed[o.timestamp] = rec[extra["imputed"]].strip() in ("1", "true", "True")
    obs.sort(key=lambda o: o.timestamp)
    for a, b in zip(obs, obs[1:]):
        if a.timestamp == b.timestamp:
            raise DuplicateTimestamp(b.timestamp)
    base = regularize(obs, cal, max_fill=0)
    flags = tuple(tuple(imputed.get(o.timestamp, False) for o in row) for row in base.values)
    return replace(base, imputed_flags=flags)
