"""Rotating clock-time lag windows and the sliding-window training matrix.

For a forecast at slot ``i`` of day D the ASAT history is the ``n`` most
recent operational observations ending at (D-1, i): slots after ``i`` come
from D-2, slots up to and including ``i`` from D-1, oldest first. Feature
indices are tied to clock slots (``f2`` is 08:00, ``f38`` is 17:00), so the
index sequence rotates with the target slot while its position in the vector
encodes recency::

    slot 0  (8:00):  f3_2D:8:15 ... f38_2D:17:00, f2_1D:8:00
    slot 7  (9:45):  f10_2D:10:00 ... f38_2D:17:00, f2_1D:8:00 ... f9_1D:9:45
    slot 36 (17:00): f2_1D:8:00 ... f38_1D:17:00

The two exogenous inputs, ambient and room-average temperature, sit at
positions 0 and 1 and are the measured values at (D-1, i).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, time
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptySet, InsufficientHistory, MissingDay, SlotOutOfRange
from .ingest import OperationalCalendar, RegularSeries, format_clock

AMBIENT = "ambient"
ROOM_AVG = "room_avg"
ASAT_LAG = "asat_lag"
N_EXOGENOUS = 2


@dataclass(frozen=True)
class FeatureLabel:
    index: int
    kind: str
    clock_slot: int | None = None
    day_offset: int | None = None
    clock: time | None = None

    def render(self) -> str:
        if self.kind == AMBIENT:
            return f"f{self.index}_AT"
        if self.kind == ROOM_AVG:
            return f"f{self.index}_RTavg"
        return f"f{self.index}_{self.day_offset}D:{format_clock(self.clock)}"

    def __str__(self) -> str:
        return self.render()


def lag_labels(target_slot: int, cal: OperationalCalendar | None = None) -> list[FeatureLabel]:
    """ASAT lag labels for a target slot, oldest observation first."""
    cal = cal or OperationalCalendar()
    n = cal.slots_per_day
    if not 0 <= target_slot < n:
        raise SlotOutOfRange(target_slot, n)
    order = [(s, 2) for s in range(target_slot + 1, n)] + [(s, 1) for s in range(target_slot + 1)]
    return [FeatureLabel(N_EXOGENOUS + s, ASAT_LAG, s, off, cal.slot_time(s)) for s, off in order]


def feature_labels(target_slot: int, cal: OperationalCalendar | None = None) -> list[FeatureLabel]:
    return [FeatureLabel(0, AMBIENT), FeatureLabel(1, ROOM_AVG)] + lag_labels(target_slot, cal)


def n_features(cal: OperationalCalendar | None = None) -> int:
    return N_EXOGENOUS + (cal or OperationalCalendar()).slots_per_day


@dataclass(frozen=True)
class FeatureVector:
    target_day: date
    target_slot: int
    values: np.ndarray
    labels: tuple[FeatureLabel, ...]

    @property
    def rendered_labels(self) -> tuple[str, ...]:
        return tuple(lab.render() for lab in self.labels)

    @property
    def label_indices(self) -> np.ndarray:
        return np.array([lab.index for lab in self.labels])


@dataclass(frozen=True)
class TrainingSet:
    rows: tuple[tuple[FeatureVector, float], ...]
    slot: int | str

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[tuple[FeatureVector, float]]:
        return iter(self.rows)

    @property
    def X(self) -> np.ndarray:
        return np.array([fv.values for fv, _ in self.rows], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([t for _, t in self.rows], dtype=float)

    @property
    def labels(self) -> tuple[str, ...]:
        if self.slot == "pooled":
            return pooled_labels(self.rows[0][0].values.size - N_EXOGENOUS) if self.rows else ()
        return self.rows[0][0].rendered_labels if self.rows else ()


def pooled_labels(n_lags: int) -> tuple[str, ...]:
    """Position-based names used by the pooled model, where the clock rotation differs per row."""
    return ("f0_AT", "f1_RTavg") + tuple(f"lag{n_lags - k}" for k in range(n_lags))


def preceding_days(series: RegularSeries, target_day: date) -> tuple[date, date]:
    """The two operational days before ``target_day``; both must be present in ``series``."""
    cal = series.calendar
    d1 = cal.previous_operational_day(target_day)
    d2 = cal.previous_operational_day(d1)
    for d in (d1, d2):
        if d not in series:
            raise MissingDay(d)
    return d1, d2


def build_feature_vector(series: RegularSeries, target_day: date, target_slot: int,
                         cal: OperationalCalendar | None = None) -> FeatureVector:
    cal = cal or series.calendar
    labels = feature_labels(target_slot, cal)
    d1, d2 = preceding_days(series, target_day)
    r1, r2 = series.index_of(d1), series.index_of(d2)
    lags = [series.asat[r1 if lab.day_offset == 1 else r2, lab.clock_slot] for lab in labels[N_EXOGENOUS:]]
    values = np.array([series.ambient[r1, target_slot], series.room[r1, target_slot], *lags], dtype=float)
    values.setflags(write=False)
    return FeatureVector(target_day, target_slot, values, tuple(labels))


def _candidate_rows(series: RegularSeries, target_slot: int, cal: OperationalCalendar):
    for d in series.days[2:]:
        r = series.index_of(d)
        if series.imputed[r, target_slot]:
            continue
        try:
            fv = build_feature_vector(series, d, target_slot, cal)
        except MissingDay:
            continue
        yield fv, float(series.asat[r, target_slot])


def build_training_set(series: RegularSeries, target_slot: int, cal: OperationalCalendar | None = None) -> TrainingSet:
    """One row per day that has both preceding operational days, chronological.

    Days whose target value was imputed are skipped.
    """
    cal = cal or series.calendar
    if len(series) < 3:
        raise InsufficientHistory(3, len(series))
    rows = tuple(_candidate_rows(series, target_slot, cal))
    if not rows:
        raise InsufficientHistory(3, len(series))
    return TrainingSet(rows, target_slot)


def build_pooled_training_set(series: RegularSeries, cal: OperationalCalendar | None = None) -> TrainingSet:
    cal = cal or series.calendar
    if len(series) < 3:
        raise InsufficientHistory(3, len(series))
    rows = tuple(row for slot in range(cal.slots_per_day) for row in _candidate_rows(series, slot, cal))
    if not rows:
        raise InsufficientHistory(3, len(series))
    return TrainingSet(rows, "pooled")


def hankel_view(training_set: TrainingSet) -> np.ndarray:
    """Flatten a training set to a ``rows x (features + 1)`` matrix, target last."""
    if not len(training_set):
        raise EmptySet()
    return np.column_stack([training_set.X, training_set.y])


def dump_vectors(vectors: Sequence[FeatureVector]) -> str:
    """Debug dump: JSON array of ``{target_slot, labels, values}``."""
    return json.dumps(
        [{"target_slot": fv.target_slot, "labels": list(fv.rendered_labels), "values": fv.values.tolist()}
         for fv in vectors],
        indent=1,
    )
