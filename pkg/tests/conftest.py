from __future__ import annotations

from datetime import date, datetime, timedelta

import numpy as np
import pytest

from asatx.ingest import Observation, OperationalCalendar, RegularSeries, regularize

CAL = OperationalCalendar()


def working_days(start: date, n: int, cal: OperationalCalendar = CAL) -> list[date]:
    out, d = [], start
    while len(out) < n:
        if cal.is_working_day(d):
            out.append(d)
        d += timedelta(days=1)
    return out


def coded_series(days: list[date], cal: OperationalCalendar = CAL) -> RegularSeries:
    """Series whose values encode their own position: asat = 100*day_index + slot."""
    obs = []
    for k, d in enumerate(days):
        for s in range(cal.slots_per_day):
            ts = datetime.combine(d, cal.slot_time(s))
            obs.append(Observation(ts, 100.0 * k + s, 1000.0 + 100.0 * k + s, 5000.0 + 100.0 * k + s))
    return regularize(obs, cal)


@pytest.fixture
def cal() -> OperationalCalendar:
    return CAL


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
