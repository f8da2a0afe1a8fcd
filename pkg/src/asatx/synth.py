"""Synthetic AHU sensor data for tests and demos.

Each calendar day gets a weather anomaly that follows an AR(1) process
across days. Ambient temperature follows a diurnal sinusoid around that
anomaly, room temperature barely reacts, and ASAT follows a half-sine
profile over the operating day, shifted down on warm days, plus white
sensor noise. Values are rounded to sensor resolution (0.001 °C).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

from .ingest import Observation, OperationalCalendar, RegularSeries, filter_operational, regularize


@dataclass(frozen=True)
class SynthParams:
    asat_base: float = 19.0
    profile_amplitude: float = 1.5
    weather_coupling: float = -0.2
    asat_noise: float = 0.3
    ambient_base: float = 6.0
    ambient_amplitude: float = 4.0
    anomaly_ar: float = 0.7
    anomaly_sd: float = 1.5
    room_base: float = 21.5


def synthetic_observations(n_days: int, start: date = date(2024, 9, 2), seed: int = 0,
                           params: SynthParams | None = None, step_minutes: int = 15) -> list[Observation]:
    """Full 24 h records at ``step_minutes`` for ``n_days`` consecutive calendar days."""
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    per_day = 24 * 60 // step_minutes
    out = []
    anomaly = 0.0
    for d in range(n_days):
        day = start + timedelta(days=d)
        anomaly = p.anomaly_ar * anomaly + rng.normal(0.0, p.anomaly_sd)
        noise = rng.normal(size=(per_day, 3))
        for k in range(per_day):
            h = k * step_minutes / 60
            ambient = p.ambient_base + anomaly + p.ambient_amplitude * math.sin(2 * math.pi * (h - 9) / 24)
            room = p.room_base + 0.05 * anomaly + 0.8 * math.sin(2 * math.pi * (h - 11) / 24)
            profile = p.profile_amplitude * math.sin(math.pi * min(max((h - 8) / 9, 0.0), 1.0))
            asat = p.asat_base + profile + p.weather_coupling * anomaly
            out.append(Observation(
                timestamp=datetime.combine(day, datetime.min.time()) + timedelta(minutes=k * step_minutes),
                asat=round(asat + p.asat_noise * noise[k, 0], 3),
                ambient_temp=round(ambient + 0.3 * noise[k, 1], 3),
                room_temp_avg=round(room + 0.1 * noise[k, 2], 3),
            ))
    return out


def synthetic_series(n_days: int, start: date = date(2024, 9, 2), seed: int = 0,
                     params: SynthParams | None = None, cal: OperationalCalendar | None = None) -> RegularSeries:
    """Operational series covering ``n_days`` calendar days (weekends dropped)."""
    cal = cal or OperationalCalendar()
    obs = synthetic_observations(n_days, start, seed, params)
    return regularize(filter_operational(obs, cal), cal)


def to_csv(obs: list[Observation]) -> bytes:
    lines = ["ts,asat,at,rt_avg"]
    lines += [f"{o.timestamp.isoformat(timespec='minutes')},{o.asat:.3f},{o.ambient_temp:.3f},{o.room_temp_avg:.3f}"
              for o in obs]
    return ("\n".join(lines) + "\n").encode("utf-8")
