"""Per-timestamp explanation slices and the summary artifacts built from them.

All JSON and CSV output is byte-deterministic: fixed key order and every
float written as 6-decimal fixed point. SVG is written by hand on a fixed
800x500 viewBox with no external references.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from datetime import time
from functools import singledispatch
from typing import NamedTuple, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .attribution import Attribution, efficiency_check
from .errors import EfficiencyViolation, LengthMismatch, UnsupportedFormat
from .ingest import format_clock

FORMATS = ("json", "csv", "svg")


class Contribution(NamedTuple):
    label: str
    index: int
    value: float
    phi: float


@dataclass(frozen=True)
class SliceReport:
    forecast_timestamp: time
    prediction: float
    base_value: float
    contributions: tuple[Contribution, ...]
    cumulative: np.ndarray
    method: str = ""
    residual: float = 0.0

    @property
    def timestamp_label(self) -> str:
        return format_clock(self.forecast_timestamp)

    def top(self, k: int) -> tuple[Contribution, ...]:
        return self.contributions[:k]


def make_slice(attr: Attribution, prediction: float, timestamp: time, tol: float | None = None) -> SliceReport:
    """Sort contributions by ``|phi|`` (ties: lower feature index first) and accumulate from the base value.

    Raises :class:`EfficiencyViolation` when base plus contributions does not
    reproduce ``prediction`` within ``tol`` (default: the attribution's own
    tolerance).
    """
    tol = attr.tolerance() if tol is None else tol
    ok, residual = efficiency_check(attr, prediction, tol)
    if not ok:
        raise EfficiencyViolation(residual, tol)
    idx = np.asarray(attr.indices)
    order = np.lexsort((idx, -np.abs(attr.phi)))
    contributions = tuple(
        Contribution(attr.labels[j], int(idx[j]), float(attr.values[j]), float(attr.phi[j])) for j in order
    )
    cumulative = attr.base_value + np.cumsum([c.phi for c in contributions])
    return SliceReport(timestamp, float(prediction), float(attr.base_value), contributions, cumulative,
                       attr.method, residual)


class TopKRow(NamedTuple):
    timestamp: str
    labels: tuple[str, ...]


@dataclass(frozen=True)
class TopKTable:
    rows: tuple[TopKRow, ...]
    k: int


def top_k_table(slices: Sequence[SliceReport], k: int = 2) -> TopKTable:
    if slices and k > len(slices[0].contributions):
        raise ValueError(f"k={k} exceeds the {len(slices[0].contributions)} available features")
    if k < 1:
        raise ValueError("k must be >= 1")
    return TopKTable(tuple(TopKRow(s.timestamp_label, tuple(c.label for c in s.top(k))) for s in slices), k)


@dataclass(frozen=True)
class BinaryTopMatrix:
    """Rows are forecast slots in time order, columns are feature indices 0..n-1."""

    rows: np.ndarray
    timestamps: tuple[str, ...]


def binary_top_matrix(slices: Sequence[SliceReport], k: int = 2) -> BinaryTopMatrix:
    n_features = len(slices[0].contributions) if slices else 0
    m = np.zeros((len(slices), n_features), dtype=int)
    for r, s in enumerate(slices):
        for c in s.top(k):
            m[r, c.index] = 1
    return BinaryTopMatrix(m, tuple(s.timestamp_label for s in slices))


@dataclass(frozen=True)
class DifferenceCurve:
    true: np.ndarray
    forecast: np.ndarray
    diff: np.ndarray
    argmax_slot: int
    max_abs: float
    timestamps: tuple[str, ...] | None = None


def difference_curve(true, forecast, timestamps: Sequence[str] | None = None) -> DifferenceCurve:
    """``true - forecast`` per slot plus the slot of the largest absolute difference (first wins on ties)."""
    t = np.asarray(true, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if t.shape != f.shape or t.ndim != 1 or not t.size:
        raise LengthMismatch(f"curves have shapes {t.shape} and {f.shape}")
    if timestamps is not None and len(timestamps) != t.size:
        raise LengthMismatch("timestamps do not match curve length")
    diff = t - f
    k = int(np.argmax(np.abs(diff)))
    return DifferenceCurve(t, f, diff, k, float(abs(diff[k])), None if timestamps is None else tuple(timestamps))


class CoefficientRow(NamedTuple):
    index: int
    kind: str
    label: str
    min: float
    max: float
    mean: float
    median: float


@dataclass(frozen=True)
class CoefficientDistribution:
    rows: tuple[CoefficientRow, ...]
    n_models: int


_LABEL_RE = re.compile(r"^f(\d+)_(?:(\d)D:(\d{1,2}:\d{2})|AT|RTavg)$")


def _feature_key(label: str, position: int) -> tuple[int, str, str]:
    m = _LABEL_RE.match(label)
    if not m:
        return position, "asat_lag" if position >= 2 else ("ambient", "room_avg")[position], label
    index = int(m.group(1))
    if label.endswith("_AT"):
        return index, "ambient", label
    if label.endswith("_RTavg"):
        return index, "room_avg", label
    return index, "asat_lag", f"f{index}:{m.group(3)}"


def coefficient_distribution(models: Sequence) -> CoefficientDistribution:
    """Spread of each feature's weight across models, keyed by feature index.

    For per-slot models the feature index follows the clock slot, so a
    feature's weights are gathered from whichever vector position it
    occupies in each model. Pooled models are keyed by position.
    """
    if not models:
        raise ValueError("need at least one model")
    collected: dict[int, list[float]] = {}
    meta: dict[int, tuple[str, str]] = {}
    for model in models:
        for pos, (label, w) in enumerate(zip(model.labels, model.weights)):
            index, kind, name = _feature_key(label, pos)
            collected.setdefault(index, []).append(float(w))
            meta.setdefault(index, (kind, name))
    rows = []
    for index in sorted(collected):
        v = np.array(collected[index])
        kind, name = meta[index]
        rows.append(CoefficientRow(index, kind, name, float(v.min()), float(v.max()), float(v.mean()),
                                   float(np.median(v))))
    return CoefficientDistribution(tuple(rows), len(models))


# -- rendering ---------------------------------------------------------------

def fixed(x: float) -> str:
    if x is None or not math.isfinite(x):
        return "nan"
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _json(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fixed(float(obj)) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _json_doc(doc: dict) -> bytes:
    # one top-level key per line keeps diffs readable
    body = ",\n".join(f" {json.dumps(k)}: {_json(v)}" for k, v in doc.items())
    return ("{\n" + body + "\n}\n").encode("utf-8")


def _csv(header: Sequence[str] | None, rows: Sequence[Sequence]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in rows:
        w.writerow([fixed(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue().encode("utf-8")


_W, _H = 800, 500


def _svg(body: list[str], title: str) -> bytes:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_W} {_H}" width="{_W}" height="{_H}" '
            f'font-family="sans-serif" font-size="10">')
    parts = [head, f"<title>{escape(title)}</title>", f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>',
             f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    return ("\n".join(parts + body + ["</svg>"]) + "\n").encode("utf-8")


def _f1(x: float) -> str:
    return f"{x:.2f}"


@singledispatch
def render(artifact, fmt: str) -> bytes:
    raise UnsupportedFormat(fmt, type(artifact).__name__)


@render.register
def _(artifact: SliceReport, fmt: str) -> bytes:
    s = artifact
    if fmt == "json":
        return _json_doc({
            "forecast_timestamp": s.timestamp_label,
            "method": s.method,
            "prediction": s.prediction,
            "base_value": s.base_value,
            "contributions": [
                {"label": c.label, "index": c.index, "value": c.value, "phi": c.phi, "cumulative": cum}
                for c, cum in zip(s.contributions, s.cumulative.tolist())
            ],
        })
    if fmt == "csv":
        return _csv(("label", "value", "phi", "cumulative"),
                    [(c.label, c.value, c.phi, cum) for c, cum in zip(s.contributions, s.cumulative.tolist())])
    if fmt == "svg":
        return _waterfall_svg(s)
    raise UnsupportedFormat(fmt, "SliceReport")


def _waterfall_svg(s: SliceReport) -> bytes:
    shown = [c for c in s.contributions if c.phi != 0.0]
    left, right, top, bottom = 170, 40, 40, 40
    starts = [s.base_value] + list(s.cumulative[:len(shown)])
    ends = list(s.cumulative[:len(shown)])
    lo = min([s.base_value, s.prediction] + ends)
    hi = max([s.base_value, s.prediction] + ends)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def sx(v: float) -> float:
        return left + (v - lo) / (hi - lo) * (_W - left - right)

    n = max(len(shown), 1)
    step = (_H - top - bottom) / n
    body = []
    for r, c in enumerate(shown):
        a, b = starts[r], ends[r]
        x0, x1 = sorted((sx(a), sx(b)))
        y = top + r * step
        colour = "#d62728" if c.phi > 0 else "#1f77b4"
        body.append(f'<rect x="{_f1(x0)}" y="{_f1(y + 0.1 * step)}" width="{_f1(max(x1 - x0, 0.5))}" '
                    f'height="{_f1(0.8 * step)}" fill="{colour}"/>')
        body.append(f'<text x="{left - 6}" y="{_f1(y + 0.65 * step)}" text-anchor="end">'
                    f'{escape(c.label)} = {c.value:.2f}</text>')
        body.append(f'<text x="{_f1(x1 + 3)}" y="{_f1(y + 0.65 * step)}">{c.phi:+.3f}</text>')
    xb, xp = sx(s.base_value), sx(s.prediction)
    body.append(f'<line x1="{_f1(xb)}" y1="{top}" x2="{_f1(xb)}" y2="{_H - bottom}" stroke="#555" '
                f'stroke-dasharray="4 3"/>')
    body.append(f'<line x1="{_f1(xp)}" y1="{top}" x2="{_f1(xp)}" y2="{_H - bottom}" stroke="#000"/>')
    body.append(f'<text x="{_f1(xb)}" y="{_H - bottom + 14}" text-anchor="middle">E[f(X)] = {s.base_value:.3f}</text>')
    body.append(f'<text x="{_f1(xp)}" y="{_H - bottom + 28}" text-anchor="middle">f(x) = {s.prediction:.3f}</text>')
    return _svg(body, f"ASAT forecast at {s.timestamp_label}")


@render.register
def _(artifact: TopKTable, fmt: str) -> bytes:
    t = artifact
    if fmt == "csv":
        header = ["forecast_timestamp"] + [f"feature_{j + 1}" for j in range(t.k)]
        return _csv(header, [(r.timestamp, *r.labels) for r in t.rows])
    if fmt == "json":
        return _json_doc({"k": t.k, "rows": [[r.timestamp, list(r.labels)] for r in t.rows]})
    raise UnsupportedFormat(fmt, "TopKTable")


@render.register
def _(artifact: BinaryTopMatrix, fmt: str) -> bytes:
    m = artifact
    if fmt == "csv":
        return _csv(None, [[str(int(v)) for v in row] for row in m.rows])
    if fmt == "json":
        return _json_doc({"timestamps": list(m.timestamps), "rows": m.rows.tolist()})
    if fmt == "svg":
        n_rows, n_cols = m.rows.shape
        left, top, right, bottom = 50, 40, 20, 40
        cw = (_W - left - right) / max(n_cols, 1)
        ch = (_H - top - bottom) / max(n_rows, 1)
        body = []
        for r in range(n_rows):
            body.append(f'<text x="{left - 4}" y="{_f1(top + (r + 0.8) * ch)}" text-anchor="end" '
                        f'font-size="8">{escape(m.timestamps[r])}</text>')
            for c in range(n_cols):
                fill = "#222222" if m.rows[r, c] else "#eeeeee"
                body.append(f'<rect x="{_f1(left + c * cw)}" y="{_f1(top + r * ch)}" width="{_f1(cw - 0.5)}" '
                            f'height="{_f1(ch - 0.5)}" fill="{fill}"/>')
        for c in range(n_cols):
            body.append(f'<text x="{_f1(left + (c + 0.5) * cw)}" y="{_H - bottom + 12}" text-anchor="middle" '
                        f'font-size="8">{c}</text>')
        return _svg(body, "Top-2 features by |phi| per forecast slot")
    raise UnsupportedFormat(fmt, "BinaryTopMatrix")


def _curve_labels(c: DifferenceCurve) -> tuple[str, ...]:
    return c.timestamps if c.timestamps is not None else tuple(str(i) for i in range(c.diff.size))


@render.register
def _(artifact: DifferenceCurve, fmt: str) -> bytes:
    c = artifact
    labels = _curve_labels(c)
    if fmt == "csv":
        rows = [(i, labels[i], c.true[i], c.forecast[i], c.diff[i]) for i in range(c.diff.size)]
        k = c.argmax_slot
        rows.append(("argmax", labels[k], c.true[k], c.forecast[k], c.diff[k]))
        return _csv(("slot", "timestamp", "true", "forecast", "diff"), rows)
    if fmt == "json":
        return _json_doc({
            "timestamps": list(labels),
            "true": c.true.tolist(),
            "forecast": c.forecast.tolist(),
            "diff": c.diff.tolist(),
            "argmax_slot": c.argmax_slot,
            "argmax_timestamp": labels[c.argmax_slot],
            "max_abs_diff": c.max_abs,
        })
    if fmt == "svg":
        return _curves_svg(c, labels)
    raise UnsupportedFormat(fmt, "DifferenceCurve")


def _polyline(xs, ys, colour: str, dash: str = "") -> str:
    pts = " ".join(f"{_f1(x)},{_f1(y)}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"{extra}/>'


def _curves_svg(c: DifferenceCurve, labels: Sequence[str]) -> bytes:
    left, right, top, mid, bottom = 50, 20, 40, 330, 40
    n = c.diff.size
    xs = [left + i * (_W - left - right) / max(n - 1, 1) for i in range(n)]
    lo = float(min(c.true.min(), c.forecast.min()))
    hi = float(max(c.true.max(), c.forecast.max()))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5

    def sy(v):
        return mid - (v - lo) / (hi - lo) * (mid - top)

    dmax = max(float(np.max(np.abs(c.diff))), 1e-12)
    d0 = (mid + 30 + _H - bottom) / 2
    half = (_H - bottom - mid - 30) / 2

    body = [
        _polyline(xs, [sy(v) for v in c.true], "#000000"),
        _polyline(xs, [sy(v) for v in c.forecast], "#d62728", "5 3"),
        f'<line x1="{left}" y1="{_f1(d0)}" x2="{_W - right}" y2="{_f1(d0)}" stroke="#999"/>',
        _polyline(xs, [d0 - v / dmax * half for v in c.diff], "#1f77b4"),
        f'<text x="{left}" y="{top - 6}">true (solid), forecast (dashed) [°C]</text>',
        f'<text x="{left}" y="{mid + 26}">difference true - forecast, max |diff| = {c.max_abs:.3f} '
        f'at {escape(labels[c.argmax_slot])}</text>',
        f'<text x="{left - 4}" y="{_f1(sy(hi))}" text-anchor="end">{hi:.1f}</text>',
        f'<text x="{left - 4}" y="{_f1(sy(lo))}" text-anchor="end">{lo:.1f}</text>',
    ]
    for i in range(0, n, 4):
        body.append(f'<text x="{_f1(xs[i])}" y="{_H - bottom + 14}" text-anchor="middle">{escape(labels[i])}</text>')
    return _svg(body, "Forecast vs true ASAT control curve")


@render.register
def _(artifact: CoefficientDistribution, fmt: str) -> bytes:
    d = artifact
    if fmt == "csv":
        return _csv(("index", "kind", "label", "min", "max", "mean", "median"),
                    [(r.index, r.kind, r.label, r.min, r.max, r.mean, r.median) for r in d.rows])
    if fmt == "json":
        return _json_doc({"n_models": d.n_models, "rows": [r._asdict() for r in d.rows]})
    if fmt == "svg":
        left, right, top, bottom = 50, 20, 40, 60
        n = len(d.rows)
        lo = min(r.min for r in d.rows)
        hi = max(r.max for r in d.rows)
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        if hi - lo < 1e-12:
            lo, hi = lo - 1, hi + 1
        cw = (_W - left - right) / n

        def sy(v):
            return top + (hi - v) / (hi - lo) * (_H - top - bottom)

        body = [f'<line x1="{left}" y1="{_f1(sy(0))}" x2="{_W - right}" y2="{_f1(sy(0))}" stroke="#999"/>']
        for j, r in enumerate(d.rows):
            x = left + (j + 0.5) * cw
            body.append(f'<line x1="{_f1(x)}" y1="{_f1(sy(r.min))}" x2="{_f1(x)}" y2="{_f1(sy(r.max))}" '
                        f'stroke="#1f77b4" stroke-width="{_f1(max(cw * 0.4, 1))}"/>')
            body.append(f'<circle cx="{_f1(x)}" cy="{_f1(sy(r.mean))}" r="2" fill="#d62728"/>')
            body.append(f'<text x="{_f1(x)}" y="{_H - bottom + 12}" text-anchor="middle" font-size="8">'
                        f'{r.index}</text>')
        return _svg(body, f"Coefficient ranges across {d.n_models} model(s)")
    raise UnsupportedFormat(fmt, "CoefficientDistribution")
