"""Huber-loss linear regression per forecast slot, day forecasts and walk-forward backtests."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Sequence

import numpy as np

from .errors import InsufficientHistory, LabelMismatch, MissingDay, NotEnoughRows, SingularSystem
from .ingest import OperationalCalendar, RegularSeries
from .report import DifferenceCurve, difference_curve
from .windowing import (
    FeatureVector,
    TrainingSet,
    build_feature_vector,
    build_pooled_training_set,
    build_training_set,
)

log = logging.getLogger(__name__)

MAD_TO_SIGMA = 0.6745
RIDGE_LAMBDA = 1e-8


@dataclass(frozen=True)
class FitInfo:
    n_iter: int
    converged: bool
    used_ridge: bool
    scale: float
    # (objective before, objective after) of each reweighting step, both at that step's scale
    history: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class HuberModel:
    """Fitted linear model in raw feature units: ``intercept + weights @ x``."""

    slot: int | str
    intercept: float
    weights: np.ndarray
    labels: tuple[str, ...]
    feature_means: np.ndarray
    feature_scales: np.ndarray
    delta: float
    n_train: int
    info: FitInfo | None = field(default=None, compare=False, repr=False)

    @property
    def pooled(self) -> bool:
        return self.slot == "pooled"

    @property
    def mean_prediction(self) -> float:
        """Prediction at the training feature means, i.e. the average training prediction."""
        return float(self.intercept + self.weights @ self.feature_means)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.weights

    __call__ = predict_matrix

    def to_json(self) -> str:
        doc = {
            "slot": self.slot,
            "intercept": float(self.intercept),
            "weights": [float(v) for v in self.weights],
            "labels": list(self.labels),
            "feature_means": [float(v) for v in self.feature_means],
            "feature_scales": [float(v) for v in self.feature_scales],
            "delta": float(self.delta),
            "n_train": int(self.n_train),
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> HuberModel:
        doc = json.loads(text)
        return cls(
            slot=doc["slot"],
            intercept=float(doc["intercept"]),
            weights=np.array(doc["weights"], dtype=float),
            labels=tuple(doc["labels"]),
            feature_means=np.array(doc["feature_means"], dtype=float),
            feature_scales=np.array(doc["feature_scales"], dtype=float),
            delta=float(doc["delta"]),
            n_train=int(doc["n_train"]),
        )


def huber_objective(residuals: np.ndarray, scale: float, delta: float) -> float:
    """Sum of Huber losses of the scaled residuals."""
    u = np.abs(residuals) / scale
    return float(np.sum(np.where(u <= delta, 0.5 * u * u, delta * u - 0.5 * delta * delta)))


def robust_scale(residuals: np.ndarray, floor: float = 0.0) -> float:
    mad = np.median(np.abs(residuals - np.median(residuals)))
    return max(float(mad) / MAD_TO_SIGMA, floor)


def _weighted_lstsq(A: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, bool, int]:
    """Weighted least squares; returns (solution, used_ridge, rank of the unpenalized system)."""
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    yw = y * sw
    sol, _, rank, _ = np.linalg.lstsq(Aw, yw, rcond=None)
    if rank == A.shape[1]:
        return sol, False, rank
    # rank deficient: tiny ridge on everything but the intercept column
    p = A.shape[1]
    pen = np.sqrt(RIDGE_LAMBDA) * np.eye(p)[1:]
    rank_w = rank
    sol, _, rank, _ = np.linalg.lstsq(np.vstack([Aw, pen]), np.concatenate([yw, np.zeros(p - 1)]), rcond=None)
    if rank < p or not np.all(np.isfinite(sol)):
        raise SingularSystem("weighted normal equations singular even with ridge fallback")
    return sol, True, rank_w


def huber_irls(X: np.ndarray, y: np.ndarray, delta: float = 1.35, max_iter: int = 100,
               tol: float = 1e-8) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, FitInfo]:
    """Huber regression by iteratively reweighted least squares.

    Features and target are standardized internally, so the stopping rule
    does not depend on the units of ``y``. The residual scale is re-estimated
    each iteration as MAD / 0.6745 and a case gets weight
    ``min(1, delta * scale / |r|)``. Starts from ordinary least squares and
    stops when no standardized coefficient moves by ``tol`` or more.

    Returns
    -------
    intercept, weights, feature_means, feature_scales, info
        Coefficients in raw feature units. Constant columns get scale 1 and
        weight 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    n, p = X.shape
    if n < 2:
        raise NotEnoughRows(n)
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValueError("non-finite training data")

    means = X.mean(axis=0)
    sd = X.std(axis=0)
    active = sd > 1e-12 * np.maximum(1.0, np.abs(means))
    scales = np.where(active, sd, 1.0)
    A = np.column_stack([np.ones(n), (X[:, active] - means[active]) / sd[active]])
    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y_sd <= 1e-12 * max(1.0, abs(y_mean)):
        y_sd = 1.0
    y = (y - y_mean) / y_sd
    floor = 1e-12 * max(1.0, float(np.max(np.abs(y))))

    beta, used_ridge, rank = _weighted_lstsq(A, y, np.ones(n))
    history = []
    # with rank >= rows every case is fitted exactly whatever its weight, so reweighting is a no-op
    converged = rank >= n
    it = 0
    scale = robust_scale(y - A @ beta, floor)
    for it in range(1, 0 if converged else max_iter + 1):
        r = y - A @ beta
        scale = robust_scale(r, floor)
        absr = np.abs(r)
        w = np.where(absr <= delta * scale, 1.0, delta * scale / np.maximum(absr, floor))
        new, ridge, _ = _weighted_lstsq(A, y, w)
        used_ridge |= ridge
        history.append((huber_objective(r, scale, delta), huber_objective(y - A @ new, scale, delta)))
        step = float(np.max(np.abs(new - beta)))
        beta = new
        if step < tol:
            converged = True
            break
    if not converged:
        log.warning("IRLS stopped after %d iterations without reaching tol=%g", max_iter, tol)

    weights = np.zeros(p)
    weights[active] = y_sd * beta[1:] / sd[active]
    intercept = float(y_mean + y_sd * beta[0] - weights @ means)
    info = FitInfo(it, converged, used_ridge, y_sd * scale, tuple(history))
    return intercept, weights, means, scales, info


def fit_huber(ts: TrainingSet, delta: float = 1.35, max_iter: int = 100, tol: float = 1e-8) -> HuberModel:
    if len(ts) < 2:
        raise NotEnoughRows(len(ts))
    intercept, weights, means, scales, info = huber_irls(ts.X, ts.y, delta, max_iter, tol)
    return HuberModel(ts.slot, intercept, weights, ts.labels, means, scales, float(delta), len(ts), info)


def fit_ols(X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Plain least squares via the normal equations, for comparison."""
    A = np.column_stack([np.ones(len(y)), X])
    beta = np.linalg.solve(A.T @ A, A.T @ y)
    return float(beta[0]), beta[1:]


def predict(model: HuberModel, x: FeatureVector | np.ndarray) -> float:
    if isinstance(x, FeatureVector):
        if x.values.size != model.weights.size:
            raise LabelMismatch(f"vector has {x.values.size} features, model expects {model.weights.size}")
        if not model.pooled and x.rendered_labels != tuple(model.labels):
            raise LabelMismatch(f"vector for slot {x.target_slot} does not match model for slot {model.slot}")
        values = x.values
    else:
        values = np.asarray(x, dtype=float)
        if values.shape != model.weights.shape:
            raise LabelMismatch(f"expected {model.weights.size} features, got shape {values.shape}")
    return float(model.intercept + model.weights @ values)


# -- per-day forecasting -----------------------------------------------------

def fit_models(series: RegularSeries, cal: OperationalCalendar | None = None, mode: str = "per_slot",
               delta: float = 1.35, max_iter: int = 100, tol: float = 1e-8,
               history_days: int | None = None, threads: int = 1) -> list[HuberModel]:
    """Fit one model per slot (``mode="per_slot"``) or a single shared one (``"pooled"``).

    ``history_days`` keeps only the most recent days of the series.
    """
    cal = cal or series.calendar
    if history_days is not None:
        series = series.last_days(history_days)
    if mode == "pooled":
        return [fit_huber(build_pooled_training_set(series, cal), delta, max_iter, tol)]
    if mode != "per_slot":
        raise ValueError(f"unknown mode {mode!r}")
    sets = [build_training_set(series, s, cal) for s in range(cal.slots_per_day)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda ts: fit_huber(ts, delta, max_iter, tol), sets))
    return [fit_huber(ts, delta, max_iter, tol) for ts in sets]


def model_for_slot(models: Sequence[HuberModel], slot: int) -> HuberModel:
    if len(models) == 1 and models[0].pooled:
        return models[0]
    return models[slot]


@dataclass(frozen=True)
class DayForecast:
    day: date
    predicted: np.ndarray
    vectors: tuple[FeatureVector, ...]


def forecast_day(models: Sequence[HuberModel], series: RegularSeries, target_day: date,
                 cal: OperationalCalendar | None = None) -> DayForecast:
    """Forecast every slot of ``target_day`` from true observations of the two preceding days."""
    cal = cal or series.calendar
    n = cal.slots_per_day
    if not (len(models) == n or (len(models) == 1 and models[0].pooled)):
        raise ValueError(f"expected {n} per-slot models or one pooled model, got {len(models)}")
    vectors = tuple(build_feature_vector(series, target_day, s, cal) for s in range(n))
    pred = np.array([predict(model_for_slot(models, s), fv) for s, fv in enumerate(vectors)])
    return DayForecast(target_day, pred, vectors)


def persistence_forecast(series: RegularSeries, target_day: date) -> np.ndarray:
    """Previous operational day's value at the same clock time."""
    d1 = series.calendar.previous_operational_day(target_day)
    r = series.index_of(d1)
    if r is None:
        raise MissingDay(d1)
    return series.asat[r].copy()


@dataclass(frozen=True)
class DayResult:
    day: date
    true: np.ndarray
    forecast: np.ndarray
    curve: DifferenceCurve

    @property
    def mae(self) -> float:
        return float(np.mean(np.abs(self.curve.diff)))

    @property
    def max_abs_error(self) -> float:
        return self.curve.max_abs

    @property
    def argmax_slot(self) -> int:
        return self.curve.argmax_slot


@dataclass(frozen=True)
class BacktestResult:
    days: tuple[DayResult, ...]

    @property
    def mae(self) -> float:
        return float(np.mean([d.mae for d in self.days]))

    @property
    def max_abs_error(self) -> float:
        return max(d.max_abs_error for d in self.days)

    def per_slot_mae(self) -> np.ndarray:
        return np.mean([np.abs(d.curve.diff) for d in self.days], axis=0)


def backtest(series: RegularSeries, eval_days: Sequence[date], cal: OperationalCalendar | None = None,
             refit_every: int | None = 1, **fit_kwargs) -> BacktestResult:
    """Walk-forward evaluation over ``eval_days``.

    Models only ever see days strictly before the day being forecast and are
    refitted every ``refit_every`` eval days; ``None`` fits once, before the
    earliest eval day, and reuses those models throughout.
    """
    cal = cal or series.calendar
    eval_days = sorted(eval_days)
    models = None
    results = []
    for k, d in enumerate(eval_days):
        r = series.index_of(d)
        if r is None:
            raise MissingDay(d)
        history = series.before(d)
        if len(history) < 3:
            raise InsufficientHistory(3, len(history))
        if models is None or (refit_every is not None and k % refit_every == 0):
            models = fit_models(history, cal, **fit_kwargs)
        fc = forecast_day(models, series, d, cal)
        true = series.asat[r].copy()
        results.append(DayResult(d, true, fc.predicted, difference_curve(true, fc.predicted)))
    return BacktestResult(tuple(results))
