"""Shapley-value feature attributions for a single forecast point.

Three routes are provided:

* :func:`linear_contributions` - closed form for linear models,
  ``phi_i = beta_i * (x_i - mean_i)``.
* :func:`exact_shapley` - full enumeration of all coalitions, every
  background row used once per coalition. Deterministic; meant as an oracle
  for small feature counts.
* :func:`monte_carlo_shapley` - permutation sampling with one background row
  per permutation and per-feature standard errors.

Absent features are always filled jointly from one background row
(interventional expectation over the background set), and the base value is
the mean prediction over the whole background set.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyBackground, LabelMismatch, TooManyFeatures
from .windowing import FeatureVector

PredictFn = Callable[[np.ndarray], np.ndarray]

LINEAR_EXACT = "linear_exact"
SHAPLEY_EXACT = "shapley_exact"
SHAPLEY_MC = "shapley_mc"
EXACT_TOL = 1e-9
MC_TOL_SE = 4.0


@dataclass(frozen=True)
class Attribution:
    base_value: float
    phi: np.ndarray
    labels: tuple[str, ...]
    method: str
    prediction: float
    values: np.ndarray
    indices: tuple[int, ...]
    std_errors: np.ndarray | None = None
    n_samples: int | None = None
    seed: int | None = None
    n_workers: int | None = None

    @property
    def residual(self) -> float:
        return abs(self.base_value + float(np.sum(self.phi)) - self.prediction)

    def tolerance(self) -> float:
        """Closure tolerance: 1e-9 for exact routes, 4 x the largest standard error for Monte-Carlo."""
        if self.method == SHAPLEY_MC and self.std_errors is not None:
            return max(MC_TOL_SE * float(np.max(self.std_errors)), EXACT_TOL)
        return EXACT_TOL

    def to_dict(self) -> dict:
        doc = {
            "method": self.method,
            "base_value": float(self.base_value),
            "labels": list(self.labels),
            "phi": [float(v) for v in self.phi],
        }
        if self.std_errors is not None:
            doc["std_errors"] = [float(v) for v in self.std_errors]
        if self.n_samples is not None:
            doc["n_samples"] = self.n_samples
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.n_workers is not None:
            doc["n_workers"] = self.n_workers
        doc["efficiency_residual"] = self.residual
        doc["prediction"] = float(self.prediction)
        doc["values"] = [float(v) for v in self.values]
        doc["indices"] = list(self.indices)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> Attribution:
        se = doc.get("std_errors")
        return cls(
            base_value=float(doc["base_value"]),
            phi=np.array(doc["phi"], dtype=float),
            labels=tuple(doc["labels"]),
            method=doc["method"],
            prediction=float(doc["prediction"]),
            values=np.array(doc["values"], dtype=float),
            indices=tuple(doc["indices"]),
            std_errors=None if se is None else np.array(se, dtype=float),
            n_samples=doc.get("n_samples"),
            seed=doc.get("seed"),
            n_workers=doc.get("n_workers"),
        )


class EfficiencyResult(NamedTuple):
    passed: bool
    residual: float


def efficiency_check(attr: Attribution, prediction: float, tol: float) -> EfficiencyResult:
    residual = abs(attr.base_value + float(np.sum(attr.phi)) - prediction)
    return EfficiencyResult(residual <= tol, residual)


@dataclass(frozen=True)
class CoalitionMask:
    present: np.ndarray

    @classmethod
    def of(cls, n: int, members: Sequence[int]) -> CoalitionMask:
        m = np.zeros(n, dtype=bool)
        m[list(members)] = True
        return cls(m)


# -- helpers -----------------------------------------------------------------

def _predict_fn(model) -> PredictFn:
    if hasattr(model, "predict_matrix"):
        return model.predict_matrix
    if callable(model):
        return model
    raise TypeError("model must be a HuberModel or a callable on 2-D arrays")


def _point(x, labels: Sequence[str] | None = None):
    if isinstance(x, FeatureVector):
        return x.values.astype(float), x.rendered_labels, tuple(int(i) for i in x.label_indices)
    values = np.asarray(x, dtype=float).ravel()
    idx = tuple(range(values.size))
    return values, tuple(labels) if labels is not None else tuple(f"x{i}" for i in idx), idx


def _background(bg, n_features: int) -> np.ndarray:
    rows = np.asarray(getattr(bg, "rows", bg), dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyBackground()
    if rows.shape[1] != n_features:
        raise LabelMismatch(f"background has {rows.shape[1]} columns, point has {n_features}")
    return rows


@dataclass(frozen=True)
class BackgroundSet:
    """Empirical sample standing in for the feature distribution, usually the training features."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise EmptyBackground()
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_training_set(cls, ts) -> BackgroundSet:
        return cls(ts.X)


def substream(seed: int, worker: int) -> np.random.Generator:
    """Counter-based generator for one worker, derived from ``(seed, worker)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(worker,))))


# -- closed form -------------------------------------------------------------

def linear_contributions(model, x, bg) -> Attribution:
    """``phi_i = beta_i * x_i - beta_i * mean(bg[:, i])``; base is the mean background prediction."""
    values, labels, idx = _point(x, getattr(model, "labels", None))
    if isinstance(x, FeatureVector) and not model.pooled and tuple(model.labels) != labels:
        raise LabelMismatch(f"vector for slot {x.target_slot} does not match model for slot {model.slot}")
    if values.size != model.weights.size:
        raise LabelMismatch(f"point has {values.size} features, model expects {model.weights.size}")
    rows = _background(bg, values.size)
    phi = model.weights * values - model.weights * rows.mean(axis=0)
    base = float(np.mean(model.predict_matrix(rows)))
    pred = float(model.intercept + model.weights @ values)
    return Attribution(base, phi, labels, LINEAR_EXACT, pred, values, idx)


# -- coalitions --------------------------------------------------------------

def coalition_value(model, x, mask: CoalitionMask | np.ndarray, bg, n_draws: int = 100,
                    rng: np.random.Generator | None = None, exhaustive: bool = False,
                    base_value: float | None = None) -> float:
    """Expected prediction with ``mask`` features fixed to ``x``, minus the base value.

    Absent features come jointly from background rows: ``n_draws`` rows drawn
    uniformly with replacement, or every row once when ``exhaustive``.
    """
    f = _predict_fn(model)
    values, _, _ = _point(x)
    rows = _background(bg, values.size)
    present = np.asarray(getattr(mask, "present", mask), dtype=bool)
    if base_value is None:
        base_value = float(np.mean(f(rows)))
    if exhaustive:
        donors = rows
    else:
        if n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        donors = rows[rng.integers(0, rows.shape[0], n_draws)]
    hybrid = np.where(present, values, donors)
    return float(np.mean(f(hybrid))) - base_value


def _coalition_table(f: PredictFn, values: np.ndarray, rows: np.ndarray,
                     groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Mean prediction for every coalition of ``groups``, indexed by bitmask."""
    P, M, nbg = len(groups), values.size, rows.shape[0]
    member = np.zeros((P, M), dtype=bool)
    for g, cols in enumerate(groups):
        member[g, list(cols)] = True
    masks = np.arange(1 << P)
    bits = ((masks[:, None] >> np.arange(P)) & 1).astype(bool)
    present = (bits.astype(np.int64) @ member.astype(np.int64)) > 0
    out = np.empty(masks.size)
    chunk = max(1, (1 << 21) // max(1, nbg * M))
    for lo in range(0, masks.size, chunk):
        p = present[lo:lo + chunk]
        hybrid = np.where(p[:, None, :], values, rows[None, :, :])
        out[lo:lo + chunk] = f(hybrid.reshape(-1, M)).reshape(p.shape[0], nbg).mean(axis=1)
    return out


def _shapley_from_table(v: np.ndarray, P: int) -> np.ndarray:
    masks = np.arange(1 << P)
    sizes = np.bitwise_count(masks.astype(np.uint64)).astype(int)
    w = np.array([math.factorial(s) * math.factorial(P - s - 1) / math.factorial(P) for s in range(P)])
    phi = np.empty(P)
    for j in range(P):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = np.sum(w[sizes[without]] * (v[without | bit] - v[without]))
    return phi


def grouped_shapley(model, x, bg, groups: Sequence[Sequence[int]]) -> tuple[np.ndarray, float]:
    """Exact Shapley values of feature groups treated as single players.

    Returns per-group values and the base value (mean background prediction).
    """
    f = _predict_fn(model)
    values, _, _ = _point(x)
    rows = _background(bg, values.size)
    v = _coalition_table(f, values, rows, groups)
    return _shapley_from_table(v, len(groups)), float(v[0])


def exact_shapley(model, x, bg, max_features: int = 20, labels: Sequence[str] | None = None) -> Attribution:
    f = _predict_fn(model)
    values, labels, idx = _point(x, labels)
    M = values.size
    if M > max_features:
        raise TooManyFeatures(M, max_features)
    phi, base = grouped_shapley(f, values, bg, [[i] for i in range(M)])
    pred = float(f(values[None, :])[0])
    return Attribution(base, phi, labels, SHAPLEY_EXACT, pred, values, idx)


def reduced_exact_shapley(model, x, bg, max_players: int) -> Attribution:
    """Exact enumeration over a reduced player set, for linear models with many features.

    The ``max_players - 1`` features with the largest linear contributions are
    individual players; all other features form one joint player. The joint
    player's value is handed back to its members as their linear contribution
    plus an equal share of any remainder, so the result stays efficient.
    """
    if max_players < 2:
        raise ValueError("max_players must be >= 2")
    lin = linear_contributions(model, x, bg)
    M = lin.values.size
    if M <= max_players:
        a = exact_shapley(model, lin.values, bg, max_features=max_players, labels=lin.labels)
        return Attribution(a.base_value, a.phi, lin.labels, SHAPLEY_EXACT, a.prediction, lin.values, lin.indices)
    order = np.argsort(-np.abs(lin.phi), kind="stable")
    solo = sorted(order[:max_players - 1].tolist())
    rest = sorted(order[max_players - 1:].tolist())
    group_phi, base = grouped_shapley(model, lin.values, bg, [[i] for i in solo] + [rest])
    phi = np.empty(M)
    phi[solo] = group_phi[:-1]
    share = (group_phi[-1] - lin.phi[rest].sum()) / len(rest)
    phi[rest] = lin.phi[rest] + share
    return Attribution(base, phi, lin.labels, SHAPLEY_EXACT, lin.prediction, lin.values, lin.indices)


# -- Monte-Carlo -------------------------------------------------------------

def _split(n: int, k: int) -> list[int]:
    q, r = divmod(n, k)
    return [q + (1 if i < r else 0) for i in range(k)]


def _permutation_samples(f: PredictFn, values: np.ndarray, rows: np.ndarray, n: int,
                         rng: np.random.Generator, batch: int = 64) -> np.ndarray:
    """Marginal-contribution samples, shape ``(n, M)``; row j comes from permutation j."""
    M, nbg = values.size, rows.shape[0]
    # background rows are cycled through in shuffled passes so each row is used evenly
    cycles = -(-n // nbg)
    donors = np.concatenate([rng.permutation(nbg) for _ in range(cycles)])[:n]
    perms = rng.permuted(np.tile(np.arange(M), (n, 1)), axis=1)
    steps = np.arange(M + 1)[:, None]
    out = np.empty((n, M))
    for lo in range(0, n, batch):
        p = perms[lo:lo + batch]
        b = rows[donors[lo:lo + batch]]
        rank = np.argsort(p, axis=1)
        present = rank[:, None, :] < steps[None, :, :]
        hybrid = np.where(present, values, b[:, None, :])
        preds = f(hybrid.reshape(-1, M)).reshape(p.shape[0], M + 1)
        deltas = np.diff(preds, axis=1)
        np.put_along_axis(out[lo:lo + batch], p, deltas, axis=1)
    return out


def monte_carlo_shapley(model, x, bg, n_permutations: int = 2000, seed: int = 0, n_workers: int = 1,
                        labels: Sequence[str] | None = None) -> Attribution:
    """Permutation-sampling Shapley estimate.

    Each permutation walks the features in random order starting from one
    background row, switching features to their explained values one at a
    time; the change in prediction at each switch is one sample of that
    feature's marginal contribution. Permutations are split into contiguous
    blocks across ``n_workers``, each with its own substream, so the result
    depends on ``(seed, n_workers)`` only.
    """
    if n_permutations < 2:
        raise ValueError("n_permutations must be >= 2")
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    f = _predict_fn(model)
    values, labels, idx = _point(x, labels)
    rows = _background(bg, values.size)
    sizes = _split(n_permutations, n_workers)

    def work(k: int) -> np.ndarray:
        if not sizes[k]:
            return np.empty((0, values.size))
        return _permutation_samples(f, values, rows, sizes[k], substream(seed, k))

    if n_workers == 1:
        blocks = [work(0)]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            blocks = list(pool.map(work, range(n_workers)))
    samples = np.concatenate(blocks)
    phi = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_permutations)
    base = float(np.mean(f(rows)))
    pred = float(f(values[None, :])[0])
    return Attribution(base, phi, labels, SHAPLEY_MC, pred, values, idx,
                       std_errors=se, n_samples=n_permutations, seed=seed, n_workers=n_workers)
