from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asatx.attribution import (
    Attribution,
    BackgroundSet,
    CoalitionMask,
    coalition_value,
    efficiency_check,
    exact_shapley,
    linear_contributions,
    monte_carlo_shapley,
    reduced_exact_shapley,
)
from asatx.errors import EmptyBackground, LabelMismatch, TooManyFeatures
from asatx.regression import HuberModel


def linear_model(intercept, weights):
    w = np.asarray(weights, dtype=float)
    labels = tuple(f"x{i}" for i in range(w.size))
    return HuberModel(0, float(intercept), w, labels, np.zeros(w.size), np.ones(w.size), 1.35, 10)


def pairwise_model(M, seed=7):
    r = np.random.default_rng(seed)
    C = np.triu(r.normal(size=(M, M)), 1)
    b = r.normal(size=M)

    def f(X):
        X = np.atleast_2d(X)
        return np.einsum("ni,ij,nj->n", X, C, X) + X @ b

    return f


def brute_force_shapley(f, x, bg):
    """Average marginal contribution over all M! orderings, each coalition averaged over every bg row."""
    M = x.size

    def v(S):
        hybrid = bg.copy()
        hybrid[:, list(S)] = x[list(S)]
        return float(np.mean(f(hybrid)))

    phi = np.zeros(M)
    perms = list(itertools.permutations(range(M)))
    for p in perms:
        before = []
        for i in p:
            phi[i] += v(before + [i]) - v(before)
            before.append(i)
    return phi / len(perms)


# -- linear_contributions ------------------------------------------------------

def test_zero_weights(rng):
    m = linear_model(3.5, np.zeros(5))
    a = linear_contributions(m, rng.normal(size=5), rng.normal(size=(20, 5)))
    assert np.all(a.phi == 0) and a.base_value == 3.5


def test_point_at_background_mean(rng):
    bg = rng.normal(size=(30, 4))
    a = linear_contributions(linear_model(1.0, [1, -2, 3, 0.5]), bg.mean(axis=0), bg)
    np.testing.assert_allclose(a.phi, 0, atol=1e-12)


def test_single_feature_example():
    a = linear_contributions(linear_model(0.0, [2.0]), np.array([3.0]), np.array([[0.0], [2.0]]))
    assert a.phi[0] == 4.0
    assert a.prediction - a.base_value == 4.0


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(1, 39))
def test_linear_efficiency(seed, M):
    r = np.random.default_rng(seed)
    m = linear_model(r.normal() * 10, r.normal(size=M))
    a = linear_contributions(m, r.normal(size=M) * 5 + 20, r.normal(size=(25, M)) * 5 + 20)
    assert efficiency_check(a, a.prediction, 1e-9).passed


def test_linear_errors(rng):
    m = linear_model(0.0, [1.0, 2.0])
    with pytest.raises(EmptyBackground):
        linear_contributions(m, np.ones(2), np.empty((0, 2)))
    with pytest.raises(LabelMismatch):
        linear_contributions(m, np.ones(3), np.ones((4, 3)))
    with pytest.raises(EmptyBackground):
        BackgroundSet(np.empty((0, 3)))


# -- coalition_value -----------------------------------------------------------

def test_all_present_is_exact(rng):
    m = linear_model(1.0, [1.0, 2.0, 3.0])
    x, bg = rng.normal(size=3), rng.normal(size=(10, 3))
    base = float(np.mean(m.predict_matrix(bg)))
    got = coalition_value(m, x, CoalitionMask.of(3, [0, 1, 2]), bg, n_draws=1, rng=rng)
    assert got == pytest.approx(m.predict_matrix(x[None])[0] - base, abs=1e-12)


def test_all_absent_exhaustive_is_zero(rng):
    f = pairwise_model(4)
    bg = rng.normal(size=(17, 4))
    assert abs(coalition_value(f, rng.normal(size=4), CoalitionMask.of(4, []), bg, exhaustive=True)) < 1e-12


def test_partial_coalition_matches_closed_form(rng):
    w = np.array([0.5, 2.0, -1.5, 1.0, 3.0])
    m = linear_model(2.0, w)
    x, bg = rng.normal(size=5), rng.normal(size=(200, 5))
    expected = sum(w[i] * (x[i] - bg[:, i].mean()) for i in (1, 2))
    n = 5000
    got = coalition_value(m, x, CoalitionMask.of(5, [1, 2]), bg, n_draws=n, rng=np.random.default_rng(3))
    # SE of the mean of f(hybrid) under uniform draws: sd over background rows / sqrt(n)
    absent = [0, 3, 4]
    se = np.std(bg[:, absent] @ w[absent]) / math.sqrt(n)
    assert abs(got - expected) <= 4 * se


def test_n_draws_must_be_positive(rng):
    with pytest.raises(ValueError):
        coalition_value(linear_model(0, [1.0]), np.ones(1), CoalitionMask.of(1, []), np.ones((2, 1)), n_draws=0)


# -- exact_shapley ---------------------------------------------------------------

@pytest.mark.parametrize("M", [1, 2, 5, 8])
def test_exact_matches_linear(rng, M):
    m = linear_model(rng.normal(), rng.normal(size=M))
    x, bg = rng.normal(size=M), rng.normal(size=(40, M))
    ex = exact_shapley(m, x, bg)
    lin = linear_contributions(m, x, bg)
    np.testing.assert_allclose(ex.phi, lin.phi, atol=1e-9)
    assert ex.base_value == pytest.approx(lin.base_value, abs=1e-9)
    assert ex.residual <= 1e-9


def test_exact_matches_brute_force(rng):
    f = pairwise_model(4, seed=1)
    x, bg = rng.normal(size=4), rng.normal(size=(15, 4))
    np.testing.assert_allclose(exact_shapley(f, x, bg).phi, brute_force_shapley(f, x, bg), atol=1e-12)


def test_symmetry(rng):
    col = rng.normal(size=20)
    bg = np.column_stack([col, col, rng.normal(size=20)])
    x = np.array([1.3, 1.3, -0.2])

    def f(X):
        return X[:, 0] + X[:, 1] + X[:, 0] * X[:, 1] * X[:, 2]

    a = exact_shapley(f, x, bg)
    assert a.phi[0] == pytest.approx(a.phi[1], abs=1e-12)


def test_dummy(rng):
    def f(X):
        return X[:, 0] * X[:, 1] + np.sin(X[:, 3])

    a = exact_shapley(f, rng.normal(size=4), rng.normal(size=(12, 4)))
    assert abs(a.phi[2]) < 1e-12


def test_additivity(rng):
    g, h = pairwise_model(5, seed=2), pairwise_model(5, seed=3)
    x, bg = rng.normal(size=5), rng.normal(size=(10, 5))
    sum_phi = exact_shapley(g, x, bg).phi + exact_shapley(h, x, bg).phi
    np.testing.assert_allclose(exact_shapley(lambda X: g(X) + h(X), x, bg).phi, sum_phi, atol=1e-9)


def test_exact_efficiency_nonlinear(rng):
    f = pairwise_model(7)
    a = exact_shapley(f, rng.normal(size=7), rng.normal(size=(30, 7)))
    assert efficiency_check(a, a.prediction, 1e-9).passed


def test_too_many_features():
    with pytest.raises(TooManyFeatures) as exc:
        exact_shapley(linear_model(0, np.ones(21)), np.ones(21), np.ones((2, 21)))
    assert (exc.value.n_features, exc.value.max_features) == (21, 20)


def test_reduced_exact_on_39_features(rng):
    m = linear_model(20.0, rng.normal(size=39))
    x, bg = rng.normal(size=39), rng.normal(size=(50, 39))
    red = reduced_exact_shapley(m, x, bg, max_players=12)
    np.testing.assert_allclose(red.phi, linear_contributions(m, x, bg).phi, atol=1e-9)
    assert red.residual <= 1e-9
    assert red.method == "shapley_exact"


# -- Monte-Carlo -----------------------------------------------------------------

def test_mc_constant_model(rng):
    a = monte_carlo_shapley(lambda X: np.full(len(X), 4.2), rng.normal(size=6), rng.normal(size=(10, 6)),
                            n_permutations=50, seed=9)
    assert np.all(a.phi == 0)


def test_mc_pairwise_within_3_se(rng):
    f = pairwise_model(6)
    x, bg = rng.normal(size=6), rng.normal(size=(50, 6))
    exact = exact_shapley(f, x, bg)
    mc = monte_carlo_shapley(f, x, bg, n_permutations=2000, seed=4)
    assert np.all(np.abs(mc.phi - exact.phi) <= 3 * mc.std_errors)
    assert efficiency_check(mc, mc.prediction, mc.tolerance()).passed


def test_mc_seed_determinism(rng):
    f = pairwise_model(6)
    x, bg = rng.normal(size=6), rng.normal(size=(50, 6))
    a = monte_carlo_shapley(f, x, bg, n_permutations=500, seed=11)
    b = monte_carlo_shapley(f, x, bg, n_permutations=500, seed=11)
    c = monte_carlo_shapley(f, x, bg, n_permutations=500, seed=12)
    assert a.phi.tobytes() == b.phi.tobytes() and a.std_errors.tobytes() == b.std_errors.tobytes()
    assert not np.array_equal(a.phi, c.phi)
    assert np.all(np.abs(a.phi - c.phi) <= 6 * np.hypot(a.std_errors, c.std_errors))


def test_mc_symmetry_and_dummy(rng):
    col = rng.normal(size=40)
    bg = np.column_stack([col, col, rng.normal(size=40)])

    def f(X):
        return X[:, 0] * X[:, 1] + X[:, 0] + X[:, 1]

    a = monte_carlo_shapley(f, np.array([0.8, 0.8, 5.0]), bg, n_permutations=3000, seed=1)
    assert abs(a.phi[0] - a.phi[1]) <= 3 * np.hypot(a.std_errors[0], a.std_errors[1])
    assert abs(a.phi[2]) < 3 * max(a.std_errors[2], 1e-15)


@pytest.mark.parametrize("workers", [2, 3])
def test_mc_workers_deterministic(rng, workers):
    f = pairwise_model(5)
    x, bg = rng.normal(size=5), rng.normal(size=(30, 5))
    a = monte_carlo_shapley(f, x, bg, n_permutations=301, seed=5, n_workers=workers)
    b = monte_carlo_shapley(f, x, bg, n_permutations=301, seed=5, n_workers=workers)
    assert a.phi.tobytes() == b.phi.tobytes()
    assert a.n_workers == workers and a.to_dict()["n_workers"] == workers
    assert a.n_samples == 301


def test_mc_needs_two_permutations(rng):
    with pytest.raises(ValueError):
        monte_carlo_shapley(lambda X: X[:, 0], np.ones(2), np.ones((3, 2)), n_permutations=1)


# -- efficiency_check and serialization ------------------------------------------

def test_efficiency_check_detects_broken_sum(rng):
    m = linear_model(0.0, [1.0, 2.0, 3.0])
    a = linear_contributions(m, np.array([1.0, 2.0, 3.0]), rng.normal(size=(10, 3)))
    assert efficiency_check(a, a.prediction, 1e-9).passed
    phi = a.phi.copy()
    k = int(np.argmax(np.abs(phi)))
    phi[k] = 0.0
    broken = Attribution(a.base_value, phi, a.labels, a.method, a.prediction, a.values, a.indices)
    res = efficiency_check(broken, a.prediction, 1e-9)
    assert not res.passed and res.residual == pytest.approx(abs(a.phi[k]))


def test_attribution_dict_round_trip(rng):
    f = pairwise_model(4)
    a = monte_carlo_shapley(f, rng.normal(size=4), rng.normal(size=(8, 4)), n_permutations=20, seed=2)
    doc = a.to_dict()
    assert {"method", "base_value", "labels", "phi", "std_errors", "n_samples", "seed",
            "efficiency_residual"} <= set(doc)
    b = Attribution.from_dict(doc)
    assert b.phi.tobytes() == a.phi.tobytes() and b.std_errors.tobytes() == a.std_errors.tobytes()
    assert b.to_json() == a.to_json()
