import json
import math

import numpy as np
import pytest

from pipesizer.optimizers import CMAES, Objective, RunRecord, reflect, run_cmaes, run_one_plus_one_ea, run_rls


def sphere(lo=-5.0, hi=5.0, n=10):
    return Objective(lambda X: np.sum(X**2, axis=1), np.full(n, lo), np.full(n, hi))


def test_cmaes_solves_sphere():
    rec, es = run_cmaes(sphere(), 20, seed=1, budget=20_000, tol=0.0)
    assert rec.best_cost < 1e-8
    assert rec.evaluations <= 20_000


@pytest.mark.parametrize("bounds", ["clamp", "reflect", "mirror"])
def test_cmaes_bound_handling_keeps_points_inside(bounds):
    seen = []
    obj = Objective(lambda X: (seen.append(X.copy()), np.sum((X - 1.0) ** 2, axis=1))[1],
                    np.zeros(4), np.full(4, 0.5))
    rec, es = run_cmaes(obj, 10, seed=0, budget=3000, bounds=bounds)
    allx = np.vstack(seen)
    assert allx.min() >= 0.0 and allx.max() <= 0.5
    # optimum sits on the upper corner
    assert np.allclose(rec.best_x, 0.5, atol=1e-3)


def test_cmaes_is_deterministic_for_a_seed():
    a, _ = run_cmaes(sphere(n=5), 10, seed=7, budget=2000)
    b, _ = run_cmaes(sphere(n=5), 10, seed=7, budget=2000)
    assert a.best_cost == b.best_cost and a.curve == b.curve
    c, _ = run_cmaes(sphere(n=5), 10, seed=8, budget=2000)
    assert c.best_cost != a.best_cost


def test_cmaes_stops_on_flat_objective():
    obj = Objective(lambda X: np.ones(len(X)), np.zeros(3), np.ones(3))
    rec, _ = run_cmaes(obj, 6, seed=0, budget=10_000)
    assert rec.termination == "tolfun"
    assert rec.evaluations < 10_000


def test_cmaes_callback_can_stop():
    rec, es = run_cmaes(sphere(n=3), 6, seed=0, budget=10_000, callback=lambda es, X, f: es.generation >= 3)
    assert rec.termination == "callback" and rec.evaluations == 18


def test_cmaes_argument_checks():
    with pytest.raises(ValueError):
        run_cmaes(sphere(), 1)
    with pytest.raises(ValueError):
        run_cmaes(sphere(), 20, budget=10)
    with pytest.raises(ValueError):
        run_cmaes(sphere(), 20, bounds="wrap")
    with pytest.raises(ValueError):
        run_cmaes(sphere(), 20, stop="never")
    with pytest.raises(ValueError):
        CMAES(np.zeros(2), 1.0, 4, np.random.default_rng(0), weights="linear")


def test_equal_weights_and_fixed_sigma_are_degenerate_but_valid():
    es = CMAES(np.zeros(4), 0.3, 8, np.random.default_rng(0), weights="equal", adapt_sigma=False)
    assert np.allclose(es.weights, 0.25) and es.mueff == pytest.approx(4.0)
    for _ in range(20):
        X = es.ask()
        es.tell(X, np.sum(X**2, axis=1))
    assert es.sigma == 0.3
    assert np.allclose(es.C, es.C.T)


def test_equal_weights_fixed_sigma_mean_is_plain_average():
    rng = np.random.default_rng(5)
    es = CMAES(rng.normal(size=5), 0.7, 10, np.random.default_rng(1), weights="equal", adapt_sigma=False)
    X = es.ask()
    f = np.sum(X**2, axis=1)
    es.tell(X, f)
    assert np.allclose(es.mean, X[np.argsort(f)[:5]].mean(axis=0), atol=1e-12)


def test_eigensystem_recovers_from_broken_covariance():
    es = CMAES(np.zeros(3), 1.0, 6, np.random.default_rng(0))
    es.C[0, 0] = np.nan
    es.update_eigensystem()
    assert np.array_equal(es.C, np.eye(3))
    es.C = np.diag([1.0, 1e-30, -1e-20])
    es.update_eigensystem()
    assert np.all(np.linalg.eigvalsh(es.C) > 0)


def test_reflect_folds_into_box():
    lo, hi = np.zeros(3), np.array([1.0, 2.0, 0.0])
    out = reflect(np.array([[1.25, -0.5, 3.0], [2.5, 4.5, -1.0]]), lo, hi)
    assert np.allclose(out, [[0.75, 0.5, 0.0], [0.5, 0.5, 0.0]])


def test_rls_finds_one_dimensional_minimum():
    obj = Objective.from_function(lambda x: float((x[0] - 3.0) ** 2), [-10.0], [10.0])
    rec = run_rls(obj, seed=0, budget=10_000)
    assert abs(rec.best_x[0] - 3.0) < 0.05
    assert rec.evaluations == 10_000


def test_rls_changes_one_coordinate_per_step():
    seen = []
    obj = Objective(lambda X: (seen.append(X[0].copy()), np.sum(X**2, axis=1))[1], -np.ones(6), np.ones(6))
    run_rls(obj, sigma=0.2, seed=3, budget=200)
    inc = seen[0]
    best = np.sum(inc**2)
    for x in seen[1:]:
        assert np.count_nonzero(x != inc) <= 1
        if np.sum(x**2) <= best:
            inc, best = x, np.sum(x**2)


# Binomial(100, 1/100) with zero replaced by one: 1 + (1 - 1/100)**100
EA_MEAN_MUTATIONS = 1.3660323412732292


def test_one_plus_one_ea_mutation_rate():
    counts = []
    obj = Objective(lambda X: np.sum(X**2, axis=1), -np.ones(100), np.ones(100))
    run_one_plus_one_ea(obj, seed=0, budget=100_000, on_mutation=counts.append)
    assert min(counts) >= 1
    # standard error is about 0.003 over 1e5 draws
    assert np.mean(counts) == pytest.approx(EA_MEAN_MUTATIONS, abs=0.015)


def test_mutation_step_must_be_positive():
    with pytest.raises(ValueError):
        run_rls(sphere(), sigma=0.0, budget=10)
    with pytest.raises(ValueError):
        run_one_plus_one_ea(sphere(), budget=0)


def test_objective_tracks_best_and_curve():
    obj = sphere(n=2)
    obj(np.array([[1.0, 1.0], [3.0, 0.0]]))
    obj(np.array([[9.0, 9.0]]))  # clamped to 5, 5
    assert obj.evaluations == 3
    assert obj.best_cost == 2.0 and obj.evals_to_best == 1
    assert obj.curve == [(1, 2.0)]
    assert obj.best_feasible_x is None


def test_run_record_json_round_trip():
    rec, _ = run_cmaes(sphere(n=3), 6, seed=2, budget=600)
    again = RunRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
    assert again.best_cost == rec.best_cost and np.array_equal(again.best_x, rec.best_x)
    assert again.curve == [tuple(p) for p in rec.curve]
    assert again.best_feasible_cost == math.inf and not again.feasible
    assert rec.curve_csv().splitlines()[0] == "evaluation,best_cost"
