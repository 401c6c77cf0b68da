import math

import numpy as np
import pytest

from pipesizer.cost import PenaltyConfig, total_cost
from pipesizer.hybrid import (SUITE_COLUMNS, HybridConfig, SuiteRow, reported_cost, rows_to_csv, run_hybrid,
                              run_suite, success_rate, summarize, with_phases)
from pipesizer.network import DesignVector
from pipesizer.optimizers import RunRecord

from conftest import random_network, star_network


def test_config_validation():
    with pytest.raises(ValueError):
        HybridConfig(phases="gsu")
    with pytest.raises(ValueError):
        HybridConfig(popsize=1)
    with pytest.raises(ValueError):
        HybridConfig(popsize=100, budget=50)
    with pytest.raises(ValueError):
        HybridConfig(phi=0.0)
    with pytest.raises(ValueError):
        HybridConfig(bounds="bounce")


def test_config_defaults_resolve_per_network(nytp, hanoi):
    cfg = HybridConfig()
    assert cfg.resolve_phi(nytp) == pytest.approx(1.2 * 38_637_600)
    assert cfg.resolve_phi(star_network([1.0], [0.0], [1.0])) == math.inf
    assert HybridConfig(phi=5.0).resolve_phi(nytp) == 5.0
    assert cfg.resolve_penalty(nytp).diameter_factor == 0.0
    assert cfg.resolve_penalty(nytp).pressure_factor == nytp.pressure_penalty
    assert cfg.resolve_bounds(nytp) == "mirror" and cfg.resolve_bounds(hanoi) == "clamp"
    assert HybridConfig(bounds="reflect").resolve_bounds(hanoi) == "reflect"
    assert with_phases(cfg, "cma").phases == "cma"


def test_success_rate_counts_runs_within_five_thousand():
    target = 38.64e6
    costs = [38.64e6, 38.644e6, 38.646e6, 38.63e6, math.inf]
    # hand count: first two are within $5000, the rest are not
    assert success_rate(costs, target) == pytest.approx(2 / 5)
    assert success_rate([], target) == 0.0


def _fake(cost, feasible=True):
    def run(seed):
        x = np.zeros(2)
        return RunRecord(seed, "fake", x, cost + 1, 10, 4, [(4, cost + 1)], "budget",
                         x if feasible else None, cost if feasible else math.inf, 7 if feasible else 0)
    return run


def test_run_suite_singleton_echoes_record(nytp):
    rows = run_suite(nytp, [("one", _fake(100.0))], [3])
    assert len(rows) == 1
    r = rows[0]
    assert (r.config_id, r.seed, r.best_cost, r.feasible, r.evals_to_best) == ("one", 3, 100.0, True, 7)
    stats = summarize(rows, target=100.0)
    assert stats[0].runs == 1 and stats[0].success_rate == 1.0 and stats[0].mean_evals_to_best == 7


def test_summary_counts_only_feasible_successes(nytp):
    rows = run_suite(nytp, [("a", _fake(50.0, feasible=False)), ("b", _fake(50.0))], [0, 1])
    stats = {s.config_id: s for s in summarize(rows, target=50.0)}
    assert stats["a"].success_rate == 0.0 and stats["b"].success_rate == 1.0
    assert math.isnan(summarize(rows, None)[0].success_rate)
    with pytest.raises(ValueError):
        run_suite(nytp, [], [0])


def test_rows_to_csv_schema():
    rows = [SuiteRow("h", 0, 1.5, True, 12, 0.25)]
    lines = rows_to_csv(rows).splitlines()
    assert lines[0] == ",".join(SUITE_COLUMNS)
    assert lines[1] == "h,0,1.5,1,12,0.250"


def test_reported_cost_prefers_feasible():
    rec = _fake(10.0)(0)
    assert reported_cost(rec) == (10.0, True, 7)
    rec = _fake(10.0, feasible=False)(0)
    assert reported_cost(rec) == (11.0, False, 4)


def _small():
    return random_network(np.random.default_rng(11), 6, 2)


def test_small_hybrid_ends_commercial_feasible_and_within_budget():
    net = _small()
    cfg = HybridConfig(popsize=20, budget=3000)
    rec = run_hybrid(net, cfg, seed=0)
    assert rec.feasible
    d = DesignVector(rec.best_feasible_x)
    assert np.all(np.isin(d.diameters, net.table.array))
    b = total_cost(net, d)
    assert b.sum_pv == 0.0 and b.pipe_cost == pytest.approx(rec.best_feasible_cost)
    assert rec.evaluations <= cfg.budget + net.decision_count
    assert rec.best_feasible_cost <= rec.extra["cost_before_trim"]


@pytest.mark.parametrize("seed", range(3))
def test_trim_phase_never_hurts(seed):
    net = _small()
    full = run_hybrid(net, HybridConfig(popsize=20, budget=3000), seed=seed)
    repaired = run_hybrid(net, HybridConfig(popsize=20, budget=3000, phases="cma+gsu"), seed=seed)
    assert full.best_feasible_cost <= repaired.best_feasible_cost


def test_hybrid_is_deterministic():
    net = _small()
    a = run_hybrid(net, HybridConfig(popsize=20, budget=2000), seed=4)
    b = run_hybrid(net, HybridConfig(popsize=20, budget=2000), seed=4)
    assert a.best_feasible_cost == b.best_feasible_cost and a.curve == b.curve


def test_unreachable_heads_give_infeasible_record():
    net = star_network([1000.0, 1000.0], [0.02, 0.02], [150.0, 50.0])
    rec = run_hybrid(net, HybridConfig(popsize=10, budget=500, penalty=PenaltyConfig(diameter_factor=0.0)), seed=0)
    assert not rec.feasible and rec.best_feasible_x is None


def test_nytp_short_run_is_feasible(nytp):
    cfg = HybridConfig(popsize=100, budget=10_000)
    rec = run_hybrid(nytp, cfg, seed=1)
    assert rec.feasible
    assert rec.evaluations <= cfg.budget + 21
    assert rec.best_feasible_cost < 45e6
