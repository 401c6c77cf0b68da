"""CMA-ES with in-loop greedy repair and a final greedy trim, plus a suite runner."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cost import Evaluator, PenaltyConfig
from .greedy import BudgetExhausted, InfeasibleNetworkError, downward_greedy, upward_greedy
from .network import DesignVector, Flavor, PipeNetwork, round_to_commercial
from .optimizers import Objective, RunRecord, run_cmaes

log = logging.getLogger(__name__)

PHASES = ("cma", "cma+gsu", "cma+gsu+gsd")
PHI_FACTOR = 1.2
SUCCESS_TOL = 5000.0  # currency; $0.005 M


@dataclass(frozen=True)
class HybridConfig:
    """Settings of one hybrid run.

    ``phi`` defaults to ``PHI_FACTOR`` times the network's target cost.
    ``penalty`` defaults to the network's pressure factor with the
    off-grid diameter penalty switched off, since CMA-ES searches the
    continuous space and rounding happens explicitly. ``bounds`` defaults to
    the bound handling tuned for the network.
    """

    popsize: int = 400
    budget: int = 200_000
    tol: float = 1e-5
    phi: float | None = None
    penalty: PenaltyConfig | None = None
    phases: str = "cma+gsu+gsd"
    scenario: str = "continuous"
    bounds: str | None = None
    stop: str = "spread"

    def __post_init__(self):
        if self.phases not in PHASES:
            raise ValueError(f"phases must be one of {PHASES}")
        if self.popsize < 2:
            raise ValueError("population size must be at least 2")
        if self.budget < self.popsize:
            raise ValueError("budget must cover at least one generation")
        if self.phi is not None and not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.bounds not in (None, "clamp", "reflect", "mirror"):
            raise ValueError(f"unknown bound handling {self.bounds!r}")

    def resolve_phi(self, network: PipeNetwork) -> float:
        if self.phi is not None:
            return self.phi
        if network.target_cost is None:
            return math.inf
        return PHI_FACTOR * network.target_cost

    def resolve_bounds(self, network: PipeNetwork) -> str:
        return self.bounds or network.bound_handling

    def resolve_penalty(self, network: PipeNetwork) -> PenaltyConfig:
        if self.penalty is not None:
            return self.penalty
        return PenaltyConfig.for_network(network, diameter_factor=0.0)


def run_hybrid(network: PipeNetwork, config: HybridConfig, seed: int | None = None) -> RunRecord:
    """One hybrid run. The budget is shared by CMA-ES and both greedy phases.

    ``best_x``/``best_cost`` of the record are the CMA-ES best-ever point;
    ``best_feasible_*`` is the final commercial design with zero violation.
    """
    evaluator = Evaluator(network, config.resolve_penalty(network), scenario=config.scenario)
    obj = Objective.from_network(evaluator)
    phi = config.resolve_phi(network)
    repair = "gsu" in config.phases
    N = network.decision_count
    state = {"seen": math.inf, "repairs": 0, "rounded": None, "out_of_budget": False,
             "unrepairable": False}

    def on_generation(es, X, f):
        if obj.best_cost >= state["seen"]:
            return False
        state["seen"] = obj.best_cost
        rounded = round_to_commercial(DesignVector(obj.best_x), network.table).diameters
        state["rounded"] = rounded
        _, _, b = obj.evaluate_batch(rounded, transformed=True)
        if repair and not state["unrepairable"] and b.cost[0] < phi and b.sum_pv[0] > 0:
            state["repairs"] += 1
            try:
                upward_greedy(network, DesignVector(rounded, Flavor.COMMERCIAL), objective=obj,
                              budget=config.budget)
            except BudgetExhausted:
                state["out_of_budget"] = True
                return True
            except InfeasibleNetworkError as exc:
                log.info("repair disabled: %s", exc)
                state["unrepairable"] = True
        return obj.evaluations >= config.budget

    record, es = run_cmaes(obj, config.popsize, seed=seed, budget=config.budget, tol=config.tol,
                           callback=on_generation, bounds=config.resolve_bounds(network), stop=config.stop)
    cma_best = obj.best_cost
    termination = "budget" if state["out_of_budget"] else record.termination

    if obj.best_feasible_x is None and state["rounded"] is not None and not state["unrepairable"]:
        # last resort: repair the rounded best once, allowed to overrun by one sweep
        try:
            upward_greedy(network, DesignVector(state["rounded"], Flavor.COMMERCIAL), objective=obj,
                          budget=max(obj.evaluations, config.budget) + N)
        except (BudgetExhausted, InfeasibleNetworkError) as exc:
            log.info("last-resort repair failed: %s", exc)

    trimmed_from = obj.best_feasible_cost
    if config.phases == "cma+gsu+gsd" and obj.best_feasible_x is not None:
        downward_greedy(network, DesignVector(obj.best_feasible_x, Flavor.COMMERCIAL), objective=obj,
                        budget=max(obj.evaluations, config.budget) + N)

    return RunRecord(
        seed=seed, algorithm=f"hybrid[{config.phases}]",
        best_x=record.best_x, best_cost=cma_best, evaluations=obj.evaluations,
        evals_to_best=record.evals_to_best, curve=record.curve, termination=termination,
        best_feasible_x=obj.best_feasible_x, best_feasible_cost=obj.best_feasible_cost,
        evals_to_feasible=obj.evals_to_feasible,
        extra={"popsize": config.popsize, "phases": config.phases, "phi": phi,
               "repairs": state["repairs"], "generations": es.generation,
               "cost_before_trim": trimmed_from},
    )


@dataclass
class SuiteRow:
    config_id: str
    seed: int
    best_cost: float
    feasible: bool
    evals_to_best: int
    runtime_s: float
    record: RunRecord = field(repr=False, compare=False, default=None)


@dataclass
class SuiteStats:
    config_id: str
    runs: int
    best_cost: float
    mean_cost: float
    success_rate: float
    mean_evals_to_best: float


Runner = Callable[[int], RunRecord]


def _runner(network, config) -> Runner:
    if isinstance(config, HybridConfig):
        return lambda seed: run_hybrid(network, config, seed)
    return config


def reported_cost(record: RunRecord) -> tuple[float, bool, int]:
    """The cost a run is judged by: its best feasible design if it has one."""
    if record.best_feasible_x is not None:
        return record.best_feasible_cost, True, record.evals_to_feasible
    return record.best_cost, False, record.evals_to_best


def run_suite(network: PipeNetwork, configs: Sequence[tuple[str, HybridConfig | Runner]],
              seeds: Sequence[int], on_row: Callable[[SuiteRow], None] | None = None
              ) -> list[SuiteRow]:
    """Run every (config, seed) pair. Configs are hybrid settings or ``seed -> RunRecord``."""
    if not configs or not seeds:
        raise ValueError("configs and seeds must be nonempty")
    rows = []
    for config_id, config in configs:
        run = _runner(network, config)
        for seed in seeds:
            t0 = time.perf_counter()
            rec = run(seed)
            cost, feasible, evals = reported_cost(rec)
            row = SuiteRow(config_id, seed, cost, feasible, evals, time.perf_counter() - t0, rec)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def success_rate(costs: Sequence[float], target: float, tol: float = SUCCESS_TOL) -> float:
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return 0.0
    return float(np.mean(np.abs(costs - target) <= tol))


def summarize(rows: Sequence[SuiteRow], target: float | None) -> list[SuiteStats]:
    """Per-config statistics; success only counts feasible runs within tolerance of ``target``."""
    out = []
    for cid in dict.fromkeys(r.config_id for r in rows):
        mine = [r for r in rows if r.config_id == cid]
        costs = np.array([r.best_cost for r in mine])
        ok = [r.best_cost if r.feasible else math.inf for r in mine]
        rate = success_rate(ok, target) if target is not None else math.nan
        out.append(SuiteStats(cid, len(mine), float(costs.min()), float(costs.mean()), rate,
                              float(np.mean([r.evals_to_best for r in mine]))))
    return out


SUITE_COLUMNS = ("config_id", "seed", "best_cost", "feasible", "evals_to_best", "runtime_s")


def rows_to_csv(rows: Sequence[SuiteRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUITE_COLUMNS)
    for r in rows:
        w.writerow([r.config_id, r.seed, repr(float(r.best_cost)), int(r.feasible),
                    r.evals_to_best, f"{r.runtime_s:.3f}"])
    return buf.getvalue()


def with_phases(config: HybridConfig, phases: str) -> HybridConfig:
    return replace(config, phases=phases)
