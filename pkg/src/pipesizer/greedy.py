"""Upward repair and downward trimming over commercial designs.

Both searches move one pipe by one commercial size per step. A candidate's
effect on the network-wide violation, head surplus and cost only depends on
the hydraulic component that contains the pipe, so candidate results are kept
between steps and recomputed only for the component that just changed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost import Evaluator, PenaltyConfig
from .network import DesignRangeError, DesignVector, Flavor, PipeNetwork
from .optimizers import Objective


class InfeasibleNetworkError(RuntimeError):
    """Even the largest size on every pipe leaves a pressure violation."""


class PreconditionError(ValueError):
    """Input design does not satisfy the search's precondition."""


class BudgetExhausted(RuntimeError):
    """The evaluation budget ran out before the repair finished."""

    def __init__(self, design: DesignVector):
        super().__init__("evaluation budget exhausted during greedy repair")
        self.design = design


@dataclass(frozen=True)
class GreedyMove:
    pipe: int
    old_size: float
    new_size: float
    delta_pv: float
    delta_cost: float
    ratio: float


def _objective_for(network, objective, penalty):
    if objective is not None:
        return objective
    return Objective.from_network(Evaluator(network, penalty or PenaltyConfig.for_network(network)))


def _indices(design, network: PipeNetwork) -> np.ndarray:
    d = np.asarray(getattr(design, "diameters", design), dtype=float)
    sizes = network.table.array
    idx = np.searchsorted(sizes, d)
    idx = np.clip(idx, 0, len(sizes) - 1)
    if d.shape != (network.decision_count,) or not np.array_equal(sizes[idx], d):
        raise DesignRangeError("greedy search needs a commercial design of full length")
    return idx


class _Search:
    """Shared bookkeeping: current point, its terms, and cached candidates."""

    def __init__(self, network, design, objective, budget):
        self.net = network
        self.obj = objective
        self.sizes = network.table.array
        self.idx = _indices(design, network)
        self.limit = math.inf if budget is None else budget
        self.comp = objective.evaluator.model.decision_comp
        self.cur = self._eval(self.sizes[self.idx][None, :])
        self.cache: dict[int, tuple[float, float, float]] = {}

    def design(self) -> DesignVector:
        return DesignVector(self.sizes[self.idx], Flavor.COMMERCIAL)

    def _eval(self, X):
        _, _, b = self.obj.evaluate_batch(X, transformed=True)
        return b.sum_pv, b.cost, b.surplus

    def deltas(self, step: int):
        """(pipes, new pv, new cost, new surplus) for every legal one-step move."""
        top = len(self.sizes) - 1
        movable = np.flatnonzero((self.idx < top) if step > 0 else (self.idx > 0))
        todo = [i for i in movable if i not in self.cache]
        if todo:
            if self.obj.evaluations + len(todo) > self.limit:
                raise BudgetExhausted(self.design())
            X = np.repeat(self.sizes[self.idx][None, :], len(todo), axis=0)
            for r, i in enumerate(todo):
                X[r, i] = self.sizes[self.idx[i] + step]
            pv, cost, sur = self._eval(X)
            for r, i in enumerate(todo):
                self.cache[i] = (pv[r] - self.cur[0][0], cost[r] - self.cur[1][0],
                                 sur[r] - self.cur[2][0])
        d = np.array([self.cache[i] for i in movable]).reshape(-1, 3)
        return (movable, self.cur[0][0] + d[:, 0], self.cur[1][0] + d[:, 1],
                self.cur[2][0] + d[:, 2])

    def apply(self, pipe: int, step: int, pv, cost, surplus):
        self.idx[pipe] += step
        if self.obj.evaluator.model.n_components > 1:
            # summing cached deltas drifts; the new point was just solved as a
            # candidate, so its exact terms come from the component cache
            b = self.obj.evaluator.breakdown_batch(self.sizes[self.idx][None, :], transformed=True)
            pv, cost, surplus = b.sum_pv[0], b.cost[0], b.surplus[0]
        self.cur = (np.array([pv]), np.array([cost]), np.array([surplus]))
        c = self.comp[pipe]
        self.cache = {i: v for i, v in self.cache.items() if self.comp[i] != c}


def _pick(ratio: np.ndarray, tiebreak: np.ndarray) -> int:
    """Index of the best ratio; infinite ratios compare by ``tiebreak``, then position."""
    inf = ratio == np.inf
    if inf.any():
        cand = np.flatnonzero(inf)
        return int(cand[np.argmax(tiebreak[cand])])
    return int(np.argmax(ratio))


def upward_greedy(network: PipeNetwork, design: DesignVector, *,
                  objective: Objective | None = None, penalty: PenaltyConfig | None = None,
                  budget: int | None = None, moves: list | None = None) -> DesignVector:
    """Raise one pipe by one size at a time until no pressure violation remains.

    Each step takes the move with the largest violation reduction per unit of
    added cost. ``budget`` caps ``objective.evaluations``; running out raises
    ``BudgetExhausted`` carrying the partial design.
    """
    obj = _objective_for(network, objective, penalty)
    s = _Search(network, design, obj, budget)
    if s.cur[0][0] == 0.0:
        return s.design()
    _check_all_max(network, obj, budget)
    while s.cur[0][0] > 0.0:
        pipes, pv, cost, sur = s.deltas(+1)
        if len(pipes) == 0:
            raise InfeasibleNetworkError("every pipe is at its largest size and heads are still short")
        gain = s.cur[0][0] - pv
        added = cost - s.cur[1][0]
        useful = gain > 0
        if useful.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(added > 0, gain / added, np.inf)
            ratio = np.where(useful, ratio, -np.inf)
            k = _pick(ratio, np.where(useful, gain, -np.inf))
        else:
            # no single step helps on its own; take the cheapest step so the search moves on
            ratio = np.full(len(pipes), 0.0)
            k = int(np.argmin(added))
        if moves is not None:
            i = int(pipes[k])
            moves.append(GreedyMove(i, s.sizes[s.idx[i]], s.sizes[s.idx[i] + 1],
                                    float(gain[k]), float(added[k]), float(ratio[k])))
        s.apply(int(pipes[k]), +1, pv[k], cost[k], sur[k])
    return s.design()


def _check_all_max(network, obj, budget):
    # remembered per objective so a run's evaluation count does not depend on earlier runs
    ok = obj.all_max_feasible
    if ok is None:
        if budget is not None and obj.evaluations + 1 > budget:
            return
        top = np.full((1, network.decision_count), network.table.upper)
        _, _, b = obj.evaluate_batch(top, transformed=True)
        ok = bool(b.sum_pv[0] == 0.0)
        obj.all_max_feasible = ok
    if not ok:
        raise InfeasibleNetworkError("the all-maximum design violates minimum heads")


def downward_greedy(network: PipeNetwork, design: DesignVector, *,
                    objective: Objective | None = None, penalty: PenaltyConfig | None = None,
                    budget: int | None = None, moves: list | None = None) -> DesignVector:
    """Lower one pipe by one size at a time while heads stay feasible.

    Each step takes the feasible move with the largest cost saving per unit
    of head surplus consumed. When ``budget`` runs out the current, still
    feasible, design is returned.
    """
    obj = _objective_for(network, objective, penalty)
    s = _Search(network, design, obj, budget)
    if s.cur[0][0] != 0.0:
        raise PreconditionError(f"downward greedy needs a feasible design (Sum_PV={s.cur[0][0]:g})")
    while True:
        try:
            pipes, pv, cost, sur = s.deltas(-1)
        except BudgetExhausted:
            break
        ok = pv == 0.0
        if not ok.any():
            break
        saving = s.cur[1][0] - cost
        used = s.cur[2][0] - sur
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(used > 0, saving / used, np.inf)
        ratio = np.where(ok, ratio, -np.inf)
        k = _pick(ratio, np.where(ok, saving, -np.inf))
        if moves is not None:
            i = int(pipes[k])
            moves.append(GreedyMove(i, s.sizes[s.idx[i]], s.sizes[s.idx[i] - 1],
                                    float(used[k]), float(saving[k]), float(ratio[k])))
        s.apply(int(pipes[k]), -1, pv[k], cost[k], sur[k])
    return s.design()
