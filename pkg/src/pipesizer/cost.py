"""Pipe cost, constraint violations and the penalised objective."""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import hydraulics as hyd
from .network import DesignVector, DiameterTable, Flavor, PipeNetwork, round_to_commercial, round_to_step
from .hydraulics import HydraulicState

log = logging.getLogger(__name__)

SEVERE_OFFSET = 1e5
SEVERE_SCALE = 1e4
CONTINUOUS_FEASIBILITY_TOL = 1e-6  # native head units


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty factors of the objective.

    ``pressure_factor`` is currency per native head unit (ft for NYTP, m for
    Hanoi). ``diameter_factor`` = 0 switches the off-grid diameter penalty off.
    """

    pressure_factor: float = 1e7
    diameter_factor: float = 1e7
    mode: str = "linear"
    nytp_special: bool = False
    disconnected_cost: float = 1e15

    def __post_init__(self):
        if self.pressure_factor <= 0:
            raise ValueError("pressure_factor must be positive")
        if self.diameter_factor < 0:
            raise ValueError("diameter_factor must be nonnegative")
        if self.mode not in ("linear", "severe"):
            raise ValueError(f"unknown penalty mode {self.mode!r}")

    @classmethod
    def for_network(cls, net: PipeNetwork, **overrides) -> "PenaltyConfig":
        base = cls(net.pressure_penalty, net.diameter_penalty, nytp_special=net.nytp_special)
        return replace(base, **overrides)

    def pressure_term(self, sum_pv):
        sum_pv = np.asarray(sum_pv, dtype=float)
        if self.mode == "severe":
            return np.where(sum_pv > 0, SEVERE_OFFSET + (SEVERE_SCALE * sum_pv) ** 4, 0.0)
        return self.pressure_factor * sum_pv


@dataclass(frozen=True)
class CostBreakdown:
    pipe_cost: float
    sum_pv: float
    sum_dv: float
    total: float
    solved: bool = True

    @property
    def pressure_feasible(self) -> bool:
        return self.solved and self.sum_pv == 0.0


def pipe_cost(network: PipeNetwork, design: DesignVector | np.ndarray) -> float:
    d = np.asarray(getattr(design, "diameters", design), dtype=float)
    return float(_pipe_costs(network, d[None, :])[0])


def _lengths(network: PipeNetwork) -> np.ndarray:
    L = network._cache.get("lengths")
    if L is None:
        L = np.array([p.length for p in network.decision_pipes])
        network._cache["lengths"] = L
    return L


def _pipe_costs(network: PipeNetwork, D: np.ndarray) -> np.ndarray:
    return network.table.unit_cost(D) @ _lengths(network)


def pressure_violation_sum(state: HydraulicState, network: PipeNetwork) -> float:
    """Total head shortfall below the minimum heads, in the network's head unit."""
    short = 0.0
    for node, h in zip(network.nodes, state.head):
        if node.min_head is not None:
            short += max(0.0, node.min_head - h)
    return short / network.units.head


def _triangular_violation(d: np.ndarray, table: DiameterTable) -> np.ndarray:
    s = table.array
    lo, hi = table.bracket(d)
    da, db = s[lo], s[hi]
    mid = 0.5 * (da + db)
    with np.errstate(invalid="ignore", divide="ignore"):
        below = (d - da) / (mid - da)
        above = (db - d) / (db - mid)
    v = np.where(d < mid, below, above)
    return np.where(lo == hi, 0.0, np.clip(v, 0.0, 1.0))


def diameter_violation(design, table: DiameterTable, nytp_special: bool = False,
                       unit: float = 1.0) -> np.ndarray:
    """Per-pipe off-grid penalty.

    Triangular between bracketing commercial sizes: 0 at either size, 1 at the
    midpoint. With ``nytp_special`` (diameters checked in native inches via
    ``unit``) the 0..36 bracket uses a ramp peaking at 3 for 18 in, and
    multiples of 12 in are not penalised.
    """
    d = np.asarray(getattr(design, "diameters", design), dtype=float)
    v = _triangular_violation(d, table)
    if not nytp_special:
        return v
    x = d / unit
    rem = np.abs(np.remainder(x + 6.0, 12.0) - 6.0)
    multiple = rem < 1e-9
    low = np.where(x <= 18.0, x / 18.0 * 3.0, (36.0 - x) / 18.0 * 3.0)
    low = np.where((x <= 0.0) | (x >= 36.0), 0.0, low)
    out = np.where(x > 36.0, v, low)
    return np.where(multiple, 0.0, out)


def diameter_violation_sum(design, table: DiameterTable, nytp_special: bool = False,
                           unit: float = 1.0) -> float:
    return float(diameter_violation(design, table, nytp_special, unit).sum())


def total_cost(network: PipeNetwork, design: DesignVector,
               penalty: PenaltyConfig | None = None) -> CostBreakdown:
    """Pipe cost plus pressure and diameter penalties for one design."""
    penalty = penalty or PenaltyConfig.for_network(network)
    return Evaluator(network, penalty).evaluate(design)


class Batch(NamedTuple):
    """Per-row results of ``Evaluator.breakdown_batch``.

    ``surplus`` is the summed head excess over the minimum at constrained
    nodes (native head units, negative shortfalls included), used by the
    downward greedy as the feasibility margin.
    """

    total: np.ndarray
    cost: np.ndarray
    sum_pv: np.ndarray
    sum_dv: np.ndarray
    solved: np.ndarray
    surplus: np.ndarray


class Evaluator:
    """Batch evaluation of designs on one network.

    ``scenario`` picks how raw vectors are read: ``continuous`` as-is,
    ``discrete`` snapped to 1 native diameter unit, ``rounded`` snapped to
    the commercial table. For networks with several independent components
    the hydraulic results are memoised per component, so designs that differ
    in one copy only re-solve that copy.
    """

    def __init__(self, network: PipeNetwork, penalty: PenaltyConfig | None = None,
                 scenario: str = "continuous", cache_size: int = 20000):
        if scenario not in ("continuous", "discrete", "rounded"):
            raise ValueError(f"unknown scenario {scenario!r}")
        self.network = network
        self.penalty = penalty or PenaltyConfig.for_network(network)
        self.scenario = scenario
        self.model = hyd.compile_network(network)
        self.lower = np.full(network.decision_count, network.table.lower)
        self.upper = np.full(network.decision_count, network.table.upper)
        self._cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()
        comps = self.model.decision_comp
        self._comp_decisions = [np.flatnonzero(comps == c) for c in range(self.model.n_components)]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.clip(np.atleast_2d(np.asarray(X, dtype=float)), self.lower, self.upper)
        if self.scenario == "rounded":
            table = self.network.table
            return np.vstack([round_to_commercial(DesignVector(x), table).diameters for x in X])
        if self.scenario == "discrete":
            step = self.network.units.diameter
            return np.vstack([round_to_step(DesignVector(x), self.network.table, step).diameters
                              for x in X])
        return X

    def _heads(self, D):
        m = self.model
        B = D.shape[0]
        C = m.n_components
        if C == 1 or self._cache_size <= 0:
            H, _, status, *_ = hyd.solve_components(m, D)
            return H, status
        H = np.zeros((B, m.n_junctions))
        status = np.zeros((B, C), dtype=np.int64)
        rows, comps, keys = [], [], []
        for b in range(B):
            for c in range(C):
                key = (c, D[b, self._comp_decisions[c]].tobytes())
                hit = self._cache.get(key)
                if hit is None:
                    rows.append(b)
                    comps.append(c)
                    keys.append(key)
                else:
                    self._cache.move_to_end(key)
                    j0, j1 = m.comp_j_ptr[c], m.comp_j_ptr[c + 1]
                    H[b, j0:j1] = hit[0]
                    status[b, c] = hit[1]
        if rows:
            H2, _, st2, *_ = hyd.solve_components(m, D, rows, comps, H=H)
            for b, c, key in zip(rows, comps, keys):
                j0, j1 = m.comp_j_ptr[c], m.comp_j_ptr[c + 1]
                status[b, c] = st2[b, c]
                self._cache[key] = (H[b, j0:j1].copy(), st2[b, c])
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return H, status

    def breakdown_batch(self, X: np.ndarray, transformed: bool = False) -> Batch:
        """Cost terms for each row of ``X``."""
        D = np.atleast_2d(np.asarray(X, dtype=float)) if transformed else self.transform(X)
        D = np.ascontiguousarray(D)
        H, status = self._heads(D)
        solved = np.all(status == hyd.OK, axis=1)
        if not np.all(solved):
            bad = int((~solved).sum())
            if np.any(status == hyd.NOT_CONVERGED):
                log.warning("%d design(s) did not converge; charged the disconnected cost", bad)
        net = self.network
        excess = H - self.model.min_head
        finite = np.isfinite(self.model.min_head)
        sum_pv = np.maximum(0.0, -excess[:, finite]).sum(axis=1) / net.units.head
        surplus = excess[:, finite].sum(axis=1) / net.units.head
        cost = _pipe_costs(net, D)
        pen = self.penalty
        sum_dv = diameter_violation(D, net.table, pen.nytp_special, net.units.diameter).sum(axis=1)
        total = cost + pen.pressure_term(sum_pv) + pen.diameter_factor * sum_dv
        total = np.where(solved, total, pen.disconnected_cost)
        sum_pv = np.where(solved, sum_pv, np.inf)
        surplus = np.where(solved, surplus, -np.inf)
        return Batch(total, cost, sum_pv, sum_dv, solved, surplus)

    def evaluate(self, design) -> CostBreakdown:
        d = np.asarray(getattr(design, "diameters", design), dtype=float)
        flavor = getattr(design, "flavor", None)
        transformed = flavor is Flavor.COMMERCIAL
        t, c, pv, dv, ok, _ = self.breakdown_batch(d[None, :], transformed=transformed)
        return CostBreakdown(float(c[0]), float(pv[0]), float(dv[0]), float(t[0]), bool(ok[0]))

    def evaluate_many(self, X) -> list[CostBreakdown]:
        t, c, pv, dv, ok, _ = self.breakdown_batch(X)
        return [CostBreakdown(*map(float, row[:4]), bool(row[4])) for row in zip(t, c, pv, dv, ok)]
