"""Stochastic searchers over box-bounded vectors: CMA-ES, RLS and (1+1)EA."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cost import CostBreakdown, Evaluator

log = logging.getLogger(__name__)


class Objective:
    """Counts evaluations and keeps the best-ever point of a batch objective.

    ``fn`` maps an (B, N) array to B total costs. When built from a network
    ``Evaluator`` the objective also tracks the best feasible commercial
    design (zero pressure violation, every diameter in the table).
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], lower, upper,
                 evaluator: Evaluator | None = None):
        self.fn = fn
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.evaluator = evaluator
        self.evaluations = 0
        self.best_cost = math.inf
        self.best_x: np.ndarray | None = None
        self.evals_to_best = 0
        self.curve: list[tuple[int, float]] = []
        self.best_feasible_cost = math.inf
        self.best_feasible_x: np.ndarray | None = None
        self.evals_to_feasible = 0
        self.all_max_feasible: bool | None = None  # set by the upward greedy's first check

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], float], lower, upper) -> "Objective":
        return cls(lambda X: np.array([f(x) for x in X], dtype=float), lower, upper)

    @classmethod
    def from_network(cls, evaluator: Evaluator) -> "Objective":
        return cls(None, evaluator.lower, evaluator.upper, evaluator)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        """Total cost of every row (rows are clamped to the bounds first)."""
        return self.evaluate_batch(X)[0]

    def evaluate_batch(self, X: np.ndarray, transformed: bool = False):
        """Clamp, evaluate and record.

        Returns (totals, evaluated points, ``Batch`` or None). The points are
        the clamped (and, for network objectives, scenario-rounded) rows.
        """
        X = np.clip(np.atleast_2d(np.asarray(X, dtype=float)), self.lower, self.upper)
        batch = None
        if self.evaluator is not None:
            if not transformed:
                X = self.evaluator.transform(X)
            batch = self.evaluator.breakdown_batch(X, transformed=True)
            totals = batch.total
        else:
            totals = np.asarray(self.fn(X), dtype=float)
        self._record(X, totals, None if batch is None else batch.sum_pv)
        return totals, X, batch

    def evaluate(self, design) -> CostBreakdown:
        """Single evaluation with the full cost breakdown (network objectives only)."""
        d = np.asarray(getattr(design, "diameters", design), dtype=float)
        d = np.clip(d, self.lower, self.upper)
        D = self.evaluator.transform(d)
        t, c, pv, dv, ok, _ = self.evaluator.breakdown_batch(D, transformed=True)
        self._record(D, t, pv)
        return CostBreakdown(float(c[0]), float(pv[0]), float(dv[0]), float(t[0]), bool(ok[0]))

    def _record(self, X, totals, sum_pv):
        start = self.evaluations
        self.evaluations += len(X)
        i = int(np.argmin(totals))
        if totals[i] < self.best_cost:
            self.best_cost = float(totals[i])
            self.best_x = X[i].copy()
            self.evals_to_best = start + i + 1
            self.curve.append((self.evals_to_best, self.best_cost))
        if sum_pv is not None:
            sizes = self.evaluator.network.table.array
            ok = (sum_pv == 0.0) & np.all(np.isin(X, sizes), axis=1)
            if np.any(ok):
                costs = np.where(ok, totals, np.inf)
                j = int(np.argmin(costs))
                if costs[j] < self.best_feasible_cost:
                    self.best_feasible_cost = float(costs[j])
                    self.best_feasible_x = X[j].copy()
                    self.evals_to_feasible = start + j + 1


@dataclass
class RunRecord:
    seed: int | None
    algorithm: str
    best_x: np.ndarray | None
    best_cost: float
    evaluations: int
    evals_to_best: int
    curve: list[tuple[int, float]]
    termination: str
    best_feasible_x: np.ndarray | None = None
    best_feasible_cost: float = math.inf
    evals_to_feasible: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.best_feasible_x is not None

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else [float(v) for v in x]

        def num(x):
            return None if not math.isfinite(x) else float(x)

        return {
            "seed": self.seed, "algorithm": self.algorithm,
            "best_x": arr(self.best_x), "best_cost": num(self.best_cost),
            "evaluations": self.evaluations, "evals_to_best": self.evals_to_best,
            "termination": self.termination,
            "feasible": self.feasible, "best_feasible_x": arr(self.best_feasible_x),
            "best_feasible_cost": num(self.best_feasible_cost),
            "evals_to_feasible": self.evals_to_feasible,
            "curve": [[int(e), float(c)] for e, c in self.curve],
            "extra": {k: (num(v) if isinstance(v, float) else v) for k, v in self.extra.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        def arr(x):
            return None if x is None else np.array(x, dtype=float)

        def num(x):
            return math.inf if x is None else float(x)

        return cls(d["seed"], d["algorithm"], arr(d["best_x"]), num(d["best_cost"]),
                   d["evaluations"], d["evals_to_best"], [tuple(p) for p in d["curve"]],
                   d["termination"], arr(d["best_feasible_x"]), num(d["best_feasible_cost"]),
                   d["evals_to_feasible"], dict(d.get("extra", {})))

    def curve_csv(self) -> str:
        lines = ["evaluation,best_cost"]
        lines += [f"{int(e)},{float(c)!r}" for e, c in self.curve]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_objective(cls, obj: Objective, seed, algorithm, termination, **extra) -> "RunRecord":
        return cls(seed, algorithm, obj.best_x, obj.best_cost, obj.evaluations, obj.evals_to_best,
                   list(obj.curve), termination, obj.best_feasible_x, obj.best_feasible_cost,
                   obj.evals_to_feasible, dict(extra))


def _uniform_start(rng, obj):
    return obj.lower + rng.random(obj.dimension) * (obj.upper - obj.lower)


class CMAES:
    """(mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates.

    Strategy constants are the usual defaults. ``weights='equal'`` and
    ``adapt_sigma=False`` are there to check degenerate configurations.
    """

    def __init__(self, mean, sigma: float, popsize: int, rng: np.random.Generator,
                 weights: str = "log", adapt_sigma: bool = True):
        N = len(mean)
        if popsize < 2:
            raise ValueError("population size must be at least 2")
        self.N = N
        self.lam = popsize
        self.mu = popsize // 2
        if weights == "log":
            w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        elif weights == "equal":
            w = np.ones(self.mu)
        else:
            raise ValueError(f"unknown weights {weights!r}")
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        me = self.mueff
        self.cc = (4 + me / N) / (N + 4 + 2 * me / N)
        self.cs = (me + 2) / (N + me + 5)
        self.c1 = 2 / ((N + 1.3) ** 2 + me)
        self.cmu = min(1 - self.c1, 2 * (me - 2 + 1 / me) / ((N + 2) ** 2 + me))
        self.damps = 1 + 2 * max(0.0, math.sqrt((me - 1) / (N + 1)) - 1) + self.cs
        self.chiN = math.sqrt(N) * (1 - 1 / (4 * N) + 1 / (21 * N**2))
        self.adapt_sigma = adapt_sigma

        self.rng = rng
        self.mean = np.array(mean, dtype=float)
        self.sigma = float(sigma)
        self.C = np.eye(N)
        self.B = np.eye(N)
        self.D = np.ones(N)
        self.invsqrtC = np.eye(N)
        self.ps = np.zeros(N)
        self.pc = np.zeros(N)
        self.generation = 0
        self.counteval = 0
        self._eigen_eval = 0

    def ask(self) -> np.ndarray:
        z = self.rng.standard_normal((self.lam, self.N))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, X: np.ndarray, fitness: np.ndarray) -> None:
        """Update from evaluated points ``X`` (already clamped) and their costs."""
        N = self.N
        order = np.argsort(fitness, kind="stable")[: self.mu]
        old = self.mean
        y = (X[order] - old) / self.sigma
        self.mean = old + self.sigma * (self.weights @ y)
        step = (self.mean - old) / self.sigma
        self.counteval += len(X)
        self.generation += 1

        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (
            self.invsqrtC @ step)
        norm_ps = np.linalg.norm(self.ps)
        hsig = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chiN \
            < 1.4 + 2 / (N + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * step

        rank_mu = (y.T * self.weights) @ y
        c1a = self.c1 * (1 - (1 - hsig) * self.cc * (2 - self.cc))
        self.C = (1 - c1a - self.cmu) * self.C + self.c1 * np.outer(self.pc, self.pc) \
            + self.cmu * rank_mu
        self.C = 0.5 * (self.C + self.C.T)

        if self.adapt_sigma:
            self.sigma *= math.exp(min(1.0, (self.cs / self.damps) * (norm_ps / self.chiN - 1)))
        if self.counteval - self._eigen_eval > self.lam / (self.c1 + self.cmu) / N / 10:
            self.update_eigensystem()

    def update_eigensystem(self) -> None:
        self._eigen_eval = self.counteval
        try:
            vals, vecs = np.linalg.eigh(self.C)
            if not np.all(np.isfinite(vals)):
                raise np.linalg.LinAlgError("non-finite eigenvalues")
        except np.linalg.LinAlgError as exc:
            log.warning("covariance eigendecomposition failed (%s); resetting to identity", exc)
            self.C = np.eye(self.N)
            vals, vecs = np.ones(self.N), np.eye(self.N)
        floor = 1e-14 * max(vals.max(), 1e-300)
        if vals.min() <= floor:
            vals = np.maximum(vals, floor)
            self.C = (vecs * vals) @ vecs.T
            self.C = 0.5 * (self.C + self.C.T)
        self.B = vecs
        self.D = np.sqrt(vals)
        self.invsqrtC = (vecs / self.D) @ vecs.T


def reflect(X: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Fold values back into [lower, upper] by mirroring at the bounds."""
    width = upper - lower
    safe = np.where(width > 0, width, 1.0)
    t = np.mod(X - lower, 2 * safe)
    t = np.where(t > safe, 2 * safe - t, t)
    return np.where(width > 0, lower + t, lower)


def run_cmaes(objective: Objective, popsize: int, seed: int | None = None, budget: int = 10**5,
              tol: float = 1e-5, sigma0: float | None = None, mean0=None,
              bounds: str = "clamp", stop: str = "best",
              callback: Callable[[CMAES, np.ndarray, np.ndarray], bool | None] | None = None,
              **cma_options) -> tuple[RunRecord, CMAES]:
    """Minimise ``objective`` until the budget is spent or progress stalls.

    Stops when the best-ever cost improved by less than ``tol`` * |best| over
    the last 10 * ceil(N / popsize) generations; with ``stop='spread'`` the
    current generation's costs must also lie within that band.

    ``bounds='clamp'`` evaluates and recombines the clamped samples.
    ``bounds='reflect'`` evaluates samples mirrored into the box but keeps
    the raw samples for the update, which avoids the step-size collapse that
    clamping causes when many optimal coordinates sit on a bound.
    ``bounds='mirror'`` evaluates and recombines the mirrored samples, so the
    mean always stays inside the box.

    ``callback(es, X, f)`` runs after every generation; returning True stops
    the run.
    """
    if bounds not in ("clamp", "reflect", "mirror"):
        raise ValueError(f"unknown bound handling {bounds!r}")
    if stop not in ("best", "spread"):
        raise ValueError(f"unknown stop rule {stop!r}")
    if popsize < 2:
        raise ValueError("population size must be at least 2")
    if budget < popsize:
        raise ValueError("budget must cover at least one generation")
    rng = np.random.default_rng(seed)
    width = objective.upper - objective.lower
    mean = _uniform_start(rng, objective) if mean0 is None else np.asarray(mean0, dtype=float)
    sigma = 0.5 * float(np.max(width)) if sigma0 is None else sigma0
    es = CMAES(mean, sigma, popsize, rng, **cma_options)
    N = objective.dimension
    window = 10 * math.ceil(N / popsize)
    history = []
    reason = "budget"
    start = objective.evaluations
    while objective.evaluations - start + popsize <= budget:
        X = es.ask()
        if bounds == "reflect":
            f, Xc, _ = objective.evaluate_batch(reflect(X, objective.lower, objective.upper))
            es.tell(X, f)
        elif bounds == "mirror":
            Xm = reflect(X, objective.lower, objective.upper)
            f, Xc, _ = objective.evaluate_batch(Xm)
            es.tell(Xm, f)
        else:
            f, Xc, _ = objective.evaluate_batch(X)
            es.tell(Xc, f)
        history.append(objective.best_cost)
        if callback is not None and callback(es, Xc, f):
            reason = "callback"
            break
        if len(history) > window:
            gain = history[-window - 1] - history[-1]
            limit = tol * abs(history[-1])
            if gain <= limit and (stop == "best" or np.ptp(f) <= limit):
                reason = "tolfun"
                break
        if es.sigma * es.D.max() < 1e-12 * max(float(np.max(width)), 1e-300):
            reason = "tolx"
            break
    return RunRecord.from_objective(objective, seed, "cmaes", reason, popsize=popsize,
                                    generations=es.generation), es


def _sigma_schedule(mode, width, budget):
    """Mutation step per iteration: a fraction of the range or a linear decay."""
    if mode == "linear":
        hi, lo = 0.5 * width, 0.01 * width
        return lambda t: np.maximum(hi - (hi - lo) * t / max(budget - 1, 1), lo)
    frac = float(mode)
    if frac <= 0:
        raise ValueError("mutation step fraction must be positive")
    return lambda t: frac * width


def run_rls(objective: Objective, sigma="linear", seed: int | None = None,
            budget: int = 10**5) -> RunRecord:
    """Randomised local search: Gaussian move of one random coordinate, elitist."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    step = _sigma_schedule(sigma, objective.upper - objective.lower, budget)
    x = _uniform_start(rng, objective)
    (fx,), (x,), _ = objective.evaluate_batch(x)
    N = objective.dimension
    for t in range(1, budget):
        i = rng.integers(N)
        y = x.copy()
        y[i] = rng.normal(x[i], step(t)[i])
        (fy,), (y,), _ = objective.evaluate_batch(y)
        if fy <= fx:
            x, fx = y, fy
    return RunRecord.from_objective(objective, seed, "rls", "budget", sigma=sigma)


def run_one_plus_one_ea(objective: Objective, sigma=0.5, seed: int | None = None,
                        budget: int = 10**5, on_mutation: Callable[[int], None] | None = None
                        ) -> RunRecord:
    """(1+1)EA: each coordinate mutates with probability 1/N, at least one always does."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    step = _sigma_schedule(sigma, objective.upper - objective.lower, budget)
    x = _uniform_start(rng, objective)
    (fx,), (x,), _ = objective.evaluate_batch(x)
    N = objective.dimension
    for t in range(1, budget):
        mask = rng.random(N) < 1.0 / N
        if not mask.any():
            mask[rng.integers(N)] = True
        if on_mutation is not None:
            on_mutation(int(mask.sum()))
        y = x.copy()
        y[mask] = rng.normal(x[mask], step(t)[mask])
        (fy,), (y,), _ = objective.evaluate_batch(y)
        if fy <= fx:
            x, fx = y, fy
    return RunRecord.from_objective(objective, seed, "opo_ea", "budget", sigma=sigma)
