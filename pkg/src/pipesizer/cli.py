"""Command-line front end: ``pipesizer solve`` and ``pipesizer evaluate``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hydraulics as hyd
from .cost import Evaluator, PenaltyConfig
from .greedy import BudgetExhausted, InfeasibleNetworkError, PreconditionError, downward_greedy, upward_greedy
from .hybrid import PHASES, HybridConfig, SuiteRow, reported_cost, rows_to_csv, run_hybrid
from .ingest import BENCHMARKS, DIAMETER_UNITS, ParseError, read_network
from .network import DesignRangeError, DesignVector, Flavor, PipeNetwork, round_to_commercial
from .optimizers import Objective, RunRecord, run_cmaes, run_one_plus_one_ea, run_rls

log = logging.getLogger("pipesizer")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 2, 3, 4, 5
ALGORITHMS = ("cmaes", "rls", "opo_ea", "hybrid", "gsu", "gsd")
SIGMA_PRESETS = ("0.1", "0.25", "0.5", "linear")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    network: str
    algorithm: str
    popsize: int = 400
    sigma: str = "linear"
    budget: int = 200_000
    seeds: list = field(default_factory=lambda: [0])
    penalty_mode: str = "linear"
    phi: float | None = None
    phases: str = "cma+gsu+gsd"
    scenario: str | None = None
    init: str | None = None
    out: str = "runs"
    design_spec: str | None = None
    bounds: str | None = None

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if self.budget < 1:
            raise UsageError("--budget must be positive")
        if self.algorithm in ("cmaes", "hybrid") and not 2 <= self.popsize <= self.budget:
            raise UsageError("--lambda must be at least 2 and no larger than --budget")
        if self.algorithm in ("rls", "opo_ea"):
            if self.sigma != "linear":
                try:
                    if float(self.sigma) <= 0:
                        raise ValueError
                except ValueError:
                    raise UsageError(f"--sigma must be 'linear' or a positive fraction, got {self.sigma!r}")
        if self.penalty_mode not in ("linear", "severe"):
            raise UsageError("--penalty-mode must be linear or severe")
        if self.phi is not None and not self.phi > 0:
            raise UsageError("--phi must be positive")
        if self.phases not in PHASES:
            raise UsageError(f"--phases must be one of {', '.join(PHASES)}")
        if self.scenario not in (None, "continuous", "discrete", "rounded"):
            raise UsageError("--scenario must be continuous, discrete or rounded")
        if self.bounds not in (None, "clamp", "reflect", "mirror"):
            raise UsageError("--bounds must be clamp, reflect or mirror")
        if self.init is not None:
            parse_init(self.init)
        if not self.seeds:
            raise UsageError("at least one seed is needed")


def parse_init(spec: str) -> tuple[str, float | None]:
    """``uniform:<value><unit>``, ``min``, ``max`` or ``zero``; value returned in metres."""
    spec = spec.strip().lower()
    if spec in ("min", "max", "zero"):
        return spec, None
    kind, _, value = spec.partition(":")
    if kind != "uniform" or not value:
        raise UsageError(f"bad --init {spec!r}; expected e.g. uniform:304.8mm, min, max or zero")
    for unit in sorted(DIAMETER_UNITS, key=len, reverse=True):
        if value.endswith(unit):
            try:
                return "uniform", float(value[: -len(unit)]) * DIAMETER_UNITS[unit]
            except ValueError:
                break
    raise UsageError(f"bad --init value {value!r}; give a number with unit in/mm/m/ft")


def initial_design(net: PipeNetwork, spec: str | None) -> DesignVector:
    kind, value = parse_init(spec or "min")
    table = net.table
    if kind == "uniform":
        d = np.full(net.decision_count, value)
    elif kind == "max":
        d = np.full(net.decision_count, table.upper)
    elif kind == "zero":
        d = np.zeros(net.decision_count)
    else:
        d = np.full(net.decision_count, table.lower)
    return round_to_commercial(DesignVector(d), table)


def _penalty(net, manifest, **overrides):
    return PenaltyConfig.for_network(net, mode=manifest.penalty_mode, **overrides)


def run_one(net: PipeNetwork, m: RunManifest, seed: int) -> RunRecord:
    algo = m.algorithm
    if algo == "hybrid":
        cfg = HybridConfig(popsize=m.popsize, budget=m.budget, phi=m.phi, phases=m.phases,
                           scenario=m.scenario or "continuous", bounds=m.bounds,
                           penalty=_penalty(net, m, diameter_factor=0.0))
        return run_hybrid(net, cfg, seed)
    if algo in ("gsu", "gsd"):
        obj = Objective.from_network(Evaluator(net, _penalty(net, m), scenario="rounded"))
        start = initial_design(net, m.init or ("min" if algo == "gsu" else "max"))
        fn = upward_greedy if algo == "gsu" else downward_greedy
        try:
            fn(net, start, objective=obj, budget=m.budget)
            reason = "converged"
        except BudgetExhausted:
            reason = "budget"
        return RunRecord.from_objective(obj, seed, algo, reason, init=m.init)
    obj = Objective.from_network(Evaluator(net, _penalty(net, m), scenario=m.scenario or "discrete"))
    if algo == "cmaes":
        return run_cmaes(obj, m.popsize, seed=seed, budget=m.budget,
                         bounds=m.bounds or net.bound_handling, stop=HybridConfig.stop)[0]
    sigma = m.sigma if m.sigma == "linear" else float(m.sigma)
    runner = run_rls if algo == "rls" else run_one_plus_one_ea
    return runner(obj, sigma=sigma, seed=seed, budget=m.budget)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _native(net, x):
    return None if x is None else [float(v) for v in np.asarray(x) / net.units.diameter]


def solve(m: RunManifest) -> int:
    m.validate()
    net = _load(m.network, m.design_spec)
    out = Path(m.out)
    rows = []
    infeasible = 0
    for seed in m.seeds:
        t0 = time.perf_counter()
        rec = run_one(net, m, seed)
        elapsed = time.perf_counter() - t0
        cost, feasible, evals = reported_cost(rec)
        rows.append(SuiteRow(m.algorithm, seed, cost, feasible, evals, elapsed, rec))
        infeasible += not feasible
        payload = rec.to_dict()
        payload["network"] = net.name
        payload["diameter_unit"] = net.units.diameter_label
        payload["best_x_native"] = _native(net, rec.best_x)
        payload["best_feasible_x_native"] = _native(net, rec.best_feasible_x)
        _atomic_write(out / f"run_{seed}.json", json.dumps(payload, indent=1) + "\n")
        _atomic_write(out / f"curve_{seed}.csv", rec.curve_csv())
        if rec.best_feasible_x is not None:
            _atomic_write(out / f"design_{seed}.txt",
                          "".join(f"{v!r}\n" for v in _native(net, rec.best_feasible_x)))
        print(f"seed {seed}: {'feasible' if feasible else 'INFEASIBLE'} cost {cost:,.2f} "
              f"after {evals} of {rec.evaluations} evaluations ({elapsed:.1f} s)")
    _atomic_write(out / "summary.csv", rows_to_csv(rows))
    print(f"wrote {len(rows)} run(s) to {out}")
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def read_design_file(path, net: PipeNetwork) -> DesignVector:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split(";")[0].split("#")[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ParseError(f"not a number: {line!r}", lineno)
    if len(values) != net.decision_count:
        raise DesignRangeError(f"design file has {len(values)} diameters, "
                               f"{net.name} needs {net.decision_count}")
    return net.design(values, native=True)


def evaluation_report(net: PipeNetwork, design: DesignVector, penalty: PenaltyConfig) -> str:
    """Cost breakdown followed by each constrained node's head excess."""
    b = Evaluator(net, penalty).evaluate(design)
    state = hyd.solve_steady_state(net, design)
    u = net.units
    lines = [
        f"network      {net.name}",
        f"pipe cost    {b.pipe_cost:,.2f}  (${b.pipe_cost / 1e6:.3f} M)",
        f"Sum_PV       {b.sum_pv:.6g} {u.head_label}",
        f"Sum_DV       {b.sum_dv:.6g}",
        f"total        {b.total:,.2f}",
        f"feasible     {'yes' if b.pressure_feasible else 'no'}",
        "",
        f"{'node':>8} {'head':>12} {'min head':>12} {'excess':>10}",
    ]
    for node, h in zip(net.nodes, state.head):
        if node.min_head is None:
            continue
        ex = (h - node.min_head) / u.head
        lines.append(f"{node.id:>8} {h / u.head:12.4f} {node.min_head / u.head:12.4f} {ex:+10.4f}")
    return "\n".join(lines) + "\n"


def evaluate(network: str, design_path: str, penalty_mode: str = "linear",
             design_spec: str | None = None) -> int:
    net = _load(network, design_spec)
    design = read_design_file(design_path, net)
    print(evaluation_report(net, design, PenaltyConfig.for_network(net, mode=penalty_mode)), end="")
    return EXIT_OK


def _load(network, design_spec):
    try:
        return read_network(network, design_spec)
    except OSError as exc:
        raise ParseError(f"cannot read {network}: {exc.strerror or exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pipesizer", description="Least-cost pipe sizing for water networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run an optimiser over one or more seeds")
    s.add_argument("--network", required=True,
                   help=f"network file or bundled benchmark ({', '.join(BENCHMARKS)})")
    s.add_argument("--design-spec", help="separate [DESIGN] file for a plain network file")
    s.add_argument("--algo", required=True, help=f"one of {', '.join(ALGORITHMS)}")
    s.add_argument("--lambda", dest="popsize", type=int, default=400, help="CMA-ES population size")
    s.add_argument("--sigma", default="linear", help=f"RLS/(1+1)EA step: {', '.join(SIGMA_PRESETS)} or any fraction")
    s.add_argument("--budget", type=int, default=200_000, help="evaluations per run")
    s.add_argument("--seeds", type=int, default=1, help="number of runs (seeds start..start+n-1)")
    s.add_argument("--seed-start", type=int, default=0)
    s.add_argument("--penalty-mode", default="linear", help="linear or severe")
    s.add_argument("--phi", type=float, help="repair threshold (default 1.2 x target cost)")
    s.add_argument("--phases", default="cma+gsu+gsd", help=f"hybrid phases: {', '.join(PHASES)}")
    s.add_argument("--scenario", help="continuous, discrete or rounded")
    s.add_argument("--bounds", help="CMA-ES bound handling: clamp, reflect or mirror (default per network)")
    s.add_argument("--init", help="greedy start, e.g. uniform:304.8mm, min, max, zero")
    s.add_argument("--out", default="runs", help="output directory")

    e = sub.add_parser("evaluate", help="cost and head report for one design")
    e.add_argument("--network", required=True)
    e.add_argument("--design-spec")
    e.add_argument("--penalty-mode", default="linear")
    e.add_argument("design", help="text file, one diameter per line in the network's native unit")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            return evaluate(args.network, args.design, args.penalty_mode, args.design_spec)
        manifest = RunManifest(
            network=args.network, algorithm=args.algo, popsize=args.popsize, sigma=args.sigma,
            budget=args.budget, seeds=list(range(args.seed_start, args.seed_start + args.seeds)),
            penalty_mode=args.penalty_mode, phi=args.phi, phases=args.phases,
            scenario=args.scenario, init=args.init, out=args.out, design_spec=args.design_spec,
            bounds=args.bounds)
        return solve(manifest)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pipesizer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, KeyError) as exc:
        print(f"pipesizer: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DesignRangeError as exc:
        print(f"pipesizer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except hyd.HydraulicError as exc:
        print(f"pipesizer: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InfeasibleNetworkError, PreconditionError) as exc:
        print(f"pipesizer: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
