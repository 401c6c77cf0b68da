"""Best and mean costs of RLS, (1+1)EA and plain CMA-ES on the 1-inch grid.

Each run starts uniformly at random and evaluates designs rounded to whole
inches (NYTP) with both penalties active. Example:

    python3 scripts/baselines.py nytp --runs 30 --budget 100000
"""
import argparse
import sys

import numpy as np

from pipesizer import load_benchmark
from pipesizer.cost import Evaluator, PenaltyConfig
from pipesizer.optimizers import Objective, run_cmaes, run_one_plus_one_ea, run_rls

STEPS = ("0.1", "0.25", "0.5", "linear")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("network", nargs="?", default="nytp")
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--budget", type=int, default=100_000)
    p.add_argument("--lambda", dest="popsize", type=int, default=400)
    p.add_argument("--only", nargs="+", help="run only algorithms whose label contains one of these")
    p.add_argument("--scenario", default="discrete", choices=["continuous", "discrete", "rounded"])
    args = p.parse_args(argv)
    net = load_benchmark(args.network)
    penalty = PenaltyConfig.for_network(net)

    def objective():
        return Objective.from_network(Evaluator(net, penalty, scenario=args.scenario))

    runners = {f"rls sigma={s}": (lambda seed, s=s: run_rls(objective(), s if s == "linear" else float(s),
                                                             seed, args.budget)) for s in STEPS}
    runners |= {f"opo_ea sigma={s}": (lambda seed, s=s: run_one_plus_one_ea(
        objective(), s if s == "linear" else float(s), seed, args.budget)) for s in STEPS}
    runners[f"cmaes lambda={args.popsize}"] = lambda seed: run_cmaes(
        objective(), args.popsize, seed, args.budget, bounds=net.bound_handling, stop="spread")[0]

    print(f"{'algorithm':<22} {'best $M':>9} {'mean $M':>9}")
    for name, run in runners.items():
        if args.only and not any(k in name for k in args.only):
            continue
        recs = [run(seed) for seed in range(args.runs)]
        costs = np.array([r.best_cost for r in recs])
        print(f"{name:<22} {costs.min() / 1e6:9.2f} {costs.mean() / 1e6:9.2f}")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
