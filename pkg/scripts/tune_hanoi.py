"""Sweep the Hanoi pressure factor and bound handling for the hybrid.

Reproduces the tuning behind the bundled Hanoi defaults. Example:

    python3 scripts/tune_hanoi.py --factors 1e5 1e6 1e7 --bounds clamp mirror --seeds 10
"""
import argparse
import time

import numpy as np

from pipesizer import load_benchmark
from pipesizer.cost import PenaltyConfig
from pipesizer.hybrid import HybridConfig, run_hybrid, success_rate


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--factors", type=float, nargs="+", default=[1e6])
    p.add_argument("--bounds", nargs="+", default=["clamp"], choices=["clamp", "reflect", "mirror"])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--lambda", dest="popsize", type=int, default=1000)
    args = p.parse_args(argv)
    net = load_benchmark("hanoi")
    for factor in args.factors:
        for bounds in args.bounds:
            pen = PenaltyConfig.for_network(net, pressure_factor=factor, diameter_factor=0.0)
            cfg = HybridConfig(popsize=args.popsize, penalty=pen, bounds=bounds)
            t0 = time.perf_counter()
            costs = [run_hybrid(net, cfg, s).best_feasible_cost for s in range(args.seeds)]
            print(f"P_f={factor:g} bounds={bounds}: success {success_rate(costs, net.target_cost):.0%}, "
                  f"mean ${np.mean(costs) / 1e6:.3f} M, {time.perf_counter() - t0:.0f} s", flush=True)


if __name__ == "__main__":
    main()
