"""Hybrid success-rate tables over population sizes and phase toggles.

Example, NYTP with the three phase settings at lambda 400 on 10 seeds:

    python3 scripts/hybrid_suite.py nytp --lambdas 400 --phases cma cma+gsu cma+gsu+gsd --seeds 10
"""
import argparse
import sys
from pathlib import Path

from pipesizer import load_benchmark, read_network
from pipesizer.hybrid import HybridConfig, rows_to_csv, run_suite, summarize


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("network", help="bundled benchmark name or network file")
    p.add_argument("--lambdas", type=int, nargs="+", default=[400])
    p.add_argument("--phases", nargs="+", default=["cma+gsu+gsd"])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--bounds", choices=["clamp", "reflect", "mirror"])
    p.add_argument("--out", type=Path, help="write per-run rows to this CSV")
    args = p.parse_args(argv)

    try:
        net = load_benchmark(args.network)
    except KeyError:
        net = read_network(args.network)
    configs = [(f"lambda={lam} {ph}", HybridConfig(popsize=lam, budget=args.budget, phases=ph, bounds=args.bounds))
               for lam in args.lambdas for ph in args.phases]

    def progress(row):
        print(f"{row.config_id} seed {row.seed}: {row.best_cost / 1e6:.4f} M "
              f"{'feasible' if row.feasible else 'infeasible'} ({row.runtime_s:.0f} s)", file=sys.stderr)

    rows = run_suite(net, configs, list(range(args.seeds)), on_row=progress)
    if args.out:
        args.out.write_text(rows_to_csv(rows))
    print(f"{'config':<28} {'best $M':>9} {'mean $M':>9} {'success':>8} {'evals':>9}")
    for s in summarize(rows, net.target_cost):
        print(f"{s.config_id:<28} {s.best_cost / 1e6:9.3f} {s.mean_cost / 1e6:9.3f} "
              f"{s.success_rate:8.0%} {s.mean_evals_to_best:9.0f}")


if __name__ == "__main__":
    main()
