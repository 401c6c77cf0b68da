"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The hybrid runs take several minutes in total and are marked ``slow``.
"""
import re
import subprocess
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from pipesizer import load_benchmark, replicate_network
from pipesizer.cli import main
from pipesizer.cost import Evaluator, total_cost
from pipesizer.greedy import upward_greedy
from pipesizer.hybrid import HybridConfig, run_hybrid, success_rate
from pipesizer.network import DesignVector, search_space_size
from pipesizer.optimizers import Objective

from conftest import ACCEPTANCE, MAIER, SEDKI, nytp_native

TESTS = Path(__file__).parent


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _excess(report_text, node):
    for line in report_text.splitlines():
        parts = line.split()
        if parts and parts[0] == node and len(parts) == 4:
            return float(parts[3])
    raise AssertionError(f"node {node} missing from report")


def test_1_maier_design_validates(tmp_path, capsys):
    f = tmp_path / "maier.txt"
    f.write_text("".join(f"{v}\n" for v in nytp_native(MAIER)))
    t0 = time.perf_counter()
    rc = main(["evaluate", "--network", "nytp", str(f)])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    cost = total_cost(load_benchmark("nytp"), load_benchmark("nytp").design(nytp_native(MAIER), native=True))
    ex = {n: _excess(out, n) for n in ("16", "17", "19")}
    expected = {"16": 0.0771, "17": 0.0684, "19": 0.0540}
    ok = (rc == 0 and abs(cost.pipe_cost - 38.64e6) <= 0.01e6
          and all(abs(ex[n] - expected[n]) <= 0.05 for n in ex) and elapsed < 1.0)
    report(1, ok, f"cost ${cost.pipe_cost / 1e6:.4f} M, excess 16/17/19 = "
                  f"{ex['16']:+.4f}/{ex['17']:+.4f}/{ex['19']:+.4f} ft, {elapsed:.2f} s")


def test_2_sedki_design_validates(tmp_path, capsys):
    f = tmp_path / "sedki.txt"
    f.write_text("".join(f"{v}\n" for v in SEDKI))
    t0 = time.perf_counter()
    rc = main(["evaluate", "--network", "hanoi", str(f)])
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    hanoi = load_benchmark("hanoi")
    cost = total_cost(hanoi, hanoi.design(SEDKI, native=True)).pipe_cost
    ok = rc == 0 and abs(cost - 6.081e6) <= 0.002e6 and elapsed < 1.0
    report(2, ok, f"cost ${cost / 1e6:.4f} M, {elapsed:.2f} s")


def test_3_upward_greedy_from_zero():
    nytp = load_benchmark("nytp")
    obj = Objective.from_network(Evaluator(nytp, scenario="rounded"))
    t0 = time.perf_counter()
    out = upward_greedy(nytp, nytp.design([0.0] * 21), objective=obj)
    elapsed = time.perf_counter() - t0
    b = total_cost(nytp, out)
    ok = b.sum_pv == 0.0 and b.pipe_cost <= 43.5e6 and obj.evaluations <= 1000 and elapsed < 10
    report(3, ok, f"${b.pipe_cost / 1e6:.2f} M feasible={b.sum_pv == 0.0} after {obj.evaluations} "
                  f"evaluations, {elapsed:.2f} s")


@lru_cache(maxsize=None)
def _nytp_run(phases: str, seed: int) -> float:
    rec = run_hybrid(load_benchmark("nytp"), HybridConfig(popsize=400, budget=200_000, phases=phases), seed)
    return rec.best_feasible_cost


NYTP_SEEDS = range(5)
NYTP_TARGET = 38_637_600.0


@pytest.mark.slow
def test_4_hybrid_nytp():
    t0 = time.perf_counter()
    costs = [_nytp_run("cma+gsu+gsd", s) for s in NYTP_SEEDS]
    hits = int(round(success_rate(costs, NYTP_TARGET) * len(costs)))
    elapsed = time.perf_counter() - t0
    report(4, hits >= 4, f"{hits}/5 runs at $38.64 M "
                         f"({', '.join(f'{c / 1e6:.3f}' for c in costs)}), {elapsed:.0f} s")


@pytest.mark.slow
def test_5_hybrid_hanoi():
    hanoi = load_benchmark("hanoi")
    cfg = HybridConfig(popsize=1000, budget=200_000)
    tries = []
    for seeds in (range(10), range(10, 20)):  # one retry with fresh seeds
        costs = [run_hybrid(hanoi, cfg, s).best_feasible_cost for s in seeds]
        hits = int(round(success_rate(costs, hanoi.target_cost) * 10))
        tries.append(hits)
        if hits >= 5:
            break
    report(5, tries[-1] >= 5, f"{' then '.join(f'{h}/10' for h in tries)} runs at $6.081 M "
                              f"(last batch mean ${np.mean(costs) / 1e6:.3f} M)")


@pytest.mark.slow
def test_6_hybrid_nytp2():
    nytp2 = load_benchmark("nytp2")
    costs = [run_hybrid(nytp2, HybridConfig(popsize=1000, budget=200_000), s).best_feasible_cost
             for s in range(3)]
    best = min(costs)
    ok = abs(best - nytp2.target_cost) <= 5000
    report(6, ok, f"best ${best / 1e6:.4f} M of ({', '.join(f'{c / 1e6:.3f}' for c in costs)}), "
                  f"target ${nytp2.target_cost / 1e6:.4f} M")


@pytest.mark.slow
def test_7_ablation_ordering():
    rates = {}
    for phases in ("cma+gsu+gsd", "cma+gsu", "cma"):
        rates[phases] = success_rate([_nytp_run(phases, s) for s in NYTP_SEEDS], NYTP_TARGET)
    ok = rates["cma+gsu+gsd"] >= rates["cma+gsu"] >= rates["cma"]
    report(7, ok, " >= ".join(f"{k} {v:.0%}" for k, v in rates.items()))


def test_8_property_suites():
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "--hypothesis-show-statistics",
         str(TESTS / "test_properties.py")], capture_output=True, text=True, cwd=TESTS.parent)
    elapsed = time.perf_counter() - t0
    counts = [int(n) for n in re.findall(r"- (\d+) passing examples", proc.stdout)]
    ok = proc.returncode == 0 and len(counts) >= 8 and min(counts) >= 100 and elapsed < 120
    report(8, ok, f"{len(counts)} suites, min {min(counts, default=0)} cases each, "
                  f"exit {proc.returncode}, {elapsed:.0f} s")


@pytest.mark.slow
def test_9_fifty_copies_substitute():
    nytp = load_benchmark("nytp")
    big = load_benchmark("nytp50")
    structural = (big.decision_count == 1050
                  and search_space_size(big) == search_space_size(nytp) ** 50
                  and replicate_network(nytp, 50).decision_count == 1050)
    rec = run_hybrid(big, HybridConfig(popsize=400, budget=50_000), seed=0)
    final = total_cost(big, DesignVector(rec.best_feasible_x)) if rec.feasible else None
    curve = [c for _, c in rec.curve]
    monotone = all(b < a for a, b in zip(curve, curve[1:]))
    ok = structural and final is not None and final.sum_pv == 0.0 and monotone
    report(9, ok, f"1050 decisions, space 16^1050: {structural}; smoke run feasible="
                  f"{final is not None and final.sum_pv == 0.0} at ${rec.best_feasible_cost / 1e6:.0f} M, "
                  f"curve monotone={monotone}, {rec.evaluations} evaluations")
