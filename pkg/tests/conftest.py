import numpy as np
import pytest

from pipesizer import load_benchmark
from pipesizer.network import DiameterTable, Node, NodeKind, Pipe, PipeNetwork

MAIER = {7: 144, 16: 96, 17: 96, 18: 84, 19: 72, 21: 72}
SEDKI = [40, 40, 40, 40, 40, 40, 40, 40, 40, 30, 24, 24, 20, 16, 12, 12, 16,
         24, 20, 40, 20, 12, 40, 30, 30, 20, 12, 12, 16, 12, 12, 16, 16, 24]


def nytp_native(sizes: dict) -> list:
    d = [0.0] * 21
    for pipe, v in sizes.items():
        d[pipe - 1] = float(v)
    return d


@pytest.fixture(scope="session")
def nytp():
    return load_benchmark("nytp")


@pytest.fixture(scope="session")
def hanoi():
    return load_benchmark("hanoi")


@pytest.fixture(scope="session")
def nytp2():
    return load_benchmark("nytp2")


SMALL_TABLE = DiameterTable((0.1, 0.2, 0.3), (10.0, 25.0, 45.0))


def star_network(lengths, demands, min_heads, head=100.0, table=SMALL_TABLE, roughness=120.0):
    """Reservoir feeding each junction through its own pipe; greedy is exact here."""
    nodes = [Node("R", NodeKind.RESERVOIR, head=head)]
    pipes = []
    for i, (L, q, h) in enumerate(zip(lengths, demands, min_heads)):
        nodes.append(Node(f"J{i}", demand=q, min_head=h))
        pipes.append(Pipe(f"P{i}", "R", f"J{i}", L, roughness, decision_index=i))
    return PipeNetwork("star", tuple(nodes), tuple(pipes), table)


def random_network(rng: np.random.Generator, n_junctions: int, extra_loops: int,
                   table: DiameterTable | None = None) -> PipeNetwork:
    """Random connected network: a spanning tree rooted at the reservoir plus loop pipes."""
    table = table or DiameterTable((0.1, 0.2, 0.3, 0.5, 0.8), (10.0, 25.0, 45.0, 90.0, 170.0))
    nodes = [Node("R", NodeKind.RESERVOIR, head=100.0)]
    for j in range(n_junctions):
        nodes.append(Node(f"J{j}", elevation=float(rng.uniform(0, 20)),
                          demand=float(rng.uniform(0, 0.05)), min_head=float(rng.uniform(20, 60))))
    ids = [n.id for n in nodes]
    edges = [(ids[int(rng.integers(0, k))], ids[k]) for k in range(1, len(ids))]
    seen = {frozenset(e) for e in edges}
    for _ in range(extra_loops):
        a, b = rng.choice(len(ids), 2, replace=False)
        e = frozenset((ids[a], ids[b]))
        if e not in seen:
            seen.add(e)
            edges.append((ids[a], ids[b]))
    pipes = tuple(Pipe(f"P{i}", a, b, float(rng.uniform(100, 2000)), float(rng.uniform(80, 140)),
                       decision_index=i) for i, (a, b) in enumerate(edges))
    return PipeNetwork("random", tuple(nodes), pipes, table)


def cheapest_feasible(network: PipeNetwork, start_idx, direction: int):
    """Brute-force cheapest zero-violation design among those reachable by monotone moves."""
    from itertools import product

    from pipesizer.cost import Evaluator

    sizes = network.table.array
    n = network.decision_count
    ranges = [range(s, len(sizes)) if direction > 0 else range(0, s + 1) for s in start_idx]
    combos = np.array(list(product(*ranges)))
    b = Evaluator(network).breakdown_batch(sizes[combos])
    ok = b.sum_pv == 0
    if not ok.any():
        return None, np.inf
    k = np.flatnonzero(ok)[np.argmin(b.cost[ok])]
    assert combos.shape[1] == n
    return sizes[combos[k]], float(b.cost[k])


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
