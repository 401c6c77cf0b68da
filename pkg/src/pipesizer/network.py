"""Core domain types: nodes, pipes, diameter tables, networks and designs.

Everything is stored in SI (m, m^3/s). The ``UnitSystem`` attached to a
network remembers the benchmark's native units so reports and design files
can be expressed the way the literature tabulates them (inches, feet, ...).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INCH = 0.0254
FOOT = 0.3048


class NetworkError(ValueError):
    """Invalid network topology or data."""


class DesignRangeError(ValueError):
    """A diameter lies outside the commercial table's range."""


class NodeKind(str, enum.Enum):
    JUNCTION = "junction"
    RESERVOIR = "reservoir"


class Flavor(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete-stepped"
    COMMERCIAL = "commercial"


@dataclass(frozen=True)
class UnitSystem:
    """Native units of a benchmark, each given as its size in SI."""

    name: str = "SI"
    length: float = 1.0
    diameter: float = 1.0
    head: float = 1.0
    flow: float = 1.0
    diameter_label: str = "m"
    head_label: str = "m"
    flow_label: str = "CMS"


SI = UnitSystem()
US_CUSTOMARY = UnitSystem("US", FOOT, INCH, FOOT, FOOT**3, "in", "ft", "CFS")


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind = NodeKind.JUNCTION
    elevation: float = 0.0
    demand: float = 0.0
    min_head: float | None = None
    head: float | None = None

    def __post_init__(self):
        if self.kind is NodeKind.JUNCTION:
            if self.demand < 0:
                raise NetworkError(f"junction {self.id}: negative demand {self.demand}")
        else:
            if self.head is None:
                raise NetworkError(f"reservoir {self.id} has no fixed head")
            if self.min_head is not None:
                raise NetworkError(f"reservoir {self.id} cannot carry a minimum head")

    @property
    def is_reservoir(self) -> bool:
        return self.kind is NodeKind.RESERVOIR


@dataclass(frozen=True)
class Pipe:
    id: str
    start: str
    end: str
    length: float
    roughness: float
    existing_diameter: float | None = None
    decision_index: int | None = None

    def __post_init__(self):
        if self.length <= 0:
            raise NetworkError(f"pipe {self.id}: length must be positive")
        if self.roughness <= 0:
            raise NetworkError(f"pipe {self.id}: roughness must be positive")
        if self.start == self.end:
            raise NetworkError(f"pipe {self.id}: start and end node are both {self.start}")
        if self.existing_diameter is None and self.decision_index is None:
            raise NetworkError(f"pipe {self.id}: neither an existing diameter nor a decision variable")
        if self.existing_diameter is not None and self.existing_diameter <= 0:
            raise NetworkError(f"pipe {self.id}: existing diameter must be positive")


@dataclass(frozen=True)
class DiameterTable:
    """Commercial sizes (m) and their cost per metre of pipe.

    Either ``unit_costs`` (one per size) or ``power_law`` = (coefficient,
    exponent) is given. The power law is evaluated on the diameter expressed
    in ``power_law_unit`` metres, e.g. 1.1 * D[in]^1.5 for Hanoi.
    """

    sizes: tuple[float, ...]
    unit_costs: tuple[float, ...] | None = None
    power_law: tuple[float, float] | None = None
    power_law_unit: float = 1.0

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=float)
        if sizes.size == 0:
            raise NetworkError("diameter table is empty")
        if np.any(np.diff(sizes) <= 0):
            raise NetworkError("diameter table sizes must be strictly ascending")
        if sizes[0] < 0:
            raise NetworkError("negative diameter in table")
        if (self.unit_costs is None) == (self.power_law is None):
            raise NetworkError("give exactly one of unit_costs or power_law")
        if self.unit_costs is not None:
            costs = np.asarray(self.unit_costs, dtype=float)
            if costs.shape != sizes.shape:
                raise NetworkError("one unit cost per size is required")
            if np.any(np.diff(costs) < 0):
                raise NetworkError("unit costs must be nondecreasing in diameter")
            if sizes[0] == 0 and costs[0] != 0:
                raise NetworkError("size 0 must cost 0")
        object.__setattr__(self, "_sizes", sizes)

    @property
    def array(self) -> np.ndarray:
        return self._sizes

    @property
    def lower(self) -> float:
        return float(self._sizes[0])

    @property
    def upper(self) -> float:
        return float(self._sizes[-1])

    def unit_cost(self, diameters) -> np.ndarray:
        """Cost per metre; piecewise-linear between tabulated sizes."""
        d = np.asarray(diameters, dtype=float)
        if self.power_law is not None:
            coef, expo = self.power_law
            return coef * (np.maximum(d, 0.0) / self.power_law_unit) ** expo
        return np.interp(d, self._sizes, np.asarray(self.unit_costs, dtype=float))

    def bracket(self, diameters) -> tuple[np.ndarray, np.ndarray]:
        """Indices (a, b) of the commercial sizes bracketing each value.

        Exact commercial values get a == b.
        """
        d = np.asarray(diameters, dtype=float)
        s = self._sizes
        hi = np.clip(np.searchsorted(s, d, side="left"), 0, len(s) - 1)
        exact = s[hi] == d
        lo = np.where(exact, hi, np.maximum(hi - 1, 0))
        return lo, hi


@dataclass(frozen=True)
class DesignVector:
    diameters: np.ndarray
    flavor: Flavor = Flavor.CONTINUOUS

    def __post_init__(self):
        arr = np.array(self.diameters, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "diameters", arr)

    def __len__(self):
        return len(self.diameters)

    def __eq__(self, other):
        if not isinstance(other, DesignVector):
            return NotImplemented
        return self.flavor == other.flavor and np.array_equal(self.diameters, other.diameters)

    def __hash__(self):
        return hash((self.flavor, self.diameters.tobytes()))


@dataclass(frozen=True)
class PipeNetwork:
    name: str
    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    table: DiameterTable
    units: UnitSystem = SI
    pressure_penalty: float = 1e7
    diameter_penalty: float = 1e7
    target_cost: float | None = None
    nytp_special: bool = False
    # tuned CMA-ES bound handling for this benchmark: clamp | reflect | mirror
    bound_handling: str = "clamp"
    _index: dict = field(default=None, init=False, repr=False, compare=False)
    # per-network scratch for compiled solver data; not part of identity
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, n in enumerate(self.nodes):
            if n.id in index:
                raise NetworkError(f"duplicate node id {n.id}")
            index[n.id] = i
        if not any(n.is_reservoir for n in self.nodes):
            raise NetworkError("network has no reservoir")
        seen = set()
        decisions = []
        for p in self.pipes:
            if p.id in seen:
                raise NetworkError(f"duplicate pipe id {p.id}")
            seen.add(p.id)
            for end in (p.start, p.end):
                if end not in index:
                    raise NetworkError(f"pipe {p.id} references unknown node {end}")
            if p.decision_index is not None:
                decisions.append(p.decision_index)
        if sorted(decisions) != list(range(len(decisions))):
            raise NetworkError("decision indices must be 0..N-1 without gaps")
        object.__setattr__(self, "_index", index)
        if not _connected(self):
            raise NetworkError("network graph is not connected")

    @property
    def decision_count(self) -> int:
        return sum(p.decision_index is not None for p in self.pipes)

    @property
    def decision_pipes(self) -> tuple[Pipe, ...]:
        dec = [p for p in self.pipes if p.decision_index is not None]
        return tuple(sorted(dec, key=lambda p: p.decision_index))

    @property
    def junctions(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if not n.is_reservoir)

    @property
    def reservoirs(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.is_reservoir)

    def node(self, node_id: str) -> Node:
        return self.nodes[self._index[node_id]]

    def node_index(self, node_id: str) -> int:
        return self._index[node_id]

    def design(self, values: Sequence[float], flavor: Flavor | None = None,
               native: bool = False) -> DesignVector:
        """Build a design from values (SI metres, or native units if ``native``)."""
        d = np.asarray(values, dtype=float)
        if d.shape != (self.decision_count,):
            raise DesignRangeError(f"design has {d.size} values, network needs {self.decision_count}")
        if native:
            d = d * self.units.diameter
        if flavor is None:
            flavor = Flavor.COMMERCIAL if _all_commercial(d, self.table) else Flavor.CONTINUOUS
        return DesignVector(d, flavor)

    def uniform_design(self, diameter: float) -> DesignVector:
        return self.design(np.full(self.decision_count, diameter))


def _all_commercial(d: np.ndarray, table: DiameterTable) -> bool:
    return bool(np.all(np.isin(d, table.array)))


def _connected(net: PipeNetwork) -> bool:
    adj = {n.id: [] for n in net.nodes}
    for p in net.pipes:
        adj[p.start].append(p.end)
        adj[p.end].append(p.start)
    start = net.nodes[0].id
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(net.nodes)


def round_to_commercial(design: DesignVector, table: DiameterTable,
                        tol: float = 1e-9) -> DesignVector:
    """Snap each diameter to the nearer bracketing commercial size.

    A value exactly at the midpoint goes up. Values beyond the table by more
    than ``tol`` (relative to the largest size) are rejected.
    """
    d = np.asarray(design.diameters, dtype=float)
    s = table.array
    slack = tol * max(abs(table.upper), 1.0)
    if np.any(d < s[0] - slack) or np.any(d > s[-1] + slack):
        bad = d[(d < s[0] - slack) | (d > s[-1] + slack)]
        raise DesignRangeError(f"diameters {bad.tolist()} outside [{s[0]}, {s[-1]}]")
    d = np.clip(d, s[0], s[-1])
    lo, hi = table.bracket(d)
    mid = 0.5 * (s[lo] + s[hi])
    out = np.where(d < mid, s[lo], s[hi])
    return DesignVector(out, Flavor.COMMERCIAL)


def round_to_step(design: DesignVector, table: DiameterTable, step: float) -> DesignVector:
    """Round to a uniform grid of ``step`` metres (the 1-inch discrete scenario)."""
    d = np.floor(np.asarray(design.diameters) / step + 0.5) * step
    d = np.clip(d, table.lower, table.upper)
    return DesignVector(d, Flavor.DISCRETE)


def search_space_size(network: PipeNetwork) -> int:
    return len(network.table.sizes) ** network.decision_count
