"""Demand-driven steady-state solver for gravity-fed pipe networks.

Newton iteration on nodal heads and pipe flows (the global-gradient scheme
used by EPANET), Hazen-Williams head loss in SI units. Junctions are split
into hydraulically independent components: fixed-head nodes decouple the
network, so each component is solved on its own. Replicated benchmarks
(NYTP2, 50NYTP) therefore cost one small solve per copy, and a change to one
pipe only requires re-solving the component that contains it.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .network import DesignVector, Pipe, PipeNetwork

log = logging.getLogger(__name__)

_threads = max(1, int(os.environ.get("PIPESIZER_THREADS", "1") or 1))


def set_threads(n: int) -> None:
    """Cap the number of threads used for batch solves (1 = sequential)."""
    global _threads
    if n < 1:
        raise ValueError("thread count must be at least 1")
    _threads = int(n)

HW_CONSTANT = 10.667
HW_Q_EXP = 1.852
HW_D_EXP = 4.871
SMALL_FLOW = 1e-6  # m^3/s, below this the head loss is linearised
FLOW_TOL = 1e-4
MASS_TOL = 1e-6  # m^3/s
ENERGY_TOL = 1e-8  # m
MAX_ITER = 200

OK, NOT_CONVERGED, STRUCTURAL = 0, 1, 2


class HydraulicError(RuntimeError):
    pass


class StructuralError(HydraulicError):
    """A junction lost every path to a fixed-head node."""


class ConvergenceError(HydraulicError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def head_loss(pipe: Pipe, installed_diameter: float, flow: float) -> float:
    """Hazen-Williams head loss (m) along ``pipe`` at ``flow`` (m^3/s), signed with the flow."""
    if installed_diameter <= 0:
        raise ValueError(f"pipe {pipe.id}: installed diameter must be positive, got {installed_diameter}")
    r = resistance(pipe.length, pipe.roughness, installed_diameter)
    return float(r * abs(flow) ** HW_Q_EXP * np.sign(flow))


def resistance(length, roughness, diameter):
    return HW_CONSTANT * np.power(roughness, -HW_Q_EXP) * np.power(diameter, -HW_D_EXP) * length


@dataclass(frozen=True)
class HydraulicState:
    head: np.ndarray  # per network node, m
    flow: np.ndarray  # per pipe (existing + duplicate), m^3/s
    iterations: int
    residual: float
    arc_flow: np.ndarray | None = None


@dataclass
class HydraulicModel:
    """Flattened solver arrays of one network, grouped by component."""

    n_nodes: int
    junction_nodes: np.ndarray  # global node index, component order
    comp_j_ptr: np.ndarray
    comp_a_ptr: np.ndarray
    arc_u: np.ndarray  # local junction index within component, -1 if fixed head
    arc_v: np.ndarray
    arc_hu: np.ndarray  # fixed head at the start (used when arc_u == -1)
    arc_hv: np.ndarray
    arc_k: np.ndarray  # resistance without the diameter term
    arc_fixed_d: np.ndarray  # NaN for decision arcs
    arc_dec: np.ndarray  # decision index or -1
    arc_pipe: np.ndarray  # pipe position in network.pipes, component order
    demand: np.ndarray  # per junction, component order
    h_start: np.ndarray  # initial head guess per component
    fixed_nodes: np.ndarray
    fixed_heads: np.ndarray
    free_arcs: tuple  # arcs joining two fixed-head nodes: (pipe_pos, ha, hb, k, fixed_d, dec)
    decision_comp: np.ndarray  # component of each decision variable (-1 if between fixed heads)
    min_head: np.ndarray  # per junction, component order

    @property
    def n_components(self) -> int:
        return len(self.comp_j_ptr) - 1

    @property
    def n_junctions(self) -> int:
        return len(self.junction_nodes)


def compile_network(net: PipeNetwork) -> HydraulicModel:
    model = net._cache.get("model")
    if model is None:
        model = _compile(net)
        net._cache["model"] = model
    return model


def _compile(net: PipeNetwork) -> HydraulicModel:
    n = len(net.nodes)
    is_fixed = np.array([nd.is_reservoir for nd in net.nodes])
    # arcs: existing pipe and decision duplicate are separate conductances
    arcs = []
    for pos, p in enumerate(net.pipes):
        a, b = net.node_index(p.start), net.node_index(p.end)
        k = HW_CONSTANT * p.roughness ** -HW_Q_EXP * p.length
        if p.existing_diameter is not None:
            arcs.append((pos, a, b, k, p.existing_diameter, -1))
        if p.decision_index is not None:
            arcs.append((pos, a, b, k, np.nan, p.decision_index))

    # union-find over junctions, skipping fixed-head nodes
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for _, a, b, *_ in arcs:
        if not is_fixed[a] and not is_fixed[b]:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = []
    comp_of = np.full(n, -1)
    for i in range(n):
        if not is_fixed[i]:
            r = find(i)
            if r not in roots:
                roots.append(r)
            comp_of[i] = roots.index(r)
    n_comp = len(roots)

    junction_nodes, comp_j_ptr = [], [0]
    local = np.full(n, -1)
    for c in range(n_comp):
        members = [i for i in range(n) if comp_of[i] == c]
        for j, i in enumerate(members):
            local[i] = j
        junction_nodes.extend(members)
        comp_j_ptr.append(len(junction_nodes))

    heads = np.array([nd.head if nd.is_reservoir else 0.0 for nd in net.nodes], dtype=float)
    comp_arcs = [[] for _ in range(n_comp)]
    free_arcs = []
    for arc in arcs:
        pos, a, b, k, fd, dec = arc
        c = comp_of[a] if comp_of[a] >= 0 else comp_of[b]
        if c < 0:
            free_arcs.append((pos, heads[a], heads[b], k, fd, dec))
        else:
            comp_arcs[c].append(arc)

    cols = {key: [] for key in ("u", "v", "hu", "hv", "k", "fd", "dec", "pipe")}
    comp_a_ptr = [0]
    h_start = []
    for c in range(n_comp):
        touching = []
        for pos, a, b, k, fd, dec in comp_arcs[c]:
            cols["u"].append(local[a] if not is_fixed[a] else -1)
            cols["v"].append(local[b] if not is_fixed[b] else -1)
            cols["hu"].append(heads[a])
            cols["hv"].append(heads[b])
            cols["k"].append(k)
            cols["fd"].append(fd)
            cols["dec"].append(dec)
            cols["pipe"].append(pos)
            touching += [heads[x] for x in (a, b) if is_fixed[x]]
        if not touching:
            raise HydraulicError(f"component {c} has no fixed-head node")
        h_start.append(max(touching))
        comp_a_ptr.append(len(cols["u"]))

    decision_comp = np.full(net.decision_count, -1)
    for c in range(n_comp):
        for pos, a, b, k, fd, dec in comp_arcs[c]:
            if dec >= 0:
                decision_comp[dec] = c

    jn = np.array(junction_nodes, dtype=np.int64)
    return HydraulicModel(
        n_nodes=n,
        junction_nodes=jn,
        comp_j_ptr=np.array(comp_j_ptr, dtype=np.int64),
        comp_a_ptr=np.array(comp_a_ptr, dtype=np.int64),
        arc_u=np.array(cols["u"], dtype=np.int64),
        arc_v=np.array(cols["v"], dtype=np.int64),
        arc_hu=np.array(cols["hu"], dtype=float),
        arc_hv=np.array(cols["hv"], dtype=float),
        arc_k=np.array(cols["k"], dtype=float),
        arc_fixed_d=np.array(cols["fd"], dtype=float),
        arc_dec=np.array(cols["dec"], dtype=np.int64),
        arc_pipe=np.array(cols["pipe"], dtype=np.int64),
        demand=np.array([net.nodes[i].demand for i in jn], dtype=float),
        h_start=np.array(h_start, dtype=float),
        fixed_nodes=np.flatnonzero(is_fixed),
        fixed_heads=heads[is_fixed],
        free_arcs=tuple(free_arcs),
        decision_comp=decision_comp,
        min_head=np.array([net.nodes[i].min_head if net.nodes[i].min_head is not None
                           else -np.inf for i in jn], dtype=float),
    )


@numba.njit(cache=True, nogil=True)
def _solve_component(j0, nj, a0, na, drow, arc_u, arc_v, arc_hu, arc_hv, arc_k,
                     arc_fd, arc_dec, demand, h0, maxit, H, Q):
    """Newton (global gradient) solve of one component; writes H[j0:j0+nj], Q[a0:a0+na].

    Returns (status, iterations, mass residual).
    """
    r = np.empty(na)
    active = np.empty(na, dtype=np.bool_)
    for k in range(na):
        dec = arc_dec[a0 + k]
        d = arc_fd[a0 + k] if dec < 0 else drow[dec]
        active[k] = d > 0.0
        r[k] = arc_k[a0 + k] * d ** (-4.871) if d > 0.0 else 0.0
        # start at 1 ft/s
        Q[a0 + k] = 0.3048 * 0.7853981633974483 * d * d if d > 0.0 else 0.0
    for j in range(nj):
        H[j0 + j] = h0

    M = np.empty((nj, nj))
    rhs = np.empty(nj)
    e = np.empty(na)
    ginv = np.empty(na)
    gl = SMALL_FLOW ** 0.852
    prev_rel = np.inf
    status = 1
    mass = np.inf
    it = 0
    for it in range(maxit + 1):
        # energy residual, mass residual
        emax = 0.0
        for k in range(na):
            if not active[k]:
                continue
            q = Q[a0 + k]
            aq = abs(q)
            if aq < SMALL_FLOW:
                g = r[k] * gl
                h = g * q
            else:
                t = r[k] * aq ** 0.852
                h = t * q
                g = 1.852 * t
            u = arc_u[a0 + k]
            v = arc_v[a0 + k]
            hu = H[j0 + u] if u >= 0 else arc_hu[a0 + k]
            hv = H[j0 + v] if v >= 0 else arc_hv[a0 + k]
            e[k] = h - (hu - hv)
            ginv[k] = 1.0 / g
            if abs(e[k]) > emax:
                emax = abs(e[k])
        for j in range(nj):
            rhs[j] = demand[j0 + j]
        for k in range(na):
            if not active[k]:
                continue
            u = arc_u[a0 + k]
            v = arc_v[a0 + k]
            if u >= 0:
                rhs[u] += Q[a0 + k]
            if v >= 0:
                rhs[v] -= Q[a0 + k]
        mass = 0.0
        for j in range(nj):
            if abs(rhs[j]) > mass:
                mass = abs(rhs[j])
        if prev_rel < FLOW_TOL and mass < MASS_TOL and emax < ENERGY_TOL:
            status = 0
            break
        if it == maxit:
            break
        # M dH = A^T G^-1 e - c   (c = outflow - inflow + demand, held in rhs)
        for j in range(nj):
            rhs[j] = -rhs[j]
            for i in range(nj):
                M[j, i] = 0.0
        for k in range(na):
            if not active[k]:
                continue
            u = arc_u[a0 + k]
            v = arc_v[a0 + k]
            w = ginv[k]
            we = w * e[k]
            if u >= 0:
                M[u, u] += w
                rhs[u] += we
            if v >= 0:
                M[v, v] += w
                rhs[v] -= we
            if u >= 0 and v >= 0:
                M[u, v] -= w
                M[v, u] -= w
        # in-place Cholesky
        for j in range(nj):
            s = M[j, j]
            for p in range(j):
                s -= M[j, p] * M[j, p]
            if s <= 1e-300 or s <= 1e-14 * M[j, j]:
                return 2, it, mass
            s = np.sqrt(s)
            M[j, j] = s
            for i in range(j + 1, nj):
                t = M[i, j]
                for p in range(j):
                    t -= M[i, p] * M[j, p]
                M[i, j] = t / s
        for j in range(nj):
            t = rhs[j]
            for p in range(j):
                t -= M[j, p] * rhs[p]
            rhs[j] = t / M[j, j]
        for j in range(nj - 1, -1, -1):
            t = rhs[j]
            for p in range(j + 1, nj):
                t -= M[p, j] * rhs[p]
            rhs[j] = t / M[j, j]
        dqmax = 0.0
        qmax = 0.0
        for k in range(na):
            if not active[k]:
                continue
            u = arc_u[a0 + k]
            v = arc_v[a0 + k]
            du = rhs[u] if u >= 0 else 0.0
            dv = rhs[v] if v >= 0 else 0.0
            dq = ginv[k] * ((du - dv) - e[k])
            Q[a0 + k] += dq
            if abs(dq) > dqmax:
                dqmax = abs(dq)
            if abs(Q[a0 + k]) > qmax:
                qmax = abs(Q[a0 + k])
        for j in range(nj):
            H[j0 + j] += rhs[j]
        prev_rel = dqmax / max(qmax, 1e-6)
    return status, it, mass


@numba.njit(cache=True, nogil=True)
def _solve_tasks(rows, comps, D, comp_j_ptr, comp_a_ptr, arc_u, arc_v, arc_hu, arc_hv,
                 arc_k, arc_fd, arc_dec, demand, h_start, maxit, H, Q, status, iters, resid):
    for t in range(rows.shape[0]):
        b = rows[t]
        c = comps[t]
        j0 = comp_j_ptr[c]
        a0 = comp_a_ptr[c]
        st, it, ms = _solve_component(j0, comp_j_ptr[c + 1] - j0, a0, comp_a_ptr[c + 1] - a0,
                                      D[b], arc_u, arc_v, arc_hu, arc_hv, arc_k, arc_fd,
                                      arc_dec, demand, h_start[c], maxit, H[b], Q[b])
        status[b, c] = st
        iters[b, c] = it
        resid[b, c] = ms


def solve_components(model: HydraulicModel, D: np.ndarray, rows=None, comps=None,
                     H=None, Q=None, maxit: int = MAX_ITER):
    """Solve (design row, component) tasks in a batch.

    ``D`` is (B, N) in metres. Returns junction heads (B, n_junctions) and arc
    flows (B, n_arcs) in component order, plus per-(row, component) status,
    iteration and mass-residual arrays.
    """
    D = np.ascontiguousarray(np.atleast_2d(D), dtype=float)
    B = D.shape[0]
    C = model.n_components
    if rows is None:
        rows = np.repeat(np.arange(B), C)
        comps = np.tile(np.arange(C), B)
    rows = np.asarray(rows, dtype=np.int64)
    comps = np.asarray(comps, dtype=np.int64)
    if H is None:
        H = np.zeros((B, model.n_junctions))
    if Q is None:
        Q = np.zeros((B, len(model.arc_u)))
    status = np.zeros((B, C), dtype=np.int64)
    iters = np.zeros((B, C), dtype=np.int64)
    resid = np.zeros((B, C))
    m = model

    def run(r, c):
        _solve_tasks(r, c, D, m.comp_j_ptr, m.comp_a_ptr, m.arc_u, m.arc_v, m.arc_hu, m.arc_hv,
                     m.arc_k, m.arc_fixed_d, m.arc_dec, m.demand, m.h_start, maxit,
                     H, Q, status, iters, resid)

    if _threads > 1 and len(rows) >= 2 * _threads:
        # tasks write disjoint slices, and the kernel releases the GIL
        parts = zip(np.array_split(rows, _threads), np.array_split(comps, _threads))
        with ThreadPoolExecutor(_threads) as pool:
            list(pool.map(lambda rc: run(*rc), parts))
    else:
        run(rows, comps)
    return H, Q, status, iters, resid


def solve_steady_state(network: PipeNetwork, design: DesignVector,
                       max_iter: int = MAX_ITER) -> HydraulicState:
    """Heads at every node and flows in every pipe for one design."""
    model = compile_network(network)
    d = np.asarray(design.diameters, dtype=float)
    if d.shape != (network.decision_count,):
        raise ValueError(f"design has {d.size} values, network needs {network.decision_count}")
    if np.any(d < 0):
        raise ValueError("negative diameter in design")
    H, Q, status, iters, resid = solve_components(model, d[None, :], maxit=max_iter)
    if np.any(status[0] == STRUCTURAL):
        c = int(np.flatnonzero(status[0] == STRUCTURAL)[0])
        nodes = [network.nodes[i].id for i in
                 model.junction_nodes[model.comp_j_ptr[c]:model.comp_j_ptr[c + 1]]]
        raise StructuralError(f"junctions {nodes} are cut off from every reservoir by zero-size pipes")
    if np.any(status[0] == NOT_CONVERGED):
        raise ConvergenceError(f"no convergence within {max_iter} iterations", float(resid[0].max()))

    head = np.empty(model.n_nodes)
    head[model.fixed_nodes] = model.fixed_heads
    head[model.junction_nodes] = H[0]
    flow = np.zeros(len(network.pipes))
    np.add.at(flow, model.arc_pipe, Q[0])
    for pos, ha, hb, k, fd, dec in model.free_arcs:
        dia = fd if dec < 0 else d[dec]
        if dia > 0:
            dh = ha - hb
            flow[pos] += np.sign(dh) * (abs(dh) / (k * dia ** -HW_D_EXP)) ** (1 / HW_Q_EXP)
    return HydraulicState(head=head, flow=flow, iterations=int(iters[0].max()),
                          residual=float(resid[0].max()), arc_flow=Q[0].copy())
