"""Reading and writing network files, and replicated benchmarks.

The format is the EPANET INP subset ([JUNCTIONS], [RESERVOIRS], [PIPES],
[OPTIONS]) plus a [DESIGN] section naming the decision pipes, the commercial
diameter table, unit costs, minimum heads and penalty factors. The [DESIGN]
section may also live in a sidecar file.

[DESIGN] keys (values in the file's native units)::

    MODE             duplicate | replace
    DIAMETER_UNIT    in | mm | m | ft
    SIZES            d1 d2 ...          (repeatable)
    COSTS            c1 c2 ...          (currency per length unit, repeatable)
    COST_FORMULA     coef exponent      (cost per length = coef * D^exponent)
    DECISION         pipe ids ...       (repeatable; order = decision index)
    MIN_HEAD         default <head>  |  <node> <head>
    PRESSURE_PENALTY value
    DIAMETER_PENALTY value
    TARGET_COST      value
    NYTP_SPECIAL     yes | no
    BOUND_HANDLING   clamp | reflect | mirror
"""
from __future__ import annotations

from dataclasses import replace
from importlib import resources
from pathlib import Path

from .network import (
    FOOT, INCH, DiameterTable, NetworkError, Node, NodeKind, Pipe, PipeNetwork, UnitSystem,
)

FLOW_UNITS = {
    "CFS": FOOT**3,
    "GPM": 6.30901964e-05,
    "MGD": 0.0438126364,
    "IMGD": 0.0526167525,
    "AFD": 0.0142764101,
    "LPS": 1e-3,
    "LPM": 1e-3 / 60,
    "MLD": 1e3 / 86400,
    "CMH": 1 / 3600,
    "CMD": 1 / 86400,
    "CMS": 1.0,
}
US_FLOWS = {"CFS", "GPM", "MGD", "IMGD", "AFD"}
DIAMETER_UNITS = {"in": INCH, "mm": 1e-3, "m": 1.0, "ft": FOOT}
BENCHMARKS = ("nytp", "nytp2", "nytp50", "hanoi")


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownNodeError(ParseError):
    pass


class DuplicateIdError(ParseError):
    pass


class MissingSectionError(ParseError):
    pass


class FieldError(ParseError):
    pass


def _sections(text):
    """Yield (section, line number, tokens) for every data line."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip().upper()
            continue
        yield section, lineno, line.split()


def _num(tok, lineno, what):
    try:
        return float(tok)
    except ValueError:
        raise FieldError(f"{what}: {tok!r} is not a number", lineno) from None


def _need(toks, n, lineno, section):
    if len(toks) < n:
        raise FieldError(f"[{section}] expects at least {n} columns, got {len(toks)}", lineno)


def parse_network(text: str, design_text: str | None = None, name: str | None = None) -> PipeNetwork:
    """Parse INP + DESIGN text into a validated SI network."""
    junctions, reservoirs, pipes, design = [], [], [], []
    options = {}
    title = []
    for section, lineno, toks in _sections(text):
        if section == "JUNCTIONS":
            _need(toks, 2, lineno, section)
            junctions.append((lineno, toks))
        elif section == "RESERVOIRS":
            _need(toks, 2, lineno, section)
            reservoirs.append((lineno, toks))
        elif section == "PIPES":
            _need(toks, 6, lineno, section)
            pipes.append((lineno, toks))
        elif section == "DESIGN":
            design.append((lineno, toks))
        elif section == "OPTIONS":
            options[toks[0].upper()] = (lineno, toks[1:])
        elif section == "TITLE":
            title.append(" ".join(toks))
    if design_text is not None:
        if design:
            raise ParseError("DESIGN given both inline and in a sidecar file")
        design = [(ln, t) for s, ln, t in _sections(design_text) if s == "DESIGN"]
    if not design:
        raise MissingSectionError("missing [DESIGN] section")
    if not junctions:
        raise MissingSectionError("missing [JUNCTIONS] section")
    if not reservoirs:
        raise MissingSectionError("missing [RESERVOIRS] section")
    if not pipes:
        raise MissingSectionError("missing [PIPES] section")

    flow_label = "CFS"
    if "UNITS" in options:
        lineno, vals = options["UNITS"]
        flow_label = vals[0].upper() if vals else ""
        if flow_label not in FLOW_UNITS:
            raise FieldError(f"unsupported flow units {flow_label!r}", lineno)
    if "HEADLOSS" in options:
        lineno, vals = options["HEADLOSS"]
        if not vals or vals[0].upper() != "H-W":
            raise FieldError("only Hazen-Williams (H-W) head loss is supported", lineno)
    us = flow_label in US_FLOWS
    length = FOOT if us else 1.0
    inp_diam = INCH if us else 1e-3
    flow = FLOW_UNITS[flow_label]

    spec = _parse_design(design, default_diam="in" if us else "mm")
    units = UnitSystem("US" if us else "SI", length, DIAMETER_UNITS[spec["diameter_unit"]],
                       length, flow, spec["diameter_unit"], "ft" if us else "m", flow_label)

    node_ids = {}
    for lineno, toks in junctions + reservoirs:
        if toks[0] in node_ids:
            raise DuplicateIdError(f"duplicate node id {toks[0]}", lineno)
        node_ids[toks[0]] = lineno
    for nid, lineno in spec["min_head_lines"].items():
        if nid not in node_ids:
            raise UnknownNodeError(f"MIN_HEAD references unknown node {nid}", lineno)

    nodes = []
    for lineno, toks in junctions:
        elev = _num(toks[1], lineno, "elevation")
        dem = _num(toks[2], lineno, "demand") if len(toks) > 2 else 0.0
        hmin = spec["min_head"].get(toks[0], spec["min_head_default"])
        hmin = elev if hmin is None else hmin
        try:
            nodes.append(Node(toks[0], NodeKind.JUNCTION, elev * length, dem * flow, hmin * length))
        except NetworkError as exc:
            raise FieldError(str(exc), lineno) from None
    for lineno, toks in reservoirs:
        head = _num(toks[1], lineno, "head")
        nodes.append(Node(toks[0], NodeKind.RESERVOIR, head * length, 0.0, None, head * length))

    decision = {}
    for i, (pid, lineno) in enumerate(spec["decision"]):
        if pid in decision:
            raise DuplicateIdError(f"pipe {pid} listed twice in DECISION", lineno)
        decision[pid] = i
    pipe_ids = set()
    out_pipes = []
    for lineno, toks in pipes:
        pid, a, b = toks[:3]
        if pid in pipe_ids:
            raise DuplicateIdError(f"duplicate pipe id {pid}", lineno)
        pipe_ids.add(pid)
        for end in (a, b):
            if end not in node_ids:
                raise UnknownNodeError(f"pipe {pid} references undeclared node {end}", lineno)
        L = _num(toks[3], lineno, "length")
        dia = _num(toks[4], lineno, "diameter")
        C = _num(toks[5], lineno, "roughness")
        dec = decision.get(pid)
        existing = dia * inp_diam
        if dec is not None and spec["mode"] == "replace":
            existing = None
        try:
            out_pipes.append(Pipe(pid, a, b, L * length, C, existing, dec))
        except NetworkError as exc:
            raise FieldError(str(exc), lineno) from None
    for pid, lineno in spec["decision"]:
        if pid not in pipe_ids:
            raise UnknownNodeError(f"DECISION references unknown pipe {pid}", lineno)

    dunit = DIAMETER_UNITS[spec["diameter_unit"]]
    try:
        if spec["formula"] is not None:
            coef, expo = spec["formula"]
            table = DiameterTable(tuple(s * dunit for s in spec["sizes"]), None,
                                  (coef / length, expo), dunit)
        else:
            table = DiameterTable(tuple(s * dunit for s in spec["sizes"]),
                                  tuple(c / length for c in spec["costs"]))
        net = PipeNetwork(
            name or (title[0] if title else "network"), tuple(nodes), tuple(out_pipes), table, units,
            pressure_penalty=spec.get("pressure_penalty", 1e7),
            diameter_penalty=spec.get("diameter_penalty", 1e7),
            target_cost=spec.get("target_cost"),
            nytp_special=spec.get("nytp_special", False),
            bound_handling=spec.get("bound_handling", "clamp"),
        )
    except NetworkError as exc:
        raise ParseError(str(exc)) from None
    return net


def _parse_design(lines, default_diam):
    spec = {"mode": "replace", "diameter_unit": default_diam, "sizes": [], "costs": [],
            "formula": None, "decision": [], "min_head": {}, "min_head_lines": {},
            "min_head_default": None}
    for lineno, toks in lines:
        key, vals = toks[0].upper(), toks[1:]
        if key == "MODE":
            if not vals or vals[0].lower() not in ("duplicate", "replace"):
                raise FieldError("MODE must be duplicate or replace", lineno)
            spec["mode"] = vals[0].lower()
        elif key == "DIAMETER_UNIT":
            if not vals or vals[0] not in DIAMETER_UNITS:
                raise FieldError(f"DIAMETER_UNIT must be one of {sorted(DIAMETER_UNITS)}", lineno)
            spec["diameter_unit"] = vals[0]
        elif key == "SIZES":
            spec["sizes"] += [_num(v, lineno, "size") for v in vals]
        elif key == "COSTS":
            spec["costs"] += [_num(v, lineno, "cost") for v in vals]
        elif key == "COST_FORMULA":
            if len(vals) != 2:
                raise FieldError("COST_FORMULA expects coefficient and exponent", lineno)
            spec["formula"] = (_num(vals[0], lineno, "coefficient"), _num(vals[1], lineno, "exponent"))
        elif key == "DECISION":
            spec["decision"] += [(v, lineno) for v in vals]
        elif key == "MIN_HEAD":
            if len(vals) != 2:
                raise FieldError("MIN_HEAD expects '<node|default> <head>'", lineno)
            value = _num(vals[1], lineno, "minimum head")
            if vals[0].lower() == "default":
                spec["min_head_default"] = value
            else:
                spec["min_head"][vals[0]] = value
                spec["min_head_lines"][vals[0]] = lineno
        elif key in ("PRESSURE_PENALTY", "DIAMETER_PENALTY", "TARGET_COST"):
            if len(vals) != 1:
                raise FieldError(f"{key} expects one value", lineno)
            spec[key.lower()] = _num(vals[0], lineno, key.lower())
        elif key == "NYTP_SPECIAL":
            spec["nytp_special"] = bool(vals) and vals[0].lower() in ("yes", "true", "1")
        elif key == "BOUND_HANDLING":
            if len(vals) != 1 or vals[0].lower() not in ("clamp", "reflect", "mirror"):
                raise FieldError("BOUND_HANDLING expects clamp, reflect or mirror", lineno)
            spec["bound_handling"] = vals[0].lower()
        else:
            raise FieldError(f"unknown DESIGN key {key}", lineno)
    if not spec["sizes"]:
        raise MissingSectionError("DESIGN has no SIZES")
    if not spec["decision"]:
        raise MissingSectionError("DESIGN has no DECISION pipes")
    if spec["formula"] is None and len(spec["costs"]) != len(spec["sizes"]):
        raise FieldError("COSTS must list one value per size (or give COST_FORMULA)", lines[-1][0])
    return spec


def _fmt(x: float) -> str:
    return repr(float(x))


def format_network(net: PipeNetwork) -> str:
    """Serialise a network in the unified native format (inverse of ``parse_network``)."""
    u = net.units
    inp_diam = INCH if u.name == "US" else 1e-3
    lines = ["[TITLE]", net.name, "", "[OPTIONS]", f"Units {u.flow_label}", "Headloss H-W", "",
             "[JUNCTIONS]", ";ID  Elevation  Demand"]
    for n in net.junctions:
        lines.append(f"{n.id} {_fmt(n.elevation / u.length)} {_fmt(n.demand / u.flow)}")
    lines += ["", "[RESERVOIRS]", ";ID  Head"]
    for n in net.reservoirs:
        lines.append(f"{n.id} {_fmt(n.head / u.length)}")
    lines += ["", "[PIPES]", ";ID  Node1  Node2  Length  Diameter  Roughness"]
    duplicate = any(p.existing_diameter is not None and p.decision_index is not None
                    for p in net.pipes)
    for p in net.pipes:
        d = p.existing_diameter if p.existing_diameter is not None else net.table.upper
        lines.append(f"{p.id} {p.start} {p.end} {_fmt(p.length / u.length)} "
                     f"{_fmt(d / inp_diam)} {_fmt(p.roughness)}")
    t = net.table
    lines += ["", "[DESIGN]", f"MODE {'duplicate' if duplicate else 'replace'}",
              f"DIAMETER_UNIT {u.diameter_label}",
              "SIZES " + " ".join(_fmt(s / u.diameter) for s in t.sizes)]
    if t.power_law is not None:
        lines.append(f"COST_FORMULA {_fmt(t.power_law[0] * u.length)} {_fmt(t.power_law[1])}")
    else:
        lines.append("COSTS " + " ".join(_fmt(c * u.length) for c in t.unit_costs))
    dec = [p.id for p in net.decision_pipes]
    for i in range(0, len(dec), 20):
        lines.append("DECISION " + " ".join(dec[i:i + 20]))
    for n in net.junctions:
        lines.append(f"MIN_HEAD {n.id} {_fmt(n.min_head / u.length)}")
    lines.append(f"PRESSURE_PENALTY {_fmt(net.pressure_penalty)}")
    lines.append(f"DIAMETER_PENALTY {_fmt(net.diameter_penalty)}")
    if net.target_cost is not None:
        lines.append(f"TARGET_COST {_fmt(net.target_cost)}")
    lines.append(f"NYTP_SPECIAL {'yes' if net.nytp_special else 'no'}")
    lines.append(f"BOUND_HANDLING {net.bound_handling}")
    lines += ["", "[END]", ""]
    return "\n".join(lines)


def replicate_network(net: PipeNetwork, k: int) -> PipeNetwork:
    """k hydraulically independent copies sharing the single reservoir."""
    if k < 1:
        raise ValueError("replication count must be a positive integer")
    res = net.reservoirs
    if len(res) != 1:
        raise NotImplementedError("replication needs exactly one reservoir")
    rid = res[0].id
    N = net.decision_count
    nodes = [res[0]]
    pipes = []
    for i in range(1, k + 1):
        def rename(nid, i=i):
            return nid if nid == rid else f"{nid}_{i}"
        nodes += [replace(n, id=rename(n.id)) for n in net.junctions]
        for p in net.pipes:
            dec = None if p.decision_index is None else (i - 1) * N + p.decision_index
            pipes.append(replace(p, id=f"{p.id}_{i}", start=rename(p.start), end=rename(p.end),
                                 decision_index=dec))
    target = None if net.target_cost is None else k * net.target_cost
    name = f"{net.name} x{k}"
    return PipeNetwork(name, tuple(nodes), tuple(pipes), net.table, net.units,
                       net.pressure_penalty, net.diameter_penalty, target, net.nytp_special,
                       net.bound_handling)


def read_network(path, design_path=None) -> PipeNetwork:
    """Load a network file, or a bundled benchmark by name."""
    key = str(path).lower()
    if key in BENCHMARKS and not Path(path).exists():
        return load_benchmark(key)
    text = Path(path).read_text()
    design = Path(design_path).read_text() if design_path else None
    return parse_network(text, design, name=None)


def load_benchmark(name: str) -> PipeNetwork:
    name = name.lower()
    if name in ("nytp2", "nytp50"):
        base = load_benchmark("nytp")
        net = replicate_network(base, 2 if name == "nytp2" else 50)
        return replace(net, name="NYTP2" if name == "nytp2" else "50NYTP")
    if name not in ("nytp", "hanoi"):
        raise KeyError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    text = resources.files("pipesizer.data").joinpath(f"{name}.net").read_text()
    return parse_network(text)
