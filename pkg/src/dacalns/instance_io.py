"""Routing instances: TSPLIB CVRP and Solomon VRPTW readers/writers.

Distances are Euclidean in double precision and never rounded, so costs from
this package are only directionally comparable to published integer
best-known values.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    DemandExceedsCapacity,
    DimensionMismatch,
    InvertedTimeWindow,
    MissingHeader,
    MissingSection,
    NonNumericField,
    ParseError,
    RowArityMismatch,
    SampleTooLarge,
    UnsupportedFormat,
)

CVRP = "cvrp"
VRPTW = "vrptw"


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    demand: float = 0.0
    earliest: float = 0.0
    latest: float = math.inf
    service: float = 0.0


@dataclass(frozen=True)
class Instance:
    """Immutable routing problem. Node 0 is always the depot."""

    name: str
    kind: str
    capacity: float
    nodes: tuple[Node, ...]
    vehicles: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ParseError(f"{self.name}: instance needs a depot and at least one customer")
        if not self.capacity > 0:
            raise ParseError(f"{self.name}: capacity must be positive, got {self.capacity}")
        if self.kind not in (CVRP, VRPTW):
            raise ParseError(f"unknown problem kind {self.kind!r}")
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ParseError(f"{self.name}: node ids must be 0..n in order")
            if not (math.isfinite(node.x) and math.isfinite(node.y)):
                raise NonNumericField(f"{self.name}: node {i} has non-finite coordinates")
            if node.earliest > node.latest:
                raise InvertedTimeWindow(
                    f"{self.name}: node {i} window [{node.earliest}, {node.latest}] is inverted"
                )
            if node.demand < 0 or node.service < 0:
                raise ParseError(f"{self.name}: node {i} has negative demand or service time")
            if node.demand > self.capacity:
                raise DemandExceedsCapacity(
                    f"{self.name}: customer {i} demand {node.demand} exceeds capacity {self.capacity}"
                )
        if self.nodes[0].demand != 0:
            raise ParseError(f"{self.name}: depot demand must be 0")
        if self.kind == VRPTW:
            S, E = self.nodes[0].earliest, self.nodes[0].latest
            if not (math.isfinite(E) and E > S):
                raise ParseError(f"{self.name}: VRPTW horizon must be finite and positive")
            for node in self.nodes[1:]:
                if node.earliest < S or node.latest > E:
                    raise ParseError(f"{self.name}: customer {node.id} window outside [{S}, {E}]")

        coords = np.array([(nd.x, nd.y) for nd in self.nodes], dtype=float)
        diff = coords[:, None, :] - coords[None, :, :]
        arrays = {
            "coords": coords,
            "demand": np.array([nd.demand for nd in self.nodes], dtype=float),
            "earliest": np.array([nd.earliest for nd in self.nodes], dtype=float),
            "latest": np.array([nd.latest for nd in self.nodes], dtype=float),
            "service": np.array([nd.service for nd in self.nodes], dtype=float),
            "dist": np.sqrt((diff**2).sum(axis=-1)),
        }
        for arr in arrays.values():
            arr.setflags(write=False)
        for key, arr in arrays.items():
            object.__setattr__(self, key, arr)
        # plain-list copies; scalar lookups in Python loops are much faster
        object.__setattr__(self, "dist_rows", arrays["dist"].tolist())
        for key in ("demand", "earliest", "latest", "service"):
            object.__setattr__(self, key + "_list", arrays[key].tolist())

    @property
    def n(self) -> int:
        return len(self.nodes) - 1

    @property
    def depot(self) -> Node:
        return self.nodes[0]

    @property
    def has_time_windows(self) -> bool:
        return self.kind == VRPTW

    @property
    def horizon(self) -> tuple[float, float]:
        return self.nodes[0].earliest, self.nodes[0].latest

    @property
    def H(self) -> float:
        S, E = self.horizon
        return E - S


# ---------------------------------------------------------------------------
# TSPLIB CVRP

_CVRP_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION")


def _number(token: str, where: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise NonNumericField(f"{where}: expected a number, got {token!r}") from None


def parse_cvrp(text: str) -> Instance:
    """Parse a TSPLIB-style CVRP file. The DEPOT_SECTION node becomes node 0."""
    header: dict[str, str] = {}
    sections: dict[str, list[list[str]]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == "EOF":
            break
        key = line.split()[0].rstrip(":")
        if key in _CVRP_SECTIONS:
            current = key
            sections[current] = []
            continue
        if ":" in line and not line[0].isdigit() and line[0] != "-":
            k, _, v = line.partition(":")
            header[k.strip().upper()] = v.strip()
            current = None
            continue
        if current is None:
            raise ParseError(f"unexpected line outside any section: {line!r}")
        sections[current].append(line.split())

    for key in ("DIMENSION", "CAPACITY"):
        if key not in header:
            raise MissingSection(f"missing {key} keyword")
    for key in ("NODE_COORD_SECTION", "DEMAND_SECTION"):
        if key not in sections:
            raise MissingSection(f"missing {key}")
    if header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper() not in ("EUC_2D", "FLOAT_2D"):
        raise UnsupportedFormat(f"unsupported EDGE_WEIGHT_TYPE {header['EDGE_WEIGHT_TYPE']}")

    dim = int(_number(header["DIMENSION"], "DIMENSION"))
    capacity = _number(header["CAPACITY"], "CAPACITY")
    coord_rows, demand_rows = sections["NODE_COORD_SECTION"], sections["DEMAND_SECTION"]
    if len(coord_rows) != dim or len(demand_rows) != dim:
        raise DimensionMismatch(
            f"DIMENSION {dim} but {len(coord_rows)} coordinate / {len(demand_rows)} demand rows"
        )

    coords: dict[int, tuple[float, float]] = {}
    order: list[int] = []
    for row in coord_rows:
        if len(row) != 3:
            raise RowArityMismatch(f"coordinate row needs 3 fields: {row}")
        label = int(_number(row[0], "node id"))
        coords[label] = (_number(row[1], "x"), _number(row[2], "y"))
        order.append(label)
    demands: dict[int, float] = {}
    for row in demand_rows:
        if len(row) != 2:
            raise RowArityMismatch(f"demand row needs 2 fields: {row}")
        demands[int(_number(row[0], "node id"))] = _number(row[1], "demand")
    if set(demands) != set(coords):
        raise DimensionMismatch("coordinate and demand sections list different node ids")

    depot_ids = [int(_number(r[0], "depot id")) for r in sections.get("DEPOT_SECTION", [])]
    depot_ids = [d for d in depot_ids if d != -1]
    depot = depot_ids[0] if depot_ids else order[0]
    if depot not in coords:
        raise ParseError(f"depot {depot} is not a listed node")

    labels = [depot] + [lab for lab in order if lab != depot]
    nodes = []
    for new_id, lab in enumerate(labels):
        x, y = coords[lab]
        nodes.append(Node(new_id, x, y, 0.0 if new_id == 0 else demands[lab]))
    vehicles = header.get("VEHICLES")
    return Instance(
        name=header.get("NAME", "cvrp"),
        kind=CVRP,
        capacity=capacity,
        nodes=tuple(nodes),
        vehicles=int(vehicles) if vehicles else None,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def format_cvrp(inst: Instance) -> str:
    lines = [
        f"NAME : {inst.name}",
        "TYPE : CVRP",
        f"DIMENSION : {len(inst.nodes)}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        f"CAPACITY : {_fmt(inst.capacity)}",
    ]
    if inst.vehicles is not None:
        lines.append(f"VEHICLES : {inst.vehicles}")
    lines.append("NODE_COORD_SECTION")
    lines += [f"{nd.id + 1} {_fmt(nd.x)} {_fmt(nd.y)}" for nd in inst.nodes]
    lines.append("DEMAND_SECTION")
    lines += [f"{nd.id + 1} {_fmt(nd.demand)}" for nd in inst.nodes]
    lines += ["DEPOT_SECTION", "1", "-1", "EOF", ""]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Solomon VRPTW


def parse_solomon(text: str) -> Instance:
    """Parse a Solomon-format VRPTW file; the first table row is the depot.

    The vehicle count is kept for reference but never enforced.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MissingHeader("empty file")
    name = lines[0]
    upper = [ln.upper() for ln in lines]
    try:
        v_idx = next(i for i, ln in enumerate(upper) if ln.startswith("VEHICLE"))
        c_idx = next(i for i, ln in enumerate(upper) if ln.startswith("CUSTOMER"))
    except StopIteration:
        raise MissingHeader("missing VEHICLE or CUSTOMER header") from None
    cap_line = next(
        (ln for ln in lines[v_idx + 1 : c_idx] if ln.split() and ln.split()[0][0].isdigit()), None
    )
    if cap_line is None or len(cap_line.split()) != 2:
        raise MissingHeader("missing vehicle NUMBER / CAPACITY values")
    vehicles = int(_number(cap_line.split()[0], "vehicle number"))
    capacity = _number(cap_line.split()[1], "capacity")

    rows = []
    for ln in lines[c_idx + 1 :]:
        fields = ln.split()
        if not fields[0][0].isdigit():
            continue  # column titles
        if len(fields) != 7:
            raise RowArityMismatch(f"customer row needs 7 fields, got {len(fields)}: {ln!r}")
        rows.append([_number(f, "customer row") for f in fields])
    if len(rows) < 2:
        raise MissingHeader("customer table needs a depot row and at least one customer")

    nodes = []
    for new_id, (_, x, y, q, ready, due, service) in enumerate(rows):
        if ready > due:
            raise InvertedTimeWindow(f"row {new_id}: ready time {ready} after due date {due}")
        nodes.append(Node(new_id, x, y, q, ready, due, service))
    return Instance(name=name, kind=VRPTW, capacity=capacity, nodes=tuple(nodes), vehicles=vehicles)


def format_solomon(inst: Instance) -> str:
    vehicles = inst.vehicles if inst.vehicles is not None else inst.n
    out = [
        inst.name,
        "",
        "VEHICLE",
        "NUMBER     CAPACITY",
        f"  {vehicles}         {_fmt(inst.capacity)}",
        "",
        "CUSTOMER",
        "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME",
        "",
    ]
    for nd in inst.nodes:
        vals = (nd.x, nd.y, nd.demand, nd.earliest, nd.latest, nd.service)
        out.append(f"{nd.id:5d} " + " ".join(f"{_fmt(v):>12}" for v in vals))
    out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# dispatch, JSON dumps, subsampling


def parse_instance(text: str, kind: str | None = None) -> Instance:
    if kind is None:
        kind = CVRP if "NODE_COORD_SECTION" in text else VRPTW
    return parse_cvrp(text) if kind == CVRP else parse_solomon(text)


def load_instance(path: str | Path, kind: str | None = None) -> Instance:
    """Read an instance from ``path`` (``-`` reads standard input)."""
    if str(path) == "-":
        return parse_instance(sys.stdin.read(), kind)
    return parse_instance(Path(path).read_text(), kind)


def load_instances(paths: Iterable[str | Path], kind: str | None = None) -> list[Instance]:
    return [load_instance(p, kind) for p in paths]


def format_instance(inst: Instance) -> str:
    return format_cvrp(inst) if inst.kind == CVRP else format_solomon(inst)


def _json_float(v: float):
    return None if math.isinf(v) else v


def instance_to_dict(inst: Instance) -> dict:
    S, E = inst.horizon
    return {
        "name": inst.name,
        "kind": inst.kind,
        "capacity": inst.capacity,
        "vehicles": inst.vehicles,
        "horizon": [S, _json_float(E)],
        "nodes": [
            {
                "id": nd.id,
                "x": nd.x,
                "y": nd.y,
                "demand": nd.demand,
                "earliest": nd.earliest,
                "latest": _json_float(nd.latest),
                "service": nd.service,
            }
            for nd in inst.nodes
        ],
    }


def instance_from_dict(data: dict) -> Instance:
    nodes = tuple(
        Node(
            int(d["id"]),
            float(d["x"]),
            float(d["y"]),
            float(d["demand"]),
            float(d["earliest"]),
            math.inf if d["latest"] is None else float(d["latest"]),
            float(d["service"]),
        )
        for d in data["nodes"]
    )
    return Instance(data["name"], data["kind"], float(data["capacity"]), nodes, data.get("vehicles"))


def dump_instance_json(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), sort_keys=True)


def subsample_instance(inst: Instance, m: int, seed: int) -> Instance:
    """Keep the depot plus ``m`` customers drawn uniformly without replacement.

    Relative customer order is preserved; capacity and horizon are unchanged.
    """
    if not 1 <= m <= inst.n:
        raise SampleTooLarge(f"sample size {m} outside [1, {inst.n}]")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(np.arange(1, inst.n + 1), size=m, replace=False))
    nodes = [inst.nodes[0]]
    for new_id, old in enumerate(picked.tolist(), start=1):
        nd = inst.nodes[old]
        nodes.append(Node(new_id, nd.x, nd.y, nd.demand, nd.earliest, nd.latest, nd.service))
    return Instance(
        name=f"{inst.name}-m{m}-s{seed}",
        kind=inst.kind,
        capacity=inst.capacity,
        nodes=tuple(nodes),
        vehicles=inst.vehicles,
    )
