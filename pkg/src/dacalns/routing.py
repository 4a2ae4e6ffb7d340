"""Solution representation, cost and feasibility, insertion evaluation.

A route is a plain list of customer ids; the depot is implicit at both ends.
Fleet size is unbounded and the objective is total travel distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    InfeasibleApplication,
    NotServed,
    PositionOutOfRange,
    UnknownCustomer,
    UnservableCustomer,
)
from .instance_io import Instance

# slack used in all capacity / time comparisons
EPS = 1e-9


@dataclass
class Solution:
    routes: list[list[int]]
    removed: set[int] = field(default_factory=set)
    cost: float = 0.0

    @classmethod
    def empty(cls, inst: Instance) -> "Solution":
        return cls([], set(range(1, inst.n + 1)), 0.0)

    def copy(self) -> "Solution":
        return Solution([r[:] for r in self.routes], set(self.removed), self.cost)

    @property
    def served(self) -> list[int]:
        return [c for r in self.routes for c in r]

    @property
    def n_vehicles(self) -> int:
        return len(self.routes)

    def locate(self, customer: int) -> tuple[int, int]:
        for ri, route in enumerate(self.routes):
            if customer in route:
                return ri, route.index(customer)
        raise NotServed(f"customer {customer} is not on any route")


class RouteSchedule(NamedTuple):
    arrival: list[float]
    start: list[float]
    wait: list[float]
    depot_return: float


@dataclass(frozen=True)
class Violation:
    kind: str  # "capacity" | "time_window" | "late_return"
    route: int
    stop: int | None = None


@dataclass
class FeasibilityReport:
    violations: list[Violation]
    unserved: list[int]
    duplicates: list[int]

    @property
    def feasible(self) -> bool:
        return not (self.violations or self.unserved or self.duplicates)


# ---------------------------------------------------------------------------
# cost and schedules


def route_cost(route: list[int], inst: Instance) -> float:
    if not route:
        return 0.0
    d = inst.dist_rows
    total = d[0][route[0]] + d[route[-1]][0]
    for a, b in zip(route, route[1:]):
        total += d[a][b]
    return total


def total_cost(sol: Solution, inst: Instance) -> float:
    """Full recomputation of the travel distance of ``sol``."""
    n = inst.n
    for route in sol.routes:
        for c in route:
            if not 1 <= c <= n:
                raise UnknownCustomer(c)
    return sum(route_cost(r, inst) for r in sol.routes)


def route_load(route: list[int], inst: Instance) -> float:
    q = inst.demand_list
    return float(sum(q[c] for c in route))


def route_schedule(route: list[int], inst: Instance) -> RouteSchedule:
    """Forward time propagation; service starts at max(arrival, earliest)."""
    d = inst.dist_rows
    e, s = inst.earliest_list, inst.service_list
    t = inst.nodes[0].earliest
    prev = 0
    arrival, start, wait = [], [], []
    for c in route:
        a = t + d[prev][c]
        b = a if a > e[c] else e[c]
        arrival.append(a)
        start.append(b)
        wait.append(b - a)
        t = b + s[c]
        prev = c
    return RouteSchedule(arrival, start, wait, t + d[prev][0])


def _route_ok(route: list[int], inst: Instance) -> bool:
    if route_load(route, inst) > inst.capacity + EPS:
        return False
    if not inst.has_time_windows:
        return True
    sched = route_schedule(route, inst)
    latest = inst.latest_list
    if any(b > latest[c] + EPS for b, c in zip(sched.start, route)):
        return False
    return sched.depot_return <= inst.nodes[0].latest + EPS


def check_feasible(sol: Solution, inst: Instance) -> FeasibilityReport:
    violations = []
    seen: set[int] = set()
    duplicates = []
    for ri, route in enumerate(sol.routes):
        for c in route:
            if c in seen or c in sol.removed:
                duplicates.append(c)
            seen.add(c)
        if route_load(route, inst) > inst.capacity + EPS:
            violations.append(Violation("capacity", ri))
        if inst.has_time_windows and route:
            sched = route_schedule(route, inst)
            late = [i for i, c in enumerate(route) if sched.start[i] > inst.latest[c] + EPS]
            if late:
                violations.append(Violation("time_window", ri, late[0]))
            if sched.depot_return > inst.nodes[0].latest + EPS:
                violations.append(Violation("late_return", ri))
    unserved = sorted(set(range(1, inst.n + 1)) - seen)
    return FeasibilityReport(violations, unserved, duplicates)


# ---------------------------------------------------------------------------
# single insertion / removal


def evaluate_insertion(
    sol: Solution, inst: Instance, customer: int, route_idx: int, position: int
) -> float | None:
    """Cost delta of inserting ``customer`` before ``position`` of a route.

    ``route_idx == len(sol.routes)`` denotes a new route (position 0).
    Returns None when the insertion breaks capacity or a time window.
    """
    if customer not in sol.removed:
        raise NotServed(f"customer {customer} is not in the removed pool")
    if route_idx == len(sol.routes):
        route: list[int] = []
    elif 0 <= route_idx < len(sol.routes):
        route = sol.routes[route_idx]
    else:
        raise PositionOutOfRange(f"route index {route_idx}")
    if not 0 <= position <= len(route):
        raise PositionOutOfRange(f"position {position} outside [0, {len(route)}]")
    new_route = route[:position] + [customer] + route[position:]
    if not _route_ok(new_route, inst):
        return None
    d = inst.dist_rows
    a = route[position - 1] if position > 0 else 0
    b = route[position] if position < len(route) else 0
    return d[a][customer] + d[customer][b] - d[a][b]


def _insert_inplace(sol: Solution, customer: int, route_idx: int, position: int, delta: float):
    if route_idx == len(sol.routes):
        sol.routes.append([customer])
    else:
        sol.routes[route_idx].insert(position, customer)
    sol.removed.discard(customer)
    sol.cost += delta


def apply_insertion(
    sol: Solution, inst: Instance, customer: int, route_idx: int, position: int
) -> Solution:
    delta = evaluate_insertion(sol, inst, customer, route_idx, position)
    if delta is None:
        raise InfeasibleApplication(
            f"inserting {customer} at route {route_idx}, position {position} is infeasible"
        )
    out = sol.copy()
    _insert_inplace(out, customer, route_idx, position, delta)
    return out


def removal_delta(route: list[int], pos: int, inst: Instance) -> float:
    d = inst.dist_rows
    c = route[pos]
    a = route[pos - 1] if pos > 0 else 0
    b = route[pos + 1] if pos + 1 < len(route) else 0
    return d[a][b] - d[a][c] - d[c][b]


def _remove_inplace(sol: Solution, inst: Instance, customer: int) -> float:
    ri, pos = sol.locate(customer)
    route = sol.routes[ri]
    delta = removal_delta(route, pos, inst)
    del route[pos]
    if not route:
        del sol.routes[ri]
    sol.removed.add(customer)
    sol.cost += delta
    if not sol.routes:
        sol.cost = 0.0  # drop accumulated rounding once nothing is routed
    return delta


def remove_customer(sol: Solution, inst: Instance, customer: int) -> Solution:
    out = sol.copy()
    _remove_inplace(out, inst, customer)
    return out


# ---------------------------------------------------------------------------
# vectorised insertion table used by the repair operators


class SlotTable(NamedTuple):
    """Every insertion slot of a solution; the new-route slot comes last."""

    route: np.ndarray
    position: np.ndarray
    prev: np.ndarray
    next: np.ndarray
    load: np.ndarray
    depart: np.ndarray  # time service at ``prev`` ends (VRPTW)
    latest: np.ndarray  # latest feasible service start at ``next`` (VRPTW)


def slot_table(sol: Solution, inst: Instance) -> SlotTable:
    route_i, pos_i, prev, nxt, load, depart, latest = [], [], [], [], [], [], []
    q = inst.demand_list
    tw = inst.has_time_windows
    S, E = inst.horizon
    if tw:
        d = inst.dist_rows
        e, l, s = inst.earliest_list, inst.latest_list, inst.service_list
    for ri, route in enumerate(sol.routes):
        L = len(route)
        stops = [0] + route + [0]
        route_i += [ri] * (L + 1)
        pos_i += range(L + 1)
        prev += stops[:-1]
        nxt += stops[1:]
        load += [float(sum(q[c] for c in route))] * (L + 1)
        if tw:
            t = S
            dep = [S]
            p = 0
            for c in route:
                a = t + d[p][c]
                t = (a if a > e[c] else e[c]) + s[c]
                dep.append(t)
                p = c
            z = [0.0] * (L + 1)
            zn = E
            for j in range(L, 0, -1):
                c = route[j - 1]
                z[j] = zn
                zn = min(l[c], zn - s[c] - d[c][stops[j + 1]])
            z[0] = zn
            # z[p]: latest service start at the node following slot p
            depart += dep
            latest += z
    route_i.append(len(sol.routes))
    pos_i.append(0)
    prev.append(0)
    nxt.append(0)
    load.append(0.0)
    if tw:
        depart.append(S)
        latest.append(E)
    n_slots = len(prev)
    return SlotTable(
        np.array(route_i),
        np.array(pos_i),
        np.array(prev),
        np.array(nxt),
        np.array(load),
        np.array(depart) if tw else np.zeros(n_slots),
        np.array(latest) if tw else np.full(n_slots, np.inf),
    )


def insertion_matrix(
    sol: Solution, inst: Instance, customers: np.ndarray, slots: SlotTable | None = None
) -> tuple[np.ndarray, SlotTable]:
    """Insertion deltas, shape (len(customers), n_slots); inf where infeasible."""
    if slots is None:
        slots = slot_table(sol, inst)
    D = inst.dist
    C = customers[:, None]
    to_prev = D[C, slots.prev[None, :]]
    to_next = D[C, slots.next[None, :]]
    delta = to_prev + to_next - D[slots.prev, slots.next][None, :]
    ok = slots.load[None, :] + inst.demand[C] <= inst.capacity + EPS
    if inst.has_time_windows:
        begin = np.maximum(slots.depart[None, :] + to_prev, inst.earliest[C])
        ok &= begin <= inst.latest[C] + EPS
        ok &= begin + inst.service[C] + to_next <= slots.latest[None, :] + EPS
    return np.where(ok, delta, np.inf), slots


# ---------------------------------------------------------------------------
# construction


def _check_servable(inst: Instance):
    for c in range(1, inst.n + 1):
        if not _route_ok([c], inst):
            raise UnservableCustomer(f"customer {c} cannot be served even by a dedicated vehicle")


def build_initial_solution(inst: Instance, seed: int) -> Solution:
    """Seeded nearest-feasible-neighbour construction.

    Each route starts at a random unrouted customer and is extended with the
    nearest customer that can be appended feasibly; a new route is opened when
    none can.
    """
    _check_servable(inst)
    rng = np.random.default_rng(seed)
    D = inst.dist
    q, e, l, s = inst.demand, inst.earliest, inst.latest, inst.service
    S, E = inst.horizon
    tw = inst.has_time_windows
    unrouted = np.arange(1, inst.n + 1)
    routes = []
    while unrouted.size:
        first = int(unrouted[rng.integers(unrouted.size)])
        route = [first]
        unrouted = unrouted[unrouted != first]
        load = q[first]
        t = max(S + D[0, first], e[first]) + s[first]
        while unrouted.size:
            last = route[-1]
            ok = load + q[unrouted] <= inst.capacity + EPS
            if tw:
                begin = np.maximum(t + D[last, unrouted], e[unrouted])
                ok &= begin <= l[unrouted] + EPS
                ok &= begin + s[unrouted] + D[unrouted, 0] <= E + EPS
            if not ok.any():
                break
            cand = unrouted[ok]
            nxt = int(cand[np.argmin(D[last, cand])])
            route.append(nxt)
            unrouted = unrouted[unrouted != nxt]
            load += q[nxt]
            if tw:
                t = max(t + D[last, nxt], e[nxt]) + s[nxt]
        routes.append(route)
    sol = Solution(routes, set(), 0.0)
    sol.cost = total_cost(sol, inst)
    return sol


# ---------------------------------------------------------------------------
# JSON


def solution_to_dict(sol: Solution, inst: Instance) -> dict:
    routes = []
    for route in sol.routes:
        item = {"customers": list(route), "load": route_load(route, inst), "cost": route_cost(route, inst)}
        if inst.has_time_windows:
            sched = route_schedule(route, inst)
            item["arrival"] = sched.arrival
            item["start"] = sched.start
            item["wait"] = sched.wait
            item["depot_return"] = sched.depot_return
        routes.append(item)
    return {
        "instance": inst.name,
        "cost": sol.cost,
        "vehicles": len(sol.routes),
        "removed": sorted(sol.removed),
        "routes": routes,
    }


def dump_solution_json(sol: Solution, inst: Instance) -> str:
    return json.dumps(solution_to_dict(sol, inst), sort_keys=True)
