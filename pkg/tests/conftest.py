import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from dacalns.instance_io import CVRP, VRPTW, Instance, Node, load_instance

DATA = Path(__file__).resolve().parent.parent / "data"

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_cvrp(rng: np.random.Generator, n: int, capacity: float | None = None, name="rand") -> Instance:
    xy = rng.uniform(0, 100, size=(n + 1, 2))
    q = rng.integers(1, 10, size=n + 1).astype(float)
    q[0] = 0
    cap = capacity if capacity is not None else float(max(q.max(), rng.integers(10, 30)))
    nodes = [Node(i, float(xy[i, 0]), float(xy[i, 1]), float(q[i])) for i in range(n + 1)]
    return Instance(name, CVRP, cap, tuple(nodes))


def random_vrptw(rng: np.random.Generator, n: int, name="randtw") -> Instance:
    """Random windows that are each reachable from the depot on their own."""
    xy = rng.uniform(0, 50, size=(n + 1, 2))
    horizon = 400.0
    nodes = [Node(0, float(xy[0, 0]), float(xy[0, 1]), 0.0, 0.0, horizon, 0.0)]
    for i in range(1, n + 1):
        d0 = float(np.hypot(*(xy[i] - xy[0])))
        service = float(rng.integers(0, 10))
        # latest start that still allows returning in time
        slack = horizon - 2 * d0 - service
        e = float(rng.uniform(d0, d0 + 0.6 * slack))
        width = float(rng.uniform(10, 120))
        l = min(e + width, horizon - d0 - service)
        e = min(e, l)
        nodes.append(Node(i, float(xy[i, 0]), float(xy[i, 1]), float(rng.integers(1, 10)), e, l, service))
    return Instance(name, VRPTW, 30.0, tuple(nodes))


def random_instance(rng, n, tw=False):
    return random_vrptw(rng, n) if tw else random_cvrp(rng, n)


def line_instance(xs, demands=None, capacity=100.0, name="line") -> Instance:
    """Depot at the origin, customers on the x axis."""
    demands = demands or [1.0] * len(xs)
    nodes = [Node(0, 0.0, 0.0)] + [Node(i + 1, float(x), 0.0, float(q)) for i, (x, q) in enumerate(zip(xs, demands))]
    return Instance(name, CVRP, capacity, tuple(nodes))


@pytest.fixture(scope="session")
def a32():
    return load_instance(DATA / "cvrp" / "A-n32-k5.vrp")


@pytest.fixture(scope="session")
def c101():
    return load_instance(DATA / "vrptw" / "C101.txt")


def naive_cost(routes, inst) -> float:
    """Independent leg-by-leg recomputation from raw coordinates."""
    total = 0.0
    for r in routes:
        stops = [0, *r, 0]
        for a, b in zip(stops, stops[1:]):
            na, nb = inst.nodes[a], inst.nodes[b]
            total += math.hypot(na.x - nb.x, na.y - nb.y)
    return total


def naive_route_ok(route, inst) -> bool:
    """Capacity and forward time propagation from raw node fields."""
    if sum(inst.nodes[c].demand for c in route) > inst.capacity + 1e-9:
        return False
    if inst.kind != VRPTW:
        return True
    t = inst.nodes[0].earliest
    prev = inst.nodes[0]
    for c in route:
        nd = inst.nodes[c]
        t = max(t + math.hypot(prev.x - nd.x, prev.y - nd.y), nd.earliest)
        if t > nd.latest + 1e-9:
            return False
        t += nd.service
        prev = nd
    back = t + math.hypot(prev.x - inst.nodes[0].x, prev.y - inst.nodes[0].y)
    return back <= inst.nodes[0].latest + 1e-9
