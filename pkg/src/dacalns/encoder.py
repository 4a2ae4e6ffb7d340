"""Solution graph, node features, two-layer GCN and attention/max pooling.

The graph is the static k-nearest-neighbour skeleton of the instance plus the
arcs of the current routes (depot legs included), with inverse-distance
weights and unit self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import BadContext, EmptyGraph, KindMismatch, ShapeMismatch
from .instance_io import CVRP, VRPTW, Instance
from .nn import ParamStore, Tensor
from .routing import Solution, route_schedule

DIST_FLOOR = 1e-6
DEFAULT_K = 10
FEATURE_DIMS = {CVRP: 4, VRPTW: 10}

DESTROY = "destroy"
REPAIR = "repair"


@dataclass
class SolutionGraph:
    weights: np.ndarray  # (n+1, n+1) symmetric, self-loops included
    features: np.ndarray  # (n+1, 4 or 10)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected edge list (u < v) without self-loops."""
        iu, iv = np.nonzero(np.triu(self.weights, 1))
        return [(int(u), int(v), float(self.weights[u, v])) for u, v in zip(iu, iv)]

    def normalized(self) -> np.ndarray:
        deg = self.weights.sum(axis=1)
        r = 1.0 / np.sqrt(deg)
        return self.weights * r[:, None] * r[None, :]


def inverse_distance(d):
    return 1.0 / np.maximum(d, DIST_FLOOR)


def knn_weights(inst: Instance, k: int | None = None) -> np.ndarray:
    """Symmetrized k-NN weight matrix (no self-loops); cached per instance."""
    k = min(DEFAULT_K, inst.n) if k is None else min(k, inst.n)
    if k < 1 and inst.n > 0:
        raise ValueError("k must be at least 1")
    key = ("knn", k)
    if key not in inst._cache:
        d = inst.dist
        N = d.shape[0]
        W = np.zeros((N, N))
        if N > 1:
            masked = d + np.diag(np.full(N, np.inf))
            nbrs = np.argsort(masked, axis=1, kind="stable")[:, :k]
            rows = np.repeat(np.arange(N), k)
            cols = nbrs.ravel()
            W[rows, cols] = inverse_distance(d[rows, cols])
            W = np.maximum(W, W.T)
        W.setflags(write=False)
        inst._cache[key] = W
    return inst._cache[key]


def build_graph(inst: Instance, sol: Solution, k: int | None = None) -> SolutionGraph:
    W = knn_weights(inst, k).copy()
    d = inst.dist
    for route in sol.routes:
        stops = [0, *route, 0]
        u = np.array(stops[:-1])
        v = np.array(stops[1:])
        w = inverse_distance(d[u, v])
        W[u, v] = w
        W[v, u] = w
    np.fill_diagonal(W, 1.0)
    return SolutionGraph(W, node_features(inst, sol))


# ---------------------------------------------------------------------------
# features


def _static_features(inst: Instance) -> np.ndarray:
    key = ("features",)
    if key in inst._cache:
        return inst._cache[key]
    scale = float(np.abs(inst.coords).max()) or 1.0
    cols = [inst.coords[:, 0] / scale, inst.coords[:, 1] / scale, inst.demand / inst.capacity]
    cols.append(np.zeros(inst.n + 1))  # served flag, filled per solution
    if inst.has_time_windows:
        S, _ = inst.horizon
        H = inst.H
        width = inst.latest - inst.earliest
        wmax = float(width[1:].max()) if inst.n else 1.0
        smax = float(inst.service.max()) or 1.0
        wcol = width / (wmax or 1.0)
        wcol[0] = 1.0
        cols += [
            (inst.earliest - S) / H,
            (inst.latest - S) / H,
            wcol,
            inst.service / smax,
            np.zeros(inst.n + 1),
            np.zeros(inst.n + 1),
        ]
    F = np.stack(cols, axis=1)
    F.setflags(write=False)
    inst._cache[key] = F
    return F


def _features(inst: Instance, sol: Solution) -> np.ndarray:
    F = _static_features(inst).copy()
    F[0, 3] = 1.0
    served = sol.served
    if served:
        F[served, 3] = 1.0
    if inst.has_time_windows:
        S, _ = inst.horizon
        H = inst.H
        for route in sol.routes:
            sched = route_schedule(route, inst)
            F[route, 8] = (np.array(sched.arrival) - S) / H
            F[route, 9] = np.array(sched.wait) / H
    return F


def node_features_cvrp(inst: Instance, sol: Solution) -> np.ndarray:
    if inst.kind != CVRP:
        raise KindMismatch(f"expected a CVRP instance, got {inst.kind}")
    return _features(inst, sol)


def node_features_vrptw(inst: Instance, sol: Solution) -> np.ndarray:
    if inst.kind != VRPTW:
        raise KindMismatch(f"expected a VRPTW instance, got {inst.kind}")
    return _features(inst, sol)


def node_features(inst: Instance, sol: Solution) -> np.ndarray:
    return _features(inst, sol)


# ---------------------------------------------------------------------------
# network


def init_encoder(store: ParamStore, feature_dim: int, embed_dim: int, rng: np.random.Generator):
    store.add("gcn1.W", nn.glorot(rng, feature_dim, embed_dim))
    store.add("gcn1.b", np.zeros((1, embed_dim)))
    store.add("gcn2.W", nn.glorot(rng, embed_dim, embed_dim))
    store.add("gcn2.b", np.zeros((1, embed_dim)))
    store.add("pool.a", nn.glorot(rng, embed_dim, 1))


def gcn_forward(graph: SolutionGraph, params: ParamStore) -> Tensor:
    W1 = params["gcn1.W"]
    if graph.features.shape[1] != W1.rows:
        raise ShapeMismatch(f"features have {graph.features.shape[1]} columns, layer expects {W1.rows}")
    A = graph.normalized()
    agg = Tensor(A @ graph.features)
    h = nn.relu(nn.linear(agg, W1, params["gcn1.b"]))
    h = nn.matmul(Tensor(A), h)
    return nn.relu(nn.linear(h, params["gcn2.W"], params["gcn2.b"]))


def pool(H: Tensor, params: ParamStore) -> Tensor:
    """[attention-weighted mean | elementwise max] -> 1 x 2d."""
    if H.rows == 0:
        raise EmptyGraph("cannot pool an empty embedding matrix")
    alpha = nn.softmax(nn.matmul(H, params["pool.a"]), axis=0)
    att = nn.matmul(nn.transpose(alpha), H)
    return nn.concat([att, nn.max_rows(H)], axis=1)


def encode(inst: Instance, sol: Solution, params: ParamStore, k: int | None = None) -> Tensor:
    return pool(gcn_forward(build_graph(inst, sol, k), params), params)


@dataclass
class StateVector:
    kind: str
    tensor: Tensor  # 1 x (2d + 2)
    rho: float = 0.0
    destroy_id: int = 0
    norm_id: float = 0.0

    @property
    def values(self) -> np.ndarray:
        return self.tensor.value[0]

    def __len__(self):
        return self.tensor.cols


def assemble_state(
    g: Tensor, kind: str, rho: float = 0.0, destroy_id: int = 0, n_destroy: int = 2
) -> StateVector:
    if g.rows != 1:
        raise ShapeMismatch(f"embedding must be a row vector, got {g.shape}")
    if kind == DESTROY:
        return StateVector(DESTROY, nn.concat([g, Tensor(np.zeros((1, 2)))]))
    if kind != REPAIR:
        raise BadContext(f"unknown state kind {kind!r}")
    # rho == 1 happens only when a destroy empties a tiny solution
    if not 0 < rho <= 1:
        raise BadContext(f"repair state needs 0 < rho <= 1, got {rho}")
    if not 0 <= destroy_id < n_destroy:
        raise BadContext(f"destroy id {destroy_id} outside [0, {n_destroy})")
    norm = destroy_id / max(1, n_destroy - 1)
    ctx = Tensor(np.array([[rho, norm]]))
    return StateVector(REPAIR, nn.concat([g, ctx]), rho, destroy_id, norm)
