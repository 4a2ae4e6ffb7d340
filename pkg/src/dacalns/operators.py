"""Destroy and repair operators.

Each operator copies its input and returns a new solution. Repair operators
always consider opening a new route, so they cannot dead-end on a servable
instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NothingToRemove
from .instance_io import Instance
from .routing import Solution, _insert_inplace, _remove_inplace, insertion_matrix

Rng = np.random.Generator | int | None


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# destroy


def random_removal(sol: Solution, inst: Instance, ratio: float, rng: Rng = None):
    """Remove max(1, round(ratio * n_served)) served customers uniformly."""
    if not 0 < ratio < 1:
        raise ValueError(f"removal ratio must lie in (0, 1), got {ratio}")
    served = sorted(sol.served)
    if not served:
        raise NothingToRemove("solution serves no customers")
    rng = np.random.default_rng(rng)
    k = min(len(served), max(1, _round_half_up(ratio * len(served))))
    picked = rng.choice(served, size=k, replace=False).tolist()
    out = sol.copy()
    for c in picked:
        _remove_inplace(out, inst, c)
    return out, picked


def worst_removal(sol: Solution, inst: Instance, count: int):
    """Sequentially remove the customer whose removal saves the most distance.

    Savings are recomputed after every removal; ties go to the lowest id.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if not sol.routes:
        raise NothingToRemove("solution serves no customers")
    out = sol.copy()
    d = inst.dist_rows
    picked = []
    for _ in range(min(count, len(out.served))):
        best_saving, best_c = -math.inf, None
        for route in out.routes:
            prev = 0
            last = len(route) - 1
            for pos, c in enumerate(route):
                nxt = route[pos + 1] if pos < last else 0
                saving = d[prev][c] + d[c][nxt] - d[prev][nxt]
                if saving > best_saving or (saving == best_saving and c < best_c):
                    best_saving, best_c = saving, c
                prev = c
        _remove_inplace(out, inst, best_c)
        picked.append(best_c)
    return out, picked


# ---------------------------------------------------------------------------
# repair


def _pending(sol: Solution) -> np.ndarray:
    return np.array(sorted(sol.removed), dtype=int)


def random_repair(sol: Solution, inst: Instance, rng: Rng = None) -> Solution:
    """Insert pending customers in random order at uniformly chosen feasible slots."""
    rng = np.random.default_rng(rng)
    out = sol.copy()
    order = rng.permutation(_pending(out))
    for c in order.tolist():
        row, slots = insertion_matrix(out, inst, np.array([c]))
        options = np.flatnonzero(np.isfinite(row[0]))
        j = int(options[rng.integers(options.size)])
        _insert_inplace(out, c, int(slots.route[j]), int(slots.position[j]), float(row[0, j]))
    return out


def greedy_choice(sol: Solution, inst: Instance) -> tuple[int, int, int, float]:
    """Globally cheapest (customer, route, position, delta) over pending customers.

    Ties resolve to the lowest customer id, then route index, then position.
    """
    pending = _pending(sol)
    M, slots = insertion_matrix(sol, inst, pending)
    i, j = np.unravel_index(int(np.argmin(M)), M.shape)
    return int(pending[i]), int(slots.route[j]), int(slots.position[j]), float(M[i, j])


def greedy_repair(sol: Solution, inst: Instance) -> Solution:
    """Repeatedly apply the globally cheapest insertion."""
    out = sol.copy()
    while out.removed:
        _insert_inplace(out, *greedy_choice(out, inst))
    return out


def regret_values(M: np.ndarray, k: int = 2) -> np.ndarray:
    """Regret-k per row of an insertion-delta matrix (inf marks infeasible).

    Rows with fewer than k feasible insertions get +inf.
    """
    srt = np.sort(M, axis=1)
    if srt.shape[1] < k:
        return np.full(M.shape[0], np.inf)
    with np.errstate(invalid="ignore"):
        regret = (srt[:, 1:k] - srt[:, :1]).sum(axis=1)
    return np.where(np.isfinite(srt[:, k - 1]), regret, np.inf)


def regret_choice(sol: Solution, inst: Instance, k: int = 2) -> tuple[int, int, int, float]:
    """Customer with the largest regret-k (lowest id on ties) and its cheapest slot."""
    pending = _pending(sol)
    M, slots = insertion_matrix(sol, inst, pending)
    i = int(np.argmax(regret_values(M, k)))
    j = int(np.argmin(M[i]))
    return int(pending[i]), int(slots.route[j]), int(slots.position[j]), float(M[i, j])


def regret_repair(sol: Solution, inst: Instance, k: int = 2) -> Solution:
    """Insert the customer with the largest regret-k at its cheapest slot."""
    out = sol.copy()
    while out.removed:
        _insert_inplace(out, *regret_choice(out, inst, k))
    return out


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class DestroyScale:
    """How many customers a destroy call removes; sampled per call."""

    ratio: tuple[float, float] = (0.1, 0.4)
    worst_count: tuple[int, int] = (5, 20)


def _destroy_random(sol, inst, rng, scale: DestroyScale):
    return random_removal(sol, inst, float(rng.uniform(*scale.ratio)), rng)


def _destroy_worst(sol, inst, rng, scale: DestroyScale):
    lo, hi = scale.worst_count
    count = int(rng.integers(lo, hi + 1))
    return worst_removal(sol, inst, max(1, min(count, len(sol.served))))


DESTROY_OPERATORS: dict[str, Callable] = {
    "random_removal": _destroy_random,
    "worst_removal": _destroy_worst,
}

REPAIR_OPERATORS: dict[str, Callable] = {
    "random_repair": lambda sol, inst, rng, k: random_repair(sol, inst, rng),
    "greedy_repair": lambda sol, inst, rng, k: greedy_repair(sol, inst),
    "regret_repair": lambda sol, inst, rng, k: regret_repair(sol, inst, k),
}


@dataclass
class OperatorCatalog:
    """Ordered destroy / repair operators with usage counters.

    Operator positions are the action ids seen by the agents.
    """

    destroy_ops: list[str] = field(default_factory=lambda: ["random_removal", "worst_removal"])
    repair_ops: list[str] = field(
        default_factory=lambda: ["random_repair", "greedy_repair", "regret_repair"]
    )
    scale: DestroyScale = field(default_factory=DestroyScale)
    regret_k: int = 2
    destroy_counts: list[int] = field(default_factory=list)
    repair_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        for name in self.destroy_ops:
            if name not in DESTROY_OPERATORS:
                raise KeyError(f"unknown destroy operator {name!r}")
        for name in self.repair_ops:
            if name not in REPAIR_OPERATORS:
                raise KeyError(f"unknown repair operator {name!r}")
        self.destroy_counts = self.destroy_counts or [0] * len(self.destroy_ops)
        self.repair_counts = self.repair_counts or [0] * len(self.repair_ops)

    @property
    def n_destroy(self) -> int:
        return len(self.destroy_ops)

    @property
    def n_repair(self) -> int:
        return len(self.repair_ops)

    def fresh(self) -> "OperatorCatalog":
        """Same operators, counters reset."""
        return OperatorCatalog(list(self.destroy_ops), list(self.repair_ops), self.scale, self.regret_k)

    def destroy(self, idx: int, sol: Solution, inst: Instance, rng: np.random.Generator):
        self.destroy_counts[idx] += 1
        return DESTROY_OPERATORS[self.destroy_ops[idx]](sol, inst, rng, self.scale)

    def repair(self, idx: int, sol: Solution, inst: Instance, rng: np.random.Generator) -> Solution:
        self.repair_counts[idx] += 1
        return REPAIR_OPERATORS[self.repair_ops[idx]](sol, inst, rng, self.regret_k)
