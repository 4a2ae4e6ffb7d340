"""Classic ALNS: roulette-wheel operator selection with segment-wise weight
updates, Metropolis acceptance, and the search loop shared with the learned
selectors in :mod:`dacalns.agent`.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Protocol, Sequence

import numpy as np

from .errors import AllZeroWeights, LengthMismatch, NegativeWeight, NonpositiveTemperature
from .instance_io import Instance
from .operators import DestroyScale, OperatorCatalog
from .routing import Solution, build_initial_solution, solution_to_dict

WEIGHT_FLOOR = 1e-6
# improvements smaller than this are treated as float noise
IMPROVE_TOL = 1e-9


@dataclass
class SearchConfig:
    max_iters: int | None = None  # None -> max(min_iters, iters_per_customer * n)
    min_iters: int = 2000
    iters_per_customer: int = 50
    seeds: tuple[int, ...] = tuple(range(0, 1000, 100))
    removal_ratio: tuple[float, float] = (0.1, 0.4)
    worst_count: tuple[int, int] = (5, 20)
    regret_k: int = 2
    start_temp_factor: float = 0.05
    final_temp_ratio: float = 0.01
    segment_length: int = 100
    reaction: float = 0.8
    scores: tuple[float, float, float] = (5.0, 2.0, 1.0)
    destroy_ops: tuple[str, ...] = ("random_removal", "worst_removal")
    repair_ops: tuple[str, ...] = ("random_repair", "greedy_repair", "regret_repair")

    def __post_init__(self):
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.reaction <= 1:
            raise ValueError("reaction factor must lie in (0, 1]")
        lo, hi = self.removal_ratio
        if not 0 < lo <= hi < 1:
            raise ValueError(f"bad removal ratio range {self.removal_ratio}")
        lo, hi = self.worst_count
        if not 1 <= lo <= hi:
            raise ValueError(f"bad worst-removal count range {self.worst_count}")
        if not self.seeds:
            raise ValueError("seed set must be nonempty")

    def budget(self, n: int) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return max(self.min_iters, self.iters_per_customer * n)

    def catalog(self) -> OperatorCatalog:
        return OperatorCatalog(
            list(self.destroy_ops),
            list(self.repair_ops),
            DestroyScale(tuple(self.removal_ratio), tuple(self.worst_count)),
            self.regret_k,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown search config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)


@dataclass
class RunRecord:
    method: str
    instance: str
    seed: int
    initial_cost: float
    best_cost: float
    iterations: int
    best_trace: list[float]
    current_trace: list[float]
    destroy_counts: list[int]
    repair_counts: list[int]
    wall_seconds: float = 0.0
    vehicles: int = 0
    early_stopped: bool = False
    best_solution: Solution | None = field(default=None, repr=False)

    def to_dict(self, trace_points: int = 50) -> dict:
        """Deterministic summary; wall-clock time is deliberately left out."""
        idx = np.unique(np.linspace(0, len(self.best_trace) - 1, trace_points).round().astype(int))
        return {
            "method": self.method,
            "instance": self.instance,
            "seed": self.seed,
            "initial_cost": self.initial_cost,
            "best_cost": self.best_cost,
            "final_cost": self.current_trace[-1] if self.current_trace else self.initial_cost,
            "iterations": self.iterations,
            "vehicles": self.vehicles,
            "early_stopped": self.early_stopped,
            "destroy_counts": self.destroy_counts,
            "repair_counts": self.repair_counts,
            "trace": [[int(i) + 1, self.best_trace[i]] for i in idx] if self.best_trace else [],
        }

    def timing_dict(self) -> dict:
        return {
            "method": self.method,
            "instance": self.instance,
            "seed": self.seed,
            "wall_seconds": self.wall_seconds,
        }


# ---------------------------------------------------------------------------
# components


def roulette_select(weights: Sequence[float], rng: np.random.Generator) -> int:
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise NegativeWeight(f"negative weight in {list(weights)}")
    total = w.sum()
    if not total > 0:
        raise AllZeroWeights("all roulette weights are zero")
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
    return min(idx, len(w) - 1)


def update_weights(
    weights: Sequence[float], scores: Sequence[float], uses: Sequence[int], reaction: float
) -> list[float]:
    """w <- (1 - reaction) * w + reaction * score / uses for operators used this segment."""
    if not (len(weights) == len(scores) == len(uses)):
        raise LengthMismatch("weights, scores and uses must have equal length")
    if not 0 < reaction <= 1:
        raise ValueError("reaction factor must lie in (0, 1]")
    out = []
    for w, s, u in zip(weights, scores, uses):
        if u > 0:
            w = (1 - reaction) * w + reaction * s / u
        out.append(max(WEIGHT_FLOOR, w))
    return out


def accept(candidate: float, current: float, temperature: float, rng: np.random.Generator) -> bool:
    """Metropolis criterion."""
    if not temperature > 0:
        raise NonpositiveTemperature(f"temperature must be positive, got {temperature}")
    if candidate <= current:
        return True
    return bool(rng.random() < math.exp((current - candidate) / temperature))


# ---------------------------------------------------------------------------
# shared search loop


@dataclass
class Step:
    """Everything a selector may need to learn from one iteration."""

    iteration: int
    destroy: int
    repair: int
    c_before: float
    c_destroy: float
    c_repair: float
    c_best: float  # incumbent before this iteration
    n_removed: int
    repair_counts_before: list[int]
    new_best: bool
    improved: bool
    accepted: bool
    current: Solution  # solution after the acceptance test
    terminal: bool


class Selector(Protocol):
    def start(self, inst: Instance, x: Solution, catalog: OperatorCatalog, rng: np.random.Generator): ...

    def choose_destroy(self, x: Solution) -> int: ...

    def choose_repair(self, destroyed: Solution, destroy: int) -> int: ...

    def feedback(self, step: Step) -> None: ...


class RouletteSelector:
    """Adaptive weights updated once per segment."""

    def __init__(self, config: SearchConfig):
        self.config = config

    def start(self, inst, x, catalog, rng):
        self.rng = rng
        self.wd = [1.0] * catalog.n_destroy
        self.wr = [1.0] * catalog.n_repair
        self._reset_segment()

    def _reset_segment(self):
        self.sd = [0.0] * len(self.wd)
        self.sr = [0.0] * len(self.wr)
        self.ud = [0] * len(self.wd)
        self.ur = [0] * len(self.wr)

    def choose_destroy(self, x):
        return roulette_select(self.wd, self.rng)

    def choose_repair(self, destroyed, destroy):
        return roulette_select(self.wr, self.rng)

    def feedback(self, step: Step):
        s1, s2, s3 = self.config.scores
        if step.new_best:
            score = s1
        elif step.improved:
            score = s2
        elif step.accepted:
            score = s3
        else:
            score = 0.0
        self.sd[step.destroy] += score
        self.sr[step.repair] += score
        self.ud[step.destroy] += 1
        self.ur[step.repair] += 1
        if (step.iteration + 1) % self.config.segment_length == 0:
            lam = self.config.reaction
            self.wd = update_weights(self.wd, self.sd, self.ud, lam)
            self.wr = update_weights(self.wr, self.sr, self.ur, lam)
            self._reset_segment()


def temperature_schedule(initial_cost: float, iters: int, config: SearchConfig) -> tuple[float, float]:
    """Start temperature and per-iteration cooling factor."""
    t0 = max(config.start_temp_factor * initial_cost, 1e-9)
    cooling = config.final_temp_ratio ** (1.0 / (iters - 1)) if iters > 1 else 1.0
    return t0, cooling


def run_search(
    inst: Instance,
    config: SearchConfig,
    seed: int,
    selector: Selector,
    method: str,
    max_iters: int | None = None,
    patience: int | None = None,
) -> RunRecord:
    """Destroy -> repair -> accept loop driven by ``selector``.

    ``patience`` stops the run once the incumbent has not improved for more
    than that many consecutive iterations.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(seed)
    catalog = config.catalog()
    x = build_initial_solution(inst, seed)
    best = x
    initial_cost = x.cost
    iters = max_iters if max_iters is not None else config.budget(inst.n)
    temp, cooling = temperature_schedule(x.cost, iters, config)
    selector.start(inst, x, catalog, rng)

    best_trace, current_trace = [], []
    stale = 0
    early = False
    for it in range(iters):
        c_before, c_best = x.cost, best.cost
        d = selector.choose_destroy(x)
        destroyed, removed = catalog.destroy(d, x, inst, rng)
        r = selector.choose_repair(destroyed, d)
        counts_before = list(catalog.repair_counts)
        cand = catalog.repair(r, destroyed, inst, rng)

        new_best = cand.cost < c_best - IMPROVE_TOL
        improved = cand.cost < c_before - IMPROVE_TOL
        accepted = accept(cand.cost, c_before, temp, rng)
        if accepted:
            x = cand
        if new_best:
            best = cand
            stale = 0
        else:
            stale += 1
        temp *= cooling
        best_trace.append(best.cost)
        current_trace.append(x.cost)

        selector.feedback(
            Step(
                iteration=it,
                destroy=d,
                repair=r,
                c_before=c_before,
                c_destroy=destroyed.cost,
                c_repair=cand.cost,
                c_best=c_best,
                n_removed=len(removed),
                repair_counts_before=counts_before,
                new_best=new_best,
                improved=improved,
                accepted=accepted,
                current=x,
                terminal=it == iters - 1,
            )
        )
        if patience is not None and stale > patience:
            early = True
            break

    return RunRecord(
        method=method,
        instance=inst.name,
        seed=seed,
        initial_cost=initial_cost,
        best_cost=best.cost,
        iterations=len(best_trace),
        best_trace=best_trace,
        current_trace=current_trace,
        destroy_counts=list(catalog.destroy_counts),
        repair_counts=list(catalog.repair_counts),
        wall_seconds=time.perf_counter() - t_start,
        vehicles=best.n_vehicles,
        early_stopped=early,
        best_solution=best,
    )


def run_alns(inst: Instance, config: SearchConfig, seed: int, max_iters: int | None = None) -> RunRecord:
    return run_search(inst, config, seed, RouletteSelector(config), "alns", max_iters=max_iters)


def record_solution_dict(record: RunRecord, inst: Instance) -> dict:
    return solution_to_dict(record.best_solution, inst)
