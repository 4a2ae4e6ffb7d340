"""Benchmark statistics and experiment orchestration.

Result files written by :func:`run_experiment` are deterministic given the
plan; wall-clock timings go to separate ``timings.*`` files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import AgentConfig, AgentParams, RewardConfig, deploy, run_ac, run_dac, save_checkpoint, train
from .alns import RunRecord, SearchConfig, run_alns
from .errors import AllZeroDifferences, NonpositiveReference
from .instance_io import Instance, subsample_instance

METHODS = ("alns", "ac", "dac", "dac-t")
SCALES = {"Small": (0, 40), "Medium": (40, 60), "Large": (60, 80)}
# subsampling ranges used when an instance has to be resized to a scale
SUBSAMPLE_RANGES = {"Small": (20, 40), "Medium": (40, 60), "Large": (60, 80)}
TIE_TOL = 1e-9
EXACT_MAX_N = 20


def gap(obj_a: float, obj_b: float) -> float:
    """Percent gap of A relative to B; negative means A is better."""
    if not obj_b > 0:
        raise NonpositiveReference(f"reference objective must be positive, got {obj_b}")
    return (obj_a - obj_b) / obj_b * 100.0


def time_ratio(t_a: float, t_b: float) -> float:
    if not t_b > 0:
        raise NonpositiveReference(f"reference time must be positive, got {t_b}")
    return t_a / t_b


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank, one-sided (A better means negative differences)


@dataclass
class WilcoxonResult:
    statistic: float  # sum of ranks of negative differences
    p_value: float
    wins: int
    losses: int
    ties: int
    n: int  # nonzero differences used
    method: str


def midranks(values: Sequence[float]) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size)
    sorted_a = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_upper_tail(ranks: np.ndarray, w: float) -> float:
    """P(W >= w) when every rank's sign is a fair coin, by convolution."""
    doubled = np.rint(ranks * 2).astype(int)  # midranks are multiples of 1/2
    total = int(doubled.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = 0.5 * (dist + shifted)
    k = int(math.ceil(2 * w - 1e-9))
    return float(dist[k:].sum())


def _normal_upper_tail(ranks: np.ndarray, abs_d: np.ndarray, w: float) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(abs_d, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((counts**3) - counts).sum()) / 48.0
    if var <= 0:
        return 1.0
    z = (w - mean - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2))


def wilcoxon_one_sided(
    differences: Iterable[float], method: str = "auto", zero_tol: float = 0.0
) -> WilcoxonResult:
    """H1: A is better, i.e. differences A - B tend to be negative.

    Zeros (|d| <= zero_tol) are dropped and counted as ties. ``method`` is
    "exact", "normal" or "auto" (exact up to 20 nonzero differences).
    """
    d = np.asarray(list(differences), dtype=float)
    zero = np.abs(d) <= zero_tol
    ties = int(zero.sum())
    d = d[~zero]
    if d.size == 0:
        raise AllZeroDifferences("all differences are zero", ties=ties)
    abs_d = np.abs(d)
    ranks = midranks(abs_d)
    w = float(ranks[d < 0].sum())
    if method == "auto":
        method = "exact" if d.size <= EXACT_MAX_N else "normal"
    if method == "exact":
        p = _exact_upper_tail(ranks, w)
    elif method == "normal":
        p = _normal_upper_tail(ranks, abs_d, w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(w, min(1.0, p), int((d < 0).sum()), int((d > 0).sum()), ties, int(d.size), method)


# ---------------------------------------------------------------------------
# stratification


def scale_label(n: int) -> str | None:
    for label, (lo, hi) in SCALES.items():
        if lo <= n < hi:
            return label
    return None


@dataclass
class PlanEntry:
    instance: Instance
    scale: str
    source: str
    sample_seed: int | None = None

    def describe(self) -> dict:
        return {
            "instance": self.instance.name,
            "n": self.instance.n,
            "scale": self.scale,
            "source": self.source,
            "sample_seed": self.sample_seed,
        }


def stratify(instances: Sequence[Instance], target: str | None = None, seed: int = 0) -> list[PlanEntry]:
    """Label instances by size; resize those outside the ranges (or all, with
    ``target``) by seeded customer subsampling."""
    out = []
    for i, inst in enumerate(instances):
        label = scale_label(inst.n)
        if target is None and label is not None:
            out.append(PlanEntry(inst, label, inst.name))
            continue
        want = target or "Large"
        if target is not None and label == target:
            out.append(PlanEntry(inst, label, inst.name))
            continue
        lo, hi = SUBSAMPLE_RANGES[want]
        rng = np.random.default_rng([seed, i])
        m = int(rng.integers(lo, hi))
        if m > inst.n:
            raise ValueError(f"{inst.name} has {inst.n} customers, cannot reach scale {want}")
        s = seed * 1000 + i
        out.append(PlanEntry(subsample_instance(inst, m, s), want, inst.name, s))
    return out


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonRow:
    instance: str
    scale: str
    n: int
    best_a: float
    best_b: float
    mean_a: float
    mean_b: float
    best_gap: float
    avg_gap: float
    outcome: str  # win / loss / tie for A
    diff: float  # best_a - best_b, the Wilcoxon input
    time_ratio: float | None = None

    def deterministic_dict(self) -> dict:
        d = asdict(self)
        d.pop("time_ratio")
        return d


def compare_instance(runs_a: Sequence[dict], runs_b: Sequence[dict], scale: str, n: int) -> ComparisonRow:
    best_a = min(r["best_cost"] for r in runs_a)
    best_b = min(r["best_cost"] for r in runs_b)
    mean_a = float(np.mean([r["best_cost"] for r in runs_a]))
    mean_b = float(np.mean([r["best_cost"] for r in runs_b]))
    diff = best_a - best_b
    if abs(diff) <= TIE_TOL * max(abs(best_b), 1.0):
        outcome, diff = "tie", 0.0
    else:
        outcome = "win" if diff < 0 else "loss"
    return ComparisonRow(
        runs_a[0]["instance"], scale, n, best_a, best_b, mean_a, mean_b,
        gap(best_a, best_b), gap(mean_a, mean_b), outcome, diff,
    )


def summarize(rows: Sequence[ComparisonRow]) -> dict:
    def block(rs):
        if not rs:
            return None
        out = {
            "instances": len(rs),
            "mean_best_gap": float(np.mean([r.best_gap for r in rs])),
            "mean_avg_gap": float(np.mean([r.avg_gap for r in rs])),
            "wins": sum(r.outcome == "win" for r in rs),
            "losses": sum(r.outcome == "loss" for r in rs),
            "ties": sum(r.outcome == "tie" for r in rs),
        }
        try:
            w = wilcoxon_one_sided([r.diff for r in rs])
            out["wilcoxon"] = {"statistic": w.statistic, "p_value": w.p_value, "n": w.n, "method": w.method}
        except AllZeroDifferences:
            out["wilcoxon"] = None
        return out

    by_scale = {s: block([r for r in rows if r.scale == s]) for s in SCALES}
    return {"overall": block(list(rows)), "by_scale": {k: v for k, v in by_scale.items() if v}}


def compare_runs(
    runs: Sequence[dict], method_a: str, method_b: str, scales: dict[str, tuple[str, int]]
) -> list[ComparisonRow]:
    """Rows per instance from stored run dicts; ``scales`` maps instance -> (label, n)."""
    grouped = defaultdict(lambda: defaultdict(list))
    for r in runs:
        if r.get("status", "ok") != "ok":
            continue
        grouped[r["instance"]][r["role"]].append(r)
    rows = []
    for name in sorted(grouped):
        g = grouped[name]
        if not g["a"] or not g["b"]:
            continue
        label, n = scales[name]
        rows.append(compare_instance(g["a"], g["b"], label, n))
    return rows


def attach_time_ratios(rows: Sequence[ComparisonRow], timings: Sequence[dict]):
    tot = defaultdict(float)
    for t in timings:
        tot[(t["instance"], t["role"])] += t["wall_seconds"]
    for row in rows:
        tb = tot.get((row.instance, "b"), 0.0)
        row.time_ratio = time_ratio(tot.get((row.instance, "a"), 0.0), tb) if tb > 0 else None


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentPlan:
    method_a: str
    method_b: str
    entries: list[PlanEntry]
    seeds: tuple[int, ...] = tuple(range(0, 1000, 100))
    search: SearchConfig = field(default_factory=SearchConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    max_iters: int | None = None
    train_entries: list[PlanEntry] = field(default_factory=list)  # source split for dac-t
    train_seed: int = 0
    train_steps: int | None = None
    name: str = "experiment"

    def __post_init__(self):
        for m in (self.method_a, self.method_b):
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if not self.seeds:
            raise ValueError("seed set must be nonempty")
        for e in self.entries + self.train_entries:
            if scale_label(e.instance.n) not in (e.scale, None):
                raise ValueError(f"{e.instance.name}: label {e.scale} inconsistent with n={e.instance.n}")
        if "dac-t" in (self.method_a, self.method_b) and not self.train_entries:
            raise ValueError("dac-t needs training instances")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "method_a": self.method_a,
            "method_b": self.method_b,
            "seeds": list(self.seeds),
            "max_iters": self.max_iters,
            "instances": [e.describe() for e in self.entries],
            "train_instances": [e.describe() for e in self.train_entries],
            "train_seed": self.train_seed,
            "train_steps": self.train_steps,
            "search": self.search.to_dict(),
            "agent": self.agent.to_dict(),
            "rewards": asdict(self.rewards),
        }


def split_transfer(entries: Sequence[PlanEntry], frac: float = 2 / 3) -> tuple[list, list]:
    """First round(frac * len) entries train, the rest test."""
    k = int(round(frac * len(entries)))
    return list(entries[:k]), list(entries[k:])


def run_method(
    method: str, inst: Instance, seed: int, plan: ExperimentPlan, trained: AgentParams | None = None
) -> RunRecord:
    if method == "alns":
        return run_alns(inst, plan.search, seed, plan.max_iters)
    if method == "dac":
        return run_dac(inst, plan.search, seed, plan.agent, plan.rewards, max_iters=plan.max_iters)[0]
    if method == "ac":
        return run_ac(inst, plan.search, seed, plan.agent, plan.rewards, max_iters=plan.max_iters)[0]
    if method == "dac-t":
        if trained is None:
            raise ValueError("dac-t needs trained parameters")
        return deploy(trained, inst, plan.search, seed, plan.agent, max_iters=plan.max_iters)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    runs: list[dict]
    timings: list[dict]
    rows: list[ComparisonRow]
    summary: dict
    trained: AgentParams | None = None
    train_log: list[dict] = field(default_factory=list)


def run_experiment(plan: ExperimentPlan, out_dir: str | Path | None = None, plot: bool = False) -> ExperimentResult:
    trained = None
    train_log: list[dict] = []
    if "dac-t" in (plan.method_a, plan.method_b):
        res = train(
            [e.instance for e in plan.train_entries], plan.search, plan.train_seed,
            plan.agent, plan.rewards, total_steps=plan.train_steps,
        )
        trained, train_log = res.params, res.log

    runs, timings = [], []
    for entry in plan.entries:
        inst = entry.instance
        for seed in plan.seeds:
            for role, method in (("a", plan.method_a), ("b", plan.method_b)):
                base = {"role": role, "method": method, "instance": inst.name, "seed": seed}
                try:
                    rec = run_method(method, inst, seed, plan, trained)
                except Exception as exc:  # keep going; record the failure
                    runs.append({**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
                    continue
                runs.append({"role": role, "status": "ok", **rec.to_dict()})
                timings.append({"role": role, **rec.timing_dict()})

    parity = _check_parity(runs)
    scales = {e.instance.name: (e.scale, e.instance.n) for e in plan.entries}
    rows = compare_runs(runs, plan.method_a, plan.method_b, scales)
    attach_time_ratios(rows, timings)
    summary = summarize(rows)
    summary["parity"] = parity
    summary["failed_runs"] = sum(r["status"] != "ok" for r in runs)
    result = ExperimentResult(plan, runs, timings, rows, summary, trained, train_log)
    if out_dir is not None:
        write_results(result, out_dir, plot)
    return result


def _check_parity(runs: Sequence[dict]) -> bool:
    """Both methods must use the same seeds and iteration counts per instance."""
    seen = defaultdict(dict)
    for r in runs:
        if r.get("status") != "ok":
            continue
        seen[(r["instance"], r["seed"])][r["role"]] = r["iterations"]
    return all(len(v) == 2 and v["a"] == v["b"] for v in seen.values())


# ---------------------------------------------------------------------------
# persistence


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def rows_to_csv(rows: Sequence[ComparisonRow], with_time: bool = False) -> str:
    buf = io.StringIO()
    cols = list(ComparisonRow.__dataclass_fields__)
    if not with_time:
        cols.remove("time_ratio")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r) if with_time else r.deterministic_dict()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in d.items()})
    return buf.getvalue()


def write_results(result: ExperimentResult, out_dir: str | Path, plot: bool = False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(result.plan.describe(), indent=1, sort_keys=True))
    (out / "runs.jsonl").write_text(_jsonl(result.runs))
    (out / "comparison.csv").write_text(rows_to_csv(result.rows))
    (out / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True))
    (out / "timings.jsonl").write_text(_jsonl(result.timings))
    timing_rows = [{"instance": r.instance, "time_ratio": r.time_ratio} for r in result.rows]
    (out / "timings_ratio.json").write_text(json.dumps(timing_rows, indent=1))
    if result.trained is not None:
        save_checkpoint(result.trained, out / "checkpoint.json")
        (out / "train_log.jsonl").write_text(_jsonl(result.train_log))
    if plot:
        plot_results(result.runs, result.rows, out)


def load_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def recompute_stats(out_dir: str | Path) -> tuple[list[ComparisonRow], dict]:
    """Rebuild comparison.csv and summary.json from stored runs."""
    out = Path(out_dir)
    plan = json.loads((out / "plan.json").read_text())
    runs = load_jsonl(out / "runs.jsonl")
    scales = {e["instance"]: (e["scale"], e["n"]) for e in plan["instances"]}
    rows = compare_runs(runs, plan["method_a"], plan["method_b"], scales)
    timing_path = out / "timings.jsonl"
    if timing_path.exists():
        attach_time_ratios(rows, load_jsonl(timing_path))
    summary = summarize(rows)
    summary["parity"] = _check_parity(runs)
    summary["failed_runs"] = sum(r.get("status") != "ok" for r in runs)
    (out / "comparison.csv").write_text(rows_to_csv(rows))
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return rows, summary


def plot_results(runs: Sequence[dict], rows: Sequence[ComparisonRow], out: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    traces = defaultdict(list)
    for r in runs:
        if r.get("status") == "ok" and r["trace"]:
            traces[(r["instance"], r["method"])].append(r["trace"])
    for inst in sorted({k[0] for k in traces}):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for (name, method), ts in sorted(traces.items()):
            if name != inst:
                continue
            x = [p[0] for p in ts[0]]
            y = np.mean([[p[1] for p in t] for t in ts if len(t) == len(ts[0])], axis=0)
            ax.plot(x, y, label=method)
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean best cost")
        ax.set_title(inst)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"trace_{inst}.png", dpi=100)
        plt.close(fig)
    if rows:
        fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(rows)), 3.2))
        ax.bar([r.instance for r in rows], [r.avg_gap for r in rows])
        ax.axhline(0, color="k", lw=0.8)
        ax.set_ylabel("Avg Gap (%)")
        ax.tick_params(axis="x", rotation=60)
        fig.tight_layout()
        fig.savefig(out / "gaps.png", dpi=100)
        plt.close(fig)
