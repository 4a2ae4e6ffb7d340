"""Command-line entry point: solve, train, deploy, bench, stats."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .agent import (
    AgentConfig,
    RewardConfig,
    deploy,
    iter_log_lines,
    load_checkpoint,
    run_ac,
    run_dac,
    save_checkpoint,
    train,
)
from .alns import SearchConfig, run_alns
from .bench import ExperimentPlan, METHODS, SCALES, recompute_stats, run_experiment, split_transfer, stratify
from .errors import ConfigError, DacAlnsError
from .instance_io import load_instance
from .routing import solution_to_dict


def load_config(path: str | None) -> tuple[SearchConfig, AgentConfig, RewardConfig]:
    """Config JSON: sections "search" / "agent" / "reward", or flat keys."""
    if not path:
        return SearchConfig(), AgentConfig(), RewardConfig()
    try:
        return _parse_config(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DacAlnsError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_config(data: dict) -> tuple[SearchConfig, AgentConfig, RewardConfig]:
    if not isinstance(data, dict):
        raise TypeError("config root must be a JSON object")
    sections = {"search": {}, "agent": {}, "reward": {}}
    owners = {
        "search": {f.name for f in fields(SearchConfig)},
        "agent": {f.name for f in fields(AgentConfig)},
        "reward": {f.name for f in fields(RewardConfig)},
    }
    for key, val in data.items():
        if key in sections and isinstance(val, dict):
            sections[key].update(val)
            continue
        for sec, names in owners.items():
            if key in names:
                sections[sec][key] = val
                break
        else:
            raise KeyError(f"unknown config key {key!r}")
    reward = RewardConfig(**sections["reward"])
    return SearchConfig.from_dict(sections["search"]), AgentConfig.from_dict(sections["agent"]), reward


def _instances(args) -> list:
    paths = []
    if getattr(args, "instance", None):
        paths += args.instance
    if getattr(args, "dir", None):
        d = Path(args.dir)
        paths += sorted(p for p in d.iterdir() if p.suffix.lower() in (".vrp", ".txt"))
    if not paths:
        raise SystemExit("no instances given (use --instance or --dir)")
    return [load_instance(p, args.kind) for p in paths]


def _seeds(args, search: SearchConfig) -> list[int]:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",")]
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return list(search.seeds)


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_solve(args) -> int:
    search, agent, reward = load_config(args.config)
    inst = _instances(args)[0]
    seed = args.seed if args.seed is not None else 0
    if args.method == "alns":
        rec = run_alns(inst, search, seed, args.iters)
    elif args.method == "dac":
        rec = run_dac(inst, search, seed, agent, reward, max_iters=args.iters)[0]
    elif args.method == "ac":
        rec = run_ac(inst, search, seed, agent, reward, max_iters=args.iters)[0]
    else:
        if not args.checkpoint:
            raise SystemExit("--method dac-t needs --checkpoint")
        rec = deploy(load_checkpoint(args.checkpoint), inst, search, seed, agent, max_iters=args.iters)
    out = rec.to_dict()
    if args.emit_solution:
        out["solution"] = solution_to_dict(rec.best_solution, inst)
    _write(args.out, json.dumps(out, indent=1, sort_keys=True) + "\n")
    print(
        f"{inst.name} {rec.method} seed={seed} initial={rec.initial_cost:.3f} "
        f"best={rec.best_cost:.3f} iters={rec.iterations} time={rec.wall_seconds:.2f}s",
        file=sys.stderr,
    )
    return 0


def cmd_train(args) -> int:
    search, agent, reward = load_config(args.config)
    insts = _instances(args)
    seed = args.seed if args.seed is not None else 0
    res = train(
        insts, search, seed, agent, reward,
        total_steps=args.iters, early_stopping=not args.no_early_stop, joint=args.method == "ac",
    )
    ckpt = args.checkpoint or "checkpoint.json"
    save_checkpoint(res.params, ckpt)
    if args.out:
        _write(args.out, "".join(line + "\n" for line in iter_log_lines(res.log)))
    for ep in res.episodes:
        print(json.dumps(ep, sort_keys=True), file=sys.stderr)
    print(f"trained {res.steps} steps over {len(res.episodes)} episodes -> {ckpt}", file=sys.stderr)
    return 0


def cmd_deploy(args) -> int:
    search, agent, _ = load_config(args.config)
    params = load_checkpoint(args.checkpoint)
    lines = []
    for inst in _instances(args):
        for seed in _seeds(args, search):
            rec = deploy(params, inst, search, seed, agent, max_iters=args.iters)
            lines.append(json.dumps(rec.to_dict(), sort_keys=True))
            print(f"{inst.name} seed={seed} best={rec.best_cost:.3f} time={rec.wall_seconds:.2f}s", file=sys.stderr)
    _write(args.out, "".join(line + "\n" for line in lines))
    return 0


def cmd_bench(args) -> int:
    search, agent, reward = load_config(args.config)
    entries = stratify(_instances(args), args.scale, args.sample_seed)
    train_entries = []
    if "dac-t" in (args.method, args.baseline):
        if args.train_dir or args.train_instance:
            tr = argparse.Namespace(instance=args.train_instance, dir=args.train_dir, kind=args.kind)
            train_entries = stratify(_instances(tr), args.train_scale, args.sample_seed)
        else:
            train_entries, entries = split_transfer(entries)
    plan = ExperimentPlan(
        args.method, args.baseline, entries, tuple(_seeds(args, search)), search, agent, reward,
        max_iters=args.iters, train_entries=train_entries, train_seed=args.sample_seed,
        train_steps=args.train_steps, name=args.name,
    )
    res = run_experiment(plan, args.out, plot=args.plot)
    for row in res.rows:
        print(
            f"{row.instance:<22} {row.scale:<6} best_gap={row.best_gap:+.3f}% avg_gap={row.avg_gap:+.3f}% "
            f"{row.outcome}",
            file=sys.stderr,
        )
    print(json.dumps(res.summary["overall"], sort_keys=True), file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    rows, summary = recompute_stats(args.out)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dacalns", description="ALNS and dual actor-critic ALNS for CVRP / VRPTW")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=True):
        sp.add_argument("--instance", action="append", help="instance file (repeatable)")
        if multi:
            sp.add_argument("--dir", help="directory of .vrp / .txt instances")
        sp.add_argument("--kind", choices=["cvrp", "vrptw"], help="force the input format")
        sp.add_argument("--config", help="JSON file overriding search / agent / reward constants")
        sp.add_argument("--iters", type=int, help="iteration budget override")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output path")

    s = sub.add_parser("solve", help="one instance, one method")
    common(s, multi=False)
    s.add_argument("--method", choices=METHODS, default="alns")
    s.add_argument("--checkpoint")
    s.add_argument("--emit-solution", action="store_true")
    s.set_defaults(fn=cmd_solve)

    t = sub.add_parser("train", help="train an agent and write a checkpoint")
    common(t)
    t.add_argument("--method", choices=["dac", "ac"], default="dac")
    t.add_argument("--checkpoint", help="checkpoint path to write")
    t.add_argument("--no-early-stop", action="store_true")
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("deploy", help="run a frozen checkpoint")
    common(d)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--seeds", help="comma-separated seed list")
    d.set_defaults(fn=cmd_deploy)

    b = sub.add_parser("bench", help="compare two methods over instances and seeds")
    common(b)
    b.add_argument("--method", choices=METHODS, default="dac")
    b.add_argument("--baseline", choices=METHODS, default="alns")
    b.add_argument("--seeds", help="comma-separated seed list")
    b.add_argument("--scale", choices=list(SCALES), help="subsample every instance to this scale")
    b.add_argument("--sample-seed", type=int, default=0)
    b.add_argument("--train-instance", action="append")
    b.add_argument("--train-dir")
    b.add_argument("--train-scale", choices=list(SCALES))
    b.add_argument("--train-steps", type=int)
    b.add_argument("--name", default="experiment")
    b.add_argument("--plot", action="store_true")
    b.set_defaults(fn=cmd_bench)

    st = sub.add_parser("stats", help="recompute tables from a bench output directory")
    st.add_argument("--out", required=True, help="bench output directory")
    st.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench" and not args.out:
        args.out = "bench_out"
    try:
        return args.fn(args)
    except (DacAlnsError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
