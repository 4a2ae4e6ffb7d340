"""Dual actor-critic operator selection for ALNS.

A destroy actor and a repair actor share one critic and one GCN encoder.
Each search iteration yields two transitions: the destroy transition
(s_des -> s_rep) and the repair transition (s_rep -> next s_des). Both losses
go onto one tape and are applied with a single optimizer step.

The AC ablation uses the same machinery with one actor over all
(destroy, repair) pairs and only the repair reward.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import nn
from .alns import RunRecord, SearchConfig, Step, run_search
from .encoder import DESTROY, FEATURE_DIMS, REPAIR, StateVector, assemble_state, encode, init_encoder
from .errors import (
    BadOperatorId,
    CheckpointMismatch,
    CorruptCheckpoint,
    NonpositiveCost,
    ShapeMismatch,
    VersionMismatch,
)
from .instance_io import Instance
from .nn import ParamStore, Tensor

CHECKPOINT_VERSION = 1


@dataclass
class RewardConfig:
    alpha1: float = 5.0
    alpha2: float = 10.0
    beta: float = 5.0
    eps_den: float = 1e-9
    r1: float = 20.0
    r2: float = 10.0
    r3: float = -0.1
    delta: float = 1.0

    def __post_init__(self):
        if not self.alpha2 > self.alpha1 >= 0:
            raise ValueError("need alpha2 > alpha1 >= 0")
        if self.beta < 0 or self.delta < 0:
            raise ValueError("beta and delta must be nonnegative")
        if not self.r1 > self.r2 > self.r3:
            raise ValueError("need r1 > r2 > r3")
        if not self.eps_den > 0:
            raise ValueError("eps_den must be positive")


def _check_costs(*costs):
    for c in costs:
        if not (c > 0 and math.isfinite(c)):
            raise NonpositiveCost(f"costs must be positive and finite, got {c}")


def destroy_reward(c_before: float, c_destroy: float, c_best: float, cfg: RewardConfig = RewardConfig()) -> float:
    """Zero if destruction did not lower the cost, else a base reward (the
    larger one at or below the incumbent) plus a scaled distance-to-best term.

    ``c_destroy`` may be 0 when a destroy empties a tiny solution.
    """
    _check_costs(c_before, c_best)
    if not (c_destroy >= 0 and math.isfinite(c_destroy)):
        raise NonpositiveCost(f"destroyed cost must be nonnegative and finite, got {c_destroy}")
    if c_destroy >= c_before:
        return 0.0
    potential = cfg.beta * (c_best - c_destroy) / max(cfg.eps_den, c_best)
    base = cfg.alpha2 if c_destroy <= c_best else cfg.alpha1
    return base + potential


def repair_reward(
    c_before: float,
    c_repair: float,
    c_best: float,
    op_id: int,
    counts: Sequence[int],
    cfg: RewardConfig = RewardConfig(),
) -> float:
    _check_costs(c_before, c_repair, c_best)
    if not 0 <= op_id < len(counts):
        raise BadOperatorId(f"operator id {op_id} outside [0, {len(counts)})")
    explore = cfg.delta * (1.0 - counts[op_id] / max(1, max(counts)))
    if c_repair < c_best:
        base = cfg.r1
    elif c_repair < c_before:
        base = cfg.r2
    else:
        base = cfg.r3
    return base + explore


# ---------------------------------------------------------------------------
# parameters


@dataclass
class AgentConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    gamma: float = 0.9
    entropy_coef: float = 0.01
    epsilon: float = 0.1
    deploy_epsilon: float = 0.0
    lr: float = 1e-3
    optimizer: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    knn: int = 10
    patience_frac: float = 0.02
    train_steps: int | None = None  # None -> sum of per-instance budgets

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1 or not 0 <= self.deploy_epsilon <= 1:
            raise ValueError("exploration rates must lie in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def _add_head(store: ParamStore, name: str, in_dim: int, hidden: int, out_dim: int, rng):
    store.add(f"{name}.W1", nn.glorot(rng, in_dim, hidden))
    store.add(f"{name}.b1", np.zeros((1, hidden)))
    store.add(f"{name}.W2", nn.glorot(rng, hidden, out_dim))
    store.add(f"{name}.b2", np.zeros((1, out_dim)))


@dataclass
class AgentParams:
    store: ParamStore
    meta: dict

    @property
    def kind(self) -> str:
        return self.meta["kind"]

    @property
    def joint(self) -> bool:
        return self.meta.get("joint", False)

    @property
    def state_dim(self) -> int:
        return 2 * self.meta["embed_dim"] + 2

    @classmethod
    def init(
        cls,
        kind: str,
        n_destroy: int,
        n_repair: int,
        config: AgentConfig = AgentConfig(),
        seed: int = 0,
        joint: bool = False,
    ) -> "AgentParams":
        rng = np.random.default_rng([seed, 7])
        store = ParamStore()
        fdim = FEATURE_DIMS[kind]
        d, hdim = config.embed_dim, config.hidden_dim
        init_encoder(store, fdim, d, rng)
        sdim = 2 * d + 2
        if joint:
            _add_head(store, "joint", sdim, hdim, n_destroy * n_repair, rng)
        else:
            _add_head(store, "destroy", sdim, hdim, n_destroy, rng)
            _add_head(store, "repair", sdim, hdim, n_repair, rng)
        _add_head(store, "critic", sdim, hdim, 1, rng)
        meta = {
            "kind": kind,
            "feature_dim": fdim,
            "embed_dim": d,
            "hidden_dim": hdim,
            "n_destroy": n_destroy,
            "n_repair": n_repair,
            "joint": joint,
            "knn": config.knn,
        }
        return cls(store, meta)

    def head(self, name: str, state: StateVector | Tensor) -> Tensor:
        x = state.tensor if isinstance(state, StateVector) else state
        W1 = self.store[f"{name}.W1"]
        if x.cols != W1.rows:
            raise ShapeMismatch(f"state length {x.cols}, head {name!r} expects {W1.rows}")
        h = nn.tanh(nn.linear(x, W1, self.store[f"{name}.b1"]))
        return nn.linear(h, self.store[f"{name}.W2"], self.store[f"{name}.b2"])


def critic_value(params: AgentParams, state: StateVector | Tensor) -> Tensor:
    return params.head("critic", state)


@dataclass
class Choice:
    action: int
    log_prob: Tensor  # 1x1, on the tape when recording
    entropy: Tensor  # 1x1
    probs: np.ndarray
    explored: bool


def select_action(
    params: AgentParams, head: str, state: StateVector | Tensor, epsilon: float, rng: np.random.Generator
) -> Choice:
    """epsilon-uniform exploration over a softmax policy.

    The returned log-probability and entropy are always those of the softmax
    policy, whichever branch picked the action.
    """
    logits = params.head(head, state)
    logp = nn.log_softmax(logits, axis=1)
    probs = np.exp(logp.value[0])
    n = probs.size
    explored = bool(rng.random() < epsilon)
    if explored:
        a = int(rng.integers(n))
    else:
        a = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
        a = min(a, n - 1)
    entropy = nn.scale(nn.sum_all(nn.mul(nn.exp(logp), logp)), -1.0)
    return Choice(a, nn.pick(logp, 0, a), entropy, probs, explored)


@dataclass
class Transition:
    state: StateVector
    action: int
    reward: float
    next_state: StateVector | None
    terminal: bool = False

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError("transition reward must be finite")
        if self.next_state is None and not self.terminal:
            raise ValueError("non-terminal transition needs a next state")


def td_update(
    params: AgentParams,
    transition: Transition,
    gamma: float,
    value: Tensor | None = None,
    next_value: float | None = None,
) -> tuple[Tensor, float]:
    """Squared TD error with a constant target, and the advantage."""
    v = critic_value(params, transition.state) if value is None else value
    if transition.terminal:
        target = transition.reward
    else:
        if next_value is None:
            with nn.no_grad():
                next_value = critic_value(params, transition.next_state.tensor).item()
        target = transition.reward + gamma * next_value
    advantage = target - v.item()
    loss = nn.square(nn.sub(Tensor([[target]]), v))
    return loss, advantage


def actor_update(choice: Choice, advantage: float, entropy_coef: float) -> Tensor:
    """-(log pi(a|s) * A + c * H), with A held constant."""
    return nn.scale(
        nn.add(nn.scale(choice.log_prob, advantage), nn.scale(choice.entropy, entropy_coef)), -1.0
    )


def apply_update(params: AgentParams, loss: Tensor, config: AgentConfig):
    params.store.zero_grad()
    loss.backward()
    nn.optimizer_step(
        params.store, config.lr, tuple(config.adam_betas), config.adam_eps, config.optimizer
    )


# ---------------------------------------------------------------------------
# selectors plugged into the shared search loop


class _AgentSelector:
    def __init__(
        self,
        params: AgentParams,
        config: AgentConfig,
        rewards: RewardConfig,
        learn: bool,
        log: list | None = None,
        log_context: dict | None = None,
    ):
        self.params = params
        self.config = config
        self.rewards = rewards
        self.learn = learn
        self.log = log
        self.log_context = log_context or {}

    def start(self, inst, x, catalog, rng):
        if inst.kind != self.params.kind:
            raise CheckpointMismatch(f"agent trained for {self.params.kind}, instance is {inst.kind}")
        m = self.params.meta
        if (m["n_destroy"], m["n_repair"]) != (catalog.n_destroy, catalog.n_repair):
            raise CheckpointMismatch("operator catalog sizes differ from the agent's action dims")
        self.inst = inst
        self.rng = rng
        self.n_destroy = catalog.n_destroy
        self.n_repair = catalog.n_repair
        self.epsilon = self.config.epsilon if self.learn else self.config.deploy_epsilon

    def _encode(self, sol, kind, rho=0.0, destroy_id=0):
        g = encode(self.inst, sol, self.params.store, self.params.meta["knn"])
        return assemble_state(g, kind, rho, destroy_id, self.n_destroy)

    def _record(self, entry: dict):
        if self.log is not None:
            self.log.append({**self.log_context, **entry})


class DACSelector(_AgentSelector):
    def choose_destroy(self, x):
        self.s_des = self._encode(x, DESTROY)
        self.c_des = select_action(self.params, "destroy", self.s_des, self.epsilon, self.rng)
        return self.c_des.action

    def choose_repair(self, destroyed, destroy):
        rho = len(destroyed.removed) / self.inst.n
        self.s_rep = self._encode(destroyed, REPAIR, rho, destroy)
        self.c_rep = select_action(self.params, "repair", self.s_rep, self.epsilon, self.rng)
        return self.c_rep.action

    def feedback(self, step: Step):
        rc = self.rewards
        r_d = destroy_reward(step.c_before, step.c_destroy, step.c_best, rc)
        r_r = repair_reward(step.c_before, step.c_repair, step.c_best, step.repair, step.repair_counts_before, rc)
        entry = {
            "iteration": step.iteration,
            "destroy": step.destroy,
            "repair": step.repair,
            "rho": self.s_rep.rho,
            "c_before": step.c_before,
            "c_destroy": step.c_destroy,
            "c_repair": step.c_repair,
            "c_best": step.c_repair if step.new_best else step.c_best,
            "r_destroy": r_d,
            "r_repair": r_r,
            "p_destroy": self.c_des.probs.tolist(),
            "p_repair": self.c_rep.probs.tolist(),
        }
        if self.learn:
            cfg = self.config
            v_des = critic_value(self.params, self.s_des)
            v_rep = critic_value(self.params, self.s_rep)
            next_state = None
            next_value = None
            if not step.terminal:
                with nn.no_grad():
                    next_state = self._encode(step.current, DESTROY)
                    next_value = critic_value(self.params, next_state).item()
            t_d = Transition(self.s_des, step.destroy, r_d, self.s_rep)
            t_r = Transition(self.s_rep, step.repair, r_r, next_state, step.terminal)
            crit_d, adv_d = td_update(self.params, t_d, cfg.gamma, v_des, v_rep.item())
            crit_r, adv_r = td_update(self.params, t_r, cfg.gamma, v_rep, next_value)
            act_d = actor_update(self.c_des, adv_d, cfg.entropy_coef)
            act_r = actor_update(self.c_rep, adv_r, cfg.entropy_coef)
            loss = nn.add(nn.add(crit_d, crit_r), nn.add(act_d, act_r))
            apply_update(self.params, loss, cfg)
            entry.update(
                critic_loss=crit_d.item() + crit_r.item(),
                actor_loss=act_d.item() + act_r.item(),
                entropy_destroy=self.c_des.entropy.item(),
                entropy_repair=self.c_rep.entropy.item(),
                advantage_destroy=adv_d,
                advantage_repair=adv_r,
            )
        self._record(entry)


class JointACSelector(_AgentSelector):
    """Single actor over (destroy, repair) pairs, repair reward only."""

    def choose_destroy(self, x):
        self.s = self._encode(x, DESTROY)
        self.choice = select_action(self.params, "joint", self.s, self.epsilon, self.rng)
        return self.choice.action // self.n_repair

    def choose_repair(self, destroyed, destroy):
        return self.choice.action % self.n_repair

    def feedback(self, step: Step):
        r = repair_reward(
            step.c_before, step.c_repair, step.c_best, step.repair, step.repair_counts_before, self.rewards
        )
        entry = {
            "iteration": step.iteration,
            "destroy": step.destroy,
            "repair": step.repair,
            "c_before": step.c_before,
            "c_repair": step.c_repair,
            "c_best": step.c_repair if step.new_best else step.c_best,
            "r_repair": r,
        }
        if self.learn:
            cfg = self.config
            next_state = next_value = None
            if not step.terminal:
                with nn.no_grad():
                    next_state = self._encode(step.current, DESTROY)
                    next_value = critic_value(self.params, next_state).item()
            tr = Transition(self.s, self.choice.action, r, next_state, step.terminal)
            crit, adv = td_update(self.params, tr, cfg.gamma, next_value=next_value)
            act = actor_update(self.choice, adv, cfg.entropy_coef)
            apply_update(self.params, nn.add(crit, act), cfg)
            entry.update(critic_loss=crit.item(), actor_loss=act.item(), entropy=self.choice.entropy.item())
        self._record(entry)


# ---------------------------------------------------------------------------
# entry points


def _fresh_params(inst: Instance, search: SearchConfig, config: AgentConfig, seed: int, joint: bool):
    cat = search.catalog()
    return AgentParams.init(inst.kind, cat.n_destroy, cat.n_repair, config, seed, joint)


def run_dac(
    inst: Instance,
    search: SearchConfig,
    seed: int,
    config: AgentConfig = AgentConfig(),
    rewards: RewardConfig = RewardConfig(),
    params: AgentParams | None = None,
    max_iters: int | None = None,
    log: list | None = None,
) -> tuple[RunRecord, AgentParams]:
    """Online DAC-ALNS on one instance: the agent learns while it searches."""
    params = params or _fresh_params(inst, search, config, seed, joint=False)
    sel = DACSelector(params, config, rewards, learn=True, log=log)
    return run_search(inst, search, seed, sel, "dac", max_iters=max_iters), params


def run_ac(
    inst: Instance,
    search: SearchConfig,
    seed: int,
    config: AgentConfig = AgentConfig(),
    rewards: RewardConfig = RewardConfig(),
    params: AgentParams | None = None,
    max_iters: int | None = None,
    log: list | None = None,
) -> tuple[RunRecord, AgentParams]:
    """Single actor-critic ablation over joint operator pairs."""
    params = params or _fresh_params(inst, search, config, seed, joint=True)
    sel = JointACSelector(params, config, rewards, learn=True, log=log)
    return run_search(inst, search, seed, sel, "ac", max_iters=max_iters), params


@dataclass
class TrainResult:
    params: AgentParams
    log: list[dict]
    steps: int
    episodes: list[dict] = field(default_factory=list)


def train(
    instances: Sequence[Instance],
    search: SearchConfig,
    seed: int,
    config: AgentConfig = AgentConfig(),
    rewards: RewardConfig = RewardConfig(),
    total_steps: int | None = None,
    early_stopping: bool = True,
    joint: bool = False,
) -> TrainResult:
    """Round-robin training over ``instances`` until ``total_steps`` iterations.

    One episode is one instance searched for its budget (capped by the steps
    left). With early stopping an episode ends once the incumbent has not
    improved for more than ``patience_frac`` of the total steps.
    """
    if not instances:
        raise ValueError("training needs at least one instance")
    kinds = {i.kind for i in instances}
    if len(kinds) != 1:
        raise ValueError(f"mixed problem kinds in training set: {sorted(kinds)}")
    total = total_steps or config.train_steps or sum(search.budget(i.n) for i in instances)
    patience = max(1, math.ceil(config.patience_frac * total)) if early_stopping else None
    params = _fresh_params(instances[0], search, config, seed, joint)
    cls = JointACSelector if joint else DACSelector
    log: list[dict] = []
    episodes = []
    steps = 0
    ep = 0
    while steps < total:
        inst = instances[ep % len(instances)]
        ep_seed = seed + ep
        iters = min(search.budget(inst.n), total - steps)
        ctx = {"episode": ep, "instance": inst.name, "step0": steps}
        sel = cls(params, config, rewards, learn=True, log=log, log_context=ctx)
        rec = run_search(inst, search, ep_seed, sel, "train", max_iters=iters, patience=patience)
        steps += rec.iterations
        episodes.append(
            {
                "episode": ep,
                "instance": inst.name,
                "seed": ep_seed,
                "iterations": rec.iterations,
                "early_stopped": rec.early_stopped,
                "initial_cost": rec.initial_cost,
                "best_cost": rec.best_cost,
            }
        )
        ep += 1
    params.meta["trained_steps"] = steps
    params.meta["train_instances"] = [i.name for i in instances]
    return TrainResult(params, log, steps, episodes)


def deploy(
    params: AgentParams,
    inst: Instance,
    search: SearchConfig,
    seed: int,
    config: AgentConfig = AgentConfig(),
    max_iters: int | None = None,
    log: list | None = None,
) -> RunRecord:
    """Frozen inference run; raises if any parameter changes."""
    check_compatible(params, inst, search)
    before = params.store.checksum()
    cls = JointACSelector if params.joint else DACSelector
    sel = cls(params, config, RewardConfig(), learn=False, log=log)
    with nn.no_grad():
        rec = run_search(inst, search, seed, sel, "dac-t", max_iters=max_iters)
    if params.store.checksum() != before:
        raise RuntimeError("parameters changed during frozen deployment")
    return rec


def check_compatible(params: AgentParams, inst: Instance, search: SearchConfig):
    m = params.meta
    if m["kind"] != inst.kind:
        raise CheckpointMismatch(f"checkpoint is for {m['kind']}, instance {inst.name} is {inst.kind}")
    if m["feature_dim"] != FEATURE_DIMS[inst.kind]:
        raise CheckpointMismatch("feature dimension mismatch")
    cat = search.catalog()
    if (m["n_destroy"], m["n_repair"]) != (cat.n_destroy, cat.n_repair):
        raise CheckpointMismatch("operator counts mismatch")


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(params: AgentParams) -> dict:
    return {
        "format": "dacalns-checkpoint",
        "version": CHECKPOINT_VERSION,
        "meta": params.meta,
        "params": [
            {"name": name, "shape": list(t.shape), "values": t.value.ravel().tolist()}
            for name, t in params.store
        ],
    }


def save_checkpoint(params: AgentParams, path: str | Path):
    Path(path).write_text(json.dumps(checkpoint_dict(params), indent=1))


def params_from_dict(data: dict) -> AgentParams:
    try:
        if data.get("format") != "dacalns-checkpoint":
            raise CorruptCheckpoint("not a checkpoint file")
        if data["version"] != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint version {data['version']}, expected {CHECKPOINT_VERSION}")
        store = ParamStore()
        for p in data["params"]:
            rows, cols = p["shape"]
            vals = np.array(p["values"], dtype=np.float64)
            if vals.size != rows * cols:
                raise CorruptCheckpoint(f"parameter {p['name']} has {vals.size} values for shape {p['shape']}")
            store.add(p["name"], vals.reshape(rows, cols))
        return AgentParams(store, dict(data["meta"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (CorruptCheckpoint, VersionMismatch)):
            raise
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path: str | Path) -> AgentParams:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CorruptCheckpoint("checkpoint root must be an object")
    return params_from_dict(data)


def iter_log_lines(log: Sequence[dict]) -> Iterator[str]:
    for entry in log:
        yield json.dumps(entry, sort_keys=True)
