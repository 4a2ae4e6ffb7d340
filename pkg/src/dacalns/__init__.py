"""ALNS and dual actor-critic ALNS for CVRP and VRPTW."""

from .agent import AgentConfig, AgentParams, RewardConfig, deploy, load_checkpoint, run_ac, run_dac, save_checkpoint, train
from .alns import RunRecord, SearchConfig, run_alns
from .instance_io import Instance, Node, load_instance, parse_instance, subsample_instance
from .routing import Solution, check_feasible, total_cost

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AgentParams",
    "Instance",
    "Node",
    "RewardConfig",
    "RunRecord",
    "SearchConfig",
    "Solution",
    "check_feasible",
    "deploy",
    "load_checkpoint",
    "load_instance",
    "parse_instance",
    "run_ac",
    "run_alns",
    "run_dac",
    "save_checkpoint",
    "subsample_instance",
    "total_cost",
    "train",
]
