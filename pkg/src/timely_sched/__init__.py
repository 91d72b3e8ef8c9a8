"""Deadline-aware resource scheduling with arrival prediction."""

from .dual import DualSolution, evaluate, eval_dual, golden_search, optimal_throughput, subgradient_search
from .experiments import reference_preset
from .model import (
    ChannelModel,
    ResourceGrid,
    SuccessCurve,
    SystemConfig,
    UserConfig,
    ValidationError,
    check,
    load_config,
    save_config,
    validate,
)
from .sps import solve, solve_imperfect, solve_perfect

__all__ = [
    "ChannelModel",
    "DualSolution",
    "ResourceGrid",
    "SuccessCurve",
    "SystemConfig",
    "UserConfig",
    "ValidationError",
    "check",
    "eval_dual",
    "evaluate",
    "golden_search",
    "load_config",
    "optimal_throughput",
    "reference_preset",
    "save_config",
    "solve",
    "solve_imperfect",
    "solve_perfect",
    "subgradient_search",
    "validate",
]
