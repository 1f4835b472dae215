"""Decentralized KL-UCB and UCB1 bandits on undirected graphs: simulator,
structural checks, coefficient oracle and regret-bound calculators."""
from .agent import POLICIES
from .analysis import asym_coeff_klucb, asym_coeff_ucb1, f2, finite_bound_ucb1, gamma, lower_bound_coeff
from .engine import RunResult, SimConfig, pseudo_regret, run, run_batch
from .graph import NeighborGraph, build_graph, builtin_graph, gen_erdos_renyi, metropolis_weights
from .klcore import kl_div, kl_ucb_solve
from .rewards import ArmSet, parse_arm_spec

__version__ = "0.1.0"

__all__ = [
    "POLICIES",
    "ArmSet",
    "NeighborGraph",
    "RunResult",
    "SimConfig",
    "asym_coeff_klucb",
    "asym_coeff_ucb1",
    "build_graph",
    "builtin_graph",
    "f2",
    "finite_bound_ucb1",
    "gamma",
    "gen_erdos_renyi",
    "kl_div",
    "kl_ucb_solve",
    "lower_bound_coeff",
    "metropolis_weights",
    "parse_arm_spec",
    "pseudo_regret",
    "run",
    "run_batch",
]
