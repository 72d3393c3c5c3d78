"""Tabular MDP lab: operator splitting value iteration, OS-Dyna and baselines."""
from .mdp import (
    InducedKernel,
    Policy,
    TabularMdp,
    Trajectory,
    bellman_control,
    bellman_pe,
    induce_kernel,
    modified_policy_iteration,
    policy_iteration,
    solve_control_exact,
    solve_pe_direct,
    value_iteration,
)
from .varga import (
    EffectiveDiscountReport,
    ModelPair,
    auxiliary_reward,
    effective_discount,
    gain_operator_norm,
    osvi,
    varga_control,
    varga_pe,
)

__version__ = "0.1.0"
