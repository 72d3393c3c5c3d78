"""JSON persistence for MDPs, count tables and learner checkpoints."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mdp import TabularMdp


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "discount": mdp.discount,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
    }


def mdp_from_dict(d: dict) -> TabularMdp:
    P = np.asarray(d["transition"], dtype=float)
    R = np.asarray(d["reward"], dtype=float)
    n, m = int(d["n_states"]), int(d["n_actions"])
    if P.shape != (n, m, n) or R.shape != (n, m):
        raise ValueError(f"declared sizes ({n}, {m}) do not match the tables {P.shape}, {R.shape}")
    return TabularMdp(P, R, float(d["discount"]))


def save_mdp(mdp: TabularMdp, path):
    Path(path).write_text(json.dumps(mdp_to_dict(mdp)))


def load_mdp(path) -> TabularMdp:
    return mdp_from_dict(json.loads(Path(path).read_text()))


def save_model(transition: np.ndarray, path, discount: float = 0.0):
    """Approximate kernels reuse the MDP layout with a zero reward table."""
    P = np.asarray(transition, dtype=float)
    n, m, _ = P.shape
    save_mdp(TabularMdp(P, np.zeros((n, m)), discount), path)


def load_model(path) -> np.ndarray:
    return np.array(load_mdp(path).transition)


def save_checkpoint(state, path):
    Path(path).write_text(json.dumps(state.to_dict()))


def load_checkpoint(path):
    from .learners import LearnerState

    return LearnerState.from_dict(json.loads(Path(path).read_text()))
