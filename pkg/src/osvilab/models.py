"""Approximate models: smoothed and self-loop perturbations, count-based MLE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import Policy, TabularMdp, policy_kernel
from .varga import ModelPair

SUPPORT_TOL = 1e-15


def _check_lambda(lam: float):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


def smooth_kernel(P: np.ndarray, lam: float) -> np.ndarray:
    """(1 - lam) P + lam * uniform over each row's support."""
    _check_lambda(lam)
    support = P > SUPPORT_TOL
    unif = support / support.sum(axis=-1, keepdims=True)
    return (1.0 - lam) * P + lam * unif


def selfloop_kernel(P: np.ndarray, lam: float) -> np.ndarray:
    """(1 - lam) P + lam * stay-in-place."""
    _check_lambda(lam)
    n = P.shape[0]
    stay = np.zeros_like(P)
    stay[np.arange(n), :, np.arange(n)] = 1.0
    return (1.0 - lam) * P + lam * stay


def smooth_model(true_mdp: TabularMdp, lam: float) -> ModelPair:
    return ModelPair(true_mdp, smooth_kernel(true_mdp.transition, lam))


def selfloop_model(true_mdp: TabularMdp, lam: float) -> ModelPair:
    return ModelPair(true_mdp, selfloop_kernel(true_mdp.transition, lam))


@dataclass
class CountTable:
    """Visit counts N(x, a, x')."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3 or c.shape[0] != c.shape[2]:
            raise ValueError(f"counts must have shape (n, m, n), got {c.shape}")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        self.counts = c.astype(np.int64)

    @classmethod
    def empty(cls, n_states: int, n_actions: int) -> "CountTable":
        return cls(np.zeros((n_states, n_actions, n_states), dtype=np.int64))

    @property
    def shape(self):
        return self.counts.shape

    def to_dict(self) -> dict:
        return {"shape": list(self.counts.shape), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CountTable":
        c = np.asarray(d["counts"], dtype=np.int64).reshape(d["shape"])
        return cls(c)


def mle_update(counts: CountTable, x: int, a: int, xp: int) -> CountTable:
    """Increment N(x, a, x') in place and return the table."""
    n, m, _ = counts.shape
    if not (0 <= x < n and 0 <= a < m and 0 <= xp < n):
        raise IndexError(f"sample ({x}, {a}, {xp}) out of range")
    counts.counts[x, a, xp] += 1
    return counts


def mle_kernel(counts: CountTable) -> np.ndarray:
    """Empirical frequencies; rows never visited are uniform over all states."""
    c = counts.counts.astype(float)
    totals = c.sum(axis=-1, keepdims=True)
    n = c.shape[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(totals > 0, c / np.where(totals > 0, totals, 1.0), 1.0 / n)
    return P


def smoothed_mle_kernel(counts: CountTable, lam: float) -> np.ndarray:
    """smooth_kernel applied to the MLE. Support is the observed support; an
    unvisited row is already uniform over every state, so it stays put."""
    return smooth_kernel(mle_kernel(counts), lam)


def mle_model(true_mdp: TabularMdp, counts: CountTable, lam: float = 0.0) -> ModelPair:
    if counts.shape != true_mdp.transition.shape:
        raise ValueError("count table does not match the MDP")
    return ModelPair(true_mdp, smoothed_mle_kernel(counts, lam))


def sup_model_error(pair: ModelPair, policy: Policy | None = None) -> float:
    """max L1 row distance between P and Phat (per policy if given, else per (x, a))."""
    P, Phat = pair.true_mdp.transition, pair.approx_transition
    if policy is not None:
        P, Phat = policy_kernel(P, policy), policy_kernel(Phat, policy)
    return float(np.max(np.abs(P - Phat).sum(axis=-1)))
