"""Finite discounted MDPs, Bellman operators and the exact/iterative planners."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_ATOL = 1e-12
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with expected rewards.

    Args:
        transition: P(y|x,a), shape (n_states, n_actions, n_states)
        reward: r(x,a), shape (n_states, n_actions)
        discount: gamma in [0, 1)
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (n, m, n), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape}")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        check_stochastic(P, "transition")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward must be finite")
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_transition(self, transition) -> "TabularMdp":
        return TabularMdp(transition, self.reward, self.discount)

    def with_reward(self, reward) -> "TabularMdp":
        return TabularMdp(self.transition, reward, self.discount)


def check_stochastic(P: np.ndarray, name: str = "kernel"):
    if np.any(P < 0):
        raise ValueError(f"{name} has negative entries")
    sums = P.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > PROB_ATOL:
        raise ValueError(f"{name} rows must sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3g})")


@dataclass(frozen=True)
class Policy:
    """Markov stationary policy stored as an (n_states, n_actions) table.

    Deterministic policies keep their action indices in ``actions``.
    """

    probs: np.ndarray
    kind: str = "stochastic"

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("policy table must be 2-D")
        check_stochastic(probs, "policy")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if self.kind not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=np.int64)
        if actions.ndim != 1 or np.any(actions < 0) or np.any(actions >= n_actions):
            raise ValueError("invalid action indices")
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs, kind="deterministic")

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def actions(self) -> np.ndarray:
        if self.kind != "deterministic":
            raise ValueError("stochastic policy has no action table")
        return np.argmax(self.probs, axis=1)

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.kind, self.probs.tobytes()))


@dataclass(frozen=True)
class InducedKernel:
    """P^pi and r^pi of a policy."""

    matrix: np.ndarray
    reward_vec: np.ndarray


@dataclass
class Trajectory:
    """Iterates and per-iteration diagnostics of a planner run.

    ``errors[k]`` belongs to ``values[k]``; index 0 is the initial point.
    """

    values: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    converged: bool = False
    diverged: bool = False

    @property
    def n_iterations(self) -> int:
        return len(self.values) - 1

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def _check_policy(mdp: TabularMdp, policy: Policy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )


def check_value(v, n_states: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n_states,):
        raise ValueError(f"value must have shape ({n_states},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("value has non-finite entries")
    return v


def policy_kernel(transition: np.ndarray, policy: Policy) -> np.ndarray:
    """sum_a pi(a|x) P(.|x,a) for an arbitrary kernel of matching shape."""
    if policy.probs.shape != transition.shape[:2]:
        raise ValueError("policy does not match kernel dimensions")
    if policy.kind == "deterministic":
        return transition[np.arange(transition.shape[0]), policy.actions]
    return np.einsum("xa,xay->xy", policy.probs, transition)


def policy_reward(reward: np.ndarray, policy: Policy) -> np.ndarray:
    if policy.probs.shape != reward.shape:
        raise ValueError("policy does not match reward dimensions")
    if policy.kind == "deterministic":
        return reward[np.arange(reward.shape[0]), policy.actions]
    return np.einsum("xa,xa->x", policy.probs, reward)


def induce_kernel(mdp: TabularMdp, policy: Policy) -> InducedKernel:
    _check_policy(mdp, policy)
    return InducedKernel(policy_kernel(mdp.transition, policy), policy_reward(mdp.reward, policy))


def q_values(mdp: TabularMdp, v) -> np.ndarray:
    """r(x,a) + gamma sum_y P(y|x,a) v(y)."""
    return mdp.reward + mdp.discount * (mdp.transition @ v)


def greedy(q: np.ndarray) -> Policy:
    """Argmax policy; np.argmax already returns the lowest index on ties."""
    return Policy.deterministic(np.argmax(q, axis=1), q.shape[1])


def bellman_pe(mdp: TabularMdp, policy: Policy, v) -> np.ndarray:
    v = check_value(v, mdp.n_states)
    kern = induce_kernel(mdp, policy)
    return kern.reward_vec + mdp.discount * kern.matrix @ v


def bellman_control(mdp: TabularMdp, v) -> tuple[np.ndarray, Policy]:
    """T* v together with the greedy policy.

    The value is read off the same Q table the policy is taken from, so
    ``bellman_pe(mdp, pi, v)`` reproduces it for deterministic ``pi``.
    """
    v = check_value(v, mdp.n_states)
    q = q_values(mdp, v)
    pi = greedy(q)
    return q[np.arange(mdp.n_states), pi.actions], pi


def solve_linear_pe(matrix: np.ndarray, reward_vec: np.ndarray, discount: float) -> np.ndarray:
    """Solve (I - gamma P) v = r and verify the residual."""
    A = np.eye(matrix.shape[0]) - discount * matrix
    v = np.linalg.solve(A, reward_vec)
    resid = np.max(np.abs(A @ v - reward_vec), initial=0.0)
    scale = max(1.0, np.max(np.abs(reward_vec), initial=0.0))
    if resid > RESIDUAL_TOL * scale:
        raise np.linalg.LinAlgError(f"policy evaluation residual {resid:.3g} too large")
    return v


def solve_pe_direct(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    kern = induce_kernel(mdp, policy)
    return solve_linear_pe(kern.matrix, kern.reward_vec, mdp.discount)


def solve_control_exact(mdp: TabularMdp, pi0: Policy | None = None, max_iter: int = 1000):
    """Optimal value and lowest-index greedy optimal policy, via policy iteration."""
    from .kernels import control_solve

    start = np.zeros(mdp.n_states, dtype=np.int64) if pi0 is None else pi0.actions.astype(np.int64)
    v, actions, _ = control_solve(mdp.transition, mdp.reward, mdp.discount, start, max_iter)
    return v, Policy.deterministic(actions, mdp.n_actions)


def value_iteration(
    mdp: TabularMdp,
    mode: str = "control",
    policy: Policy | None = None,
    v0=None,
    iters: int = 100,
    tol: float = 0.0,
    v_ref=None,
) -> Trajectory:
    """Run VI for PE (``T^pi``) or control (``T*``).

    Errors are sup-norm distances to ``v_ref`` (default: the exact solution).
    Stops after ``iters`` steps or once consecutive iterates are closer than
    ``tol``; both outcomes are recorded.
    """
    if mode not in ("pe", "control"):
        raise ValueError(f"mode must be 'pe' or 'control', got {mode!r}")
    if mode == "pe" and policy is None:
        raise ValueError("policy evaluation needs a policy")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    v = np.zeros(mdp.n_states) if v0 is None else check_value(v0, mdp.n_states).copy()
    if v_ref is None:
        v_ref = solve_pe_direct(mdp, policy) if mode == "pe" else solve_control_exact(mdp)[0]
    if mode == "pe":
        kern = induce_kernel(mdp, policy)

    traj = Trajectory()
    traj.values.append(v)
    traj.errors.append(np.max(np.abs(v - v_ref)))
    traj.queries.append(0)
    steps = []
    for k in range(1, iters + 1):
        if mode == "pe":
            v_new = kern.reward_vec + mdp.discount * kern.matrix @ v
        else:
            v_new, pi = bellman_control(mdp, v)
            traj.policies.append(pi)
        step = np.max(np.abs(v_new - v))
        steps.append(step)
        v = v_new
        traj.values.append(v)
        traj.errors.append(np.max(np.abs(v - v_ref)))
        traj.queries.append(k)
        if step < tol:
            traj.converged = True
            break
    traj.metrics["step_size"] = steps
    return traj


def policy_iteration(mdp: TabularMdp, pi0: Policy, iters: int = 1000, v_star=None) -> Trajectory:
    """Exact PI. ``values[k]`` is V^{pi_k}; ``errors[k]`` is ||V* - V^{pi_k}||_inf."""
    _check_policy(mdp, pi0)
    if v_star is None:
        v_star = solve_control_exact(mdp)[0]
    pi = pi0
    v = solve_pe_direct(mdp, pi)
    traj = Trajectory(values=[v], errors=[np.max(np.abs(v_star - v))], policies=[pi], queries=[0])
    for k in range(1, iters + 1):
        _, new_pi = bellman_control(mdp, v)
        if new_pi == pi:
            traj.converged = True
            break
        pi = new_pi
        v = solve_pe_direct(mdp, pi)
        traj.values.append(v)
        traj.errors.append(np.max(np.abs(v_star - v)))
        traj.policies.append(pi)
        traj.queries.append(k)
    return traj


def modified_policy_iteration(
    mdp: TabularMdp,
    pi0: Policy | None = None,
    m: int = 1,
    iters: int = 100,
    v0=None,
    v_star=None,
) -> Trajectory:
    """MPI: greedy step, then ``m`` backups of the new policy.

    The start value is ``v0`` if given, else V^{pi0} if ``pi0`` is given,
    else zero. ``errors[k]`` is ||V* - V_k||_inf; ``metrics["policy_errors"]``
    holds ||V* - V^{pi_k}||_inf.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if v0 is not None:
        v = check_value(v0, mdp.n_states).copy()
    elif pi0 is not None:
        v = solve_pe_direct(mdp, pi0)
    else:
        v = np.zeros(mdp.n_states)
    if v_star is None:
        v_star = solve_control_exact(mdp)[0]
    traj = Trajectory(values=[v], errors=[np.max(np.abs(v_star - v))], queries=[0])
    policy_errors = []
    for k in range(1, iters + 1):
        _, pi = bellman_control(mdp, v)
        kern = induce_kernel(mdp, pi)
        for _ in range(m):
            v = kern.reward_vec + mdp.discount * kern.matrix @ v
        traj.values.append(v)
        traj.errors.append(np.max(np.abs(v_star - v)))
        traj.policies.append(pi)
        traj.queries.append(k * m)
        policy_errors.append(np.max(np.abs(v_star - solve_pe_direct(mdp, pi))))
    traj.metrics["policy_errors"] = policy_errors
    return traj
