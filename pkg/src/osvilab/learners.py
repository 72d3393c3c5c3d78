"""Sample-based learners: OS-Dyna, Dyna, Q-learning and TD(0).

Each learner has a single-step function operating on a ``LearnerState`` and a
``run_*`` driver. Drivers pre-draw every sample with numpy, then either call
the fused numba loop in ``kernels`` or step through the pure-Python functions
below, so both paths consume identical data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .envs import sample_batch
from .mdp import Policy, TabularMdp
from .models import CountTable, smoothed_mle_kernel

SCHEDULE_KINDS = ("constant", "delayed-decay", "rescaled-linear")


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule; ``t`` counts samples starting at 1."""

    kind: str = "constant"
    alpha: float = 0.1
    N: float = 0.0
    u: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.N < 0:
            raise ValueError("N must be non-negative")
        if not 0.0 < self.u <= 1.0:
            raise ValueError("u must lie in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        """``constant:0.2``, ``delayed:0.02:68000`` or ``rescaled:0.1:0.9999``."""
        parts = text.split(":")
        kind = {"delayed": "delayed-decay", "rescaled": "rescaled-linear"}.get(parts[0], parts[0])
        vals = [float(p) for p in parts[1:]]
        if kind == "constant" and len(vals) == 1:
            return cls(kind, vals[0])
        if kind == "delayed-decay" and len(vals) == 2:
            return cls(kind, vals[0], N=vals[1])
        if kind == "rescaled-linear" and len(vals) == 2:
            return cls(kind, vals[0], u=vals[1])
        raise ValueError(f"cannot parse schedule {text!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "N": self.N, "u": self.u}


def schedule_rate(s: Schedule, t) -> float:
    if s.kind == "constant":
        return s.alpha
    if s.kind == "delayed-decay":
        return s.alpha if t <= s.N else s.alpha / (t - s.N)
    return s.alpha / (1.0 + (1.0 - s.u) * t)


def schedule_rates(s: Schedule, n_steps: int, start: int = 1) -> np.ndarray:
    t = np.arange(start, start + n_steps, dtype=float)
    if s.kind == "constant":
        return np.full(n_steps, s.alpha)
    if s.kind == "delayed-decay":
        return np.where(t <= s.N, s.alpha, s.alpha / np.maximum(t - s.N, 1.0))
    return s.alpha / (1.0 + (1.0 - s.u) * t)


# tuned presets, keyed by (algorithm, schedule family, lambda)
PRESETS = {
    ("qlearning", "delayed", None): Schedule("delayed-decay", 0.02, N=68000),
    ("qlearning", "rescaled", None): Schedule("rescaled-linear", 0.1, u=0.9999),
    ("osdyna", "delayed", 0.0): Schedule("delayed-decay", 0.02, N=30000),
    ("osdyna", "delayed", 0.1): Schedule("delayed-decay", 0.02, N=35000),
    ("osdyna", "delayed", 0.5): Schedule("delayed-decay", 0.02, N=50000),
    ("osdyna", "delayed", 0.8): Schedule("delayed-decay", 0.02, N=48000),
    ("osdyna", "delayed", 1.0): Schedule("delayed-decay", 0.02, N=80000),
    ("osdyna", "rescaled", 0.0): Schedule("rescaled-linear", 1.0, u=0.9),
    ("osdyna", "rescaled", 0.1): Schedule("rescaled-linear", 1.0, u=0.9),
    ("osdyna", "rescaled", 0.5): Schedule("rescaled-linear", 1.0, u=0.9995),
    ("osdyna", "rescaled", 0.8): Schedule("rescaled-linear", 1.0, u=0.9995),
    ("osdyna", "rescaled", 1.0): Schedule("rescaled-linear", 1.0, u=0.9995),
    # policy evaluation
    ("td", "constant", None): Schedule("constant", 0.2),
    ("td", "rescaled", None): Schedule("rescaled-linear", 1.0, u=0.999),
    ("osdyna-pe", "constant", None): Schedule("constant", 0.05),
    ("osdyna-pe", "rescaled", None): Schedule("rescaled-linear", 0.8, u=0.995),
}


def preset(algorithm: str, family: str, lam: float | None = None) -> Schedule:
    key = (algorithm, family, None if lam is None else float(lam))
    if key not in PRESETS:
        raise KeyError(f"no tuned schedule for {key}")
    return PRESETS[key]


@dataclass(frozen=True)
class ModelBuilder:
    """How a learner's model is formed: smoothed MLE of the counts, or a fixed kernel."""

    kind: str = "smoothed-mle"
    lam: float = 0.0
    frozen: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("smoothed-mle", "frozen"):
            raise ValueError(f"unknown model builder {self.kind!r}")
        if self.kind == "frozen" and self.frozen is None:
            raise ValueError("frozen model needs a kernel")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    def initial(self, n_states: int, n_actions: int) -> np.ndarray:
        if self.kind == "frozen":
            return np.array(self.frozen, dtype=float)
        return np.full((n_states, n_actions, n_states), 1.0 / n_states)

    def refresh_row(self, model: np.ndarray, counts: CountTable, x: int, a: int):
        if self.kind == "frozen":
            return
        c = counts.counts[x, a].astype(float)
        supp = c > 0
        model[x, a] = (1.0 - self.lam) * (c / c.sum()) + self.lam * supp / supp.sum()


@dataclass
class LearnerState:
    """Mutable state of one learner run."""

    rbar: np.ndarray
    value: np.ndarray
    policy: np.ndarray
    counts: CountTable
    model: np.ndarray
    step: int = 0
    q: np.ndarray | None = None

    @classmethod
    def initial(cls, n_states: int, n_actions: int, builder: ModelBuilder | None = None,
                policy=None) -> "LearnerState":
        builder = builder or ModelBuilder()
        pi = np.zeros(n_states, dtype=np.int64) if policy is None else np.asarray(policy, dtype=np.int64).copy()
        return cls(
            rbar=np.zeros((n_states, n_actions)),
            value=np.zeros(n_states),
            policy=pi,
            counts=CountTable.empty(n_states, n_actions),
            model=builder.initial(n_states, n_actions),
            q=np.zeros((n_states, n_actions)),
        )

    def to_dict(self) -> dict:
        return {
            "rbar": self.rbar.tolist(),
            "value": self.value.tolist(),
            "policy": self.policy.tolist(),
            "counts": self.counts.to_dict(),
            "model": self.model.tolist(),
            "step": self.step,
            "q": None if self.q is None else self.q.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerState":
        return cls(
            rbar=np.asarray(d["rbar"], dtype=float),
            value=np.asarray(d["value"], dtype=float),
            policy=np.asarray(d["policy"], dtype=np.int64),
            counts=CountTable.from_dict(d["counts"]),
            model=np.asarray(d["model"], dtype=float),
            step=int(d["step"]),
            q=None if d.get("q") is None else np.asarray(d["q"], dtype=float),
        )


def _solve_model(state: LearnerState, reward: np.ndarray, discount: float, mode: str, pi_eval):
    if mode == "control":
        v, pi, _ = kernels.control_solve(state.model, reward, discount, state.policy)
        state.value, state.policy = v, np.asarray(pi, dtype=np.int64)
    else:
        idx = np.arange(state.model.shape[0])
        A = np.eye(len(idx)) - discount * state.model[idx, pi_eval]
        state.value = np.linalg.solve(A, reward[idx, pi_eval])


def _plan(state: LearnerState, reward, discount, mode, pi_eval, x, a, inner):
    """Refresh V (and pi) after the (x, a) entries of the model/reward moved."""
    if inner == "exact":
        if mode == "control":
            if a != state.policy[x]:
                # V^pi does not depend on row (x, a); re-plan only if x's argmax flips
                q_row = reward[x] + discount * state.model[x] @ state.value
                if np.argmax(q_row) == state.policy[x]:
                    return
            _solve_model(state, reward, discount, mode, pi_eval)
        elif a == pi_eval[x]:
            _solve_model(state, reward, discount, mode, pi_eval)
        return
    u = state.value.copy()
    idx = np.arange(len(u))
    for _ in range(int(inner)):
        q = reward + discount * (state.model @ u)
        if mode == "control":
            state.policy = np.argmax(q, axis=1)
            u = q[idx, state.policy]
        else:
            u = q[idx, pi_eval]
    state.value = u


def _check_inner(inner):
    if inner == "exact":
        return inner
    if int(inner) < 1:
        raise ValueError("iterative inner solver needs L >= 1")
    return int(inner)


def _check_sample(state: LearnerState, x, a, xp):
    n, m = state.rbar.shape
    if not (0 <= x < n and 0 <= a < m and 0 <= xp < n):
        raise IndexError(f"sample ({x}, {a}, {xp}) out of range")


def osdyna_step(state: LearnerState, sample, discount: float, builder: ModelBuilder,
                mode: str = "control", policy=None, inner="exact", alpha: float = 0.1) -> LearnerState:
    """One OS-Dyna update with sample (x, a, r, x') and step size ``alpha``.

    The model row is refreshed first, the auxiliary-reward target uses the
    refreshed row and the previous V, then V is re-planned on (rbar, Phat).
    """
    x, a, r, xp = sample
    _check_sample(state, x, a, xp)
    inner = _check_inner(inner)
    pi_eval = None if policy is None else np.asarray(policy, dtype=np.int64)
    if mode == "pe" and pi_eval is None:
        raise ValueError("policy evaluation needs a policy")
    state.counts.counts[x, a, xp] += 1
    builder.refresh_row(state.model, state.counts, x, a)
    ev = float(state.model[x, a] @ state.value)
    target = r + discount * state.value[xp] - discount * ev
    state.rbar[x, a] += alpha * (target - state.rbar[x, a])
    _plan(state, state.rbar, discount, mode, pi_eval, x, a, inner)
    state.step += 1
    return state


def dyna_step(state: LearnerState, sample, reward: np.ndarray, discount: float, builder: ModelBuilder,
              mode: str = "control", policy=None) -> LearnerState:
    """Dyna: update the model, then solve (X, A, r, Phat) exactly with the true reward."""
    x, a, _, xp = sample
    _check_sample(state, x, a, xp)
    pi_eval = None if policy is None else np.asarray(policy, dtype=np.int64)
    if mode == "pe" and pi_eval is None:
        raise ValueError("policy evaluation needs a policy")
    state.counts.counts[x, a, xp] += 1
    builder.refresh_row(state.model, state.counts, x, a)
    _plan(state, reward, discount, mode, pi_eval, x, a, "exact")
    state.step += 1
    return state


def q_learning_step(state: LearnerState, sample, discount: float, alpha: float) -> LearnerState:
    x, a, r, xp = sample
    _check_sample(state, x, a, xp)
    q = state.q
    q[x, a] += alpha * (r + discount * q[xp].max() - q[x, a])
    state.step += 1
    return state


def td_learning_step(state: LearnerState, sample, discount: float, alpha: float) -> LearnerState:
    x, _, r, xp = sample
    v = state.value
    v[x] += alpha * (r + discount * v[xp] - v[x])
    state.step += 1
    return state


@dataclass
class LearnerRun:
    """Snapshots every ``record_every`` steps plus the final state."""

    steps: np.ndarray
    policies: np.ndarray | None
    values: np.ndarray | None
    state: LearnerState
    meta: dict = field(default_factory=dict)


def draw_samples(mdp: TabularMdp, n_steps: int, rng: np.random.Generator, policy=None,
                 sampler: str = "uniform"):
    """(xs, acts, rewards, nexts). Uniform restarts over (x, a), or over x with
    a = pi(x) when ``policy`` is given. ``sampler="trajectory"`` follows one
    long trajectory from state 0 instead."""
    n, m = mdp.n_states, mdp.n_actions
    pi = None if policy is None else np.asarray(policy, dtype=np.int64)
    if sampler == "uniform":
        xs = rng.integers(n, size=n_steps)
        acts = rng.integers(m, size=n_steps) if pi is None else pi[xs]
        rewards, nexts = sample_batch(mdp, xs, acts, rng)
        return xs.astype(np.int64), acts.astype(np.int64), rewards, nexts
    if sampler != "trajectory":
        raise ValueError(f"unknown sampler {sampler!r}")
    xs = np.empty(n_steps, dtype=np.int64)
    acts = np.empty(n_steps, dtype=np.int64)
    nexts = np.empty(n_steps, dtype=np.int64)
    x = 0
    for t in range(n_steps):
        a = int(rng.integers(m)) if pi is None else int(pi[x])
        _, xp = sample_batch(mdp, np.array([x]), np.array([a]), rng)
        xs[t], acts[t], nexts[t] = x, a, xp[0]
        x = int(xp[0])
    return xs, acts, mdp.reward[xs, acts].copy(), nexts


def _policy_actions(policy):
    if policy is None:
        return None
    if isinstance(policy, Policy):
        return policy.actions.astype(np.int64)
    return np.asarray(policy, dtype=np.int64)


def run_model_learner(
    mdp: TabularMdp,
    n_steps: int,
    seed: int,
    algorithm: str = "osdyna",
    schedule: Schedule | None = None,
    builder: ModelBuilder | None = None,
    mode: str = "control",
    policy=None,
    inner="exact",
    record_every: int = 1000,
    sampler: str = "uniform",
    use_numba: bool | None = None,
) -> LearnerRun:
    """OS-Dyna (``algorithm="osdyna"``) or Dyna (``"dyna"``)."""
    if algorithm not in ("osdyna", "dyna"):
        raise ValueError(f"unknown model-based learner {algorithm!r}")
    if mode not in ("pe", "control"):
        raise ValueError("mode must be 'pe' or 'control'")
    pi_eval = _policy_actions(policy)
    if mode == "pe" and pi_eval is None:
        raise ValueError("policy evaluation needs a policy")
    builder = builder or ModelBuilder()
    schedule = schedule or Schedule()
    inner = _check_inner(inner)
    if algorithm == "dyna":
        inner = "exact"
    n, m = mdp.n_states, mdp.n_actions
    rng = np.random.default_rng(seed)
    xs, acts, rewards, nexts = draw_samples(mdp, n_steps, rng, pi_eval if mode == "pe" else None, sampler)
    alphas = schedule_rates(schedule, n_steps)
    use_numba = USE_NUMBA if use_numba is None else use_numba
    use_rbar = algorithm == "osdyna"
    steps = np.arange(record_every, n_steps + 1, record_every)

    if use_numba:
        kind = kernels.MODEL_FROZEN if builder.kind == "frozen" else kernels.MODEL_SMOOTHED_MLE
        pe_pi = pi_eval if pi_eval is not None else np.zeros(n, dtype=np.int64)
        rec_pi, rec_v, rbar, v, pi, counts = kernels.model_learner_run_nb(
            np.ascontiguousarray(mdp.reward), mdp.discount, xs, acts, rewards, nexts, alphas,
            float(builder.lam), kind, np.ascontiguousarray(builder.initial(n, m)), use_rbar,
            mode == "control", pe_pi, 0 if inner == "exact" else int(inner), record_every,
        )
        state = LearnerState.initial(n, m, builder, pe_pi if mode == "pe" else None)
        state.rbar, state.value, state.policy = rbar, v, pi
        state.counts = CountTable(counts)
        state.model = _rebuild_model(builder, state.counts, n, m)
        state.step = n_steps
        return LearnerRun(steps, rec_pi, rec_v, state)

    state = LearnerState.initial(n, m, builder, pi_eval if mode == "pe" else None)
    reward = state.rbar if use_rbar else np.array(mdp.reward, dtype=float)
    if inner == "exact":
        _solve_model(state, reward, mdp.discount, mode, pi_eval)
    rec_pi = np.empty((len(steps), n), dtype=np.int64)
    rec_v = np.empty((len(steps), n))
    j = 0
    for t in range(n_steps):
        sample = (int(xs[t]), int(acts[t]), float(rewards[t]), int(nexts[t]))
        if use_rbar:
            osdyna_step(state, sample, mdp.discount, builder, mode, pi_eval, inner, alphas[t])
        else:
            dyna_step(state, sample, reward, mdp.discount, builder, mode, pi_eval)
        if (t + 1) % record_every == 0:
            rec_pi[j], rec_v[j] = state.policy, state.value
            j += 1
    if not use_rbar:
        state.rbar = reward.copy()
    return LearnerRun(steps, rec_pi, rec_v, state)


def _rebuild_model(builder: ModelBuilder, counts: CountTable, n, m):
    if builder.kind == "frozen":
        return builder.initial(n, m)
    return smoothed_mle_kernel(counts, builder.lam)


def run_q_learning(mdp: TabularMdp, n_steps: int, seed: int, schedule: Schedule | None = None,
                   record_every: int = 1000, sampler: str = "uniform",
                   use_numba: bool | None = None) -> LearnerRun:
    schedule = schedule or preset("qlearning", "delayed")
    n, m = mdp.n_states, mdp.n_actions
    rng = np.random.default_rng(seed)
    xs, acts, rewards, nexts = draw_samples(mdp, n_steps, rng, None, sampler)
    alphas = schedule_rates(schedule, n_steps)
    steps = np.arange(record_every, n_steps + 1, record_every)
    use_numba = USE_NUMBA if use_numba is None else use_numba
    state = LearnerState.initial(n, m)
    if use_numba:
        rec_pi, q = kernels.q_learning_run_nb(n, m, mdp.discount, xs, acts, rewards, nexts, alphas, record_every)
        state.q = q
    else:
        rec_pi = np.empty((len(steps), n), dtype=np.int64)
        j = 0
        for t in range(n_steps):
            q_learning_step(state, (int(xs[t]), int(acts[t]), float(rewards[t]), int(nexts[t])),
                            mdp.discount, alphas[t])
            if (t + 1) % record_every == 0:
                rec_pi[j] = np.argmax(state.q, axis=1)
                j += 1
    state.step = n_steps
    state.policy = np.argmax(state.q, axis=1)
    state.value = state.q.max(axis=1)
    return LearnerRun(steps, rec_pi, None, state)


def run_td(mdp: TabularMdp, policy, n_steps: int, seed: int, schedule: Schedule | None = None,
           record_every: int = 1000, sampler: str = "uniform", use_numba: bool | None = None) -> LearnerRun:
    schedule = schedule or preset("td", "constant")
    pi = _policy_actions(policy)
    n, m = mdp.n_states, mdp.n_actions
    rng = np.random.default_rng(seed)
    xs, acts, rewards, nexts = draw_samples(mdp, n_steps, rng, pi, sampler)
    alphas = schedule_rates(schedule, n_steps)
    steps = np.arange(record_every, n_steps + 1, record_every)
    use_numba = USE_NUMBA if use_numba is None else use_numba
    state = LearnerState.initial(n, m, policy=pi)
    if use_numba:
        rec_v, v = kernels.td_run_nb(n, mdp.discount, xs, rewards, nexts, alphas, record_every)
        state.value = v
    else:
        rec_v = np.empty((len(steps), n))
        j = 0
        for t in range(n_steps):
            td_learning_step(state, (int(xs[t]), int(acts[t]), float(rewards[t]), int(nexts[t])),
                             mdp.discount, alphas[t])
            if (t + 1) % record_every == 0:
                rec_v[j] = state.value
                j += 1
    state.step = n_steps
    return LearnerRun(steps, None, rec_v, state)
