"""Operator splitting value iteration.

The Varga operator of a policy ``pi`` for a true kernel P and a model Phat is

    S^pi V = (I - gamma Phat^pi)^{-1} [r^pi + gamma (P^pi - Phat^pi) V],

i.e. the value of ``pi`` in the auxiliary MDP (X, A, rbar_V, Phat, gamma)
with rbar_V = r + gamma (P - Phat) V. OS-VI iterates S^pi (evaluation) or
S* = max_pi S^pi (control). Each outer iteration needs one batch of
expectations under P; everything else runs on the model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .kernels import control_solve
from .mdp import (
    Policy,
    TabularMdp,
    Trajectory,
    check_stochastic,
    check_value,
    policy_kernel,
    policy_reward,
    solve_control_exact,
    solve_linear_pe,
    solve_pe_direct,
)

DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class ModelPair:
    """True MDP plus an approximate transition kernel on the same spaces."""

    true_mdp: TabularMdp
    approx_transition: np.ndarray

    def __post_init__(self):
        Phat = np.array(self.approx_transition, dtype=float)
        if Phat.shape != self.true_mdp.transition.shape:
            raise ValueError(
                f"model shape {Phat.shape} does not match MDP {self.true_mdp.transition.shape}"
            )
        check_stochastic(Phat, "approx_transition")
        Phat.setflags(write=False)
        object.__setattr__(self, "approx_transition", Phat)

    @property
    def discount(self) -> float:
        return self.true_mdp.discount

    @property
    def n_states(self) -> int:
        return self.true_mdp.n_states

    def model_mdp(self) -> TabularMdp:
        """(X, A, r, Phat, gamma): what a purely model-based planner solves."""
        return self.true_mdp.with_transition(self.approx_transition)

    def kernels(self, policy: Policy):
        """(P^pi, Phat^pi)."""
        return (policy_kernel(self.true_mdp.transition, policy),
                policy_kernel(self.approx_transition, policy))


@dataclass(frozen=True)
class AuxiliaryMdp:
    base: TabularMdp
    source_value: np.ndarray


@dataclass
class EffectiveDiscountReport:
    gamma_prime_sup: float
    gamma_prime_l4: float
    g_norm_sup: float
    convergent_sup: bool
    faster_than_vi: bool

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v) for k, v in asdict(self).items()}


def _parse_inner(inner):
    """``"exact"`` | ``"vi"`` | ``("iterative", L)`` | int L."""
    if inner in ("exact", "vi"):
        return inner, 0
    if isinstance(inner, (int, np.integer)):
        L = int(inner)
    elif isinstance(inner, tuple) and len(inner) == 2 and inner[0] == "iterative":
        L = int(inner[1])
    else:
        raise ValueError(f"unknown inner solver {inner!r}")
    if L < 1:
        raise ValueError("iterative inner solver needs L >= 1")
    return "iterative", L


def auxiliary_reward(pair: ModelPair, v) -> np.ndarray:
    """rbar_V(x,a) = r(x,a) + gamma sum_y (P - Phat)(y|x,a) V(y)."""
    v = check_value(v, pair.n_states)
    diff = pair.true_mdp.transition - pair.approx_transition
    return pair.true_mdp.reward + pair.discount * (diff @ v)


def auxiliary_mdp(pair: ModelPair, v) -> AuxiliaryMdp:
    v = check_value(v, pair.n_states)
    base = TabularMdp(pair.approx_transition, auxiliary_reward(pair, v), pair.discount)
    return AuxiliaryMdp(base, v.copy())


def varga_pe(pair: ModelPair, policy: Policy, v, inner="exact") -> np.ndarray:
    """S^pi v. Iterative mode runs L backups on the model starting from v."""
    kind, L = _parse_inner(inner)
    v = check_value(v, pair.n_states)
    rbar_pi = policy_reward(auxiliary_reward(pair, v), policy)
    Phat_pi = policy_kernel(pair.approx_transition, policy)
    if kind == "iterative":
        u = v.copy()
        for _ in range(L):
            u = rbar_pi + pair.discount * Phat_pi @ u
        return u
    return solve_linear_pe(Phat_pi, rbar_pi, pair.discount)


def _aux_control(aux: TabularMdp, v, kind, L, tol, max_iter, pi_start=None):
    if kind == "exact":
        start = np.zeros(aux.n_states, dtype=np.int64) if pi_start is None else pi_start
        u, actions, _ = control_solve(aux.transition, aux.reward, aux.discount, start)
        return u, actions
    u = v.copy()
    n_steps = L if kind == "iterative" else max_iter
    for _ in range(n_steps):
        q = aux.reward + aux.discount * (aux.transition @ u)
        actions = np.argmax(q, axis=1)
        u_new = q[np.arange(aux.n_states), actions]
        step = np.max(np.abs(u_new - u))
        u = u_new
        if kind == "vi" and step < tol:
            break
    return u, actions


def varga_control(pair: ModelPair, v, inner="exact", tol: float = 1e-10, max_iter: int = 10_000,
                  pi_start=None):
    """S* v and the S-improved policy (optimal in the auxiliary MDP).

    ``inner`` is ``"exact"`` (policy iteration), ``"vi"`` (value iteration to
    ``tol`` or ``max_iter`` sweeps) or an iteration count L.
    """
    kind, L = _parse_inner(inner)
    v = check_value(v, pair.n_states)
    aux = auxiliary_mdp(pair, v).base
    u, actions = _aux_control(aux, v, kind, L, tol, max_iter, pi_start)
    return u, Policy.deterministic(actions, aux.n_actions)


def osvi(
    pair: ModelPair,
    mode: str = "pe",
    policy: Policy | None = None,
    v0=None,
    outer_iters: int = 100,
    inner="exact",
    v_ref=None,
    tol: float = 1e-10,
    max_inner: int = 10_000,
) -> Trajectory:
    """OS-VI for evaluation or control.

    ``errors[k]`` is ||V_k - V_ref||_inf with V_ref = V^pi (PE) or V* (control).
    Control runs also record ``metrics["policy_errors"]`` (||V^{pi_k} - V*||_inf,
    one entry per outer iteration). Divergence is flagged, never raised.
    """
    if mode not in ("pe", "control"):
        raise ValueError(f"mode must be 'pe' or 'control', got {mode!r}")
    if mode == "pe" and policy is None:
        raise ValueError("policy evaluation needs a policy")
    _parse_inner(inner)
    mdp = pair.true_mdp
    v = np.zeros(mdp.n_states) if v0 is None else check_value(v0, mdp.n_states).copy()
    if v_ref is None:
        v_ref = solve_pe_direct(mdp, policy) if mode == "pe" else solve_control_exact(mdp)[0]
    traj = Trajectory(values=[v], errors=[np.max(np.abs(v - v_ref))], queries=[0])
    policy_errors = []
    pi_start = None
    for k in range(1, outer_iters + 1):
        if mode == "pe":
            v = varga_pe(pair, policy, v, inner)
        else:
            v, pi_k = varga_control(pair, v, inner, tol, max_inner, pi_start)
            pi_start = pi_k.actions
            traj.policies.append(pi_k)
            policy_errors.append(np.max(np.abs(solve_pe_direct(mdp, pi_k) - v_ref)))
        err = np.max(np.abs(v - v_ref))
        traj.values.append(v)
        traj.errors.append(err)
        traj.queries.append(k)
        if not np.isfinite(err) or err > DIVERGENCE_THRESHOLD:
            traj.diverged = True
            break
    if mode == "control":
        traj.metrics["policy_errors"] = policy_errors
    return traj


def gain_matrix(pair: ModelPair, policy: Policy) -> np.ndarray:
    """G^pi = (I - gamma Phat^pi)^{-1} gamma (P^pi - Phat^pi)."""
    P_pi, Phat_pi = pair.kernels(policy)
    g = pair.discount
    return np.linalg.solve(np.eye(pair.n_states) - g * Phat_pi, g * (P_pi - Phat_pi))


def gain_operator_norm(pair: ModelPair, policy: Policy) -> float:
    return float(np.max(np.abs(gain_matrix(pair, policy)).sum(axis=1)))


def _check_rho(rho, n: int) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (n,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-10:
        raise ValueError("rho must be a probability vector over states")
    return rho


def sup_kernel_distance(P_pi: np.ndarray, Phat_pi: np.ndarray) -> float:
    return float(np.max(np.abs(P_pi - Phat_pi).sum(axis=-1)))


def chi2_weighted(pair: ModelPair, policy: Policy, rho) -> float:
    """sum_x rho(x) sum_y (Phat^pi - P^pi)^2 / Phat^pi; +inf if P^pi is not
    absolutely continuous w.r.t. Phat^pi on a weighted row."""
    rho = _check_rho(rho, pair.n_states)
    P_pi, Phat_pi = pair.kernels(policy)
    diff = Phat_pi - P_pi
    total = 0.0
    for x in np.flatnonzero(rho > 0):
        zero = Phat_pi[x] == 0.0
        if np.any(zero & (diff[x] != 0.0)):
            return float("inf")
        pos = ~zero
        total += rho[x] * np.sum(diff[x, pos] ** 2 / Phat_pi[x, pos])
    return float(total)


def future_state_distribution(Phat_pi: np.ndarray, discount: float) -> np.ndarray:
    """eta_hat rows: (1 - gamma) (I - gamma Phat^pi)^{-1}."""
    n = Phat_pi.shape[0]
    return (1.0 - discount) * np.linalg.inv(np.eye(n) - discount * Phat_pi)


def concentrability(pair: ModelPair, policy: Policy, rho) -> float:
    """C_hat^pi(rho) = sqrt(gamma^-2 sum_x rho(x) (max_y eta_hat(y|x)/rho(y))^3)."""
    rho = _check_rho(rho, pair.n_states)
    _, Phat_pi = pair.kernels(policy)
    eta = future_state_distribution(Phat_pi, pair.discount)
    eta = np.where(np.abs(eta) < 1e-15, 0.0, eta)
    total = 0.0
    for x in np.flatnonzero(rho > 0):
        if np.any((eta[x] > 0) & (rho == 0)):
            return float("inf")
        pos = rho > 0
        total += rho[x] * np.max(eta[x, pos] / rho[pos]) ** 3
    g = pair.discount
    if g == 0.0:
        return float("inf")
    return float(np.sqrt(total / g**2))


def effective_discount(pair: ModelPair, policy: Policy, rho=None, control: bool = False
                       ) -> EffectiveDiscountReport:
    """Effective discount factors of one policy.

    The L4(rho) entry uses the extra sqrt(2) factor of the control bound when
    ``control`` is set. ``rho`` defaults to uniform; a rho with zero entries
    gives an infinite L4 factor.
    """
    n = pair.n_states
    rho = np.full(n, 1.0 / n) if rho is None else _check_rho(rho, n)
    g = pair.discount
    P_pi, Phat_pi = pair.kernels(policy)
    sup = g / (1.0 - g) * sup_kernel_distance(P_pi, Phat_pi)
    if np.any(rho <= 0):
        l4 = float("inf")
    else:
        chi2 = chi2_weighted(pair, policy, rho)
        coef = concentrability(pair, policy, rho)
        factor = np.sqrt(2.0) if control else 1.0
        l4 = g / (1.0 - g) * np.sqrt(factor * coef * chi2) if np.isfinite(chi2 * coef) else float("inf")
        if chi2 == 0.0:
            l4 = 0.0
    gnorm = gain_operator_norm(pair, policy)
    return EffectiveDiscountReport(
        gamma_prime_sup=float(sup),
        gamma_prime_l4=float(l4),
        g_norm_sup=float(gnorm),
        convergent_sup=bool(sup < 1.0),
        faster_than_vi=bool(sup < g),
    )


def max_report(reports, discount: float) -> EffectiveDiscountReport:
    """Worst case over a policy set (the Pi_k maximisation of the control bound)."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    sup = max(r.gamma_prime_sup for r in reports)
    return EffectiveDiscountReport(
        gamma_prime_sup=sup,
        gamma_prime_l4=max(r.gamma_prime_l4 for r in reports),
        g_norm_sup=max(r.g_norm_sup for r in reports),
        convergent_sup=sup < 1.0,
        faster_than_vi=sup < discount,
    )


def lp_norm(v, rho, p: int = 4) -> float:
    return float(np.sum(np.asarray(rho) * np.abs(v) ** p) ** (1.0 / p))


@dataclass
class BoundCheck:
    holds: bool
    vacuous: bool
    slack: np.ndarray
    bound: np.ndarray
    errors: np.ndarray


def pe_bound(gp: float, k, initial_error: float, eps_value: float = 0.0):
    k = np.asarray(k, dtype=float)
    if gp == 1.0:
        amp = k
    else:
        amp = (1.0 - gp**k) / (1.0 - gp)
    return gp**k * initial_error + amp * eps_value


def control_bound(gp: float, k, initial_error: float, eps_value: float = 0.0, eps_policy: float = 0.0):
    k = np.asarray(k, dtype=float)
    return (2.0 * gp**k / (1.0 - gp) * initial_error
            + 2.0 * gp * (1.0 - gp ** (k - 1)) / (1.0 - gp) ** 2 * eps_value
            + eps_policy / (1.0 - gp))


def check_theorem_bounds(
    trajectory: Trajectory,
    report,
    eps_value: float = 0.0,
    eps_policy: float | None = None,
    norm: str = "sup",
    rho=None,
    v_ref=None,
    mode: str = "pe",
    atol: float = 1e-9,
) -> BoundCheck:
    """Compare a finished OS-VI run with its theoretical error bound.

    ``report`` is one EffectiveDiscountReport, or for control a sequence with
    one report per outer iteration k (the max over Pi_k). PE checks
    ||V^pi - V_k|| for k >= 0; control checks ||V^{pi_k} - V*|| for k >= 1,
    which needs ``trajectory.metrics["policy_values"]`` when ``norm`` is l4,
    else uses ``metrics["policy_errors"]``. ``atol`` absorbs round-off once
    the error hits machine precision.
    """
    def _gp(r):
        return r.gamma_prime_sup if norm == "sup" else r.gamma_prime_l4

    if norm not in ("sup", "l4"):
        raise ValueError("norm must be 'sup' or 'l4'")
    if norm == "l4" and rho is None:
        raise ValueError("the l4 bound needs rho")
    if norm == "l4" or mode == "pe":
        if v_ref is None:
            raise ValueError("v_ref is required")

    def _norm(d):
        return float(np.max(np.abs(d))) if norm == "sup" else lp_norm(d, rho)

    values = trajectory.values
    init = _norm(values[0] - v_ref) if v_ref is not None else trajectory.errors[0]
    if mode == "pe":
        gp = _gp(report)
        ks = np.arange(len(values))
        errors = np.array([_norm(v - v_ref) for v in values])
        if gp >= 1.0:
            return BoundCheck(True, True, np.full(len(ks), np.inf), np.full(len(ks), np.inf), errors)
        bound = pe_bound(gp, ks, init, eps_value)
    else:
        reports = list(report) if isinstance(report, (list, tuple)) else [report] * (len(values) - 1)
        gps = np.array([_gp(r) for r in reports])
        ks = np.arange(1, len(values))
        if norm == "sup":
            errors = np.asarray(trajectory.metrics["policy_errors"], dtype=float)
        else:
            errors = np.array([_norm(pv - v_ref) for pv in trajectory.metrics["policy_values"]])
        if np.any(gps >= 1.0):
            return BoundCheck(True, True, np.full(len(ks), np.inf), np.full(len(ks), np.inf), errors)
        eps_pi = 0.0 if eps_policy is None else eps_policy
        bound = np.array([control_bound(g, k, init, eps_value, eps_pi) for g, k in zip(gps, ks)])
    slack = bound - errors
    return BoundCheck(bool(np.all(slack >= -atol)), False, slack, bound, errors)


def kl_model_bound(pair: ModelPair, policy: Policy) -> float:
    """max_x sqrt(2 KL(P^pi(.|x) || Phat^pi(.|x))), an upper bound on the
    sup-norm model error by Pinsker's inequality."""
    P_pi, Phat_pi = pair.kernels(policy)
    worst = 0.0
    for p, q in zip(P_pi, Phat_pi):
        pos = p > 0
        if np.any(q[pos] == 0.0):
            return float("inf")
        kl = float(np.sum(p[pos] * np.log(p[pos] / q[pos])))
        worst = max(worst, np.sqrt(2.0 * max(kl, 0.0)))
    return float(worst)
