"""Experiment configuration, runners, metrics and CSV/JSON emission."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .learners import (
    ModelBuilder,
    Schedule,
    preset,
    run_model_learner,
    run_q_learning,
    run_td,
)
from .mdp import (
    Policy,
    TabularMdp,
    modified_policy_iteration,
    policy_iteration,
    solve_control_exact,
    solve_pe_direct,
    value_iteration,
)
from .models import selfloop_model, smooth_model
from .varga import (
    ModelPair,
    check_theorem_bounds,
    effective_discount,
    max_report,
    osvi,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("vi", "pi", "mpi", "osvi", "dyna", "osdyna", "qlearning", "td")
LEARNERS = ("dyna", "osdyna", "qlearning", "td")
MODEL_KINDS = ("exact", "smooth", "selfloop", "mle", "smoothed-mle")
CSV_HEADER = ("run_id", "seed", "step", "metric", "value")


def normalized_error(v, v_ref) -> float:
    """||v - v_ref||_1 / ||v_ref||_1."""
    v_ref = np.asarray(v_ref, dtype=float)
    denom = np.abs(v_ref).sum()
    if denom == 0.0:
        raise ValueError("reference value has zero L1 norm")
    return float(np.abs(np.asarray(v, dtype=float) - v_ref).sum() / denom)


def parse_model(text: str):
    """``exact``, ``mle``, ``smooth:0.1``, ``selfloop:0.5``, ``smoothed-mle:0.5``."""
    kind, _, lam = text.partition(":")
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model {text!r}")
    lam = float(lam) if lam else 0.0
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return kind, lam


def parse_rho(spec, n: int) -> np.ndarray:
    """``uniform``, ``point:x`` or an explicit list."""
    if spec is None or spec == "uniform":
        return np.full(n, 1.0 / n)
    if isinstance(spec, str) and spec.startswith("point:"):
        rho = np.zeros(n)
        rho[int(spec.split(":")[1])] = 1.0
        return rho
    rho = np.asarray(spec, dtype=float)
    if rho.shape != (n,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-10:
        raise ValueError("rho must be a distribution over states")
    return rho


@dataclass
class ExperimentConfig:
    env: str = "cliffwalk"
    env_overrides: dict = field(default_factory=dict)
    algorithm: str = "osvi"
    mode: str = "control"
    model: str = "smooth:0.1"
    schedule: str | None = None
    iterations: int = 100
    steps: int = 200_000
    seeds: list = field(default_factory=lambda: [0])
    out: str | None = None
    rho: object = "uniform"
    inner: object = "exact"
    m: int = 1
    record_every: int = 1000
    sampler: str = "uniform"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in ("pe", "control"):
            raise ValueError(f"mode must be 'pe' or 'control', got {self.mode!r}")
        if self.algorithm == "td" and self.mode != "pe":
            raise ValueError("td is a policy-evaluation method")
        if self.algorithm == "qlearning" and self.mode != "control":
            raise ValueError("qlearning is a control method")
        if self.algorithm in ("pi", "mpi") and self.mode != "control":
            raise ValueError(f"{self.algorithm} is a control method")
        parse_model(self.model)
        if self.schedule is not None:
            Schedule.parse(self.schedule)
        if self.iterations < 0 or self.steps < 0:
            raise ValueError("budgets must be non-negative")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.env not in ("cliffwalk", "maze", "garnet", "two-state"):
            raise ValueError(f"unknown environment {self.env!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, default=str).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunResult:
    """Long-format metric records plus a JSON-compatible summary."""

    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, run_id, seed, step, metric, value):
        self.records.append((str(run_id), int(seed), int(step), str(metric), float(value)))

    def series(self, metric, run_id=None):
        rows = [r for r in self.records if r[3] == metric and (run_id is None or r[0] == run_id)]
        return np.array([r[2] for r in rows]), np.array([r[4] for r in rows])


def records_to_csv(records) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for run_id, seed, step, metric, value in records:
        w.writerow((run_id, seed, step, metric, repr(float(value))))
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("missing or wrong CSV header")
    return [(r[0], int(r[1]), int(r[2]), r[3], float(r[4])) for r in rows[1:]]


def write_result(result: RunResult, out):
    """``out.csv`` gets the records, ``out.json`` the summary."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    base = out.with_suffix("")
    base.with_suffix(".csv").write_text(records_to_csv(result.records))
    base.with_suffix(".json").write_text(json.dumps(result.summary, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o)}")


def build_env(config: ExperimentConfig, seed: int):
    overrides = dict(config.env_overrides)
    if config.env == "garnet":
        overrides.setdefault("seed", seed)
    return envs.make_env(config.env, **overrides)


def build_pair(mdp: TabularMdp, model: str) -> ModelPair:
    kind, lam = parse_model(model)
    if kind == "exact":
        return ModelPair(mdp, mdp.transition)
    if kind == "smooth":
        return smooth_model(mdp, lam)
    if kind == "selfloop":
        return selfloop_model(mdp, lam)
    raise ValueError(f"planner needs a fixed model, got {model!r}")


def _references(mdp, mode, policy):
    v_star, pi_star = solve_control_exact(mdp)
    v_ref = solve_pe_direct(mdp, policy) if mode == "pe" else v_star
    return v_ref, v_star, pi_star


def _run_planner(config: ExperimentConfig, mdp, policy, seed, result: RunResult, run_id):
    v_ref, v_star, pi_star = _references(mdp, config.mode, policy)
    summary = {}
    K = config.iterations
    alg = config.algorithm
    if alg == "vi":
        traj = value_iteration(mdp, config.mode, policy, iters=K, v_ref=v_ref)
    elif alg == "pi":
        traj = policy_iteration(mdp, Policy.deterministic(np.zeros(mdp.n_states, dtype=int), mdp.n_actions),
                                iters=K, v_star=v_star)
    elif alg == "mpi":
        traj = modified_policy_iteration(mdp, m=config.m, iters=K, v_star=v_star)
    else:
        pair = build_pair(mdp, config.model)
        traj = osvi(pair, config.mode, policy, outer_iters=K, inner=config.inner, v_ref=v_ref)
        model_mdp = pair.model_mdp()
        if config.mode == "pe":
            v_model = solve_pe_direct(model_mdp, policy)
        else:
            v_model = solve_pe_direct(mdp, solve_control_exact(model_mdp)[1])
        baseline = normalized_error(v_model, v_ref)
        summary["model_only_error"] = baseline
        rep_policy = policy if config.mode == "pe" else pi_star
        rho = parse_rho(config.rho, mdp.n_states)
        summary["effective_discount"] = effective_discount(pair, rep_policy, rho, config.mode == "control").to_dict()
        for k in range(traj.n_iterations + 1):
            result.add(run_id, seed, k, "model_only_error", baseline)
    for k, v in enumerate(traj.values):
        step = traj.queries[k]
        result.add(run_id, seed, step, "normalized_error", normalized_error(v, v_ref))
        result.add(run_id, seed, step, "sup_error", traj.errors[k])
    pol_err = traj.metrics.get("policy_errors")
    if alg == "osvi" and pol_err is not None:
        for k, pi_k in enumerate(traj.policies, start=1):
            result.add(run_id, seed, traj.queries[k], "policy_normalized_error",
                       normalized_error(solve_pe_direct(mdp, pi_k), v_star))
    summary.update(diverged=bool(traj.diverged), iterations=traj.n_iterations,
                   final_sup_error=float(traj.errors[-1]), queries=int(traj.queries[-1]))
    return summary


def _schedule_for(config: ExperimentConfig, lam: float) -> Schedule:
    if config.schedule is not None:
        return Schedule.parse(config.schedule)
    alg = config.algorithm
    if alg == "qlearning":
        return preset("qlearning", "delayed")
    if alg == "td":
        return preset("td", "constant")
    if config.mode == "pe":
        return preset("osdyna-pe", "constant")
    try:
        return preset("osdyna", "delayed", lam)
    except KeyError:
        return preset("osdyna", "delayed", 0.5)


def _run_learner(config: ExperimentConfig, mdp, policy, seed, result: RunResult, run_id):
    v_ref, v_star, pi_star = _references(mdp, config.mode, policy)
    kind, lam = parse_model(config.model)
    if kind == "exact":
        builder = ModelBuilder("frozen", frozen=mdp.transition)
    elif kind in ("mle", "smoothed-mle"):
        builder = ModelBuilder("smoothed-mle", lam=lam)
    else:
        builder = ModelBuilder("frozen", frozen=build_pair(mdp, config.model).approx_transition)
    sched = _schedule_for(config, lam)
    alg = config.algorithm
    kw = dict(record_every=config.record_every, sampler=config.sampler)
    if alg == "qlearning":
        run = run_q_learning(mdp, config.steps, seed, sched, **kw)
    elif alg == "td":
        run = run_td(mdp, policy, config.steps, seed, sched, **kw)
    else:
        run = run_model_learner(mdp, config.steps, seed, alg, sched, builder, config.mode,
                                policy if config.mode == "pe" else None, config.inner, **kw)
    start = 0
    q_star = mdp.reward + mdp.discount * (mdp.transition @ v_star)
    summary = {} if alg == "dyna" else {"schedule": sched.to_dict()}
    for j, step in enumerate(run.steps):
        if config.mode == "control":
            pi_t = run.policies[j]
            v_pi = solve_pe_direct(mdp, Policy.deterministic(pi_t, mdp.n_actions))
            result.add(run_id, seed, step, "value_start", v_pi[start])
            result.add(run_id, seed, step, "policy_optimal", float(is_optimal(pi_t, q_star, v_star)))
        else:
            result.add(run_id, seed, step, "normalized_error", normalized_error(run.values[j], v_ref))
    if config.mode == "control":
        final = run.state.policy
        summary.update(
            final_value_start=float(solve_pe_direct(mdp, Policy.deterministic(final, mdp.n_actions))[start]),
            optimal_value_start=float(v_star[start]),
            final_policy_optimal=bool(is_optimal(final, q_star, v_star)),
            final_policy_exact_match=bool(np.array_equal(final, pi_star.actions)),
            final_policy=np.asarray(final).tolist(),
        )
    else:
        summary["final_normalized_error"] = normalized_error(run.state.value, v_ref)
    return summary


def is_optimal(actions, q_star, v_star, atol: float = 1e-9) -> bool:
    """True when every chosen action attains the optimal value (ties allowed)."""
    idx = np.arange(len(v_star))
    return bool(np.all(q_star[idx, np.asarray(actions)] >= v_star - atol))


def aggregate(result: RunResult, run_ids=None) -> RunResult:
    """Mean and standard error across runs, per (metric, step)."""
    groups = {}
    for run_id, _, step, metric, value in result.records:
        if run_id.startswith("aggregate") or (run_ids is not None and run_id not in run_ids):
            continue
        groups.setdefault((metric, step), []).append(value)
    out = RunResult()
    for (metric, step), vals in sorted(groups.items()):
        vals = np.asarray(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
        out.add("aggregate", -1, step, metric + "_mean", vals.mean())
        out.add("aggregate", -1, step, metric + "_stderr", se)
    return out


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Run the configured algorithm for every seed; write files when ``out`` is set."""
    config.validate()
    result = RunResult()
    runs = {}
    for seed in config.seeds:
        mdp, policy = build_env(config, seed)
        run_id = f"{config.algorithm}-{config.env}-s{seed}"
        log.info("running %s", run_id)
        if config.algorithm in LEARNERS:
            runs[run_id] = _run_learner(config, mdp, policy, seed, result, run_id)
        else:
            runs[run_id] = _run_planner(config, mdp, policy, seed, result, run_id)
    if len(config.seeds) > 1:
        result.records += aggregate(result).records
    result.summary = {
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "runs": runs,
        "any_diverged": any(r.get("diverged", False) for r in runs.values()),
    }
    if config.out:
        write_result(result, config.out)
    return result


def _monotone_violation(errs, atol=1e-9) -> bool:
    errs = np.asarray(errs, dtype=float)
    if not np.all(np.isfinite(errs)):
        return True
    return bool(np.any(errs[1:] > errs[:-1] + atol * (1.0 + errs[:-1])))


def lambda_sweep(config: ExperimentConfig, lambdas, iterations_to_record=(1, 3, 5, 7, 9)) -> RunResult:
    """OS-VI errors at selected iterations across a grid of model perturbations.

    ``config.model`` picks the family (``smooth`` or ``selfloop``; its lambda
    is ignored). A lambda is flagged divergent when the run blew up or when a
    later recorded iteration has a larger error than an earlier one.
    """
    kind, _ = parse_model(config.model)
    if kind not in ("smooth", "selfloop"):
        raise ValueError("sweeps need a smooth or selfloop model family")
    ks = sorted(int(k) for k in iterations_to_record)
    seed = config.seeds[0]
    mdp, policy = build_env(config, seed)
    v_ref, _, _ = _references(mdp, config.mode, policy)
    result = RunResult()
    flags = {}
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        pair = build_pair(mdp, f"{kind}:{lam}")
        traj = osvi(pair, config.mode, policy, outer_iters=max(ks), inner=config.inner, v_ref=v_ref)
        errs = []
        for k in ks:
            e = normalized_error(traj.values[k], v_ref) if k < len(traj.values) else float("inf")
            errs.append(e)
            result.add(f"lambda={lam:g}", seed, k, "normalized_error", e if np.isfinite(e) else 1e300)
        diverged = bool(traj.diverged or _monotone_violation(errs))
        flags[f"{lam:g}"] = diverged
        result.add(f"lambda={lam:g}", seed, 0, "diverged", float(diverged))
    result.summary = {"config": config.to_dict(), "lambdas": list(map(float, lambdas)),
                      "iterations": ks, "diverged": flags}
    if config.out:
        write_result(result, config.out)
    return result


def analyze(pair: ModelPair, policy_or_run, rho=None, mode: str = "pe", policy: Policy | None = None,
            v_ref=None) -> dict:
    """Effective-discount report and, for a finished exact-inner OS-VI run, the
    theorem-bound verdicts in both norms.

    For control the report is the max over {pi*} and the S-improved policies
    seen up to each iteration.
    """
    mdp = pair.true_mdp
    n = mdp.n_states
    rho = parse_rho(rho, n)
    if isinstance(policy_or_run, Policy):
        rep = effective_discount(pair, policy_or_run, rho, control=mode == "control")
        return {"report": rep.to_dict()}
    traj = policy_or_run
    if mode == "pe":
        if policy is None:
            raise ValueError("policy evaluation analysis needs the evaluated policy")
        rep = effective_discount(pair, policy, rho)
        v_ref = solve_pe_direct(mdp, policy) if v_ref is None else v_ref
        sup = check_theorem_bounds(traj, rep, norm="sup", v_ref=v_ref, mode="pe")
        l4 = check_theorem_bounds(traj, rep, norm="l4", rho=rho, v_ref=v_ref, mode="pe")
        return {"report": rep.to_dict(), "sup": sup, "l4": l4}
    v_star, pi_star = solve_control_exact(mdp)
    v_ref = v_star if v_ref is None else v_ref
    cache = {pi_star: effective_discount(pair, pi_star, rho, control=True)}
    per_k = []
    seen = [pi_star]
    for pi_k in traj.policies:
        if pi_k not in cache:
            cache[pi_k] = effective_discount(pair, pi_k, rho, control=True)
        seen.append(pi_k)
        per_k.append(max_report([cache[p] for p in seen], mdp.discount))
    traj.metrics.setdefault("policy_values", [solve_pe_direct(mdp, p) for p in traj.policies])
    sup = check_theorem_bounds(traj, per_k, norm="sup", v_ref=v_ref, mode="control")
    l4 = check_theorem_bounds(traj, per_k, norm="l4", rho=rho, v_ref=v_ref, mode="control")
    final = per_k[-1] if per_k else cache[pi_star]
    return {"report": final.to_dict(), "per_iteration": [r.to_dict() for r in per_k], "sup": sup, "l4": l4}
