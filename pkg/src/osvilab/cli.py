"""Command line entry point: ``osvilab <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import envs, harness
from .io import load_mdp, save_mdp
from .mdp import Policy, solve_control_exact, solve_pe_direct

log = logging.getLogger("osvilab")


def _load_config(args, **fixed) -> harness.ExperimentConfig:
    """Flags first, then the optional JSON config file on top."""
    d = {
        "env": args.env,
        "algorithm": fixed.get("algorithm", getattr(args, "algorithm", None)),
        "mode": args.mode,
        "model": args.model,
        "seeds": args.seed if args.seed is not None else [0],
        "out": args.out,
        "rho": args.rho,
    }
    for key in ("iterations", "steps", "schedule", "m", "record_every", "sampler"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    if getattr(args, "inner", None) is not None:
        d["inner"] = int(args.inner) if args.inner.isdigit() else args.inner
    if getattr(args, "env_args", None):
        d["env_overrides"] = json.loads(args.env_args)
    if args.config:
        d.update(json.loads(Path(args.config).read_text()))
    d.update({k: v for k, v in fixed.items() if v is not None})
    return harness.ExperimentConfig.from_dict(d)


def _common(p, model_default="smooth:0.1", mode_default="control"):
    p.add_argument("--env", default="cliffwalk", choices=["cliffwalk", "maze", "garnet", "two-state"])
    p.add_argument("--env-args", help="JSON object of environment overrides")
    p.add_argument("--mode", default=mode_default, choices=["pe", "control"])
    p.add_argument("--model", default=model_default, help="exact | smooth:L | selfloop:L | mle | smoothed-mle:L")
    p.add_argument("--seed", type=int, nargs="+", help="one or more seeds")
    p.add_argument("--out", help="output path; writes <out>.csv and <out>.json")
    p.add_argument("--rho", default="uniform", help="uniform | point:x")
    p.add_argument("--config", help="JSON config file, overrides flags")


def _summary_line(result):
    print(json.dumps(result.summary, default=harness._jsonable, indent=2))


def cmd_solve(args):
    cfg = _load_config(args, algorithm=args.algorithm)
    result = harness.run_experiment(cfg)
    if not cfg.out:
        print(harness.records_to_csv(result.records), end="")
    _summary_line(result)


def cmd_osvi(args):
    cfg = _load_config(args, algorithm="osvi")
    result = harness.run_experiment(cfg)
    if not cfg.out:
        print(harness.records_to_csv(result.records), end="")
    _summary_line(result)


def cmd_learn(args):
    if args.seed is None or args.out is None:
        raise SystemExit("learn: --seed and --out are required")
    cfg = _load_config(args, algorithm=args.algorithm)
    result = harness.run_experiment(cfg)
    _summary_line(result)


def cmd_sweep(args):
    cfg = _load_config(args, algorithm="osvi")
    lambdas = [float(x) for x in args.lambdas.split(",")]
    ks = [int(k) for k in args.record.split(",")]
    result = harness.lambda_sweep(cfg, lambdas, ks)
    if not cfg.out:
        print(harness.records_to_csv(result.records), end="")
    _summary_line(result)


def cmd_analyze(args):
    cfg = _load_config(args, algorithm="osvi")
    mdp, policy = harness.build_env(cfg, cfg.seeds[0])
    pair = harness.build_pair(mdp, cfg.model)
    if cfg.mode == "pe":
        target = policy
    else:
        target = solve_control_exact(mdp)[1]
    out = {"policy_report": harness.analyze(pair, target, cfg.rho, cfg.mode)["report"]}
    if args.run:
        from .varga import osvi

        traj = osvi(pair, cfg.mode, policy, outer_iters=cfg.iterations)
        res = harness.analyze(pair, traj, cfg.rho, cfg.mode, policy=policy)
        out["run_report"] = res["report"]
        for norm in ("sup", "l4"):
            chk = res[norm]
            out[f"bound_{norm}"] = {"holds": chk.holds, "vacuous": chk.vacuous,
                                    "min_slack": float(np.min(chk.slack)) if len(chk.slack) else None}
    text = json.dumps(out, indent=2, default=harness._jsonable)
    if cfg.out:
        Path(cfg.out).with_suffix(".json").write_text(text)
    print(text)


def cmd_garnet(args):
    spec = envs.GarnetSpec(args.n_states, args.n_actions, args.branching, args.reward_states,
                           args.discount, args.seed)
    mdp = envs.build_garnet(spec)
    save_mdp(mdp, args.out)
    print(f"wrote {args.out}")


def cmd_eval(args):
    """Exact solves of an MDP stored on disk."""
    mdp = load_mdp(args.mdp)
    v, pi = solve_control_exact(mdp)
    out = {"v_star": v.tolist(), "pi_star": pi.actions.tolist()}
    if args.policy:
        actions = json.loads(args.policy)
        out["v_pi"] = solve_pe_direct(mdp, Policy.deterministic(actions, mdp.n_actions)).tolist()
    print(json.dumps(out))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osvilab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact planners: vi, pi, mpi")
    _common(p)
    p.add_argument("--algorithm", default="vi", choices=["vi", "pi", "mpi"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--m", type=int, help="MPI backups per iteration")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("osvi", help="operator splitting value iteration")
    _common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--inner", help="exact | vi | L (number of inner backups)")
    p.set_defaults(func=cmd_osvi)

    p = sub.add_parser("learn", help="sample-based learners")
    _common(p, model_default="smoothed-mle:0.5")
    p.add_argument("--algorithm", default="osdyna", choices=["osdyna", "dyna", "qlearning", "td"])
    p.add_argument("--steps", type=int)
    p.add_argument("--schedule", help="constant:A | delayed:A:N | rescaled:A:U (default: tuned preset)")
    p.add_argument("--inner", help="exact | L")
    p.add_argument("--record-every", type=int)
    p.add_argument("--sampler", choices=["uniform", "trajectory"])
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("sweep", help="OS-VI errors across a lambda grid")
    _common(p, model_default="selfloop", mode_default="pe")
    p.add_argument("--lambdas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
    p.add_argument("--record", default="1,3,5,7,9")
    p.add_argument("--inner", help="exact | vi | L")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="effective discount factors and bound checks")
    _common(p)
    p.add_argument("--run", action="store_true", help="also run OS-VI and check the error bounds")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("garnet-gen", help="write a Garnet MDP as JSON")
    p.add_argument("--n-states", type=int, default=50)
    p.add_argument("--n-actions", type=int, default=4)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--reward-states", type=int, default=5)
    p.add_argument("--discount", type=float, default=0.99)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_garnet)

    p = sub.add_parser("eval", help="exact V*/pi* (and V^pi) of an MDP file")
    p.add_argument("mdp")
    p.add_argument("--policy", help="JSON list of actions")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
