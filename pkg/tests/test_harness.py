import json

import numpy as np
import pytest

from osvilab import harness
from osvilab.envs import build_two_state, make_env
from osvilab.harness import (
    ExperimentConfig,
    RunResult,
    aggregate,
    analyze,
    lambda_sweep,
    normalized_error,
    parse_model,
    parse_rho,
    records_from_csv,
    records_to_csv,
    run_experiment,
)
from osvilab.io import load_checkpoint, load_mdp, mdp_from_dict, mdp_to_dict, save_checkpoint, save_mdp
from osvilab.learners import LearnerState
from osvilab.mdp import Policy
from osvilab.models import smooth_model
from osvilab.varga import ModelPair, osvi


def test_normalized_error_examples():
    v = np.array([1.0, -2.0, 3.0])
    assert normalized_error(v, v) == 0.0
    assert normalized_error(np.zeros(3), v) == 1.0
    assert normalized_error(2 * v, v) == 1.0
    with pytest.raises(ValueError):
        normalized_error(v, np.zeros(3))


def test_parsers():
    assert parse_model("smooth:0.1") == ("smooth", 0.1)
    assert parse_model("mle") == ("mle", 0.0)
    with pytest.raises(ValueError):
        parse_model("smooth:1.5")
    with pytest.raises(ValueError):
        parse_model("gaussian:0.1")
    np.testing.assert_array_equal(parse_rho("point:2", 4), [0, 0, 1, 0])
    np.testing.assert_array_equal(parse_rho("uniform", 4), 0.25)
    with pytest.raises(ValueError):
        parse_rho([0.5, 0.6], 2)


def test_config_validation():
    ExperimentConfig(algorithm="td", mode="pe")
    for bad in (dict(algorithm="td", mode="control"), dict(algorithm="qlearning", mode="pe"),
                dict(algorithm="pi", mode="pe"), dict(model="smooth:2"), dict(seeds=[]),
                dict(env="atari"), dict(schedule="cosine:1"), dict(algorithm="sarsa")):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"env": "maze", "colour": "red"})
    cfg = ExperimentConfig(env="maze", seeds=[1, 2])
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == ExperimentConfig(env="maze", seeds=[1, 2]).digest()


def test_csv_round_trip():
    res = RunResult()
    res.add("a", 0, 1, "err", 0.1)
    res.add("a", 0, 2, "err", 1 / 3)
    res.add("b", 5, 1, "huge", 1e300)
    assert records_from_csv(records_to_csv(res.records)) == res.records
    with pytest.raises(ValueError):
        records_from_csv("x,y\n1,2\n")


def test_osvi_exact_model_two_state():
    res = run_experiment(ExperimentConfig(env="two-state", algorithm="osvi", mode="pe", model="exact",
                                          iterations=5))
    steps, errs = res.series("sup_error")
    assert np.all(errs[1:] <= 1e-8)
    _, base = res.series("model_only_error")
    assert np.all(base <= 1e-12)


def test_vi_error_ratio_tends_to_discount():
    res = run_experiment(ExperimentConfig(env="two-state", algorithm="vi", mode="pe", iterations=50))
    _, errs = res.series("sup_error")
    ratios = errs[11:] / errs[10:-1]
    assert np.all(np.abs(ratios - 0.9) <= 0.02)


def test_query_accounting(cliffwalk):
    vi = run_experiment(ExperimentConfig(algorithm="vi", mode="control", iterations=7))
    os_ = run_experiment(ExperimentConfig(algorithm="osvi", mode="control", model="smooth:0.1", iterations=7))
    for res in (vi, os_):
        steps, _ = res.series("normalized_error")
        np.testing.assert_array_equal(steps, np.arange(8))
    assert vi.summary["runs"]["vi-cliffwalk-s0"]["queries"] == 7


def test_garnet_ensemble_aggregation():
    cfg = ExperimentConfig(env="garnet", algorithm="osvi", mode="control", model="smooth:0.1",
                           iterations=10, seeds=list(range(5)))
    res = run_experiment(cfg)
    steps, means = res.series("normalized_error_mean", "aggregate")
    _, ses = res.series("normalized_error_stderr", "aggregate")
    assert len(steps) == 11 and np.all(ses >= 0)
    per = np.array([res.series("normalized_error", f"osvi-garnet-s{s}")[1] for s in range(5)])
    np.testing.assert_allclose(means, per.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(ses, per.std(axis=0, ddof=1) / np.sqrt(5), rtol=1e-12)
    # instances differ across seeds
    assert not np.allclose(per[0], per[1])


def test_aggregate_single_run_has_zero_stderr():
    res = RunResult()
    res.add("r", 0, 1, "x", 2.0)
    agg = aggregate(res)
    assert agg.series("x_stderr")[1][0] == 0.0


def test_seed_determinism_writes_identical_bytes(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = ExperimentConfig(algorithm="osdyna", model="smoothed-mle:0.5", steps=3000, record_every=1000,
                               seeds=[3], out=str(tmp_path / name))
        run_experiment(cfg)
        outs.append((tmp_path / f"{name}.csv").read_bytes())
    assert outs[0] == outs[1]
    summary = json.loads((tmp_path / "a.json").read_text())
    assert summary["runs"]["osdyna-cliffwalk-s3"]["schedule"]["kind"] == "delayed-decay"


def test_learner_records_value_start():
    res = run_experiment(ExperimentConfig(algorithm="qlearning", steps=4000, record_every=1000))
    steps, vals = res.series("value_start")
    np.testing.assert_array_equal(steps, [1000, 2000, 3000, 4000])
    assert np.all(np.isfinite(vals))
    res = run_experiment(ExperimentConfig(env="two-state", algorithm="td", mode="pe", steps=2000,
                                          record_every=500))
    assert len(res.series("normalized_error")[0]) == 4


def test_lambda_sweep_examples():
    cfg = ExperimentConfig(algorithm="osvi", mode="pe", model="selfloop")
    res = lambda_sweep(cfg, [0.0, 0.3, 0.8])
    _, e0 = res.series("normalized_error", "lambda=0")
    assert np.all(e0 <= 1e-8)
    flags = res.summary["diverged"]
    assert not flags["0"] and not flags["0.3"]
    for lam, flagged in flags.items():
        if not flagged:
            _, e = res.series("normalized_error", f"lambda={lam}")
            assert e[-1] <= e[0]
    with pytest.raises(ValueError):
        lambda_sweep(cfg, [1.2])
    with pytest.raises(ValueError):
        lambda_sweep(ExperimentConfig(model="exact"), [0.1])


def test_analyze_examples(cliffwalk):
    _, acc, _ = build_two_state()
    pi = Policy.deterministic([0, 0], 1)
    rep = analyze(acc, pi)["report"]
    assert rep["gamma_prime_sup"] == pytest.approx(0.9, abs=1e-12)
    assert rep["faster_than_vi"] is False
    assert rep["g_norm_sup"] <= rep["gamma_prime_sup"] + 1e-12

    exact = ModelPair(acc.true_mdp, acc.true_mdp.transition)
    rep = analyze(exact, pi)["report"]
    assert rep["gamma_prime_sup"] == 0.0 and rep["gamma_prime_l4"] == 0.0 and rep["g_norm_sup"] == 0.0

    mdp, pi_star = cliffwalk
    pair = smooth_model(mdp, 0.1)
    rep = analyze(pair, pi_star, mode="control")["report"]
    kern_gap = np.abs(pair.kernels(pi_star)[0] - pair.kernels(pi_star)[1]).sum(axis=1).max()
    expect = 0.9 / 0.1 * kern_gap
    assert rep["gamma_prime_sup"] == pytest.approx(expect, rel=1e-12)
    assert rep["convergent_sup"] == (expect < 1)


def test_analyze_run_pe(two_state):
    _, acc, _, pi = two_state
    traj = osvi(acc, "pe", pi, outer_iters=10)
    out = analyze(acc, traj, mode="pe", policy=pi)
    assert out["sup"].holds and out["l4"].holds
    with pytest.raises(ValueError):
        analyze(acc, traj, mode="pe")


def test_mdp_io_round_trip(tmp_path, maze):
    mdp, _ = maze
    again = mdp_from_dict(json.loads(json.dumps(mdp_to_dict(mdp))))
    assert again.transition.tobytes() == mdp.transition.tobytes()
    save_mdp(mdp, tmp_path / "m.json")
    assert load_mdp(tmp_path / "m.json").reward.tobytes() == mdp.reward.tobytes()
    bad = mdp_to_dict(mdp)
    bad["n_states"] = 4
    with pytest.raises(ValueError):
        mdp_from_dict(bad)


def test_checkpoint_round_trip(tmp_path):
    st = LearnerState.initial(4, 2)
    st.counts.counts[1, 1, 3] = 7
    st.step = 12
    save_checkpoint(st, tmp_path / "ck.json")
    again = load_checkpoint(tmp_path / "ck.json")
    assert again.step == 12 and again.counts.counts[1, 1, 3] == 7


def test_make_env_via_harness():
    cfg = ExperimentConfig(env="garnet", env_overrides={"n_states": 8, "reward_states": 2})
    a, _ = harness.build_env(cfg, 1)
    b, _ = make_env("garnet", n_states=8, reward_states=2, seed=1)
    assert a.transition.tobytes() == b.transition.tobytes()
