"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The long-running ones carry the ``slow`` marker but are part of the default run.
"""
import json
import time

import numpy as np
import pytest

from lsfm.cli import main
from lsfm.envs import build_column_world, build_five_state, five_state_representation
from lsfm.experiments import run_bounds_check, run_lock, run_train, run_transfer
from lsfm.certificates import random_mdp
from lsfm.mdp import (TabularPolicy, bisimulation_partition, compute_sf, compute_sr, compute_sr_action,
                      transitions_from_sr)
from lsfm.optim import least_squares_lam
from lsfm.representation import check_theorem1, check_theorem2, error_metrics, lsfm_for_policy, quotient_models
from lsfm.td import prop1_equivalence_run, tabular_features

import test_losses as gradcheck


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        return ok
    return emit


def test_criterion_01_bound_certificates(report):
    t0 = time.perf_counter()
    out = run_bounds_check(instances=200, seed=0, horizon=10)
    elapsed = time.perf_counter() - t0
    s = out.summary
    ok = s["all_hold"] and s["skipped"] == 0 and s["min_slack"] >= -1e-9 and elapsed < 60
    assert report(1, ok, f"{s['checks']} checks, {s['violations']} violations, min slack {s['min_slack']:.3e}, "
                         f"{elapsed:.1f}s")


def test_criterion_02_td_sf_equivalence(report):
    mdp = build_column_world()
    xi = tabular_features(9, 4)
    w = mdp.rewards.T.reshape(-1)
    greedy = prop1_equivalence_run(mdp, xi, w, np.zeros(36), np.zeros((36, 36)), steps=10_000, seed=0)
    rng = np.random.default_rng(1)
    pi = rng.dirichlet(np.ones(4), size=9)
    g0 = rng.normal(size=(36, 36))
    fixed = prop1_equivalence_run(mdp, xi, w, g0 @ w, g0, mode=pi, steps=10_000, seed=1)
    ok = all(r.max_deviation <= 1e-9 * max(1.0, r.max_theta) for r in (greedy, fixed))
    assert report(2, ok, f"greedy dev {greedy.max_deviation:.2e} (scale {greedy.max_theta:.2f}), "
                         f"fixed-policy dev {fixed.max_deviation:.2e} (scale {fixed.max_theta:.2f})")


def test_criterion_03_exact_models(report):
    mdp = build_column_world()
    phi, lam, lsfm = quotient_models(mdp, bisimulation_partition(mdp))
    rep = error_metrics(mdp, phi, lam, lsfm)
    column_ok = (max(rep.eps_r, rep.eps_p, rep.eps_psi, rep.delta) <= 1e-8
                 and check_theorem1(mdp, phi, lam).label == "true" and check_theorem2(mdp, phi, lsfm).label == "true")
    five = build_five_state()
    fphi = five_state_representation()
    flam = least_squares_lam(fphi, five)
    frep = error_metrics(five, fphi, flam, lsfm_for_policy(flam, np.ones(1), five.gamma))
    five_ok = max(frep.eps_r, frep.eps_p, frep.eps_psi) <= 1e-8
    col_err = max(rep.eps_r, rep.eps_p, rep.eps_psi, rep.delta)
    five_err = max(frep.eps_r, frep.eps_p, frep.eps_psi)
    assert report(3, column_ok and five_ok, f"column max error {col_err:.1e}, five-state max error {five_err:.1e}")


@pytest.mark.slow
def test_criterion_04_column_world_learning(report):
    t0 = time.perf_counter()
    hits = sum(bool(run_train("column", seed=s).summary["matches_bisimulation"]) for s in range(20))
    elapsed = time.perf_counter() - t0
    assert report(4, hits >= 18 and elapsed < 120, f"{hits}/20 seeds recover the columns, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_05_puddle_rollouts(report):
    t0 = time.perf_counter()
    s = run_train("puddle", seed=0).summary
    elapsed = time.perf_counter() - t0
    ok = s["beats_random_init_first_50"] and elapsed < 900
    assert report(5, ok, f"mean error {s['mean_rollout_error']:.4f} vs random init "
                         f"{s['mean_random_init_error']:.4f}, {elapsed:.1f}s")


def test_criterion_06_sf_sr_oracles(report):
    five = build_five_state(0.9)
    psi = compute_sf(five, np.eye(5), TabularPolicy.uniform(5, 1))
    sf_ok = np.max(np.abs(psi[0, 0] - [1, 0, 9, 0, 0])) <= 1e-8
    worst = 0.0
    for mdp in [build_column_world()] + [random_mdp(np.random.default_rng(i), 6, 3, 0.9) for i in range(10)]:
        rng = np.random.default_rng(0)
        pi = TabularPolicy(rng.dirichlet(np.ones(mdp.num_actions), size=mdp.num_states))
        back = transitions_from_sr(compute_sr(mdp, pi), compute_sr_action(mdp, pi), mdp.gamma)
        worst = max(worst, float(np.max(np.abs(back - mdp.transitions))))
    assert report(6, sf_ok and worst <= 1e-8, f"psi(A) = {np.round(psi[0, 0], 10).tolist()}, "
                                              f"SR roundtrip error {worst:.1e}")


@pytest.mark.slow
def test_criterion_07_transfer(report):
    t0 = time.perf_counter()
    s = run_transfer(seed=0).summary
    elapsed = time.perf_counter() - t0
    ok = s["reward_predictive_beats_tabular_by_0.2"] and s["value_predictive_at_most_0.1"] and elapsed < 1800
    vp = max(s["fraction_solved"]["value-predictive"].values())
    assert report(7, ok, f"max reward-predictive gain {s['max_reward_predictive_gain']:.2f}, "
                         f"max value-predictive fraction {vp:.2f}, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_08_combination_lock(report):
    t0 = time.perf_counter()
    s = run_lock(seed=0).summary
    elapsed = time.perf_counter() - t0
    means = s["mean_episode_length_first_100"]
    detail = "; ".join(f"{t}: " + ", ".join(f"{a} {v:.1f}" for a, v in row.items()) for t, row in means.items())
    assert report(8, s["passes"] and elapsed < 600, f"{detail}; {elapsed:.1f}s")


LOSS_CHECKS = {
    "lsfm-dataset": gradcheck.test_lsfm_dataset_gradient,
    "lam-dataset": gradcheck.test_lam_dataset_gradient,
    "lsfm-matrix-frozen-target": gradcheck.test_lsfm_matrix_gradient_with_frozen_target,
    "lsfm-matrix-full": gradcheck.test_lsfm_matrix_full_gradient,
    "lam-matrix": gradcheck.test_lam_matrix_gradient,
    "fitted-q": gradcheck.test_fitted_q_gradient,
}


def test_criterion_09_gradient_checks(report):
    failed = []
    for name, check in LOSS_CHECKS.items():
        for seed in range(gradcheck.INSTANCES):
            try:
                check(seed)
            except AssertionError:
                failed.append((name, seed))
    assert report(9, not failed, f"{len(LOSS_CHECKS)} losses x {gradcheck.INSTANCES} instances, "
                                 f"failures: {failed or 'none'}")


def _run_twice(tmp_path, name, args):
    dirs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{name}-{tag}"
        assert main(args + ["--output", str(out)]) in (0, 1)
        dirs.append(out)
    files = sorted(p.name for p in dirs[0].iterdir())
    same = all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files)
    return same, dirs[0], sum(f.endswith(".csv") for f in files)


def test_criterion_10_cli_determinism(tmp_path, report):
    def cfg(name, body):
        path = tmp_path / name
        path.write_text(json.dumps(body))
        return str(path)

    runs = {
        "train-column": ["train", "--env", "column", "--config", cfg("c.json", {"num_steps": 100}), "--seed", "2"],
        "train-puddle": ["train", "--env", "puddle", "--config",
                         cfg("p.json", {"num_steps": 200, "eval_sequences": 5, "eval_horizon": 20}), "--seed", "2"],
        "train-lock": ["train", "--env", "lock-training", "--config", cfg("l.json", {"num_steps": 50})],
        "bounds-check": ["bounds-check", "--instances", "20", "--seed", "5"],
        "lock": ["lock", "--episodes", "3", "--repeats", "2", "--seed", "4", "--config",
                 cfg("k.json", {"representation": {"num_steps": 50}, "timeout": 500})],
        "transfer": ["transfer", "--repeats", "2", "--dataset-sizes", "250,500", "--seed", "9", "--config",
                     cfg("t.json", {"train_size": 10000, "lsfm": {"num_steps": 200}, "value_fqi": {"num_steps": 200},
                                    "transfer_fqi": {"num_steps": 200, "learning_rates": [0.001, 0.01]}})],
    }
    verdicts = {}
    for name, args in runs.items():
        same, first, _ = _run_twice(tmp_path, name, args)
        verdicts[name] = same
        if name == "train-column":
            ckpt = str(first / "checkpoint.json")
            same, _, _ = _run_twice(tmp_path, "rollout-eval", ["rollout-eval", "--checkpoint", ckpt, "--env",
                                                               "column", "--sequences", "5", "--horizon", "30"])
            verdicts["rollout-eval"] = same
    ok = all(verdicts.values())
    assert report(10, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in verdicts.items()))
