import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_mdps
from lsfm.envs import build_column_world, build_five_state, build_puddle_world, five_state_representation
from lsfm.mdp import Partition, TabularMdp, bisimulation_partition, expected_reward_rollout
from lsfm.optim import least_squares_lam, least_squares_lsfm
from lsfm.representation import (ErrorReport, Lam, Lsfm, check_theorem1, check_theorem2, error_metrics,
                                  lam_from_lsfm, lam_rollout_predict, lsfm_for_policy, model_from_json,
                                  model_to_json, quotient_models)

GOLDEN = Path(__file__).parent / "golden"


def loop_metrics(mdp, phi, lam, lsfm):
    """Plain-loop oracle for the worst-case one-step errors."""
    S, A = mdp.num_states, mdp.num_actions
    n = phi.shape[1]
    fbar = sum(lsfm.f) / A
    eps_r = eps_p = eps_psi = 0.0
    for a in range(A):
        for s in range(S):
            eps_r = max(eps_r, abs(mdp.rewards[a, s] - sum(phi[s, j] * lam.w[a, j] for j in range(n))))
            nxt = sum(mdp.transitions[a, s, t] * phi[t] for t in range(S))
            eps_p = max(eps_p, np.sqrt(np.sum((nxt - phi[s] @ lam.m[a]) ** 2)))
            tgt = phi[s] + mdp.gamma * nxt @ fbar
            eps_psi = max(eps_psi, np.sqrt(np.sum((tgt - phi[s] @ lsfm.f[a]) ** 2)))
    delta = max(np.sqrt(np.sum((np.eye(n) + mdp.gamma * lam.m[a] @ fbar - lsfm.f[a]) ** 2)) for a in range(A))
    return eps_r, eps_p, eps_psi, delta


def column_quotient():
    mdp = build_column_world()
    part = bisimulation_partition(mdp)
    return (mdp,) + quotient_models(mdp, part)


def test_column_world_exact_model_is_error_free():
    mdp, phi, lam, lsfm = column_quotient()
    rep = error_metrics(mdp, phi, lam, lsfm)
    assert max(rep.eps_r, rep.eps_p, rep.eps_psi, rep.delta) <= 1e-8
    assert check_theorem1(mdp, phi, lam).label == "true"
    assert check_theorem2(mdp, phi, lsfm).label == "true"


def test_five_state_representation_is_error_free():
    mdp = build_five_state()
    phi = five_state_representation()
    lam = least_squares_lam(phi, mdp)
    lsfm = lsfm_for_policy(lam, np.ones(1), mdp.gamma)
    rep = error_metrics(mdp, phi, lam, lsfm)
    assert max(rep.eps_r, rep.eps_p, rep.eps_psi) <= 1e-8


def test_five_state_merging_a_and_b_fails_conditions():
    mdp = build_five_state()
    labels = np.array([0, 0, 1, 2, 3])
    phi = np.eye(4)[labels]
    lam = least_squares_lam(phi, mdp)
    assert check_theorem1(mdp, phi, lam).label == "conditions-not-met"


@given(small_mdps())
def test_identity_representation_verdict(mdp):
    phi = np.eye(mdp.num_states)
    lam = Lam(mdp.transitions, mdp.rewards)
    assert bool(check_theorem1(mdp, phi, lam))
    if mdp.gamma > 0:
        lsfm = lsfm_for_policy(lam, np.full((mdp.num_states, mdp.num_actions), 1 / mdp.num_actions), mdp.gamma)
        assert bool(check_theorem2(mdp, phi, lsfm))


def test_verdict_requires_one_hot():
    mdp = build_column_world()
    with pytest.raises(ValueError):
        check_theorem1(mdp, np.full((9, 3), 0.5), Lam(np.zeros((4, 3, 3)), np.zeros((4, 3))))


@given(small_mdps(), st.integers(0, 10_000), st.integers(1, 4))
def test_error_metrics_match_loop_oracle(mdp, seed, n):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(mdp.num_states, n))
    lam = Lam(rng.normal(size=(mdp.num_actions, n, n)), rng.normal(size=(mdp.num_actions, n)))
    lsfm = Lsfm(rng.normal(size=(mdp.num_actions, n, n)), lam.w)
    rep = error_metrics(mdp, phi, lam, lsfm)
    np.testing.assert_allclose([rep.eps_r, rep.eps_p, rep.eps_psi, rep.delta], loop_metrics(mdp, phi, lam, lsfm),
                               rtol=1e-9, atol=1e-12)
    assert rep.m_norm == pytest.approx(max(np.linalg.norm(m) for m in lam.m))
    assert rep.n_norm == pytest.approx(max(np.linalg.norm(x) for x in phi))


@given(small_mdps(), st.integers(0, 10_000))
def test_error_metrics_invariant_under_state_permutation(mdp, seed):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(mdp.num_states, 2))
    lam, lsfm = least_squares_lam(phi, mdp), least_squares_lsfm(phi, mdp, mdp.gamma)
    perm = rng.permutation(mdp.num_states)
    p = mdp.transitions[:, perm][:, :, perm]
    permuted = TabularMdp(p, mdp.rewards[:, perm], mdp.gamma)
    a = error_metrics(mdp, phi, lam, lsfm).to_dict()
    b = error_metrics(permuted, phi[perm], lam, lsfm).to_dict()
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-9, abs=1e-12)


def test_puddle_random_features_golden():
    golden = json.loads((GOLDEN / "puddle_random_phi_metrics.json").read_text())
    mdp = build_puddle_world()
    phi = np.random.default_rng(golden["seed"]).uniform(0, 1, size=(100, golden["latent_dim"]))
    lam, lsfm = least_squares_lam(phi, mdp), least_squares_lsfm(phi, mdp, mdp.gamma)
    rep = error_metrics(mdp, phi, lam, lsfm).to_dict()
    assert all(v > 0 for v in rep.values())
    for k, v in golden["metrics"].items():
        assert rep[k] == pytest.approx(v, rel=1e-9)
    np.testing.assert_allclose(loop_metrics(mdp, phi, lam, lsfm),
                               [rep["eps_r"], rep["eps_p"], rep["eps_psi"], rep["delta"]], rtol=1e-9)


def test_rollout_prediction_exact_on_column_world():
    mdp, phi, lam, _ = column_quotient()
    rng = np.random.default_rng(0)
    for _ in range(10):
        acts = rng.integers(4, size=12)
        for s in range(9):
            np.testing.assert_allclose(lam_rollout_predict(phi, lam, s, acts), expected_reward_rollout(mdp, s, acts),
                                       atol=1e-12)


@given(st.integers(0, 10_000), st.data())
def test_single_step_prediction_is_reward_weights(seed, data):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(5, 3))
    lam = Lam(rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3)))
    s, a = data.draw(st.integers(0, 4)), data.draw(st.integers(0, 1))
    assert lam_rollout_predict(phi, lam, s, [a])[0] == pytest.approx(phi[s] @ lam.w[a])


@given(small_mdps(), st.integers(0, 10_000))
def test_consistent_lsfm_has_zero_mismatch(mdp, seed):
    if mdp.gamma < 0.1:
        mdp = mdp.with_gamma(0.5)
    rng = np.random.default_rng(seed)
    n = 3
    lam = Lam(rng.normal(scale=0.2, size=(mdp.num_actions, n, n)), rng.normal(size=(mdp.num_actions, n)))
    lsfm = lsfm_for_policy(lam, np.full(mdp.num_actions, 1.0 / mdp.num_actions), mdp.gamma)
    phi = rng.normal(size=(mdp.num_states, n))
    assert error_metrics(mdp, phi, lam, lsfm).delta <= 1e-10
    back = lam_from_lsfm(lsfm, mdp.gamma)
    np.testing.assert_allclose(back.m, lam.m, atol=1e-8)


def test_sf_verdict_for_other_policies():
    mdp, phi, lam, lsfm = column_quotient()
    tol = 1e-8
    assert check_theorem2(mdp, phi, lsfm, tol).conditions_met
    rng = np.random.default_rng(0)
    bound = tol * (1 + mdp.gamma) / (1 - mdp.gamma)
    for _ in range(20):
        pol = rng.dirichlet(np.ones(4), size=3)
        lsfm_pi = lsfm_for_policy(lam, pol, mdp.gamma)
        verdict = check_theorem2(mdp, phi, lsfm_pi, bound, policy=pol)
        assert verdict.residual <= bound and bool(verdict)


def test_verdicts_monotone_in_tolerance():
    mdp, phi, lam, lsfm = column_quotient()
    noisy = Lam(lam.m + 1e-5, lam.w)
    tols = [1e-9, 1e-6, 1e-4, 1e-2]
    flags = [bool(check_theorem1(mdp, phi, noisy, t)) for t in tols]
    assert flags == sorted(flags)
    assert flags[0] is False and flags[-1] is True


def test_serialization_roundtrip():
    rng = np.random.default_rng(1)
    phi = rng.normal(size=(4, 2))
    lam = Lam(rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2)))
    phi2, lam2 = model_from_json(model_to_json(phi, lam))
    assert np.array_equal(phi2, phi) and np.array_equal(lam2.m, lam.m) and isinstance(lam2, Lam)
    lsfm = Lsfm(lam.m, lam.w)
    _, lsfm2 = model_from_json(model_to_json(phi, lsfm))
    assert isinstance(lsfm2, Lsfm) and np.array_equal(lsfm2.f, lsfm.f)
    rep = ErrorReport(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)
    assert json.loads(rep.to_json())["eps_p"] == 2.0
    assert len(rep.csv_row().split(",")) == len(ErrorReport.csv_header().split(","))


def test_model_validation():
    with pytest.raises(ValueError):
        Lam(np.zeros((2, 3, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Lsfm(np.full((1, 2, 2), np.nan), np.zeros((1, 2)))
    mdp = build_column_world()
    with pytest.raises(ValueError):
        error_metrics(mdp, np.eye(9), Lam(np.zeros((4, 3, 3)), np.zeros((4, 3))),
                      Lsfm(np.zeros((4, 3, 3)), np.zeros((4, 3))))
    assert Partition(np.array([0, 1, 0])).num_blocks == 2
