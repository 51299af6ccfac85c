import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsfm.certificates import (BoundNotApplicable, exact_instance, lemma1_certificate, prop2_certificate,
                               random_instance, rollout_bound, theorem3_certificate, value_bound_certificate,
                               theorem4_value_vectors, theorem5_certificate, certificate_suite)
from lsfm.dataset import TransitionDataset
from lsfm.envs import build_column_world
from lsfm.mdp import TabularPolicy, bisimulation_partition, policy_evaluation
from lsfm.optim import least_squares_lam
from lsfm.representation import Lam, Lsfm, error_metrics, lsfm_for_policy, quotient_models


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_randomized_suite_holds(seed):
    inst = random_instance(seed)
    for name, cert in certificate_suite(inst, horizon=10, seed=seed).items():
        assert cert.slack >= -1e-9, name
        assert cert.holds, name


def test_exact_instance_slacks_are_zero():
    mdp = build_column_world(0.5)
    inst = exact_instance(mdp, bisimulation_partition(mdp))
    suite = certificate_suite(inst)
    for name, cert in suite.items():
        assert cert.holds, name
    assert suite["sf_model_mismatch"].lhs <= 1e-12 and suite["sf_model_mismatch"].rhs <= 1e-12
    assert np.max(suite["reward_rollout"].empirical) <= 1e-12 and np.max(suite["reward_rollout"].bound) <= 1e-12
    assert suite["dataset_sf_mismatch"].delta <= 1e-10


def test_rollout_bound_first_step_is_reward_error():
    b = rollout_bound(0.3, 0.2, 0.7, 1.5, 5)
    assert b[0] == 0.2
    # eps_p * W * sum_{k=0}^{t-2} M^k + eps_r
    assert b[2] == pytest.approx(0.3 * 1.5 * (1 + 0.7) + 0.2)
    inst = random_instance(3)
    cert = theorem3_certificate(inst.mdp, inst.phi, inst.lam, 1)
    rep = error_metrics(inst.mdp, inst.phi, inst.lam, inst.lsfm)
    assert cert.bound[0] == pytest.approx(rep.eps_r)


def test_shifted_power_range_can_fail():
    # the sum over M^1..M^(t-1) undercuts the observed error when M < 1
    inst = random_instance(103)
    cert = theorem3_certificate(inst.mdp, inst.phi, inst.lam, 10, 20, 103)
    assert inst.lam.m_norm < 1
    assert cert.holds
    assert np.any(cert.empirical > cert.shifted_bound + 1e-6)


def test_mismatch_bound_with_consistent_lsfm():
    for seed in range(20):
        inst = random_instance(seed)
        lsfm = lsfm_for_policy(inst.lam, np.full(inst.mdp.num_actions, 1 / inst.mdp.num_actions), inst.mdp.gamma)
        rep = error_metrics(inst.mdp, inst.phi, inst.lam, lsfm)
        assert rep.delta <= 1e-9
        cert = lemma1_certificate(inst.mdp, inst.phi, inst.lam, lsfm)
        assert cert.lhs <= rep.eps_psi * (1 + inst.mdp.gamma * rep.m_norm) / inst.mdp.gamma + 1e-9


def test_mismatch_bound_not_applicable_when_not_contractive():
    mdp = build_column_world(0.9)
    phi, lam, lsfm = quotient_models(mdp, bisimulation_partition(mdp))
    assert mdp.gamma * lam.m_norm >= 1
    with pytest.raises(BoundNotApplicable):
        lemma1_certificate(mdp, phi, lam, lsfm)
    with pytest.raises(BoundNotApplicable):
        theorem5_certificate(mdp, phi, lsfm, lam, 5)


def test_value_bound_exact_on_column_world():
    mdp = build_column_world(0.9)
    phi, lam, _ = quotient_models(mdp, bisimulation_partition(mdp))
    pol = np.full((3, 4), 0.25)
    v, q = theorem4_value_vectors(phi, lam, pol, mdp.gamma)
    v_true, q_true = policy_evaluation(mdp, TabularPolicy.uniform(9, 4))
    np.testing.assert_allclose(phi @ v, v_true, atol=1e-8)
    np.testing.assert_allclose(phi @ q.T, q_true, atol=1e-8)
    cert = value_bound_certificate(mdp, phi, lam, pol)
    assert cert.holds and cert.value.lhs <= 1e-8


def test_value_vectors_reject_expanding_latent_dynamics():
    lam = Lam(np.array([[[2.0]]]), np.array([[1.0]]))
    with pytest.raises(np.linalg.LinAlgError):
        theorem4_value_vectors(np.ones((1, 1)), lam, np.ones(1), 0.9)


def _one_per_state_dataset(num_states, num_actions, rng):
    rows = [(s, a, rng.normal(), rng.integers(num_states)) for a in range(num_actions) for s in range(num_states)]
    return TransitionDataset.from_records(rows, num_states, num_actions)


def test_dataset_mismatch_isometry_case():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    data = _one_per_state_dataset(4, 2, rng)
    lsfm = Lsfm(rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4)))
    cert = prop2_certificate(data, q, lsfm, 0.9)
    assert cert.pinv_norm == pytest.approx(1.0)
    assert cert.bound == pytest.approx(cert.sf_loss)
    assert cert.holds


def test_dataset_mismatch_zero_for_exact_lsfm():
    rng = np.random.default_rng(1)
    phi = np.eye(5)
    rows = [(s, a, 0.0, rng.integers(5)) for a in range(2) for s in range(5)]
    data = TransitionDataset.from_records(rows, 5, 2)
    lam = least_squares_lam(phi, data)
    lsfm = lsfm_for_policy(lam, np.full(2, 0.5), 0.9)
    cert = prop2_certificate(data, phi, lsfm, 0.9, lam)
    assert cert.sf_loss <= 1e-20
    assert cert.delta <= 1e-12 and cert.holds


def test_dataset_mismatch_missing_action():
    data = TransitionDataset.from_records([(0, 0, 0.0, 1)], 2, 2)
    with pytest.raises(ValueError):
        prop2_certificate(data, np.eye(2), Lsfm(np.zeros((2, 2, 2)), np.zeros((2, 2))), 0.9)


def test_rollout_certificate_rejects_zero_horizon():
    inst = random_instance(0)
    with pytest.raises(ValueError):
        theorem3_certificate(inst.mdp, inst.phi, inst.lam, 0)
