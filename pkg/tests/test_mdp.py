import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_policy, small_mdps
from lsfm.certificates import random_mdp
from lsfm.envs import build_column_world, build_counterexample, build_five_state, build_three_state
from lsfm.mdp import (Partition, TabularMdp, TabularPolicy, bisimulation_partition, compute_sf, compute_sr,
                      compute_sr_action, expected_reward_rollout, expected_reward_rollouts, policy_evaluation,
                      quotient_mdp, refine_partition, transitions_from_sr, value_iteration)

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3


def set_partitions(items):
    """Every partition of ``items`` as a list of blocks (brute force)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in set_partitions(rest):
        for i in range(len(sub)):
            yield sub[:i] + [[first] + sub[i]] + sub[i + 1:]
        yield [[first]] + sub


def is_bisimulation(mdp, labels, tol=1e-9):
    onehot = np.eye(labels.max() + 1)[labels]
    for z in np.unique(labels):
        members = np.flatnonzero(labels == z)
        for a in range(mdp.num_actions):
            if np.ptp(mdp.rewards[a, members]) > tol:
                return False
            blockp = mdp.transitions[a][members] @ onehot
            if np.max(np.ptp(blockp, axis=0)) > tol:
                return False
    return True


def brute_force_coarsest_bisimulation(mdp):
    best = None
    for blocks in set_partitions(list(range(mdp.num_states))):
        labels = np.empty(mdp.num_states, dtype=int)
        for k, b in enumerate(blocks):
            labels[b] = k
        if is_bisimulation(mdp, labels) and (best is None or len(blocks) < best.max() + 1):
            best = labels
    return best


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return all(np.unique(b[a == z]).size == 1 for z in np.unique(a)) and \
        all(np.unique(a[b == z]).size == 1 for z in np.unique(b))


# policy evaluation

def test_counterexample_uniform_q_values():
    mdp = build_counterexample(0.9)
    _, q = policy_evaluation(mdp, TabularPolicy.uniform(4, 2))
    np.testing.assert_allclose(q[:2], 0.5 * 0.9 / 0.1, atol=1e-8)


@given(small_mdps(gamma=0.0), st.integers(0, 1000))
def test_zero_discount_q_is_reward(mdp, seed):
    pi = random_policy(np.random.default_rng(seed), mdp.num_states, mdp.num_actions)
    _, q = policy_evaluation(mdp, pi)
    np.testing.assert_allclose(q, mdp.rewards.T, atol=1e-12)


@given(small_mdps(), st.integers(0, 1000))
def test_bellman_identity(mdp, seed):
    pi = random_policy(np.random.default_rng(seed), mdp.num_states, mdp.num_actions)
    v, q = policy_evaluation(mdp, pi)
    p_pi = np.einsum("sa,ast->st", pi.probs, mdp.transitions)
    r_pi = np.einsum("sa,as->s", pi.probs, mdp.rewards)
    np.testing.assert_allclose(v, r_pi + mdp.gamma * p_pi @ v, atol=1e-8)
    np.testing.assert_allclose(v, np.sum(pi.probs * q, axis=1), atol=1e-8)


def test_policy_evaluation_matches_monte_carlo():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 6, 3, 0.9)
    pi = TabularPolicy.uniform(6, 3)
    v, _ = policy_evaluation(mdp, pi)
    per_state, horizon = 1_000_000 // 6, 200
    cdf = np.cumsum(mdp.transitions, axis=2)
    cdf[:, :, -1] = 1.0
    mc_rng = np.random.default_rng(1)
    for s0 in range(6):
        s = np.full(per_state, s0)
        ret = np.zeros(per_state)
        disc = 1.0
        for _ in range(horizon):
            a = mc_rng.integers(3, size=per_state)
            ret += disc * mdp.rewards[a, s]
            u = mc_rng.random(per_state)
            s = (u[:, None] >= cdf[a, s]).sum(axis=1)
            disc *= mdp.gamma
        se = ret.std() / np.sqrt(per_state)
        assert abs(ret.mean() - v[s0]) < 3 * se + 1e-12


def test_reject_unit_discount():
    with pytest.raises(ValueError):
        TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 1.0)


# value iteration

def test_value_iteration_geometric_series():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
    v, _, _ = value_iteration(mdp, tol=1e-12)
    assert v[0] == pytest.approx(10.0, abs=1e-9)


def test_counterexample_optimal_actions():
    _, _, greedy = value_iteration(build_counterexample(0.9))
    actions = np.argmax(greedy.probs, axis=1)
    assert actions[0] == 0 and actions[1] == 1


@given(small_mdps())
def test_value_iteration_residual_and_tie_breaking(mdp):
    v, q, greedy = value_iteration(mdp, tol=1e-10)
    backup = (mdp.rewards + mdp.gamma * mdp.transitions @ v).max(axis=0)
    assert np.max(np.abs(backup - v)) <= 1e-9
    for s in range(mdp.num_states):
        assert np.argmax(greedy.probs[s]) == np.flatnonzero(q[s] == q[s].max())[0]


def test_value_iteration_ties_go_to_lowest_action():
    mdp = TabularMdp(np.ones((3, 1, 1)), np.zeros((3, 1)), 0.5)
    _, _, greedy = value_iteration(mdp)
    assert np.argmax(greedy.probs[0]) == 0


def test_value_iteration_rejects_bad_tol():
    with pytest.raises(ValueError):
        value_iteration(build_three_state(), tol=0.0)


# rollouts

def test_column_world_rollout():
    # cell (1, 1) counted from one is the top-left state
    mdp = build_column_world()
    np.testing.assert_array_equal(expected_reward_rollout(mdp, 0, [RIGHT, DOWN, RIGHT]), [0.0, 0.0, 1.0])


def test_three_state_rollout():
    np.testing.assert_array_equal(expected_reward_rollout(build_three_state(), 0, [0, 0, 0]), [0.0, 0.0, 1.0])


@given(small_mdps(), st.data())
def test_rollout_single_step_and_batch(mdp, data):
    s = data.draw(st.integers(0, mdp.num_states - 1))
    acts = data.draw(st.lists(st.integers(0, mdp.num_actions - 1), min_size=1, max_size=6))
    assert expected_reward_rollout(mdp, s, acts[:1])[0] == mdp.rewards[acts[0], s]
    np.testing.assert_allclose(expected_reward_rollouts(mdp, acts)[:, s], expected_reward_rollout(mdp, s, acts))
    # recursive oracle: e_s P_a1 ... P_ak-1 r_ak
    dist = np.eye(mdp.num_states)[s]
    for k, a in enumerate(acts):
        assert expected_reward_rollout(mdp, s, acts)[k] == pytest.approx(dist @ mdp.rewards[a], abs=1e-12)
        dist = dist @ mdp.transitions[a]


def test_rollout_rejects_empty():
    with pytest.raises(ValueError):
        expected_reward_rollout(build_three_state(), 0, [])


# successor representations

@given(small_mdps(gamma=0.0))
def test_zero_discount_sr_is_identity(mdp):
    pi = TabularPolicy.uniform(mdp.num_states, mdp.num_actions)
    np.testing.assert_allclose(compute_sr(mdp, pi), np.eye(mdp.num_states))
    np.testing.assert_allclose(compute_sr_action(mdp, pi), np.broadcast_to(np.eye(mdp.num_states),
                                                                            (mdp.num_actions,) + (mdp.num_states,) * 2))


@given(small_mdps(), st.integers(0, 1000))
def test_sr_fixed_points_and_normalization(mdp, seed):
    pi = random_policy(np.random.default_rng(seed), mdp.num_states, mdp.num_actions)
    sr = compute_sr(mdp, pi)
    sr_a = compute_sr_action(mdp, pi)
    p_pi = np.einsum("sa,ast->st", pi.probs, mdp.transitions)
    assert np.max(np.abs(sr - (np.eye(mdp.num_states) + mdp.gamma * p_pi @ sr))) <= 1e-8
    assert np.max(np.abs(sr_a - (np.eye(mdp.num_states) + mdp.gamma * mdp.transitions @ sr))) <= 1e-8
    np.testing.assert_allclose((1 - mdp.gamma) * sr.sum(axis=1), 1.0, atol=1e-8)


@given(small_mdps(), st.integers(0, 1000))
def test_sr_roundtrip_recovers_transitions(mdp, seed):
    if mdp.gamma < 0.05:
        mdp = mdp.with_gamma(0.5)
    pi = random_policy(np.random.default_rng(seed), mdp.num_states, mdp.num_actions)
    p = transitions_from_sr(compute_sr(mdp, pi), compute_sr_action(mdp, pi), mdp.gamma)
    np.testing.assert_allclose(p, mdp.transitions, atol=1e-8)


def test_five_state_successor_features():
    mdp = build_five_state(0.9)
    psi = compute_sf(mdp, np.eye(5), TabularPolicy.uniform(5, 1))
    np.testing.assert_allclose(psi[0, 0], [1, 0, 9, 0, 0], atol=1e-8)
    np.testing.assert_allclose(psi[1, 0], [0, 1, 0, 4.5, 4.5], atol=1e-8)


@given(small_mdps(), st.integers(0, 1000))
def test_sf_identity_and_probability_rows(mdp, seed):
    pi = random_policy(np.random.default_rng(seed), mdp.num_states, mdp.num_actions)
    psi = compute_sf(mdp, np.eye(mdp.num_states), pi)
    sr_a = compute_sr_action(mdp, pi)
    np.testing.assert_allclose(np.transpose(psi, (1, 0, 2)), sr_a, atol=1e-12)
    # one-hot features of a coarser partition: (1-gamma) psi rows are distributions
    labels = np.arange(mdp.num_states) % 2
    scaled = (1 - mdp.gamma) * compute_sf(mdp, np.eye(2)[labels], pi)
    assert scaled.min() >= -1e-12
    np.testing.assert_allclose(scaled.sum(axis=2), 1.0, atol=1e-8)


def test_sf_rejects_wrong_rows():
    mdp = build_five_state()
    with pytest.raises(ValueError):
        compute_sf(mdp, np.eye(4), TabularPolicy.uniform(5, 1))


# bisimulation

def test_column_world_bisimulation():
    p = bisimulation_partition(build_column_world())
    assert p.num_blocks == 3
    assert same_partition(p.block_of, np.arange(9) % 3)


def test_five_state_has_no_bisimilar_states():
    assert bisimulation_partition(build_five_state()).num_blocks == 5


def test_duplicated_states_share_block():
    rng = np.random.default_rng(3)
    base = random_mdp(rng, 4, 2, 0.9)
    # copy state 0 into a new state 4 with identical outgoing dynamics
    p = np.zeros((2, 5, 5))
    p[:, :4, :4] = base.transitions
    p[:, 4, :4] = base.transitions[:, 0]
    r = np.concatenate([base.rewards, base.rewards[:, :1]], axis=1)
    blocks = bisimulation_partition(TabularMdp(p, r, 0.9)).block_of
    assert blocks[0] == blocks[4]


@settings(max_examples=30)
@given(small_mdps(max_states=5, max_actions=2))
def test_bisimulation_matches_brute_force(mdp):
    # coarsen random MDPs so non-trivial bisimulations exist
    rng = np.random.default_rng(int(mdp.rewards.sum() * 1e6) % 2**32)
    labels = rng.integers(2, size=mdp.num_states)
    r = np.tile(labels.astype(float), (mdp.num_actions, 1))
    mdp = TabularMdp(mdp.transitions, r, mdp.gamma)
    got = bisimulation_partition(mdp, 1e-9, 1e-9).block_of
    assert same_partition(got, brute_force_coarsest_bisimulation(mdp))


@given(small_mdps())
def test_bisimulation_is_stable(mdp):
    p = bisimulation_partition(mdp)
    again = refine_partition(mdp, p)
    np.testing.assert_array_equal(again.block_of, p.block_of)


def test_quotient_rollout_matches_on_column_world():
    mdp = build_column_world()
    part = bisimulation_partition(mdp)
    q = quotient_mdp(mdp, part)
    rng = np.random.default_rng(0)
    for _ in range(20):
        acts = rng.integers(4, size=8)
        for s in range(9):
            np.testing.assert_allclose(expected_reward_rollout(mdp, s, acts),
                                       expected_reward_rollout(q, part.block_of[s], acts), atol=1e-12)


# types and serialization

@given(small_mdps())
def test_json_roundtrip_is_lossless(mdp):
    back = TabularMdp.from_json(mdp.to_json())
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.rewards, mdp.rewards)
    assert back.gamma == mdp.gamma


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        TabularMdp(np.full((1, 2, 2), 0.4), np.zeros((1, 2)), 0.9)
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        Partition(np.array([0, 2]))
    with pytest.raises(ValueError):
        bisimulation_partition(build_three_state(), -1.0)
