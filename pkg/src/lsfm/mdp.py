"""Finite MDPs with per-action transition matrices and exact solvers.

Everything in here is exact linear algebra on dense matrices, so it also
serves as the ground truth that learned models are compared against.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

STOCHASTIC_TOL = 1e-9


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP stored as ``transitions[a, s, s']`` and ``rewards[a, s]``.

    ``rewards`` holds expected one-step rewards E[r | s, a]; the optional
    ``transition_rewards[a, s, s']`` keeps the per-outcome reward used when
    sampling. Terminal states are absorbing with zero reward; ``start_states``
    lists the cells episodes may start from (None means any non-terminal state).
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    terminal_states: tuple = ()
    start_states: tuple | None = None
    grid_shape: tuple | None = None
    reward_bound: float | None = None
    name: str = ""
    transition_rewards: np.ndarray | None = None
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = _frozen(self.transitions)
        r = _frozen(self.rewards)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise ValueError(f"transitions must have shape (A, S, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ValueError(f"rewards must have shape {p.shape[:2]}, got {r.shape}")
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(r)):
            raise ValueError("transitions and rewards must be finite")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("every transition row must be a probability vector")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {gamma}")
        bound = self.reward_bound
        if bound is not None and np.max(np.abs(r)) > bound:
            raise ValueError("rewards exceed the declared bound")
        n = p.shape[1]
        terminal = tuple(int(s) for s in self.terminal_states)
        start = None if self.start_states is None else tuple(int(s) for s in self.start_states)
        for s in terminal + (start or ()):
            if not 0 <= s < n:
                raise ValueError(f"state index {s} out of range")
        if self.transition_rewards is not None:
            rt = _frozen(self.transition_rewards)
            if rt.shape != p.shape:
                raise ValueError("transition_rewards must have shape (A, S, S)")
            if np.max(np.abs((p * rt).sum(axis=2) - r)) > 1e-9:
                raise ValueError("rewards must equal the expectation of transition_rewards")
            object.__setattr__(self, "transition_rewards", rt)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "terminal_states", terminal)
        object.__setattr__(self, "start_states", start)
        if self.grid_shape is not None:
            object.__setattr__(self, "grid_shape", tuple(int(v) for v in self.grid_shape))
        cdf = np.cumsum(p, axis=2)
        cdf[:, :, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[0]

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transitions, self.rewards, gamma, self.terminal_states,
                          self.start_states, self.grid_shape, self.reward_bound, self.name,
                          self.transition_rewards)

    def sample_reward(self, s: int, a: int, s_next: int) -> float:
        if self.transition_rewards is None:
            return float(self.rewards[a, s])
        return float(self.transition_rewards[a, s, s_next])

    def initial_states(self) -> np.ndarray:
        if self.start_states is not None:
            return np.array(self.start_states, dtype=int)
        terminal = set(self.terminal_states)
        return np.array([s for s in range(self.num_states) if s not in terminal], dtype=int)

    def sample_next(self, s: int, a: int, u: float) -> int:
        """Next state for uniform draw ``u`` (inverse-CDF sampling)."""
        return int(np.searchsorted(self._cdf[a, s], u, side="right"))

    def to_dict(self) -> dict:
        out = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }
        if self.terminal_states:
            out["terminal_states"] = list(self.terminal_states)
        if self.start_states is not None:
            out["start_states"] = list(self.start_states)
        if self.grid_shape is not None:
            out["grid_shape"] = list(self.grid_shape)
        if self.reward_bound is not None:
            out["reward_bound"] = self.reward_bound
        if self.name:
            out["name"] = self.name
        if self.transition_rewards is not None:
            out["transition_rewards"] = self.transition_rewards.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        p = np.asarray(d["transitions"], dtype=float)
        r = np.asarray(d["rewards"], dtype=float)
        shape = (int(d["num_actions"]), int(d["num_states"]))
        if p.shape != shape + (shape[1],) or r.shape != shape:
            raise ValueError("declared sizes do not match the stored arrays")
        return cls(p, r, d["gamma"], tuple(d.get("terminal_states", ())),
                   d.get("start_states"), d.get("grid_shape"), d.get("reward_bound"),
                   d.get("name", ""), d.get("transition_rewards"))

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ValueError("policy must be a |S| x |A| matrix")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12) or np.max(np.abs(p.sum(1) - 1)) > 1e-9:
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(num_actions)[actions])

    @classmethod
    def epsilon_greedy(cls, q: np.ndarray, epsilon: float) -> "TabularPolicy":
        num_actions = q.shape[1]
        probs = np.full(q.shape, epsilon / num_actions)
        probs[np.arange(q.shape[0]), np.argmax(q, axis=1)] += 1.0 - epsilon
        return cls(probs)


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of every state to a block, blocks numbered 0..num_blocks-1."""

    block_of: np.ndarray

    def __post_init__(self):
        b = _frozen(self.block_of, dtype=int)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("block assignment must be a non-empty vector")
        if set(np.unique(b).tolist()) != set(range(int(b.max()) + 1)):
            raise ValueError("block indices must be contiguous from 0")
        object.__setattr__(self, "block_of", b)

    @property
    def num_blocks(self) -> int:
        return int(self.block_of.max()) + 1

    @property
    def num_states(self) -> int:
        return self.block_of.size

    @classmethod
    def from_labels(cls, labels):
        """Renumber arbitrary labels by order of first appearance."""
        mapping: dict = {}
        out = [mapping.setdefault(lab, len(mapping)) for lab in np.asarray(labels).tolist()]
        return cls(np.array(out, dtype=int))

    def blocks(self) -> list:
        return [np.flatnonzero(self.block_of == k) for k in range(self.num_blocks)]

    def one_hot(self) -> np.ndarray:
        return np.eye(self.num_blocks)[self.block_of]


def _check_gamma(mdp: TabularMdp):
    if not mdp.gamma < 1.0:
        raise ValueError("discount must be below 1")


def policy_matrices(mdp: TabularMdp, pi: TabularPolicy):
    """Policy-averaged transition matrix and reward vector."""
    probs = pi.probs
    if probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("policy shape does not match the MDP")
    p_pi = np.einsum("sa,ast->st", probs, mdp.transitions)
    r_pi = np.einsum("sa,as->s", probs, mdp.rewards)
    return p_pi, r_pi


def policy_evaluation(mdp: TabularMdp, pi: TabularPolicy):
    """Exact V and Q of a policy via one dense solve."""
    _check_gamma(mdp)
    p_pi, r_pi = policy_matrices(mdp, pi)
    v = np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * p_pi, r_pi)
    q = (mdp.rewards + mdp.gamma * mdp.transitions @ v).T
    return v, q


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 100_000):
    """Optimal V*, Q* and the greedy policy (ties go to the lowest action)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_gamma(mdp)
    v = np.zeros(mdp.num_states)
    for _ in range(max_iter):
        v_next = (mdp.rewards + mdp.gamma * mdp.transitions @ v).max(axis=0)
        done = np.max(np.abs(v_next - v)) <= tol
        v = v_next
        if done:
            break
    q = (mdp.rewards + mdp.gamma * mdp.transitions @ v).T
    greedy = TabularPolicy.deterministic(np.argmax(q, axis=1), mdp.num_actions)
    return q.max(axis=1), q, greedy


def expected_reward_rollout(mdp: TabularMdp, s: int, actions) -> np.ndarray:
    """Expected reward at every step of an open-loop action sequence."""
    actions = [int(a) for a in actions]
    if not actions:
        raise ValueError("action sequence must be non-empty")
    dist = np.zeros(mdp.num_states)
    dist[s] = 1.0
    out = np.empty(len(actions))
    for k, a in enumerate(actions):
        out[k] = dist @ mdp.rewards[a]
        dist = dist @ mdp.transitions[a]
    return out


def expected_reward_rollouts(mdp: TabularMdp, actions) -> np.ndarray:
    """Same as :func:`expected_reward_rollout` for every start state; shape (T, S)."""
    actions = [int(a) for a in actions]
    if not actions:
        raise ValueError("action sequence must be non-empty")
    dist = np.eye(mdp.num_states)
    out = np.empty((len(actions), mdp.num_states))
    for k, a in enumerate(actions):
        out[k] = dist @ mdp.rewards[a]
        dist = dist @ mdp.transitions[a]
    return out


def compute_sr(mdp: TabularMdp, pi: TabularPolicy) -> np.ndarray:
    _check_gamma(mdp)
    p_pi, _ = policy_matrices(mdp, pi)
    return np.linalg.inv(np.eye(mdp.num_states) - mdp.gamma * p_pi)


def compute_sr_action(mdp: TabularMdp, pi: TabularPolicy) -> np.ndarray:
    """Action-conditioned SR, shape (A, S, S): I + gamma P_a SR."""
    sr = compute_sr(mdp, pi)
    return np.eye(mdp.num_states)[None] + mdp.gamma * mdp.transitions @ sr


def transitions_from_sr(sr: np.ndarray, sr_action: np.ndarray, gamma: float) -> np.ndarray:
    """Recover P_a = (SR_a - I) SR^{-1} / gamma from the state and action-conditioned SRs."""
    if gamma <= 0:
        raise ValueError("gamma must be positive to invert the SR")
    eye = np.eye(sr.shape[0])
    return (sr_action - eye[None]) @ np.linalg.inv(sr) / gamma


def compute_sf(mdp: TabularMdp, phi: np.ndarray, pi: TabularPolicy) -> np.ndarray:
    """Successor features psi[s, a] = sum_s' SR_a[s, s'] phi[s'], shape (S, A, n)."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != mdp.num_states:
        raise ValueError("representation must have one row per state")
    sr_a = compute_sr_action(mdp, pi)
    return np.transpose(sr_a @ phi, (1, 0, 2))


def _group_rows(keys: np.ndarray, prior: np.ndarray, tol: float) -> np.ndarray:
    """Greedy grouping: a state joins the first group (same prior block) whose
    representative is within ``tol`` in max-norm; groups numbered in state order."""
    reps: list = []
    labels = np.empty(keys.shape[0], dtype=int)
    for s in range(keys.shape[0]):
        for g, (block, rep) in enumerate(reps):
            if block == prior[s] and np.max(np.abs(keys[s] - keys[rep]), initial=0.0) <= tol:
                labels[s] = g
                break
        else:
            labels[s] = len(reps)
            reps.append((prior[s], s))
    return labels


def refine_partition(mdp: TabularMdp, partition: Partition, prob_tol: float = 1e-6,
                     max_rounds: int | None = None) -> Partition:
    """Split blocks on block-transition signatures until nothing changes."""
    labels = partition.block_of.copy()
    rounds = max_rounds if max_rounds is not None else mdp.num_states + 1
    for _ in range(rounds):
        onehot = np.eye(labels.max() + 1)[labels]
        signature = np.concatenate([mdp.transitions[a] @ onehot for a in range(mdp.num_actions)], axis=1)
        new = _group_rows(signature, labels, prob_tol)
        if new.max() == labels.max():
            return Partition(new)
        labels = new
    return Partition(labels)


def bisimulation_partition(mdp: TabularMdp, reward_tol: float = 1e-6,
                           prob_tol: float = 1e-6) -> Partition:
    """Coarsest bisimulation, refined from the partition by reward vectors."""
    if reward_tol < 0 or prob_tol < 0:
        raise ValueError("tolerances must be non-negative")
    init = _group_rows(mdp.rewards.T, np.zeros(mdp.num_states, dtype=int), reward_tol)
    return refine_partition(mdp, Partition(init), prob_tol)


def quotient_mdp(mdp: TabularMdp, partition: Partition) -> TabularMdp:
    """Block-level MDP built from each block's lowest-index representative."""
    onehot = partition.one_hot()
    reps = np.array([b[0] for b in partition.blocks()])
    p = mdp.transitions[:, reps, :] @ onehot
    r = mdp.rewards[:, reps]
    return TabularMdp(p, r, mdp.gamma)
