"""Linear TD-learning, successor-feature learning and tabular Q-learning on abstractions.

Features ``xi`` are stored as an (S*A, m) matrix whose row ``s*A + a`` is the
feature vector of the pair (s, a). Successor features use the row convention
psi(s, a) = G^T xi(s, a), so Q = psi . w = xi . (G w) and the matching TD
weights are ``theta = G @ w``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .clustering import DiscreteAbstraction
from .mdp import TabularMdp


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    terminal: bool = False


def tabular_features(num_states: int, num_actions: int) -> np.ndarray:
    """One-hot basis over (state, action) pairs."""
    return np.eye(num_states * num_actions)


def _rows(xi, s, num_actions):
    return xi[s * num_actions:(s + 1) * num_actions]


def _next_weights(q_next, mode, s_next):
    """Action weights b(s', .) for the bootstrap target."""
    if isinstance(mode, str):
        if mode != "greedy":
            raise ValueError(f"unknown bootstrap mode {mode!r}")
        b = np.zeros(q_next.size)
        b[int(np.argmax(q_next))] = 1.0
        return b
    pi = np.asarray(mode, dtype=float)
    return pi[s_next] if pi.ndim == 2 else pi


def td_update(theta, xi, tr: Transition, mode, lr: float, gamma: float, num_actions: int) -> np.ndarray:
    """One linear TD step theta <- theta - lr (Q(s,a) - y) xi(s,a).

    ``mode`` is "greedy" (y uses the max next Q-value) or a policy, either
    (S, A) or a single action distribution (expected SARSA target).
    """
    x = xi[tr.s * num_actions + tr.a]
    q = x @ theta
    y = tr.r
    if not tr.terminal:
        q_next = _rows(xi, tr.s_next, num_actions) @ theta
        y += gamma * _next_weights(q_next, mode, tr.s_next) @ q_next
    return theta - lr * (q - y) * x


def sf_update(g, w, xi, tr: Transition, mode, lr: float, gamma: float, num_actions: int) -> np.ndarray:
    """One SF step G <- G - lr xi(s,a) (psi(s,a) - target)^T.

    The target is xi(s,a) + gamma * sum_a' b(s',a') psi(s',a'); greedy ``b``
    is computed from the Q-values psi . w.
    """
    x = xi[tr.s * num_actions + tr.a]
    psi = x @ g
    target = x.copy()
    if not tr.terminal:
        psi_next = _rows(xi, tr.s_next, num_actions) @ g
        b = _next_weights(psi_next @ w, mode, tr.s_next)
        target = target + gamma * b @ psi_next
    return g - lr * np.outer(x, psi - target)


class EquivalenceResult(NamedTuple):
    max_deviation: float
    max_theta: float
    theta: np.ndarray
    g: np.ndarray


def prop1_equivalence_run(mdp: TabularMdp, xi, w, theta0, g0, trajectory=None, mode="greedy",
                          lr: float = 0.1, steps: int = 10_000, epsilon: float = 0.1, seed: int = 0,
                          tol: float = 1e-10) -> EquivalenceResult:
    """Run TD and SF learning on one transition stream and track max_t |theta_t - G_t w|.

    Without a ``trajectory`` the stream is generated online: actions are
    epsilon-greedy in the TD iterate's Q-values and shared by both learners.
    """
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    theta = np.array(theta0, dtype=float)
    g = np.array(g0, dtype=float)
    na = mdp.num_actions
    if np.max(np.abs(theta - g @ w)) > tol * max(1.0, np.max(np.abs(theta))):
        raise ValueError("theta0 must equal G0 @ w")
    rng = np.random.default_rng(seed)
    terminal = set(mdp.terminal_states)
    starts = mdp.initial_states()

    def stream():
        if trajectory is not None:
            yield from (Transition(*t) if not isinstance(t, Transition) else t for t in trajectory)
            return
        s = int(starts[rng.integers(starts.size)])
        for _ in range(steps):
            if rng.random() < epsilon:
                a = int(rng.integers(na))
            else:
                a = int(np.argmax(_rows(xi, s, na) @ theta))
            s_next = mdp.sample_next(s, a, rng.random())
            r = mdp.sample_reward(s, a, s_next)
            yield Transition(s, a, r, s_next, s_next in terminal)
            s = int(starts[rng.integers(starts.size)]) if s_next in terminal else s_next

    worst = 0.0
    biggest = float(np.max(np.abs(theta)))
    for tr in stream():
        x = xi[tr.s * na + tr.a]
        if abs(x @ w - tr.r) > tol * max(1.0, abs(tr.r)):
            raise ValueError(f"reward at ({tr.s}, {tr.a}) is not xi . w")
        theta = td_update(theta, xi, tr, mode, lr, mdp.gamma, na)
        g = sf_update(g, w, xi, tr, mode, lr, mdp.gamma, na)
        worst = max(worst, float(np.max(np.abs(theta - g @ w))))
        biggest = max(biggest, float(np.max(np.abs(theta))))
    return EquivalenceResult(worst, biggest, theta, g)


def abstract_q_learning(mdp: TabularMdp, abstraction: DiscreteAbstraction | None = None, lr: float = 0.9,
                        epsilon: float = 0.1, optimistic_init: float = 1.0, episodes: int = 100,
                        timeout: int = 5000, seed: int = 0) -> np.ndarray:
    """Tabular Q-learning over latent states; returns the step count of every episode.

    Each transition (s, a, r, s') is learned as (z(s), a, r, z(s')). Greedy
    ties are broken uniformly at random so optimistic values drive exploration.
    """
    if abstraction is None:
        abstraction = DiscreteAbstraction.identity(mdp.num_states)
    if abstraction.num_states != mdp.num_states:
        raise ValueError("abstraction does not cover the state space")
    rng = np.random.default_rng(seed)
    z_of = abstraction.cluster_of
    q = np.full((abstraction.num_clusters, mdp.num_actions), float(optimistic_init))
    terminal = np.zeros(mdp.num_states, dtype=bool)
    terminal[list(mdp.terminal_states)] = True
    starts = mdp.initial_states()
    gamma = mdp.gamma
    lengths = np.empty(episodes, dtype=int)
    for ep in range(episodes):
        s = int(starts[rng.integers(starts.size)])
        steps = 0
        while steps < timeout:
            z = z_of[s]
            row = q[z]
            if rng.random() < epsilon:
                a = int(rng.integers(mdp.num_actions))
            else:
                best = np.flatnonzero(row == row.max())
                a = int(best[rng.integers(best.size)]) if best.size > 1 else int(best[0])
            s_next = mdp.sample_next(s, a, rng.random())
            r = mdp.sample_reward(s, a, s_next)
            steps += 1
            done = bool(terminal[s_next])
            y = r if done else r + gamma * q[z_of[s_next]].max()
            row[a] += lr * (y - row[a])
            if done:
                break
            s = s_next
        lengths[ep] = steps
    return lengths
