"""Fitted Q-iteration with linear Q-values on (optionally trainable) state features."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TransitionDataset
from .mdp import TabularMdp, value_iteration
from .optim import AdamState, adam_step
from .training import DIVERGENCE_LIMIT, TrainingDiverged


@dataclass(frozen=True)
class FqiConfig:
    learning_rate: float = 0.00001
    num_steps: int = 20000
    batch_size: int = 50
    gamma: float = 0.9
    seed: int = 0
    trainable_phi: bool = False
    latent_dim: int = 50
    trace_every: int = 1000

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.num_steps < 0 or self.batch_size < 1 or self.latent_dim < 1 or self.trace_every < 1:
            raise ValueError("step counts and sizes must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")


@dataclass
class FqiResult:
    phi: np.ndarray
    q: np.ndarray  # (A, n); Q(s, a) = phi[s] @ q[a]
    loss_trace: list = field(default_factory=list)

    def q_values(self) -> np.ndarray:
        return self.phi @ self.q.T

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.q_values(), axis=1)


def fqi_targets(phi, q, r, s_next, done, gamma):
    """r + gamma * max_a' Q(s', a'), with no bootstrap out of terminal states."""
    boot = np.max(phi[s_next] @ q.T, axis=1)
    return r + gamma * np.where(done, 0.0, boot)


def fqi_loss(phi, q, data: TransitionDataset, done, gamma) -> float:
    y = fqi_targets(phi, q, data.r, data.s_next, done, gamma)
    e = np.sum(phi[data.s] * q[data.a], axis=1) - y
    return float(e @ e)


def fqi_batch(phi, q, s, a, r, s_next, done, gamma, grad_phi=False, target=None):
    """Squared TD loss on index arrays and its gradient with the target held fixed.

    ``target`` optionally supplies the (phi, q) pair used for the bootstrap.
    """
    phi_t, q_t = (phi, q) if target is None else target
    y = fqi_targets(phi_t, q_t, r, s_next, done, gamma)
    x = phi[s]
    e = np.sum(x * q[a], axis=1) - y
    g_q = np.zeros_like(q)
    np.add.at(g_q, a, 2.0 * e[:, None] * x)
    grads = {"q": g_q}
    if grad_phi:
        g_phi = np.zeros_like(phi)
        np.add.at(g_phi, s, 2.0 * e[:, None] * q[a])
        grads["phi"] = g_phi
    return float(e @ e), grads


def fitted_q_iteration(data: TransitionDataset, phi=None, config: FqiConfig = FqiConfig(),
                       terminal_states=(), q0=None) -> FqiResult:
    """Minimize sum (phi_s . q_a - y)^2 by Adam on uniform mini-batches.

    The target y is treated as a constant. With ``config.trainable_phi`` the
    features are updated as well; ``phi=None`` then starts from U[0, 1].
    Transitions whose next state is in ``terminal_states`` do not bootstrap.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    if phi is None:
        if not cfg.trainable_phi:
            raise ValueError("frozen mode needs a feature matrix")
        phi = rng.uniform(0.0, 1.0, size=(data.num_states, cfg.latent_dim))
    phi = np.array(phi, dtype=float)
    if phi.shape[0] != data.num_states:
        raise ValueError("feature matrix does not match the dataset's state count")
    n, num_actions = phi.shape[1], data.num_actions
    q = np.zeros((num_actions, n)) if q0 is None else np.array(q0, dtype=float)
    params = {"phi": phi, "q": q}
    terminal = np.zeros(data.num_states, dtype=bool)
    terminal[list(terminal_states)] = True
    done_all = terminal[data.s_next]
    state = AdamState()
    trace = []
    size = len(data)
    if size == 0:
        return FqiResult(phi, q, trace)
    for step in range(cfg.num_steps + 1):
        if step % cfg.trace_every == 0 or step == cfg.num_steps:
            loss = fqi_loss(params["phi"], params["q"], data, done_all, cfg.gamma)
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise TrainingDiverged(f"fitted Q loss {loss!r} at step {step} (lr={cfg.learning_rate})")
            trace.append((step, loss))
        if step == cfg.num_steps:
            break
        idx = rng.integers(size, size=cfg.batch_size)
        _, grads = fqi_batch(params["phi"], params["q"], data.s[idx], data.a[idx], data.r[idx],
                             data.s_next[idx], done_all[idx], cfg.gamma, cfg.trainable_phi)
        adam_step(state, params, grads, cfg.learning_rate)
    return FqiResult(params["phi"], params["q"], trace)


def tabular_model_baseline(data: TransitionDataset, gamma: float, seed: int = 0):
    """Empirical model with uniform completion, solved by value iteration.

    Unvisited (s, a) pairs get uniform next-state probabilities and a reward
    drawn from U[0, 1]. Returns the greedy action per state and Q-values.
    """
    rng = np.random.default_rng(seed)
    num_states, num_actions = data.num_states, data.num_actions
    counts = np.zeros((num_actions, num_states, num_states))
    np.add.at(counts, (data.a, data.s, data.s_next), 1.0)
    reward_sum = np.zeros((num_actions, num_states))
    np.add.at(reward_sum, (data.a, data.s), data.r)
    visits = counts.sum(axis=2)
    seen = visits > 0
    p = np.where(seen[..., None], counts / np.maximum(visits, 1)[..., None], 1.0 / num_states)
    r = np.where(seen, reward_sum / np.maximum(visits, 1), rng.uniform(0.0, 1.0, size=visits.shape))
    _, q, _ = value_iteration(TabularMdp(p, r, gamma))
    return np.argmax(q, axis=1), q
