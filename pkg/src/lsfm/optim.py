"""Adam and least-squares model initialization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TransitionDataset
from .mdp import TabularMdp
from .representation import Lam, Lsfm


@dataclass
class AdamState:
    """Moment accumulators keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} differs from parameter {k} {params[k].shape}")
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Thin object wrapper around :func:`adam_step`."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.state = AdamState(beta1, beta2, eps)

    def step(self, params: dict, grads: dict) -> None:
        adam_step(self.state, params, grads, self.lr)


def _action_rows(phi, data: TransitionDataset):
    for a in range(data.num_actions):
        idx = data.by_action(a)
        if idx.size == 0:
            raise ValueError(f"action {a} does not occur in the dataset")
        yield a, phi[data.s[idx]], phi[data.s_next[idx]], data.r[idx]


def least_squares_lam(phi, source) -> Lam:
    """Least-squares LAM for fixed features, from a dataset or exact MDP tables."""
    phi = np.asarray(phi, dtype=float)
    if isinstance(source, TabularMdp):
        pinv = np.linalg.pinv(phi)
        m = np.stack([pinv @ source.transitions[a] @ phi for a in range(source.num_actions)])
        w = (pinv @ source.rewards.T).T
        return Lam(m, w)
    m, w = [], []
    for _, x, x_next, r in _action_rows(phi, source):
        pinv = np.linalg.pinv(x)
        m.append(pinv @ x_next)
        w.append(pinv @ r)
    return Lam(np.stack(m), np.stack(w))


def least_squares_lsfm(phi, source, gamma: float, fbar=None) -> Lsfm:
    """Least-squares LSFM against the SF target built from ``fbar`` (identity by default)."""
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[1]
    fbar = np.eye(n) if fbar is None else np.asarray(fbar, dtype=float)
    if isinstance(source, TabularMdp):
        pinv = np.linalg.pinv(phi)
        f = np.stack([pinv @ (phi + gamma * source.transitions[a] @ phi @ fbar)
                      for a in range(source.num_actions)])
        w = (pinv @ source.rewards.T).T
        return Lsfm(f, w)
    f, w = [], []
    for _, x, x_next, r in _action_rows(phi, source):
        pinv = np.linalg.pinv(x)
        f.append(pinv @ (x + gamma * x_next @ fbar))
        w.append(pinv @ r)
    return Lsfm(np.stack(f), np.stack(w))


def least_squares_init(phi, source, gamma: float | None = None):
    """Both least-squares models for fixed features: ``(lam, lsfm)``.

    ``gamma`` defaults to the MDP discount when ``source`` is an MDP.
    """
    if gamma is None:
        if not isinstance(source, TabularMdp):
            raise ValueError("gamma is required for dataset sources")
        gamma = source.gamma
    return least_squares_lam(phi, source), least_squares_lsfm(phi, source, gamma)
