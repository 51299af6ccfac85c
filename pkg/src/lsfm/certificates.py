"""Numeric certificates for the rollout, value and model-consistency error bounds.

Each certificate computes both sides of an inequality and reports whether it
holds rather than asserting, so callers can tabulate slack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TransitionDataset
from .mdp import TabularMdp, TabularPolicy, expected_reward_rollouts, policy_evaluation
from .optim import least_squares_lam, least_squares_lsfm
from .representation import (Lam, Lsfm, check_phi, error_metrics, lam_rollout_predictions,
                             latent_policy_to_states, model_mismatch, policy_average,
                             quotient_models)

SLACK = 1e-9


class BoundNotApplicable(ValueError):
    """The bound's preconditions fail, so it says nothing for this instance."""


@dataclass(frozen=True)
class Certificate:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return bool(self.lhs <= self.rhs + SLACK)

    @property
    def slack(self) -> float:
        return float(self.rhs - self.lhs)


@dataclass(frozen=True)
class CurveCertificate:
    """Per-step empirical errors and bounds; index t-1 holds step t.

    ``shifted_bound`` carries the sum over M^1..M^(t-1), which only dominates
    ``bound`` when M >= 1; it is reported but not used for ``holds``.
    """

    empirical: np.ndarray
    bound: np.ndarray
    shifted_bound: np.ndarray | None = None

    @property
    def holds(self) -> bool:
        return bool(np.all(self.empirical <= self.bound + SLACK))

    @property
    def slack(self) -> float:
        return float(np.min(self.bound - self.empirical))


def transition_bound_from_sf(report, gamma: float) -> float:
    """Right-hand side bounding the transition error by SF error and model mismatch."""
    gm = gamma * report.m_norm
    if gamma <= 0 or gm >= 1:
        raise BoundNotApplicable(f"needs 0 < gamma*M < 1, got gamma={gamma}, gamma*M={gm}")
    c = (1 + gamma) * (1 + gm) * report.n_norm / (gamma * (1 - gm))
    return report.eps_psi * (1 + gm) / gamma + c * report.delta


def lemma1_certificate(mdp: TabularMdp, phi, lam: Lam, lsfm: Lsfm) -> Certificate:
    report = error_metrics(mdp, phi, lam, lsfm)
    return Certificate(report.eps_p, transition_bound_from_sf(report, mdp.gamma))


def rollout_bound(eps_p: float, eps_r: float, m_norm: float, w_norm: float, horizon: int,
                  first_power: int = 0) -> np.ndarray:
    """eps_p * sum_{k=0}^{t-2} M^k W + eps_r for t = 1..horizon.

    Each extra step adds the transition error of the first step times the
    norm of the remaining t-1 matrix factors and reward weights, so the powers
    run from 0 to t-2. ``first_power=1`` gives the shifted sum over 1..t-1.
    """
    powers = m_norm ** np.arange(first_power, first_power + horizon - 1)
    partial = np.concatenate([[0.0], np.cumsum(powers)])
    return eps_p * partial * w_norm + eps_r


def _rollout_errors(mdp, phi, lam, horizon, n_sequences, rng):
    worst = np.zeros(horizon)
    for _ in range(n_sequences):
        actions = rng.integers(mdp.num_actions, size=horizon)
        err = np.abs(lam_rollout_predictions(phi, lam, actions) - expected_reward_rollouts(mdp, actions))
        worst = np.maximum(worst, err.max(axis=1))
    return worst


def theorem3_certificate(mdp: TabularMdp, phi, lam: Lam, horizon: int, n_sequences: int = 20,
                         seed: int = 0) -> CurveCertificate:
    """Rollout errors over random action sequences (all start states) against the bound."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    phi = check_phi(phi, mdp.num_states)
    report = error_metrics(mdp, phi, lam, Lsfm(np.zeros_like(lam.m), lam.w))
    args = (report.eps_p, report.eps_r, report.m_norm, report.w_norm, horizon)
    empirical = _rollout_errors(mdp, phi, lam, horizon, n_sequences, np.random.default_rng(seed))
    return CurveCertificate(empirical, rollout_bound(*args), rollout_bound(*args, first_power=1))


def theorem5_certificate(mdp: TabularMdp, phi, lsfm: Lsfm, lam: Lam, horizon: int,
                         n_sequences: int = 20, seed: int = 0) -> CurveCertificate:
    """As :func:`theorem3_certificate` with the transition error replaced by its SF bound."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    phi = check_phi(phi, mdp.num_states)
    report = error_metrics(mdp, phi, lam, lsfm)
    eps_p = transition_bound_from_sf(report, mdp.gamma)
    args = (eps_p, report.eps_r, report.m_norm, report.w_norm, horizon)
    empirical = _rollout_errors(mdp, phi, lam, horizon, n_sequences, np.random.default_rng(seed))
    return CurveCertificate(empirical, rollout_bound(*args), rollout_bound(*args, first_power=1))


def theorem4_value_vectors(phi, lam: Lam, policy, gamma: float):
    """Latent value vector v and per-action q_a = w_a + gamma M_a v.

    ``policy`` is either an (n, A) abstract policy over one-hot latent indices
    or a single action distribution of length A.
    """
    n = lam.n
    m_pi = policy_average(lam.m, policy)
    w_pi = policy_average(lam.w, policy)
    system = np.eye(n) - gamma * m_pi
    if np.max(np.abs(np.linalg.eigvals(gamma * m_pi))) >= 1.0:
        raise np.linalg.LinAlgError("latent dynamics are not contractive under this policy")
    v = np.linalg.solve(system, w_pi)
    q = lam.w + gamma * lam.m @ v
    return v, q


@dataclass(frozen=True)
class ValueCertificate:
    value: Certificate
    q: Certificate

    @property
    def holds(self) -> bool:
        return self.value.holds and self.q.holds

    @property
    def slack(self) -> float:
        return min(self.value.slack, self.q.slack)


def value_bound_certificate(mdp: TabularMdp, phi, lam: Lam, policy) -> ValueCertificate:
    """Compare the latent value prediction with exact policy evaluation."""
    phi = check_phi(phi, mdp.num_states)
    report = error_metrics(mdp, phi, lam, Lsfm(np.zeros_like(lam.m), lam.w))
    v, q = theorem4_value_vectors(phi, lam, policy, mdp.gamma)
    v_true, q_true = policy_evaluation(mdp, latent_policy_to_states(phi, policy))
    bound = (report.eps_r + mdp.gamma * report.eps_p * np.linalg.norm(v)) / (1 - mdp.gamma)
    return ValueCertificate(Certificate(float(np.max(np.abs(v_true - phi @ v))), bound),
                            Certificate(float(np.max(np.abs(q_true - phi @ q.T))), bound))


@dataclass(frozen=True)
class SfMismatchCertificate:
    delta: float
    bound: float
    sf_loss: float
    pinv_norm: float

    @property
    def holds(self) -> bool:
        # the bound controls the squared mismatch
        return bool(self.delta ** 2 <= self.bound + SLACK)

    @property
    def slack(self) -> float:
        return float(self.bound - self.delta ** 2)


def sf_dataset_loss(data: TransitionDataset, phi, lsfm: Lsfm, gamma: float) -> float:
    x, x_next = phi[data.s], phi[data.s_next]
    target = x + gamma * x_next @ lsfm.fbar
    pred = np.einsum("in,inm->im", x, lsfm.f[data.a])
    return float(np.sum((pred - target) ** 2))


def prop2_certificate(data: TransitionDataset, phi, lsfm: Lsfm, gamma: float,
                      lam: Lam | None = None) -> SfMismatchCertificate:
    """Model mismatch of the dataset least-squares LAM against the SF loss.

    Needs every per-action feature matrix to have full column rank.
    """
    phi = check_phi(phi, data.num_states)
    n = phi.shape[1]
    worst = 0.0
    for a in range(data.num_actions):
        idx = data.by_action(a)
        if idx.size == 0:
            raise ValueError(f"action {a} does not occur in the dataset")
        x = phi[data.s[idx]]
        sv = np.linalg.svd(x, compute_uv=False)
        if sv.size < n or sv[-1] <= 1e-10 * max(sv[0], 1.0):
            raise BoundNotApplicable(f"features for action {a} are rank deficient")
        worst = max(worst, 1.0 / sv[-1])
    if lam is None:
        lam = least_squares_lam(phi, data)
    loss = sf_dataset_loss(data, phi, lsfm, gamma)
    return SfMismatchCertificate(model_mismatch(lam.m, lsfm.f, gamma), worst ** 2 * loss, loss, worst)


def random_mdp(rng, num_states: int, num_actions: int, gamma: float) -> TabularMdp:
    p = rng.dirichlet(np.full(num_states, 0.5), size=(num_actions, num_states))
    # sparsify some rows so deterministic-looking transitions appear too
    mask = rng.random((num_actions, num_states)) < 0.3
    det = np.eye(num_states)[rng.integers(num_states, size=(num_actions, num_states))]
    p = np.where(mask[..., None], det, p)
    r = rng.uniform(-1, 1, size=(num_actions, num_states))
    return TabularMdp(p, r, gamma)


@dataclass(frozen=True, eq=False)
class BoundInstance:
    mdp: TabularMdp
    phi: np.ndarray
    lam: Lam
    lsfm: Lsfm
    policies: tuple
    dataset: TransitionDataset
    data_lsfm: Lsfm
    one_hot: bool


def random_instance(seed: int, n_policies: int = 5) -> BoundInstance:
    """Random MDP, features and least-squares models with gamma*M < 1.

    Half the instances use one-hot features with abstract policies over latent
    indices; the others use real features with state-independent policies.
    """
    rng = np.random.default_rng(seed)
    num_states = int(rng.integers(3, 9))
    num_actions = int(rng.integers(1, 4))
    n = int(rng.integers(1, num_states + 1))
    one_hot = bool(seed % 2 == 0)
    if one_hot:
        labels = np.concatenate([np.arange(n), rng.integers(n, size=num_states - n)])
        phi = np.eye(n)[rng.permutation(labels)]
    else:
        phi = rng.normal(size=(num_states, n)) * rng.uniform(0.2, 2.0)
    base = random_mdp(rng, num_states, num_actions, 0.5)
    lam = least_squares_lam(phi, base)
    gamma = float(rng.uniform(0.05, 0.95) * min(1.0, 1.0 / lam.m_norm))
    mdp = base.with_gamma(gamma)
    lsfm = least_squares_lsfm(phi, mdp, gamma)
    if one_hot:
        policies = tuple(rng.dirichlet(np.ones(num_actions), size=n) for _ in range(n_policies))
    else:
        policies = tuple(rng.dirichlet(np.ones(num_actions)) for _ in range(n_policies))
    dataset = _full_rank_dataset(rng, mdp, phi)
    data_lsfm = least_squares_lsfm(phi, dataset, gamma)
    # half of the dataset models are perturbed away from least squares
    perturb = rng.normal(scale=0.1, size=data_lsfm.f.shape) * rng.integers(2)
    data_lsfm = Lsfm(data_lsfm.f + perturb, data_lsfm.w)
    return BoundInstance(mdp, phi, lam, lsfm, policies, dataset, data_lsfm, one_hot)


def _full_rank_dataset(rng, mdp, phi, per_action: int | None = None) -> TransitionDataset:
    num_states, n = phi.shape
    per_action = per_action or 3 * num_states
    rows = []
    for a in range(mdp.num_actions):
        # every state once guarantees full column rank whenever phi has it
        states = np.concatenate([np.arange(num_states), rng.integers(num_states, size=per_action - num_states)])
        for s in states:
            s_next = mdp.sample_next(int(s), a, rng.random())
            rows.append((s, a, mdp.rewards[a, s], s_next))
    return TransitionDataset.from_records(rows, num_states, mdp.num_actions)


def exact_instance(mdp: TabularMdp, partition, n_policies: int = 5, seed: int = 0) -> BoundInstance:
    """Quotient features and models of a bisimulation, for which every bound is tight at zero."""
    rng = np.random.default_rng(seed)
    phi, lam, lsfm = quotient_models(mdp, partition)
    n = phi.shape[1]
    policies = tuple(rng.dirichlet(np.ones(mdp.num_actions), size=n) for _ in range(n_policies))
    dataset = _full_rank_dataset(rng, mdp, phi)
    return BoundInstance(mdp, phi, lam, lsfm, policies, dataset, lsfm, True)


def certificate_suite(inst: BoundInstance, horizon: int = 10, n_sequences: int = 20, seed: int = 0) -> dict:
    """Every certificate for one instance, keyed by a short name."""
    out = {
        "sf_model_mismatch": lemma1_certificate(inst.mdp, inst.phi, inst.lam, inst.lsfm),
        "reward_rollout": theorem3_certificate(inst.mdp, inst.phi, inst.lam, horizon, n_sequences, seed),
        "reward_rollout_from_sf": theorem5_certificate(inst.mdp, inst.phi, inst.lsfm, inst.lam, horizon,
                                                       n_sequences, seed),
    }
    for i, pol in enumerate(inst.policies):
        out[f"value_{i}"] = value_bound_certificate(inst.mdp, inst.phi, inst.lam, pol)
    out["dataset_sf_mismatch"] = prop2_certificate(inst.dataset, inst.phi, inst.data_lsfm, inst.mdp.gamma)
    return out
