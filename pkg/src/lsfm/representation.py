"""Linear latent models over a state representation and their error metrics.

A representation is a |S| x n matrix ``phi`` whose row s is the latent vector
of state s. Latent models are stored action-major: ``m[a]`` / ``f[a]`` are
n x n and ``w[a]`` is an n-vector, all acting on row vectors.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .mdp import TabularMdp, TabularPolicy, bisimulation_partition, expected_reward_rollouts


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def check_phi(phi, num_states: int | None = None) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[1] < 1:
        raise ValueError("representation must be a 2-d array with at least one column")
    if num_states is not None and phi.shape[0] != num_states:
        raise ValueError(f"representation has {phi.shape[0]} rows, expected {num_states}")
    if not np.all(np.isfinite(phi)):
        raise ValueError("representation has non-finite entries")
    return phi


@dataclass(frozen=True, eq=False)
class StateRepresentation:
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _frozen(check_phi(self.phi)))

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def norm_bound(self) -> float:
        return float(np.max(np.linalg.norm(self.phi, axis=1)))


def _check_model(mats, w, label):
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError(f"{label} must have shape (A, n, n)")
    if w.shape != mats.shape[:2]:
        raise ValueError(f"reward weights must have shape {mats.shape[:2]}")
    if not (np.all(np.isfinite(mats)) and np.all(np.isfinite(w))):
        raise ValueError("model has non-finite entries")


@dataclass(frozen=True, eq=False)
class Lam:
    """Linear action model: latent transitions ``m[a]`` and rewards ``w[a]``."""

    m: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _frozen(self.m))
        object.__setattr__(self, "w", _frozen(self.w))
        _check_model(self.m, self.w, "transition matrices")

    @property
    def num_actions(self) -> int:
        return self.m.shape[0]

    @property
    def n(self) -> int:
        return self.m.shape[1]

    @property
    def m_norm(self) -> float:
        return float(max(np.linalg.norm(ma) for ma in self.m))

    @property
    def w_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.w, axis=1)))

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "w": self.w.tolist()}


@dataclass(frozen=True, eq=False)
class Lsfm:
    """Linear successor feature model: SF maps ``f[a]`` and rewards ``w[a]``."""

    f: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", _frozen(self.f))
        object.__setattr__(self, "w", _frozen(self.w))
        _check_model(self.f, self.w, "SF matrices")

    @property
    def num_actions(self) -> int:
        return self.f.shape[0]

    @property
    def n(self) -> int:
        return self.f.shape[1]

    @property
    def fbar(self) -> np.ndarray:
        """Average of the SF matrices over actions (uniform action choice)."""
        return self.f.mean(axis=0)

    def to_dict(self) -> dict:
        return {"f": self.f.tolist(), "w": self.w.tolist()}


def model_to_json(phi, model) -> str:
    out = {"phi": np.asarray(phi, dtype=float).tolist()}
    out.update(model.to_dict())
    return json.dumps(out)


def model_from_json(text: str):
    d = json.loads(text)
    phi = check_phi(np.asarray(d["phi"], dtype=float))
    if "m" in d:
        model = Lam(np.asarray(d["m"], dtype=float), np.asarray(d["w"], dtype=float))
    elif "f" in d:
        model = Lsfm(np.asarray(d["f"], dtype=float), np.asarray(d["w"], dtype=float))
    else:
        raise ValueError("model JSON needs either 'm' or 'f'")
    if model.n != phi.shape[1]:
        raise ValueError("model and representation dimensions differ")
    return phi, model


@dataclass(frozen=True)
class ErrorReport:
    eps_r: float
    eps_p: float
    eps_psi: float
    delta: float
    m_norm: float
    w_norm: float
    n_norm: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def csv_header() -> str:
        return ",".join(ErrorReport.__dataclass_fields__)

    def csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow([repr(float(v)) for v in self.to_dict().values()])
        return buf.getvalue()


def lam_rollout_predict(phi, lam: Lam, s: int, actions) -> np.ndarray:
    """Predicted expected reward at each step of an action sequence from state s."""
    return lam_rollout_predictions(np.asarray(phi)[[s]], lam, actions)[:, 0]


def lam_rollout_predictions(phi, lam: Lam, actions) -> np.ndarray:
    """Predictions for every row of ``phi``; shape (T, rows)."""
    actions = [int(a) for a in actions]
    if not actions:
        raise ValueError("action sequence must be non-empty")
    x = np.array(phi, dtype=float)
    out = np.empty((len(actions), x.shape[0]))
    for k, a in enumerate(actions):
        out[k] = x @ lam.w[a]
        x = x @ lam.m[a]
    return out


def rollout_error_curve(mdp: TabularMdp, phi, lam: Lam, sequences) -> np.ndarray:
    """Mean absolute error of predicted expected rewards per step.

    Averages over every start state and every action sequence (rows of
    ``sequences``); entry t-1 is the error at step t.
    """
    seqs = np.atleast_2d(np.asarray(sequences, dtype=int))
    total = np.zeros(seqs.shape[1])
    for actions in seqs:
        diff = lam_rollout_predictions(phi, lam, actions) - expected_reward_rollouts(mdp, actions)
        total += np.abs(diff).mean(axis=1)
    return total / seqs.shape[0]


def reward_error(mdp: TabularMdp, phi, w) -> float:
    return float(np.max(np.abs(mdp.rewards.T - phi @ np.asarray(w).T)))


def transition_error(mdp: TabularMdp, phi, m) -> float:
    worst = 0.0
    for a in range(mdp.num_actions):
        resid = mdp.transitions[a] @ phi - phi @ m[a]
        worst = max(worst, float(np.max(np.linalg.norm(resid, axis=1))))
    return worst


def sf_error(mdp: TabularMdp, phi, f) -> float:
    fbar = np.mean(f, axis=0)
    worst = 0.0
    for a in range(mdp.num_actions):
        resid = phi + mdp.gamma * mdp.transitions[a] @ phi @ fbar - phi @ f[a]
        worst = max(worst, float(np.max(np.linalg.norm(resid, axis=1))))
    return worst


def model_mismatch(m, f, gamma: float) -> float:
    """Largest Frobenius norm of I + gamma M_a Fbar - F_a over actions."""
    fbar = np.mean(f, axis=0)
    eye = np.eye(fbar.shape[0])
    return float(max(np.linalg.norm(eye + gamma * m[a] @ fbar - f[a]) for a in range(len(f))))


def error_metrics(mdp: TabularMdp, phi, lam: Lam, lsfm: Lsfm) -> ErrorReport:
    """Worst-case one-step errors of a LAM/LSFM pair against exact expectations."""
    phi = check_phi(phi, mdp.num_states)
    if lam.n != phi.shape[1] or lsfm.n != phi.shape[1]:
        raise ValueError("model dimensions do not match the representation")
    return ErrorReport(
        eps_r=reward_error(mdp, phi, lam.w),
        eps_p=transition_error(mdp, phi, lam.m),
        eps_psi=sf_error(mdp, phi, lsfm.f),
        delta=model_mismatch(lam.m, lsfm.f, mdp.gamma),
        m_norm=lam.m_norm,
        w_norm=lam.w_norm,
        n_norm=float(np.max(np.linalg.norm(phi, axis=1))),
    )


def policy_average(mats, policy) -> np.ndarray:
    """Average action-indexed rows under an abstract policy.

    ``mats`` has shape (A, n, ...). A policy of shape (n, A) over one-hot latent
    indices averages row i with weights policy[i]; a single action distribution
    of shape (A,) averages whole matrices.
    """
    mats = np.asarray(mats, dtype=float)
    policy = np.asarray(policy, dtype=float)
    if policy.ndim == 1:
        return np.tensordot(policy, mats, axes=1)
    if policy.shape != (mats.shape[1], mats.shape[0]):
        raise ValueError("latent policy must have shape (n, A)")
    return np.einsum("ia,ai...->i...", policy, mats)


def lsfm_for_policy(lam: Lam, policy, gamma: float) -> Lsfm:
    """SF model consistent with ``lam`` for an abstract policy: F_a = I + gamma M_a F^pi."""
    n = lam.n
    m_pi = policy_average(lam.m, policy)
    f_pi = np.linalg.solve(np.eye(n) - gamma * m_pi, np.eye(n))
    return Lsfm(np.eye(n)[None] + gamma * lam.m @ f_pi, lam.w)


def lam_from_lsfm(lsfm: Lsfm, gamma: float) -> Lam:
    """Invert F_a = I + gamma M_a Fbar for the transition matrices."""
    if gamma <= 0:
        raise ValueError("needs a positive discount")
    inv = np.linalg.inv(lsfm.fbar)
    eye = np.eye(lsfm.n)
    return Lam(np.stack([(fa - eye) @ inv / gamma for fa in lsfm.f]), lsfm.w)


def one_hot_labels(phi) -> np.ndarray:
    """Latent index of each row; raises unless every row is a one-hot vector."""
    phi = np.asarray(phi, dtype=float)
    ones = np.isclose(phi, 1.0, atol=0, rtol=0)
    zeros = phi == 0.0
    if not np.all(ones | zeros) or not np.all(ones.sum(axis=1) == 1):
        raise ValueError("representation is not one-hot")
    return np.argmax(phi, axis=1)


@dataclass(frozen=True)
class Verdict:
    """Outcome of a bisimulation-encoding check.

    ``conditions_met`` says whether the model equations hold within tol;
    ``generalizes`` says whether states sharing a latent are bisimilar.
    """

    conditions_met: bool
    generalizes: bool
    residual: float

    @property
    def label(self) -> str:
        if not self.conditions_met:
            return "conditions-not-met"
        return "true" if self.generalizes else "violated"

    def __bool__(self) -> bool:
        return self.conditions_met and self.generalizes


def _shares_bisimulation(mdp, labels, tol) -> bool:
    blocks = bisimulation_partition(mdp, tol, tol).block_of
    for z in np.unique(labels):
        if np.unique(blocks[labels == z]).size > 1:
            return False
    return True


def check_theorem1(mdp: TabularMdp, phi, lam: Lam, tol: float = 1e-8) -> Verdict:
    """Exact LAM on one-hot features implies bisimilar latent classes."""
    labels = one_hot_labels(check_phi(phi, mdp.num_states))
    phi = np.asarray(phi, dtype=float)
    resid = max(reward_error(mdp, phi, lam.w),
                max(float(np.max(np.abs(phi @ lam.m[a] - mdp.transitions[a] @ phi)))
                    for a in range(mdp.num_actions)))
    if resid > tol:
        return Verdict(False, False, resid)
    return Verdict(True, _shares_bisimulation(mdp, labels, max(tol, 1e-6)), resid)


def lsfm_fixed_point_residual(mdp: TabularMdp, phi, lsfm: Lsfm, policy=None) -> float:
    """Largest entry of Phi F_a - (Phi + gamma P_a Phi F^pi) together with the reward residual."""
    phi = np.asarray(phi, dtype=float)
    if policy is None:
        policy = np.full((lsfm.n, lsfm.num_actions), 1.0 / lsfm.num_actions)
    f_pi = policy_average(lsfm.f, policy)
    resid = reward_error(mdp, phi, lsfm.w)
    for a in range(mdp.num_actions):
        d = phi @ lsfm.f[a] - phi - mdp.gamma * mdp.transitions[a] @ phi @ f_pi
        resid = max(resid, float(np.max(np.abs(d))))
    return resid


def check_theorem2(mdp: TabularMdp, phi, lsfm: Lsfm, tol: float = 1e-8, policy=None) -> Verdict:
    """Exact LSFM fixed point on one-hot features implies bisimilar latent classes."""
    labels = one_hot_labels(check_phi(phi, mdp.num_states))
    resid = lsfm_fixed_point_residual(mdp, phi, lsfm, policy)
    if resid > tol:
        return Verdict(False, False, resid)
    return Verdict(True, _shares_bisimulation(mdp, labels, max(tol, 1e-6)), resid)


def quotient_models(mdp: TabularMdp, partition):
    """One-hot representation of a partition with its exact LAM and LSFM.

    Only exact when the partition is a bisimulation.
    """
    phi = partition.one_hot()
    reps = np.array([b[0] for b in partition.blocks()])
    m = mdp.transitions[:, reps, :] @ phi
    w = mdp.rewards[:, reps]
    lam = Lam(m, w)
    uniform = np.full(mdp.num_actions, 1.0 / mdp.num_actions)
    return phi, lam, lsfm_for_policy(lam, uniform, mdp.gamma)


def latent_policy_to_states(phi, policy) -> TabularPolicy:
    """State policy induced by an abstract policy over one-hot latents or a fixed distribution."""
    policy = np.asarray(policy, dtype=float)
    phi = np.asarray(phi)
    if policy.ndim == 1:
        return TabularPolicy(np.tile(policy, (phi.shape[0], 1)))
    return TabularPolicy(policy[one_hot_labels(phi)])
