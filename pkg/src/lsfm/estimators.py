"""scikit-learn style wrappers around the functional learners."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clustering import agglomerative_cluster
from .dataset import TransitionDataset
from .fqi import FqiConfig, fitted_q_iteration
from .mdp import TabularMdp
from .training import TrainConfig, train_representation


def as_dataset(X, num_states=None, num_actions=None) -> TransitionDataset:
    """Accept a TransitionDataset or an (N, 4) array of (s, a, r, s') rows."""
    if isinstance(X, TransitionDataset):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError("expected a TransitionDataset or an (N, 4) array of (s, a, r, s_next)")
    s, a, s_next = arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 3].astype(int)
    num_states = num_states or int(max(s.max(), s_next.max())) + 1
    num_actions = num_actions or int(a.max()) + 1
    return TransitionDataset.from_records(arr, num_states, num_actions)


class RewardPredictiveEncoder(TransformerMixin, BaseEstimator):
    """Learns state features with an LSFM or LAM; ``transform`` maps state indices to features.

    ``fit`` accepts a TabularMdp (matrix form) or transitions (dataset form).
    """

    def __init__(self, model="lsfm", latent_dim=3, learning_rate=0.001, alpha_psi=1.0, alpha_p=1.0,
                 alpha_n=0.0, batch_size=50, num_steps=1000, gamma=None, stop_gradient=True, seed=0,
                 num_states=None, num_actions=None):
        self.model = model
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.alpha_psi = alpha_psi
        self.alpha_p = alpha_p
        self.alpha_n = alpha_n
        self.batch_size = batch_size
        self.num_steps = num_steps
        self.gamma = gamma
        self.stop_gradient = stop_gradient
        self.seed = seed
        self.num_states = num_states
        self.num_actions = num_actions

    def _config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, alpha_psi=self.alpha_psi, alpha_p=self.alpha_p,
                           alpha_n=self.alpha_n, batch_size=self.batch_size, num_steps=self.num_steps,
                           latent_dim=self.latent_dim, seed=self.seed, gamma=self.gamma,
                           stop_gradient=self.stop_gradient)

    def fit(self, X, y=None):
        if isinstance(X, TabularMdp):
            res = train_representation(X, self._config(), self.model, "matrix")
        else:
            data = as_dataset(X, self.num_states, self.num_actions)
            res = train_representation(data, self._config(), self.model, "dataset")
        self.phi_ = res.phi
        self.model_ = res.model
        self.loss_trace_ = res.loss_trace
        return self

    def transform(self, X):
        check_is_fitted(self, "phi_")
        return self.phi_[np.asarray(X, dtype=int).reshape(-1)]


class AverageLinkageClustering(ClusterMixin, BaseEstimator):
    """Average-linkage agglomerative clustering with deterministic tie-breaking."""

    def __init__(self, n_clusters=None, distance_threshold=None):
        self.n_clusters = n_clusters
        self.distance_threshold = distance_threshold

    def fit(self, X, y=None):
        ab = agglomerative_cluster(X, k=self.n_clusters, threshold=self.distance_threshold)
        self.labels_ = ab.cluster_of
        self.n_clusters_ = ab.num_clusters
        return self


class FittedQIteration(BaseEstimator):
    """Linear fitted Q-iteration; ``predict`` returns Q-values for state indices."""

    def __init__(self, phi=None, trainable_phi=False, latent_dim=50, learning_rate=0.00001, num_steps=20000,
                 batch_size=50, gamma=0.9, terminal_states=(), seed=0):
        self.phi = phi
        self.trainable_phi = trainable_phi
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.num_steps = num_steps
        self.batch_size = batch_size
        self.gamma = gamma
        self.terminal_states = terminal_states
        self.seed = seed

    def fit(self, X, y=None):
        data = as_dataset(X, None if self.phi is None else np.asarray(self.phi).shape[0])
        cfg = FqiConfig(learning_rate=self.learning_rate, num_steps=self.num_steps, batch_size=self.batch_size,
                        gamma=self.gamma, seed=self.seed, trainable_phi=self.trainable_phi,
                        latent_dim=self.latent_dim)
        res = fitted_q_iteration(data, self.phi, cfg, terminal_states=self.terminal_states)
        self.phi_, self.q_, self.loss_trace_ = res.phi, res.q, res.loss_trace
        return self

    def predict(self, X):
        check_is_fitted(self, "q_")
        return self.phi_[np.asarray(X, dtype=int).reshape(-1)] @ self.q_.T

    def greedy_actions(self) -> np.ndarray:
        check_is_fitted(self, "q_")
        return np.argmax(self.phi_ @ self.q_.T, axis=1)
