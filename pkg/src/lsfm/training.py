"""Gradient-based representation learning for LSFMs and LAMs."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dataset import TransitionDataset
from .losses import LossComponents, lam_batch, lam_matrix, lsfm_batch, lsfm_matrix
from .mdp import TabularMdp
from .optim import AdamState, adam_step, least_squares_lam, least_squares_lsfm
from .representation import ErrorReport, Lam, Lsfm, error_metrics

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
MODEL_KINDS = ("lsfm", "lam")
FORMS = ("matrix", "dataset")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    alpha_psi: float = 1.0
    alpha_p: float = 1.0
    alpha_n: float = 0.0
    batch_size: int = 50
    num_steps: int = 1000
    latent_dim: int = 3
    seed: int = 0
    gamma: float | None = None
    trace_every: int = 100
    error_every: int = 0
    stop_gradient: bool = True

    def __post_init__(self):
        checks = [
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.alpha_psi >= 0 and self.alpha_p >= 0 and self.alpha_n >= 0, "loss weights must be >= 0"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.num_steps >= 1, "num_steps must be positive"),
            (self.latent_dim >= 1, "latent_dim must be positive"),
            (self.gamma is None or 0 <= self.gamma < 1, "gamma must lie in [0, 1)"),
            (self.trace_every >= 1, "trace_every must be positive"),
            (self.error_every >= 0, "error_every must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        parsed = {}
        for k, v in d.items():
            if k in ("batch_size", "num_steps", "latent_dim", "seed", "trace_every", "error_every"):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ValueError(f"{k} must be an integer")
            elif k == "stop_gradient":
                if not isinstance(v, bool):
                    raise ValueError(f"{k} must be a boolean")
            elif v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ValueError(f"{k} must be a number")
            parsed[k] = v
        return cls(**parsed)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        if not isinstance(d, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    phi: np.ndarray
    model: object
    loss_trace: list
    error_trace: list
    init_phi: np.ndarray
    init_model: object

    def loss_trace_csv(self) -> str:
        lines = ["step,total,l_r,l_psi,l_n"]
        for step, c in self.loss_trace:
            lines.append(",".join([str(step)] + [repr(float(v)) for v in c]))
        return "\n".join(lines) + "\n"


def _init_model(kind, form, phi, source, gamma):
    if kind == "lam":
        return least_squares_lam(phi, source)
    if form == "matrix":
        return least_squares_lsfm(phi, source, gamma)
    n, a = phi.shape[1], source.num_actions
    return Lsfm(np.zeros((a, n, n)), np.zeros((a, n)))


def _as_model(kind, params):
    if kind == "lam":
        return Lam(params["m"], params["w"])
    return Lsfm(params["f"], params["w"])


def full_loss(kind, form, params, source, cfg, gamma) -> LossComponents:
    if form == "matrix":
        if kind == "lsfm":
            return lsfm_matrix(params["phi"], params["f"], params["w"], source.transitions, source.rewards,
                               cfg.alpha_psi, cfg.alpha_n, gamma, grad=False)[0]
        return lam_matrix(params["phi"], params["m"], params["w"], source.transitions, source.rewards,
                          cfg.alpha_p, cfg.alpha_n, grad=False)[0]
    d = source
    if kind == "lsfm":
        return lsfm_batch(params["phi"], params["f"], params["w"], d.s, d.a, d.r, d.s_next,
                          cfg.alpha_psi, cfg.alpha_n, gamma, grad=False)[0]
    return lam_batch(params["phi"], params["m"], params["w"], d.s, d.a, d.r, d.s_next,
                     cfg.alpha_p, cfg.alpha_n, grad=False)[0]


def _report(mdp, phi, kind, params, data, gamma):
    """Error report with the missing model filled in by least squares."""
    source = mdp if data is None else data
    if kind == "lam":
        lam = Lam(params["m"], params["w"])
        lsfm = least_squares_lsfm(phi, source, gamma)
    else:
        lsfm = Lsfm(params["f"], params["w"])
        lam = least_squares_lam(phi, source)
    return error_metrics(mdp, phi, lam, lsfm)


def train_representation(source, config: TrainConfig, model_kind: str = "lsfm", form: str = "dataset",
                         mdp: TabularMdp | None = None) -> TrainResult:
    """Learn features and a latent model by Adam on the chosen loss.

    ``source`` is a TabularMdp for the matrix form or a TransitionDataset for
    the dataset form. ``mdp`` (optional for datasets) enables error reports
    every ``config.error_every`` steps.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if form == "matrix" and not isinstance(source, TabularMdp):
        raise TypeError("matrix form needs a TabularMdp")
    if form == "dataset" and not isinstance(source, TransitionDataset):
        raise TypeError("dataset form needs a TransitionDataset")
    if isinstance(source, TabularMdp):
        mdp = source
    gamma = config.gamma if config.gamma is not None else (mdp.gamma if mdp is not None else None)
    if gamma is None:
        raise ValueError("gamma must be set in the config when no MDP is given")

    cfg = config
    rng = np.random.default_rng(cfg.seed)
    phi = rng.uniform(0.0, 1.0, size=(source.num_states, cfg.latent_dim))
    model = _init_model(model_kind, form, phi, source, gamma)
    params = {"phi": phi.copy(), "w": np.array(model.w)}
    params["m" if model_kind == "lam" else "f"] = np.array(model.m if model_kind == "lam" else model.f)
    init_phi, init_model = phi.copy(), model

    state = AdamState()
    loss_trace, error_trace = [], []
    data = source if form == "dataset" else None
    for step in range(cfg.num_steps + 1):
        if step % cfg.trace_every == 0 or step == cfg.num_steps:
            comps = full_loss(model_kind, form, params, source, cfg, gamma)
            if not np.isfinite(comps.total) or comps.total > DIVERGENCE_LIMIT:
                raise TrainingDiverged(f"loss {comps.total!r} at step {step} (lr={cfg.learning_rate})")
            loss_trace.append((step, comps))
        if mdp is not None and cfg.error_every and step % cfg.error_every == 0:
            error_trace.append((step, _report(mdp, params["phi"], model_kind, params, data, gamma)))
        if step == cfg.num_steps:
            break
        grads = _gradient(model_kind, form, params, source, cfg, gamma, rng)
        adam_step(state, params, grads, cfg.learning_rate)
    return TrainResult(params["phi"], _as_model(model_kind, params), loss_trace, error_trace,
                       init_phi, init_model)


def _gradient(kind, form, params, source, cfg, gamma, rng):
    if form == "matrix":
        if kind == "lsfm":
            comps, g = lsfm_matrix(params["phi"], params["f"], params["w"], source.transitions,
                                   source.rewards, cfg.alpha_psi, cfg.alpha_n, gamma,
                                   stop_gradient=cfg.stop_gradient)
        else:
            comps, g = lam_matrix(params["phi"], params["m"], params["w"], source.transitions,
                                  source.rewards, cfg.alpha_p, cfg.alpha_n)
    else:
        idx = rng.integers(len(source), size=cfg.batch_size)
        s, a, r, sn = source.s[idx], source.a[idx], source.r[idx], source.s_next[idx]
        if kind == "lsfm":
            comps, g = lsfm_batch(params["phi"], params["f"], params["w"], s, a, r, sn,
                                  cfg.alpha_psi, cfg.alpha_n, gamma)
        else:
            comps, g = lam_batch(params["phi"], params["m"], params["w"], s, a, r, sn,
                                 cfg.alpha_p, cfg.alpha_n)
    if not np.isfinite(comps.total) or comps.total > DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"loss {comps.total!r} during optimization (lr={cfg.learning_rate})")
    return g
