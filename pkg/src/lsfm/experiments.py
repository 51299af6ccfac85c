"""Experiment runners behind the command-line interface.

Every runner takes a resolved configuration and returns a :class:`RunOutput`
holding the text of each artifact, so nothing touches the disk until the run
has finished and files can be written atomically.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .certificates import BoundNotApplicable, certificate_suite, random_instance
from .clustering import (DiscreteAbstraction, agglomerative_cluster, partition_compare, partitions_equal,
                         q_star_irrelevance_abstraction)
from .dataset import TransitionDataset
from .envs import (build_column_world, build_lock, build_puddle_world, collect_covering_dataset,
                   collect_dataset, ignore_dial_labels, transfer_start_state, transfer_task_episodic)
from .fqi import FqiConfig, fitted_q_iteration, tabular_model_baseline
from .io import csv_text, json_text
from .mdp import TabularMdp, bisimulation_partition, value_iteration
from .optim import least_squares_lam
from .representation import Lam, Lsfm, model_from_json, model_to_json, rollout_error_curve
from .seeding import derive_seed
from .td import abstract_q_learning
from .training import TrainConfig, TrainingDiverged, train_representation

log = logging.getLogger(__name__)

ENVS = ("column", "puddle", "lock-training")
DEFAULT_FORM = {"column": "matrix", "puddle": "dataset", "lock-training": "matrix"}

# per-environment defaults; "dataset_size", "clusters" and "eval_*" are experiment keys, the rest TrainConfig
TRAIN_DEFAULTS = {
    "column": {"learning_rate": 0.1, "alpha_psi": 1.0, "alpha_p": 1.0, "alpha_n": 0.0, "num_steps": 2000,
               "latent_dim": 3, "stop_gradient": False, "clusters": 3, "dataset_size": 10000},
    "puddle": {"learning_rate": 0.0005, "alpha_psi": 0.01, "alpha_p": 1.0, "alpha_n": 0.0, "batch_size": 50,
               "num_steps": 50000, "latent_dim": 80, "dataset_size": 10000, "clusters": 50,
               "eval_sequences": 100, "eval_horizon": 200},
    "lock-training": {"learning_rate": 0.005, "alpha_psi": 0.01, "alpha_p": 1.0, "alpha_n": 0.0,
                      "num_steps": 100000, "latent_dim": 25, "stop_gradient": True, "clusters": 30,
                      "dataset_size": 10000},
}
LAM_OVERRIDES = {"puddle": {"alpha_n": 0.1}}
EXPERIMENT_KEYS = ("dataset_size", "clusters", "eval_sequences", "eval_horizon")


class ConfigError(ValueError):
    pass


@dataclass
class RunOutput:
    config: dict
    results_csv: str
    summary: dict
    extra: dict = field(default_factory=dict)

    def files(self) -> dict:
        out = {"config.json": json_text(self.config), "results.csv": self.results_csv,
               "summary.json": json_text(self.summary)}
        out.update(self.extra)
        return out


def _env(name: str) -> TabularMdp:
    if name == "column":
        return build_column_world()
    if name == "puddle":
        return build_puddle_world()
    if name == "lock-training":
        return build_lock("training")
    raise ConfigError(f"unknown environment {name!r}; choose from {ENVS}")


def resolve_train_config(env: str, model: str, form: str | None, user: dict | None, seed: int | None):
    """Merge defaults, model overrides and the user's JSON; validate strictly."""
    if env not in ENVS:
        raise ConfigError(f"unknown environment {env!r}; choose from {ENVS}")
    if model not in ("lsfm", "lam"):
        raise ConfigError("model must be lsfm or lam")
    form = form or DEFAULT_FORM[env]
    if form not in ("matrix", "dataset"):
        raise ConfigError("form must be matrix or dataset")
    merged = dict(TRAIN_DEFAULTS[env])
    if model == "lam":
        merged.update(LAM_OVERRIDES.get(env, {}))
    if user:
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        merged.update(user)
    if seed is not None:
        merged["seed"] = seed
    extra = {k: merged.pop(k) for k in EXPERIMENT_KEYS if k in merged}
    for k in ("dataset_size", "clusters", "eval_sequences", "eval_horizon"):
        v = extra.get(k)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
            raise ConfigError(f"{k} must be a positive integer")
    try:
        cfg = TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return form, cfg, extra


def _baseline_curve(mdp, source, phi0, seqs):
    """Rollout errors of untrained features with their least-squares LAM."""
    return rollout_error_curve(mdp, phi0, least_squares_lam(phi0, source), seqs)


def _eval_lam(phi, model, source) -> Lam:
    """LAM used for reward rollouts: the model itself, or least squares for an LSFM."""
    return model if isinstance(model, Lam) else least_squares_lam(phi, source)


def run_train(env: str, model: str = "lsfm", form: str | None = None, user_config: dict | None = None,
              seed: int | None = None) -> RunOutput:
    form, cfg, extra = resolve_train_config(env, model, form, user_config, seed)
    mdp = _env(env)
    data = None
    if form == "dataset":
        data = collect_covering_dataset(mdp, extra["dataset_size"], derive_seed(cfg.seed, 1))
    source = data if data is not None else mdp
    t0 = time.perf_counter()
    res = train_representation(source, cfg, model, form, mdp=mdp)
    log.info("trained %s/%s on %s in %.1fs", model, form, env, time.perf_counter() - t0)
    clusters = min(extra.get("clusters", mdp.num_states), mdp.num_states)
    abstraction = agglomerative_cluster(res.phi, k=clusters)
    final = res.loss_trace[-1][1]
    summary = {"env": env, "model": model, "form": form, "final_loss": final.total,
               "num_clusters": abstraction.num_clusters}
    extra_files = {"checkpoint.json": model_to_json(res.phi, res.model) + "\n",
                   "abstraction.json": abstraction.to_json() + "\n"}
    if mdp.grid_shape is not None:
        extra_files["partition_map.csv"] = abstraction.grid_csv(*mdp.grid_shape)
    if data is not None:
        extra_files["dataset.csv"] = data.to_csv()
    if env == "column":
        truth = bisimulation_partition(mdp)
        summary["matches_bisimulation"] = partitions_equal(abstraction, truth)
    if env == "lock-training":
        refines, purity = partition_compare(abstraction, ignore_dial_labels(2))
        summary.update({"refines_ignore_dial": refines, "ignore_dial_purity": purity,
                        "passes": abstraction.num_clusters <= 30 and purity >= 0.9})
    if env == "puddle":
        seqs = np.random.default_rng(derive_seed(cfg.seed, 2)).integers(
            mdp.num_actions, size=(extra["eval_sequences"], extra["eval_horizon"]))
        trained = rollout_error_curve(mdp, res.phi, _eval_lam(res.phi, res.model, source), seqs)
        baseline = _baseline_curve(mdp, source, res.init_phi, seqs)
        extra_files["rollout.csv"] = csv_text(["step", "trained", "random_init"],
                                              [(t + 1, trained[t], baseline[t]) for t in range(trained.size)])
        k = min(50, trained.size)
        summary.update({"mean_rollout_error": float(trained.mean()),
                        "mean_random_init_error": float(baseline.mean()),
                        "beats_random_init_first_50": bool(np.all(trained[:k] < baseline[:k]))})
    rows = [(step, c.total, c.l_r, c.l_psi, c.l_n) for step, c in res.loss_trace]
    config = {"experiment": "train", "env": env, "model": model, "form": form,
              "train": cfg.to_dict(), **extra}
    return RunOutput(config, csv_text(["step", "total", "l_r", "l_psi", "l_n"], rows), summary, extra_files)


def run_rollout_eval(checkpoint: str, env: str, sequences: int = 100, horizon: int = 200, seed: int = 0,
                     dataset: TransitionDataset | None = None) -> RunOutput:
    """Mean absolute reward-rollout error per step for a checkpoint and a random-feature baseline.

    LSFM checkpoints are paired with a least-squares LAM fitted on ``dataset``
    (or on the exact tables when no dataset is given).
    """
    if sequences < 1 or horizon < 1:
        raise ConfigError("sequences and horizon must be positive")
    mdp = _env(env)
    try:
        phi, model = model_from_json(checkpoint)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad checkpoint: {exc}") from exc
    if phi.shape[0] != mdp.num_states:
        raise ConfigError("checkpoint does not match the environment's state count")
    source = dataset if dataset is not None else mdp
    seqs = np.random.default_rng(seed).integers(mdp.num_actions, size=(sequences, horizon))
    trained = rollout_error_curve(mdp, phi, _eval_lam(phi, model, source), seqs)
    phi0 = np.random.default_rng(derive_seed(seed, 1)).uniform(0.0, 1.0, size=phi.shape)
    baseline = _baseline_curve(mdp, source, phi0, seqs)
    k = min(50, horizon)
    summary = {"mean_error": float(trained.mean()), "mean_random_init_error": float(baseline.mean()),
               "beats_random_init_first_50": bool(np.all(trained[:k] < baseline[:k]))}
    config = {"experiment": "rollout-eval", "env": env, "sequences": sequences, "horizon": horizon,
              "seed": seed, "lam_source": "dataset" if dataset is not None else "tables"}
    rows = [(t + 1, trained[t], baseline[t]) for t in range(horizon)]
    return RunOutput(config, csv_text(["step", "mean_abs_error", "random_init_error"], rows), summary)


def run_bounds_check(instances: int = 200, seed: int = 0, horizon: int = 10) -> RunOutput:
    """Randomized certificate suite; every row is one inequality on one instance."""
    if instances < 0:
        raise ConfigError("instances must be non-negative")
    rows = []
    violations = 0
    skipped = 0
    for i in range(instances):
        inst = random_instance(derive_seed(seed, i))
        try:
            certs = certificate_suite(inst, horizon=horizon, seed=i)
        except BoundNotApplicable:
            skipped += 1
            continue
        for name, cert in certs.items():
            rows.append((i, name, cert.slack, cert.holds))
            violations += not cert.holds
    summary = {"instances": instances, "checks": len(rows), "violations": violations,
               "skipped": skipped, "all_hold": violations == 0,
               "min_slack": min((r[2] for r in rows), default=None)}
    config = {"experiment": "bounds-check", "instances": instances, "seed": seed, "horizon": horizon}
    return RunOutput(config, csv_text(["instance", "certificate", "slack", "holds"], rows), summary)


# transfer

TRANSFER_DEFAULTS = {
    "dataset_sizes": [250, 500, 1000, 2000, 4000, 8000],
    "repeats": 20,
    "train_size": 10000,
    "lsfm": {"learning_rate": 0.001, "alpha_psi": 0.0001, "alpha_n": 0.0, "latent_dim": 50,
             "batch_size": 50, "num_steps": 50000},
    "value_fqi": {"learning_rate": 0.001, "latent_dim": 50, "batch_size": 50, "num_steps": 50000},
    "transfer_fqi": {"num_steps": 20000, "batch_size": 50,
                     "learning_rates": [0.00001, 0.0001, 0.001, 0.01]},
    "eval_episodes": 20,
    "eval_max_steps": 22,
}


def _merge(defaults: dict, user: dict | None, path="") -> dict:
    out = json.loads(json.dumps(defaults))
    for k, v in (user or {}).items():
        if k not in defaults:
            raise ConfigError(f"unknown config key {path}{k!r}")
        if isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be an object")
            out[k] = _merge(defaults[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def policy_solves(mdp: TabularMdp, actions, start: int, episodes: int, max_steps: int, seed: int) -> bool:
    """True when every episode of the deterministic policy ends within ``max_steps``.

    Episodes are stopped as soon as they exceed the limit, since the outcome is then known.
    """
    rng = np.random.default_rng(seed)
    terminal = np.zeros(mdp.num_states, dtype=bool)
    terminal[list(mdp.terminal_states)] = True
    for _ in range(episodes):
        s = start
        for _ in range(max_steps):
            s = mdp.sample_next(s, int(actions[s]), rng.random())
            if terminal[s]:
                break
        else:
            return False
    return True


def _select_fqi_lr(data, phi, lrs, steps, batch, q_star, terminal, seed):
    """Learning rate whose fitted Q-values are closest to ``q_star`` in max-norm."""
    errors = {}
    for lr in lrs:
        try:
            res = fitted_q_iteration(data, phi, FqiConfig(learning_rate=lr, num_steps=steps, batch_size=batch,
                                                          seed=seed), terminal_states=terminal)
        except TrainingDiverged:
            continue
        errors[lr] = float(np.max(np.abs(res.q_values() - q_star)))
    if not errors:
        raise TrainingDiverged("fitted Q-iteration diverged for every candidate learning rate")
    return min(errors, key=lambda lr: (errors[lr], lr)), errors


def run_transfer(user_config: dict | None = None, seed: int = 0, repeats: int | None = None,
                 dataset_sizes=None) -> RunOutput:
    cfg = _merge(TRANSFER_DEFAULTS, user_config)
    if repeats is not None:
        cfg["repeats"] = repeats
    if dataset_sizes is not None:
        cfg["dataset_sizes"] = list(dataset_sizes)
    sizes = cfg["dataset_sizes"]
    if not sizes or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in sizes):
        raise ConfigError("dataset_sizes must be a non-empty list of non-negative integers")
    if isinstance(cfg["repeats"], bool) or not isinstance(cfg["repeats"], int) or cfg["repeats"] < 1:
        raise ConfigError("repeats must be a positive integer")
    task_a, task_b = transfer_task_episodic("A"), transfer_task_episodic("B")
    start_b = transfer_start_state("B")
    gamma = task_b.gamma

    # representations learned on Task A
    data_a = collect_covering_dataset(task_a, cfg["train_size"], derive_seed(seed, 0))
    try:
        lsfm_cfg = TrainConfig.from_dict({**cfg["lsfm"], "seed": derive_seed(seed, 1)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    reward_phi = train_representation(data_a, lsfm_cfg, "lsfm", "dataset", mdp=task_a).phi
    vf = cfg["value_fqi"]
    value_phi = fitted_q_iteration(
        data_a, None, FqiConfig(learning_rate=vf["learning_rate"], num_steps=vf["num_steps"],
                                batch_size=vf["batch_size"], latent_dim=vf["latent_dim"], trainable_phi=True,
                                seed=derive_seed(seed, 2)), terminal_states=task_a.terminal_states).phi
    reps = {"reward-predictive": reward_phi, "value-predictive": value_phi}

    # learning rate per representation, picked on one calibration set from Task B
    tf = cfg["transfer_fqi"]
    q_star_b = value_iteration(task_b)[1]
    calib = collect_dataset(task_b, max(max(sizes), 1), derive_seed(seed, 3))
    chosen, lr_errors = {}, {}
    for name, phi in reps.items():
        chosen[name], lr_errors[name] = _select_fqi_lr(calib, phi, tf["learning_rates"], tf["num_steps"],
                                                       tf["batch_size"], q_star_b, task_b.terminal_states,
                                                       derive_seed(seed, 4))

    methods = ("reward-predictive", "value-predictive", "tabular")
    run_rows, solved = [], {(m, s): 0 for m in methods for s in sizes}
    for si, size in enumerate(sizes):
        for rep in range(cfg["repeats"]):
            if size == 0:
                for m in methods:
                    run_rows.append((m, size, rep, False))
                continue
            data = collect_dataset(task_b, size, derive_seed(seed, 10, si, rep))
            eval_seed = derive_seed(seed, 11, si, rep)
            for name, phi in reps.items():
                res = fitted_q_iteration(data, phi, FqiConfig(learning_rate=chosen[name], num_steps=tf["num_steps"],
                                                              batch_size=tf["batch_size"],
                                                              seed=derive_seed(seed, 12, si, rep)),
                                         terminal_states=task_b.terminal_states)
                ok = policy_solves(task_b, res.greedy_actions(), start_b, cfg["eval_episodes"],
                                   cfg["eval_max_steps"], eval_seed)
                run_rows.append((name, size, rep, ok))
                solved[(name, size)] += ok
            actions, _ = tabular_model_baseline(data, gamma, derive_seed(seed, 13, si, rep))
            ok = policy_solves(task_b, actions, start_b, cfg["eval_episodes"], cfg["eval_max_steps"], eval_seed)
            run_rows.append(("tabular", size, rep, ok))
            solved[("tabular", size)] += ok
    frac = {k: v / cfg["repeats"] for k, v in solved.items()}
    gains = {s: frac[("reward-predictive", s)] - frac[("tabular", s)] for s in sizes}
    summary = {
        "fraction_solved": {m: {str(s): frac[(m, s)] for s in sizes} for m in methods},
        "selected_learning_rates": chosen,
        "learning_rate_errors": {m: {repr(k): v for k, v in e.items()} for m, e in lr_errors.items()},
        "max_reward_predictive_gain": max(gains.values()),
        "reward_predictive_beats_tabular_by_0.2": max(gains.values()) >= 0.2,
        "value_predictive_at_most_0.1": all(frac[("value-predictive", s)] <= 0.1 for s in sizes),
    }
    rows = [(m, s, frac[(m, s)]) for m in methods for s in sizes]
    config = {"experiment": "transfer", "seed": seed, **cfg}
    return RunOutput(config, csv_text(["method", "size", "fraction_solved"], rows), summary,
                     {"runs.csv": csv_text(["method", "size", "repeat", "solved"], run_rows)})


# combination lock

LOCK_AGENTS = ("baseline", "ignore-dial", "value-pred", "reward-pred")
LOCK_DEFAULTS = {
    "episodes": 100,
    "repeats": 20,
    "learning_rate": 0.9,
    "epsilon": 0.1,
    "optimistic_init": 1.0,
    "timeout": 5000,
    "value_tol": 1e-6,
    "representation": {"learning_rate": 0.005, "alpha_psi": 0.01, "num_steps": 100000, "latent_dim": 25,
                       "stop_gradient": True},
    "clusters": 30,
}
RANDOM_DIAL = {"test1": 2, "test2": 1}


def lock_abstractions(cfg: dict, seed: int) -> dict:
    """Reward- and value-predictive abstractions of the training lock."""
    training = build_lock("training")
    try:
        tcfg = TrainConfig.from_dict({**cfg["representation"], "seed": derive_seed(seed, 0)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    phi = train_representation(training, tcfg, "lsfm", "matrix").phi
    return {"reward-pred": agglomerative_cluster(phi, k=cfg["clusters"]),
            "value-pred": q_star_irrelevance_abstraction(training, tol=cfg["value_tol"])}


def run_lock(tasks=("test1", "test2"), agents=LOCK_AGENTS, user_config: dict | None = None, seed: int = 0,
             episodes: int | None = None, repeats: int | None = None) -> RunOutput:
    cfg = _merge(LOCK_DEFAULTS, user_config)
    if episodes is not None:
        cfg["episodes"] = episodes
    if repeats is not None:
        cfg["repeats"] = repeats
    for k in ("episodes", "repeats", "timeout", "clusters"):
        if isinstance(cfg[k], bool) or not isinstance(cfg[k], int) or cfg[k] < 1:
            raise ConfigError(f"{k} must be a positive integer")
    unknown = [a for a in agents if a not in LOCK_AGENTS]
    if unknown or not agents:
        raise ConfigError(f"unknown agents {unknown}; choose from {LOCK_AGENTS}")
    bad_tasks = [t for t in tasks if t not in RANDOM_DIAL]
    if bad_tasks or not tasks:
        raise ConfigError(f"unknown tasks {bad_tasks}; choose from {tuple(RANDOM_DIAL)}")
    learned = lock_abstractions(cfg, seed) if {"reward-pred", "value-pred"} & set(agents) else {}
    rows, means = [], {}
    for ti, task in enumerate(tasks):
        mdp = build_lock(task)
        pool = {"baseline": None,
                "ignore-dial": DiscreteAbstraction.from_labels(ignore_dial_labels(RANDOM_DIAL[task])), **learned}
        for agent in agents:
            per_seed = []
            for rep in range(cfg["repeats"]):
                lengths = abstract_q_learning(mdp, pool[agent], lr=cfg["learning_rate"], epsilon=cfg["epsilon"],
                                              optimistic_init=cfg["optimistic_init"], episodes=cfg["episodes"],
                                              timeout=cfg["timeout"], seed=derive_seed(seed, 1, ti, rep))
                rows.extend((task, agent, rep, ep, int(n)) for ep, n in enumerate(lengths))
                per_seed.append(lengths[:100].mean())
            means[(task, agent)] = float(np.mean(per_seed))
    summary = {"mean_episode_length_first_100": {t: {a: means[(t, a)] for a in agents} for t in tasks}}
    if "reward-pred" in learned:
        refines, purity = partition_compare(learned["reward-pred"], ignore_dial_labels(2))
        summary["reward_pred_clusters"] = learned["reward-pred"].num_clusters
        summary["reward_pred_ignore_dial_purity"] = purity
    checks = {}
    m = means.get
    if all(m(("test1", a)) is not None for a in ("baseline", "ignore-dial", "reward-pred")):
        checks["test1_ignore_dial_beats_baseline"] = m(("test1", "ignore-dial")) < m(("test1", "baseline"))
        checks["test1_reward_pred_beats_baseline"] = m(("test1", "reward-pred")) < m(("test1", "baseline"))
    if all(m(("test2", a)) is not None for a in ("baseline", "value-pred", "reward-pred")):
        checks["test2_reward_pred_worse_than_baseline"] = m(("test2", "reward-pred")) > m(("test2", "baseline"))
        checks["test2_value_pred_worse_than_baseline"] = m(("test2", "value-pred")) > m(("test2", "baseline"))
    summary["checks"] = checks
    summary["passes"] = bool(checks) and all(checks.values())
    config = {"experiment": "lock", "seed": seed, "tasks": list(tasks), "agents": list(agents), **cfg}
    extra = {f"{name}_abstraction.json": ab.to_json() + "\n" for name, ab in learned.items()}
    return RunOutput(config, csv_text(["task", "agent", "seed", "episode", "steps"], rows), summary, extra)
