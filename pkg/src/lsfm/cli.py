"""Command-line entry point: ``lsfm <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .dataset import TransitionDataset
from .envs import CoverageError
from .io import write_run
from .training import TrainingDiverged


def _read_json(path):
    if path is None:
        return None
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ex.ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ex.ConfigError("config must be a JSON object")
    return data


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _str_list(text: str):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsfm", description="Reward-predictive representation experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--output", required=True, help="run directory (created if missing)")
        sp.add_argument("--seed", type=int, default=seed_default, help="master seed")

    b = sub.add_parser("bounds-check", help="randomized certificate suite for the error bounds")
    common(b)
    b.add_argument("--instances", type=int, default=200)
    b.add_argument("--horizon", type=int, default=10)

    t = sub.add_parser("train", help="learn a representation and latent model")
    common(t, seed_default=None)
    t.add_argument("--env", required=True, choices=ex.ENVS)
    t.add_argument("--model", default="lsfm", choices=("lsfm", "lam"))
    t.add_argument("--form", choices=("matrix", "dataset"))
    t.add_argument("--config", help="JSON file overriding the environment's defaults")

    r = sub.add_parser("rollout-eval", help="reward-rollout errors of a checkpoint")
    common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--env", required=True, choices=ex.ENVS)
    r.add_argument("--sequences", type=int, default=100)
    r.add_argument("--horizon", type=int, default=200)
    r.add_argument("--dataset", help="CSV dataset for the least-squares LAM (default: exact tables)")

    tr = sub.add_parser("transfer", help="grid-world transfer with frozen representations")
    common(tr)
    tr.add_argument("--repeats", type=int)
    tr.add_argument("--dataset-sizes", type=_int_list)
    tr.add_argument("--config", help="JSON file overriding transfer defaults")

    lk = sub.add_parser("lock", help="Q-learning with abstractions on the test locks")
    common(lk)
    lk.add_argument("--task", type=_str_list, default=["test1", "test2"], help="test1, test2 or both")
    lk.add_argument("--agents", type=_str_list, default=list(ex.LOCK_AGENTS))
    lk.add_argument("--episodes", type=int)
    lk.add_argument("--repeats", type=int)
    lk.add_argument("--config", help="JSON file overriding lock defaults")
    return p


def run(args) -> ex.RunOutput:
    if args.command == "bounds-check":
        return ex.run_bounds_check(args.instances, args.seed, args.horizon)
    if args.command == "train":
        return ex.run_train(args.env, args.model, args.form, _read_json(args.config), args.seed)
    if args.command == "rollout-eval":
        try:
            checkpoint = Path(args.checkpoint).read_text()
        except OSError as exc:
            raise ex.ConfigError(f"cannot read checkpoint: {exc}") from exc
        dataset = None
        if args.dataset:
            mdp = ex._env(args.env)
            try:
                dataset = TransitionDataset.from_csv(Path(args.dataset).read_text(), mdp.num_states,
                                                     mdp.num_actions)
            except (OSError, ValueError) as exc:
                raise ex.ConfigError(f"cannot read dataset: {exc}") from exc
        return ex.run_rollout_eval(checkpoint, args.env, args.sequences, args.horizon, args.seed, dataset)
    if args.command == "transfer":
        return ex.run_transfer(_read_json(args.config), args.seed, args.repeats, args.dataset_sizes)
    if args.command == "lock":
        return ex.run_lock(args.task, args.agents, _read_json(args.config), args.seed, args.episodes, args.repeats)
    raise ex.ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = run(args)
    except (ex.ConfigError, TrainingDiverged, CoverageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_run(args.output, out.files())
    summary = out.summary
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.command == "bounds-check" and not summary["all_hold"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
