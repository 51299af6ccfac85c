"""Environment constructors and random-walk data collection."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dataset import TransitionDataset
from .mdp import TabularMdp
from .seeding import derive_seed

log = logging.getLogger(__name__)

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")


class CoverageError(RuntimeError):
    """No sampled dataset visited every (state, action) pair."""


@dataclass(frozen=True)
class GridWorldSpec:
    """Grid world layout. Cells are (row, col) with row 0 at the top.

    ``entry_rewards`` maps a cell to the reward received on every transition
    that lands in it; transitions into ``goals`` end the episode.
    """

    height: int
    width: int
    barriers: frozenset = frozenset()
    entry_rewards: dict = field(default_factory=dict)
    goals: frozenset = frozenset()
    starts: tuple = ()
    slip: float = 0.0
    gamma: float = 0.9
    name: str = ""

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid must have positive size")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")
        cells = set(self.entry_rewards) | set(self.goals) | set(self.starts)
        for edge in self.barriers:
            cells |= set(edge)
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell {(r, c)} outside the grid")

    def index(self, row: int, col: int) -> int:
        return row * self.width + col

    def cell(self, s: int) -> tuple:
        return divmod(int(s), self.width)

    def blocked(self, a: tuple, b: tuple) -> bool:
        return frozenset((a, b)) in self.barriers

    def target(self, cell: tuple, action: int) -> tuple:
        dr, dc = MOVES[action]
        nxt = (cell[0] + dr, cell[1] + dc)
        if not (0 <= nxt[0] < self.height and 0 <= nxt[1] < self.width) or self.blocked(cell, nxt):
            return cell
        return nxt

    def to_mdp(self) -> TabularMdp:
        n = self.height * self.width
        p = np.zeros((4, n, n))
        rt = np.zeros((4, n, n))
        cell_reward = np.zeros(n)
        for c, v in self.entry_rewards.items():
            cell_reward[self.index(*c)] = v
        goals = sorted(self.index(*g) for g in self.goals)
        for s in range(n):
            for a in range(4):
                if s in goals:
                    p[a, s, s] = 1.0
                    continue
                nxt = self.index(*self.target(self.cell(s), a))
                p[a, s, nxt] += 1.0 - self.slip
                p[a, s, s] += self.slip
                rt[a, s] = cell_reward
        r = (p * rt).sum(axis=2)
        starts = tuple(self.index(*c) for c in self.starts) or None
        bound = float(np.max(np.abs(cell_reward), initial=0.0))
        return TabularMdp(p, r, self.gamma, tuple(goals), starts, (self.height, self.width),
                          bound, self.name, rt)


def parse_grid(lines, cell_rewards: dict, terminal_chars=("G",)) -> dict:
    """Read an ASCII map of (2H-1) x (2W-1) characters.

    Cells sit at even (row, col) positions; a ``#`` between two horizontally
    adjacent cells, or below a cell on the odd line, marks a barrier edge.
    """
    lines = [ln.ljust(max(len(x) for x in lines)) for ln in lines]
    if len(lines) % 2 == 0 or len(lines[0]) % 2 == 0:
        raise ValueError("map must have odd line count and width")
    height, width = (len(lines) + 1) // 2, (len(lines[0]) + 1) // 2
    barriers, rewards, goals, starts = set(), {}, set(), []
    for i in range(height):
        for j in range(width):
            ch = lines[2 * i][2 * j]
            if ch not in ".SG~R":
                raise ValueError(f"unknown cell marker {ch!r}")
            if ch == "S":
                starts.append((i, j))
            if ch in cell_rewards:
                rewards[(i, j)] = float(cell_rewards[ch])
            if ch in terminal_chars:
                goals.add((i, j))
            if j + 1 < width and lines[2 * i][2 * j + 1] == "#":
                barriers.add(frozenset(((i, j), (i, j + 1))))
            if i + 1 < height and lines[2 * i + 1][2 * j] == "#":
                barriers.add(frozenset(((i, j), (i + 1, j))))
    return dict(height=height, width=width, barriers=frozenset(barriers),
                entry_rewards=rewards, goals=frozenset(goals), starts=tuple(starts))


def load_grid_spec(source) -> GridWorldSpec:
    """Load a map from a packaged name (e.g. ``"puddle_world"``), a path, or a dict."""
    if isinstance(source, dict):
        data = source
    elif str(source).endswith(".json"):
        with open(source) as f:
            data = json.load(f)
    else:
        data = json.loads(resources.files("lsfm").joinpath(f"data/{source}.json").read_text())
    layout = parse_grid(data["map"], data.get("cell_rewards", {}), tuple(data.get("terminal", ["G"])))
    return GridWorldSpec(slip=float(data.get("slip", 0.0)), gamma=float(data.get("gamma", 0.9)),
                         name=data.get("name", ""), **layout)


def build_column_world(gamma: float = 0.9) -> TabularMdp:
    return load_grid_spec("column_world").to_mdp().with_gamma(gamma)


def build_puddle_world() -> TabularMdp:
    return load_grid_spec("puddle_world").to_mdp()


def build_transfer_task(which: str) -> TabularMdp:
    key = {"A": "transfer_task_a", "B": "transfer_task_b"}.get(str(which).upper())
    if key is None:
        raise ValueError(f"unknown transfer task {which!r}")
    return load_grid_spec(key).to_mdp()


def transfer_start_state(which: str) -> int:
    spec = load_grid_spec({"A": "transfer_task_a", "B": "transfer_task_b"}[str(which).upper()])
    return spec.index(*spec.starts[0])


def transfer_task_episodic(which: str) -> TabularMdp:
    """Transfer task whose episodes start anywhere (data collection)."""
    mdp = build_transfer_task(which)
    return TabularMdp(mdp.transitions, mdp.rewards, mdp.gamma, mdp.terminal_states, None,
                      mdp.grid_shape, mdp.reward_bound, mdp.name, mdp.transition_rewards)


def _chain(p, r, gamma, name):
    return TabularMdp(np.asarray(p, dtype=float), np.asarray(r, dtype=float), gamma, name=name)


def build_three_state(gamma: float = 0.9) -> TabularMdp:
    """s1 -> s2 -> s3, with reward 1 only on the self-loop at s3."""
    p = [[[0, 1, 0], [0, 0, 1], [0, 0, 1]]]
    return _chain(p, [[0, 0, 1]], gamma, "three-state")


FIVE_STATE_NAMES = ("A", "B", "C", "D", "E")


def build_five_state(gamma: float = 0.9) -> TabularMdp:
    """A -> C, B -> {D, E} with probability 1/2 each; C, D, E self-loop."""
    p = np.zeros((1, 5, 5))
    p[0, 0, 2] = 1.0
    p[0, 1, 3] = p[0, 1, 4] = 0.5
    p[0, 2, 2] = p[0, 3, 3] = p[0, 4, 4] = 1.0
    return _chain(p, [[0, 0, 0.5, 1.0, 0]], gamma, "five-state")


def five_state_representation() -> np.ndarray:
    """Three-dimensional features that predict rewards of the five-state MDP exactly."""
    return np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0.5, 0.5], [0, 1.0, 0], [0, 0, 1.0]])


COUNTEREXAMPLE_NAMES = ("A", "B", "C", "D")


def build_counterexample(gamma: float = 0.9) -> TabularMdp:
    """Two actions; A and B lead to C or D with swapped action labels."""
    a, b = 0, 1
    A, B, C, D = range(4)
    p = np.zeros((2, 4, 4))
    r = np.zeros((2, 4))
    p[a, A, D] = p[b, A, C] = 1.0
    p[a, B, C] = p[b, B, D] = 1.0
    p[:, C, C] = 1.0
    p[:, D, D] = 1.0
    r[:, C] = 0.5
    r[a, D] = 1.0
    return _chain(p, r, gamma, "counterexample")


@dataclass(frozen=True)
class CombinationLockSpec:
    """Three dials with five faces each; action k rotates dial k by one face.

    ``rewarding`` maps dial index to the face it must show; entering such a
    combination pays +1 and ends the episode. ``start`` pins some dials at
    episode start, the others are uniform.
    """

    random_dial: int = 2
    reversed_left: bool = False
    rewarding: dict = field(default_factory=lambda: {0: 4, 1: 4})
    start: dict | None = None
    faces: int = 5
    gamma: float = 0.9
    name: str = ""

    def __post_init__(self):
        if self.random_dial not in (0, 1, 2):
            raise ValueError("random_dial must be 0, 1 or 2")

    def index(self, dials) -> int:
        f = self.faces
        return (dials[0] * f + dials[1]) * f + dials[2]

    def dials(self, s: int) -> tuple:
        f = self.faces
        return (s // (f * f), (s // f) % f, s % f)

    def is_rewarding(self, dials) -> bool:
        return all(dials[k] == v for k, v in self.rewarding.items())

    def to_mdp(self) -> TabularMdp:
        f = self.faces
        n = f ** 3
        p = np.zeros((3, n, n))
        rt = np.zeros((3, n, n))
        goal = np.array([self.is_rewarding(self.dials(s)) for s in range(n)], dtype=float)
        terminal = tuple(int(s) for s in np.flatnonzero(goal))
        for s in range(n):
            d = self.dials(s)
            for a in range(3):
                if goal[s]:
                    p[a, s, s] = 1.0
                    continue
                nxt = list(d)
                if a != self.random_dial:
                    step = -1 if (a == 0 and self.reversed_left) else 1
                    nxt[a] = (nxt[a] + step) % f
                for face in range(f):
                    nxt[self.random_dial] = face
                    p[a, s, self.index(nxt)] += 1.0 / f
                rt[a, s] = goal
        r = (p * rt).sum(axis=2)
        starts = None
        if self.start is not None:
            starts = tuple(s for s in range(n)
                           if all(self.dials(s)[k] == v for k, v in self.start.items()))
        return TabularMdp(p, r, self.gamma, terminal, starts, None, 1.0, self.name, rt)


LOCKS = {
    "training": CombinationLockSpec(random_dial=2, rewarding={0: 4, 1: 4}, name="lock-training"),
    "test1": CombinationLockSpec(random_dial=2, reversed_left=True, rewarding={0: 2, 1: 3},
                                 start={0: 2, 1: 4}, name="lock-test1"),
    "test2": CombinationLockSpec(random_dial=1, reversed_left=True, rewarding={0: 2, 2: 3},
                                 start={0: 2, 2: 4}, name="lock-test2"),
}


def build_lock(which: str) -> TabularMdp:
    if which not in LOCKS:
        raise ValueError(f"unknown lock {which!r}")
    return LOCKS[which].to_mdp()


def ignore_dial_labels(dial: int = 2, faces: int = 5) -> np.ndarray:
    """Cluster labels that drop one dial from the lock state."""
    spec = CombinationLockSpec(faces=faces)
    keep = [k for k in range(3) if k != dial]
    return np.array([spec.dials(s)[keep[0]] * faces + spec.dials(s)[keep[1]]
                     for s in range(faces ** 3)])


def collect_dataset(mdp: TabularMdp, count: int, seed: int, restart: bool = True,
                    absorbing_step: bool = True) -> TransitionDataset:
    """Uniform-random walk of ``count`` transitions.

    Episodes start from ``mdp.initial_states()``. After entering a terminal
    state the walk records one absorbing transition out of it (when
    ``absorbing_step``) and then restarts.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    starts = mdp.initial_states()
    terminal = set(mdp.terminal_states)
    actions = rng.integers(mdp.num_actions, size=count)
    draws = rng.random(count)
    out = np.empty((count, 4))
    s = int(starts[rng.integers(starts.size)])
    for i in range(count):
        a = int(actions[i])
        s_next = mdp.sample_next(s, a, draws[i])
        out[i] = (s, a, mdp.sample_reward(s, a, s_next), s_next)
        if restart and (s in terminal or (s_next in terminal and not absorbing_step)):
            s = int(starts[rng.integers(starts.size)])
        else:
            s = s_next
    return TransitionDataset.from_records(out, mdp.num_states, mdp.num_actions, seed)


def collect_covering_dataset(mdp: TabularMdp, count: int, seed: int, max_tries: int = 20,
                             **kwargs) -> TransitionDataset:
    """Collect until every (s, a) pair appears; each retry derives a fresh seed."""
    current = seed
    for attempt in range(max_tries):
        data = collect_dataset(mdp, count, current, **kwargs)
        if data.covers():
            return data
        log.warning("dataset with seed %d misses some (s, a) pairs; re-seeding", current)
        current = derive_seed(seed, attempt + 1)
    raise CoverageError(f"no covering dataset of size {count} after {max_tries} seeds")
