"""Discrete abstractions from real-valued features, Q-values and grid adjacency."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.sparse.csgraph import connected_components

from .mdp import Partition, TabularMdp, value_iteration


@dataclass(frozen=True, eq=False)
class DiscreteAbstraction:
    """Total map from states to contiguous cluster indices."""

    cluster_of: np.ndarray

    def __post_init__(self):
        p = Partition(self.cluster_of)
        object.__setattr__(self, "cluster_of", p.block_of)

    @classmethod
    def from_labels(cls, labels) -> "DiscreteAbstraction":
        return cls(Partition.from_labels(labels).block_of)

    @classmethod
    def identity(cls, num_states: int) -> "DiscreteAbstraction":
        return cls(np.arange(num_states))

    @property
    def num_clusters(self) -> int:
        return int(self.cluster_of.max()) + 1

    @property
    def num_states(self) -> int:
        return self.cluster_of.size

    def to_partition(self) -> Partition:
        return Partition(self.cluster_of)

    def one_hot(self) -> np.ndarray:
        return np.eye(self.num_clusters)[self.cluster_of]

    def to_json(self) -> str:
        return json.dumps({"cluster_of": self.cluster_of.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DiscreteAbstraction":
        return cls(np.asarray(json.loads(text)["cluster_of"], dtype=int))

    def grid_csv(self, height: int, width: int) -> str:
        """Cluster indices laid out as a height x width CSV matrix (row-major states)."""
        if height * width != self.num_states:
            raise ValueError("grid shape does not match the number of states")
        buf = io.StringIO()
        for row in self.cluster_of.reshape(height, width):
            buf.write(",".join(str(int(c)) for c in row) + "\n")
        return buf.getvalue()


def _labels(x) -> np.ndarray:
    if isinstance(x, DiscreteAbstraction):
        return x.cluster_of
    if isinstance(x, Partition):
        return x.block_of
    return np.asarray(x, dtype=int)


def agglomerative_cluster(phi, k: int | None = None, threshold: float | None = None) -> DiscreteAbstraction:
    """Bottom-up average-linkage clustering of feature rows under Euclidean distance.

    Stops at ``k`` clusters, or once no pair is within ``threshold`` (merges at
    exactly the threshold still happen). Ties go to the pair whose smallest
    members have the lowest indices.
    """
    x = np.asarray(phi, dtype=float)
    if x.ndim != 2:
        raise ValueError("phi must be a 2-d array")
    num = x.shape[0]
    if (k is None) == (threshold is None):
        raise ValueError("give exactly one of k and threshold")
    if k is not None and not 1 <= k <= num:
        raise ValueError(f"k must lie in [1, {num}]")
    if threshold is not None and threshold < 0:
        raise ValueError("threshold must be non-negative")

    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    # only the upper triangle is live; slot i always holds the cluster whose smallest member is i
    dist[np.tril_indices(num)] = np.inf
    size = np.ones(num)
    owner = np.arange(num)
    alive = num
    while alive > (k if k is not None else 1):
        flat = int(np.argmin(dist))
        i, j = divmod(flat, num)
        d = dist[i, j]
        if threshold is not None and not d <= threshold:
            break
        # Lance-Williams update for average linkage, kept in the lower slot i
        merged = (size[i] * _sym(dist, i) + size[j] * _sym(dist, j)) / (size[i] + size[j])
        size[i] += size[j]
        dist[:i, i] = merged[:i]
        dist[i, i + 1:] = merged[i + 1:]
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        dist[i, i] = np.inf
        owner[owner == j] = i
        alive -= 1
    return DiscreteAbstraction.from_labels(owner)


def _sym(dist, i):
    row = np.concatenate([dist[:i, i], [np.inf], dist[i, i + 1:]])
    return row


def chebyshev_single_linkage(q, tol: float) -> DiscreteAbstraction:
    """Transitive closure of the relation max_a |q[s, a] - q[t, a]| <= tol."""
    q = np.asarray(q, dtype=float)
    close = np.max(np.abs(q[:, None, :] - q[None, :, :]), axis=2) <= tol
    _, labels = connected_components(close, directed=False)
    return DiscreteAbstraction.from_labels(labels)


def tolerance_for_clusters(q, k: int) -> float:
    """Smallest tolerance whose single-linkage closure has at most ``k`` clusters."""
    q = np.asarray(q, dtype=float)
    num = q.shape[0]
    if not 1 <= k <= num:
        raise ValueError(f"k must lie in [1, {num}]")
    if k == num:
        return 0.0
    heights = linkage(q, method="single", metric="chebyshev")[:, 2]
    return float(np.sort(heights)[num - k - 1])


def q_star_irrelevance_abstraction(mdp: TabularMdp | None, tol: float | None = None, q_values=None,
                                   num_clusters: int | None = None) -> DiscreteAbstraction:
    """Merge states whose optimal Q-values agree within ``tol`` for every action.

    ``q_values`` (S, A) replaces Q* when given, e.g. for a fixed policy.
    ``num_clusters`` picks the tolerance that reaches that count instead.
    """
    q = value_iteration(mdp)[1] if q_values is None else np.asarray(q_values, dtype=float)
    if num_clusters is not None:
        if tol is not None:
            raise ValueError("give tol or num_clusters, not both")
        tol = tolerance_for_clusters(q, num_clusters)
    if tol is None or tol < 0:
        raise ValueError("tol must be non-negative")
    return chebyshev_single_linkage(q, tol)


def adjacency(mdp: TabularMdp) -> np.ndarray:
    """States linked by a nonzero one-step probability in either direction."""
    link = np.any(mdp.transitions > 0, axis=0)
    link = link | link.T
    np.fill_diagonal(link, False)
    return link


def connected_states_heuristic(mdp: TabularMdp, target_clusters: int) -> DiscreteAbstraction:
    """Greedily join neighbouring states until ``target_clusters`` remain.

    Each round merges the smallest cluster (ties by smallest member) with its
    smallest neighbouring cluster, so on grids the first rounds pair up cells.
    """
    num = mdp.num_states
    if not 1 <= target_clusters <= num:
        raise ValueError(f"target_clusters must lie in [1, {num}]")
    link = adjacency(mdp)
    members = {s: [s] for s in range(num)}
    owner = np.arange(num)
    while len(members) > target_clusters:
        order = sorted(members, key=lambda c: (len(members[c]), c))
        merged = False
        for c in order:
            touching = np.unique(owner[np.any(link[members[c]], axis=0)])
            touching = [t for t in touching.tolist() if t != c]
            if not touching:
                continue
            other = min(touching, key=lambda t: (len(members[t]), t))
            keep, drop = min(c, other), max(c, other)
            members[keep] = sorted(members[keep] + members.pop(drop))
            owner[members[keep]] = keep
            merged = True
            break
        if not merged:
            raise ValueError(f"transition graph is too disconnected to reach {target_clusters} clusters")
    return DiscreteAbstraction.from_labels(owner)


def partition_compare(a, b) -> tuple[bool, float]:
    """(every a-block lies inside one b-block, fraction of states in the majority overlap).

    Purity credits each a-block with its largest overlap with a single b-block.
    """
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape:
        raise ValueError("partitions cover different numbers of states")
    refines = True
    covered = 0
    for block in np.unique(la):
        inside = lb[la == block]
        counts = np.bincount(inside)
        covered += int(counts.max())
        refines &= bool(np.count_nonzero(counts) == 1)
    return refines, covered / la.size


def partitions_equal(a, b) -> bool:
    ra, pa = partition_compare(a, b)
    rb, _ = partition_compare(b, a)
    return ra and rb
