"""Reward-predictive state representations with linear successor feature models."""
from .clustering import (DiscreteAbstraction, agglomerative_cluster, connected_states_heuristic,
                         partition_compare, partitions_equal, q_star_irrelevance_abstraction)
from .dataset import TransitionDataset
from .envs import (CoverageError, build_column_world, build_counterexample, build_five_state, build_lock,
                   build_puddle_world, build_three_state, build_transfer_task, collect_dataset)
from .estimators import AverageLinkageClustering, FittedQIteration, RewardPredictiveEncoder
from .fqi import FqiConfig, fitted_q_iteration
from .mdp import (Partition, TabularMdp, TabularPolicy, bisimulation_partition, compute_sf, compute_sr,
                  compute_sr_action, expected_reward_rollout, policy_evaluation, transitions_from_sr,
                  value_iteration)
from .representation import ErrorReport, Lam, Lsfm, error_metrics
from .training import TrainConfig, train_representation

__version__ = "0.1.0"
