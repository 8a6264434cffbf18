"""
Reward environment

Cluster-shared Gaussian arm rewards, the global optimum with its gaps,
and regret accounting.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from bandit_sbm.errors import ConfigurationError
from bandit_sbm.graph import BlockModel

logger = logging.getLogger(__name__)

# M×K matrix of pull counts n_{i,k}(t)
PullCounts = np.ndarray

OPTIMUM_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class RewardModel:
    """C×K cluster arm means plus a common noise standard deviation"""

    n_arms: int
    cluster_means: np.ndarray
    sigma: float

    def __post_init__(self):
        means = np.asarray(self.cluster_means, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        object.__setattr__(self, "cluster_means", means)

        if self.n_arms < 1:
            raise ConfigurationError("n_arms must be positive")
        if means.ndim != 2 or means.shape[1] != self.n_arms:
            raise ConfigurationError(
                f"cluster_means must have {self.n_arms} columns, got shape {means.shape}"
            )
        if np.any(means < 0.0) or np.any(means > 1.0):
            raise ConfigurationError("cluster means must lie in [0, 1]")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be nonnegative, got {self.sigma}")

    @property
    def n_clusters(self) -> int:
        return self.cluster_means.shape[0]

    def check_compatible(self, bm: BlockModel) -> None:
        if self.n_clusters != bm.n_clusters:
            raise ConfigurationError(
                f"reward model has {self.n_clusters} clusters, block model has {bm.n_clusters}"
            )

    def agent_means(self, bm: BlockModel) -> np.ndarray:
        """M×K matrix of per-agent arm means"""
        self.check_compatible(bm)
        return self.cluster_means[bm.assignment]


@dataclass(frozen=True, eq=False)
class GlobalStats:
    global_means: np.ndarray
    optimal_arm: int
    gaps: np.ndarray


def agent_mean(model: RewardModel, bm: BlockModel, m: int, k: int) -> float:
    return float(model.cluster_means[bm.assignment[m], k])


def sample_reward(
    model: RewardModel,
    bm: BlockModel,
    m: int,
    k: int,
    rng: np.random.Generator,
) -> float:
    """One Gaussian reward; a draw is consumed even when sigma is 0"""
    return agent_mean(model, bm, m, k) + model.sigma * float(rng.standard_normal())


def sample_rewards(
    model: RewardModel,
    bm: BlockModel,
    arms: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rewards for every agent's pull in one round, drawn in agent order"""
    means = model.cluster_means[bm.assignment, arms]
    return means + model.sigma * rng.standard_normal(bm.n_agents)


def global_stats(model: RewardModel, bm: BlockModel) -> GlobalStats:
    """Agent-averaged means, the unique optimal arm and per-arm gaps"""
    global_means = model.agent_means(bm).mean(axis=0)
    best = global_means.max()
    winners = np.flatnonzero(best - global_means <= OPTIMUM_TIE_TOLERANCE)
    if winners.size > 1:
        raise ConfigurationError(
            f"non-unique optimum: arms {winners.tolist()} share global mean {best:.6g}"
        )
    optimal_arm = int(winners[0])
    gaps = global_means[optimal_arm] - global_means
    gaps[optimal_arm] = 0.0
    return GlobalStats(global_means=global_means, optimal_arm=optimal_arm, gaps=gaps)


def cumulative_regret(counts: PullCounts, stats: GlobalStats) -> float:
    """R = (1/M) Σ_k Σ_i Δ_k n_{i,k}"""
    counts = np.asarray(counts)
    if counts.ndim != 2 or counts.shape[1] != stats.gaps.size:
        raise ValueError(
            f"counts must be M×{stats.gaps.size}, got shape {counts.shape}"
        )
    return float((counts @ stats.gaps).sum() / counts.shape[0])


def total_regret(counts: PullCounts, stats: GlobalStats) -> float:
    """M·R"""
    counts = np.asarray(counts)
    return counts.shape[0] * cumulative_regret(counts, stats)


def heterogeneity_degree(n_agents: int, n_clusters: int) -> float:
    if not 1 <= n_clusters <= n_agents:
        raise ConfigurationError(
            f"heterogeneity degree needs 1 <= C <= M, got M={n_agents}, C={n_clusters}"
        )
    return n_clusters / n_agents


def generate_cluster_means(
    n_clusters: int,
    n_arms: int,
    sizes: Optional[Sequence[int]] = None,
    min_gap: float = 0.1,
    heterogeneity: float = 0.1,
    rng: Optional[np.random.Generator] = None,
    optimum_mean: float = 0.7,
) -> np.ndarray:
    """Heterogeneous cluster means around a global profile

    The global (size-weighted) profile has a unique best arm at
    optimum_mean and every other arm at least min_gap below it. Cluster
    rows deviate from the profile by up to ±heterogeneity per arm, with
    the deviations centred so the weighted average is the profile again.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if sizes is None:
        sizes = np.ones(n_clusters)
    weights = np.asarray(sizes, dtype=float)
    if weights.shape != (n_clusters,) or np.any(weights <= 0):
        raise ConfigurationError("sizes must give a positive size per cluster")
    weights = weights / weights.sum()

    optimal_arm = int(rng.integers(n_arms))
    profile = optimum_mean - min_gap - rng.uniform(0.0, 0.2, size=n_arms)
    profile[optimal_arm] = optimum_mean

    deviations = rng.uniform(-heterogeneity, heterogeneity, size=(n_clusters, n_arms))
    deviations -= weights @ deviations
    means = profile[None, :] + deviations

    if np.any(means < 0.0) or np.any(means > 1.0):
        raise ConfigurationError(
            "generated cluster means leave [0, 1]; lower heterogeneity or min_gap"
        )
    logger.debug(f"Generated cluster means with optimal arm {optimal_arm}")
    return means
