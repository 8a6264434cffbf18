"""
Experiment configuration

JSON experiment documents are validated with pydantic models that reject
unknown keys. Runtime settings (parallelism, log level) come from the
environment, optionally seeded from a .env file.
"""
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from bandit_sbm.environment import RewardModel, generate_cluster_means
from bandit_sbm.graph import BlockModel, GraphSample, load_edge_list
from bandit_sbm.policy import ForcedExploration, default_c1
from bandit_sbm.theory import Theorem, TheoryParams, burnin_length

logger = logging.getLogger(__name__)

ENV_PREFIX = "BANDIT_SBM_"


class Algorithm(str, Enum):
    HOMO_UCB = "homo_ucb"
    LOCAL_UCB = "local_ucb"
    RULE1 = "rule1"
    RULE2_KNOWN = "rule2_known"
    RULE2_DETECTED = "rule2_detected"

    @property
    def uses_burnin(self) -> bool:
        return self in (Algorithm.RULE1, Algorithm.RULE2_KNOWN, Algorithm.RULE2_DETECTED)


class GraphSection(BaseModel):
    """Two-level SBM (p_intra/q_inter), explicit C×C probs, or a static edge list"""
    model_config = ConfigDict(extra="forbid")

    p_intra: Optional[float] = Field(None, ge=0.0, le=1.0)
    q_inter: Optional[float] = Field(None, ge=0.0, le=1.0)
    probs: Optional[List[List[float]]] = None
    assignment: Optional[List[int]] = None
    edge_list: Optional[str] = None

    @model_validator(mode="after")
    def validate_source(self):
        planted = self.p_intra is not None or self.q_inter is not None
        sources = sum([planted, self.probs is not None, self.edge_list is not None])
        if sources != 1:
            raise ValueError("graph needs exactly one of p_intra/q_inter, probs or edge_list")
        if planted and (self.p_intra is None or self.q_inter is None):
            raise ValueError("graph needs both p_intra and q_inter")
        return self


class RewardSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma: float = Field(0.1, ge=0.0)
    cluster_means: Optional[List[List[float]]] = None
    min_gap: float = Field(0.1, gt=0.0, lt=0.5)
    heterogeneity: float = Field(0.1, ge=0.0, lt=0.5)
    seed: int = 0


class DetectionSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma2: Optional[float] = Field(None, gt=0.0)
    iters: int = Field(10, ge=1)
    propagation_rounds: Optional[int] = Field(None, ge=0)
    seed: Optional[int] = None


class TheorySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(0.01, gt=0.0, lt=1.0)
    delta: float = Field(0.1, gt=0.0, lt=1.0)
    c0: float = Field(0.5, gt=0.0, lt=1.0)
    theorems: List[Theorem] = Field(
        default_factory=lambda: [Theorem.T2, Theorem.T3, Theorem.T4, Theorem.T5, Theorem.T6]
    )
    l: Optional[int] = Field(None, ge=1)
    burnin_theorem: Theorem = Theorem.T3


class ExperimentConfig(BaseModel):
    """One experiment: model, horizon, algorithms and seeding"""
    model_config = ConfigDict(extra="forbid")

    M: int = Field(..., ge=1)
    C: int = Field(..., ge=1)
    K: int = Field(..., ge=1)
    T: int = Field(..., ge=1)
    L: Optional[int] = Field(None, ge=0)
    graph: GraphSection
    rewards: RewardSection = Field(default_factory=RewardSection)
    algorithms: List[Algorithm] = Field(default_factory=lambda: [Algorithm.RULE2_KNOWN], min_length=1)
    C1: Optional[float] = Field(None, ge=0.0)
    tau: int = Field(1, ge=1)
    forced_exploration: ForcedExploration = ForcedExploration.ROUND_ROBIN
    detection: DetectionSection = Field(default_factory=DetectionSection)
    theory: TheorySection = Field(default_factory=TheorySection)
    master_seed: int = 0
    n_runs: int = Field(25, ge=1)
    checkpoints: int = Field(100, ge=1)
    full_trace: bool = False
    track_events: bool = True

    @field_validator("algorithms")
    @classmethod
    def validate_algorithms(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("algorithms must not repeat")
        return v

    @model_validator(mode="after")
    def validate_dimensions(self):
        if self.C > self.M:
            raise ValueError(f"C ({self.C}) exceeds M ({self.M})")
        if self.graph.assignment is not None:
            if len(self.graph.assignment) != self.M:
                raise ValueError(f"graph.assignment must have {self.M} entries")
            if sorted(set(self.graph.assignment)) != list(range(self.C)):
                raise ValueError(f"graph.assignment must use every label in [0, {self.C})")
        if self.graph.probs is not None:
            probs = np.asarray(self.graph.probs, dtype=float)
            if probs.shape != (self.C, self.C):
                raise ValueError(f"graph.probs must be {self.C}x{self.C}")
        if self.rewards.cluster_means is not None:
            means = np.asarray(self.rewards.cluster_means, dtype=float)
            if means.shape != (self.C, self.K):
                raise ValueError(f"rewards.cluster_means must be {self.C}x{self.K}")
        if self.L is not None:
            if self.L > self.T:
                raise ValueError(f"L ({self.L}) exceeds T ({self.T})")
            if any(a.uses_burnin for a in self.algorithms) and self.L < self.K:
                raise ValueError(f"L ({self.L}) must be at least K ({self.K})")
        if Algorithm.HOMO_UCB in self.algorithms and self.C != 1:
            raise ValueError("homo_ucb assumes a single cluster (C = 1)")
        return self

    # -- domain objects ------------------------------------------------------

    def build_block_model(self) -> BlockModel:
        section = self.graph
        if section.probs is not None:
            assignment = section.assignment
            if assignment is None:
                assignment = [m * self.C // self.M for m in range(self.M)]
            return BlockModel(self.M, self.C, np.asarray(assignment), np.asarray(section.probs))
        if section.edge_list is not None:
            # Static graphs keep the block structure only for reward heterogeneity
            return BlockModel.planted(self.M, self.C, 1.0, 1.0, section.assignment)
        return BlockModel.planted(self.M, self.C, section.p_intra, section.q_inter, section.assignment)

    def build_reward_model(self, bm: BlockModel) -> RewardModel:
        section = self.rewards
        if section.cluster_means is not None:
            means = np.asarray(section.cluster_means, dtype=float)
        else:
            means = generate_cluster_means(
                self.C,
                self.K,
                sizes=bm.cluster_sizes,
                min_gap=section.min_gap,
                heterogeneity=section.heterogeneity,
                rng=np.random.default_rng(section.seed),
            )
        return RewardModel(n_arms=self.K, cluster_means=means, sigma=section.sigma)

    def static_graph(self, base_dir: Optional[Path] = None) -> Optional[GraphSample]:
        if self.graph.edge_list is None:
            return None
        path = Path(self.graph.edge_list)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        return load_edge_list(path.read_text(encoding="utf-8"), self.M)

    def theory_params(self, gaps: Optional[List[float]] = None) -> TheoryParams:
        return TheoryParams(
            n_agents=self.M,
            n_clusters=self.C,
            n_arms=self.K,
            horizon=max(self.T, 2),
            epsilon=self.theory.epsilon,
            delta=self.theory.delta,
            c0=self.theory.c0,
            sigma2=self.rewards.sigma ** 2,
            gaps=gaps,
            l=self.theory.l,
            p_intra=self.graph.p_intra,
        )

    def resolve_burnin(self, algorithm: Algorithm) -> int:
        """Explicit L, or the theory formula for the algorithm's rule, capped at T"""
        if not algorithm.uses_burnin:
            return 0
        if self.L is not None:
            return self.L
        theorem = Theorem.T2 if algorithm == Algorithm.RULE1 else self.theory.burnin_theorem
        return min(self.T, burnin_length(theorem, self.theory_params()))

    def resolve_c1(self) -> float:
        return self.C1 if self.C1 is not None else default_c1(self.rewards.sigma)

    def resolve_propagation_rounds(self) -> int:
        rounds = self.detection.propagation_rounds
        return self.M if rounds is None else rounds


class SweepSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    axis: str
    values: List[float] = Field(..., min_length=1)


class CliConfig(ExperimentConfig):
    """Experiment plus output location and an optional sweep"""
    out_dir: Optional[str] = None
    sweep: Optional[SweepSection] = None


SWEEP_AXES: Dict[str, tuple] = {
    "M": ("M",),
    "C": ("C",),
    "K": ("K",),
    "p_intra": ("graph", "p_intra"),
    "q_inter": ("graph", "q_inter"),
    "sigma": ("rewards", "sigma"),
}

_INTEGER_AXES = {"M", "C", "K"}


def apply_axis(config: ExperimentConfig, axis: str, value: Union[int, float]) -> ExperimentConfig:
    """Copy of config with one sweep axis set, re-validated"""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis '{axis}'; choose from {sorted(SWEEP_AXES)}")
    if axis in _INTEGER_AXES:
        if float(value) != int(value):
            raise ValueError(f"axis {axis} needs integer values, got {value}")
        value = int(value)
    data = config.model_dump(mode="json")
    target = data
    *parents, leaf = SWEEP_AXES[axis]
    for key in parents:
        target = target[key]
    target[leaf] = value
    return type(config).model_validate(data)


def load_config(path: Union[str, Path]) -> CliConfig:
    """Read and validate a JSON experiment document"""
    with open(path, "r", encoding="utf-8") as f:
        data: Any = json.load(f)
    return CliConfig.model_validate(data)


class RuntimeSettings(BaseSettings):
    """Runtime knobs from BANDIT_SBM_* variables; a .env file fills unset ones"""
    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    jobs: int = Field(1, ge=1)
    log_level: str = "WARNING"

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return level


def load_settings(env_file: Optional[Union[str, Path]] = None) -> RuntimeSettings:
    if env_file is None:
        return RuntimeSettings()
    return RuntimeSettings(_env_file=env_file)
