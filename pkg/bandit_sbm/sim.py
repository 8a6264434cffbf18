"""
Episode and batch orchestration

One episode runs the configured algorithm round by round: arm pulls,
graph sample, message exchange and estimator updates. Batches run
independent seeded episodes and summarize regret with normal-approximation
confidence intervals.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bandit_sbm.clustering import default_detection_sigma2, detect_clusters_from_burnin
from bandit_sbm.config import Algorithm, ExperimentConfig
from bandit_sbm.environment import RewardModel, cumulative_regret, global_stats, sample_rewards
from bandit_sbm.errors import DetectionStatus
from bandit_sbm.graph import (
    BlockModel,
    GraphSample,
    cluster_quotient,
    compose,
    is_connected,
    sample_graph,
)
from bandit_sbm.policy import (
    HomoNetworkState,
    SbmNetworkState,
    UpdateRule,
    burnin_arms,
    burnin_finalize,
    burnin_step,
    homo_exchange,
    homo_select_arms,
    lagging_agents,
    local_ucb_arms,
    sbm_select_arms,
    sbm_update,
)
from bandit_sbm.rng import (
    ALGORITHM_STREAM,
    DETECTION_STREAM,
    GRAPH_STREAM,
    REWARD_STREAM,
    RngManager,
)
from bandit_sbm.worker import BatchWorker

logger = logging.getLogger(__name__)

CI_Z = 1.96


@dataclass
class EventLog:
    """Per-round connectivity of G_t, its cluster quotient, and l-windows of quotients"""
    graph_connected: np.ndarray
    quotient_connected: np.ndarray
    window_connected: np.ndarray
    window: int


class ConnectivityMonitor:
    """Records connectivity events as graphs are drawn"""

    def __init__(self, bm: BlockModel, window: int, enabled: bool = True):
        self.bm = bm
        self.window = window
        self.enabled = enabled
        self._graph: List[bool] = []
        self._quotient: List[bool] = []
        self._window: List[bool] = []
        self._recent: deque = deque(maxlen=window)

    def observe(self, g: GraphSample) -> None:
        if not self.enabled:
            return
        self._graph.append(is_connected(g))
        quotient = cluster_quotient(g, self.bm)
        self._quotient.append(is_connected(quotient))
        self._recent.append(quotient)
        if len(self._recent) == self.window:
            self._window.append(is_connected(compose(list(self._recent))))

    def log(self) -> EventLog:
        return EventLog(
            graph_connected=np.asarray(self._graph, dtype=bool),
            quotient_connected=np.asarray(self._quotient, dtype=bool),
            window_connected=np.asarray(self._window, dtype=bool),
            window=self.window,
        )


@dataclass
class RunResult:
    seed: int
    algorithm: Algorithm
    regret_trace: np.ndarray
    total_regret: float
    counts: np.ndarray
    events: EventLog
    burnin_length: int = 0
    detected_assignment: Optional[np.ndarray] = None
    detection_status: Optional[DetectionStatus] = None
    detection_iterations: Optional[int] = None
    final_tilde_mu: Optional[np.ndarray] = None
    forced_fraction: Optional[float] = None
    arm_history: Optional[np.ndarray] = None

    @property
    def final_regret(self) -> float:
        return float(self.regret_trace[-1]) if self.regret_trace.size else 0.0

    def to_record(self, checkpoints: np.ndarray, full_trace: bool = False) -> Dict:
        record = {
            "seed": self.seed,
            "algorithm": self.algorithm.value,
            "burnin_length": self.burnin_length,
            "final_regret": self.final_regret,
            "total_regret": self.total_regret,
            "counts": self.counts.tolist(),
            "checkpoints": checkpoints.tolist(),
            "checkpoint_regret": self.regret_trace[checkpoints - 1].tolist(),
            "event_frequencies": event_frequencies([self]).as_dict(),
        }
        if self.forced_fraction is not None:
            record["forced_fraction"] = self.forced_fraction
        if self.detected_assignment is not None:
            record["detected_assignment"] = self.detected_assignment.tolist()
            record["detection_status"] = self.detection_status.value
            record["detection_iterations"] = self.detection_iterations
        if full_trace:
            record["regret_trace"] = self.regret_trace.tolist()
        return record


@dataclass
class BatchSummary:
    algorithm: Algorithm
    checkpoints: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray
    n_runs: int
    degenerate: bool = False

    @property
    def ci_lower(self) -> np.ndarray:
        return self.mean - self.half_width

    @property
    def ci_upper(self) -> np.ndarray:
        return self.mean + self.half_width

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])


@dataclass
class EventFrequencies:
    graph_connected: Optional[float]
    quotient_connected: Optional[float]
    window_connected: Optional[float]

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "graph_connected": self.graph_connected,
            "quotient_connected": self.quotient_connected,
            "window_connected": self.window_connected,
        }


def checkpoint_rounds(horizon: int, n_points: int = 100) -> np.ndarray:
    """Evenly spaced rounds ending at the horizon"""
    points = np.ceil(np.linspace(horizon / n_points, horizon, n_points)).astype(np.int64)
    return np.unique(np.clip(points, 1, horizon))


@dataclass
class _Episode:
    """Mutable bookkeeping shared by the algorithm loops of one episode"""
    cfg: ExperimentConfig
    bm: BlockModel
    rngs: RngManager
    static: Optional[GraphSample]
    monitor: ConnectivityMonitor
    rewards_model: RewardModel
    gaps: np.ndarray
    counts: np.ndarray
    per_round: np.ndarray
    arm_history: Optional[np.ndarray] = None
    agents: np.ndarray = field(default=None)

    def pull(self, t: int, arms: np.ndarray) -> np.ndarray:
        rewards = sample_rewards(self.rewards_model, self.bm, arms, self.rngs.stream(REWARD_STREAM))
        self.counts[self.agents, arms] += 1
        self.per_round[t - 1] = self.gaps[arms].sum() / self.bm.n_agents
        if self.arm_history is not None:
            self.arm_history[t - 1] = arms
        return rewards

    def next_graph(self) -> GraphSample:
        g = self.static if self.static is not None else sample_graph(
            self.bm, self.rngs.stream(GRAPH_STREAM)
        )
        self.monitor.observe(g)
        return g


def _run_homo(ep: _Episode, cooperative: bool) -> None:
    cfg = ep.cfg
    state = HomoNetworkState(cfg.M, cfg.K)
    c1 = cfg.resolve_c1()
    for t in range(1, cfg.T + 1):
        arms = homo_select_arms(state, t) if cooperative else local_ucb_arms(state, t, c1)
        rewards = ep.pull(t, arms)
        state.record_pull(arms, rewards)
        g = ep.next_graph()
        if cooperative:
            homo_exchange(state, g, t)


def _run_sbm(ep: _Episode, algorithm: Algorithm, result: Dict) -> None:
    cfg = ep.cfg
    L = cfg.resolve_burnin(algorithm)
    result["burnin_length"] = L
    known = ep.bm.assignment if algorithm == Algorithm.RULE2_KNOWN else None
    state = SbmNetworkState(cfg.M, cfg.K, assignment=known, n_clusters=cfg.C if known is not None else None)
    rule = UpdateRule.RULE1 if algorithm == Algorithm.RULE1 else UpdateRule.RULE2

    history: List[GraphSample] = []
    for t in range(1, L + 1):
        rewards = ep.pull(t, burnin_arms(state, t))
        g = ep.next_graph()
        burnin_step(state, t, rewards, g)
        history.append(g)
    burn_end = L

    if algorithm == Algorithm.RULE2_DETECTED:
        local_means = state.bar_mu.copy()
        extra = min(cfg.resolve_propagation_rounds(), cfg.T - L)
        for t in range(L + 1, L + extra + 1):
            rewards = ep.pull(t, burnin_arms(state, t))
            g = ep.next_graph()
            burnin_step(state, t, rewards, g)
            history.append(g)
        burn_end = L + extra

        sigma2 = cfg.detection.sigma2
        if sigma2 is None:
            sigma2 = default_detection_sigma2(cfg.rewards.sigma, cfg.K, max(L, 1))
        det_rng = (
            np.random.default_rng(cfg.detection.seed) if cfg.detection.seed is not None
            else ep.rngs.stream(DETECTION_STREAM)
        )
        detection = detect_clusters_from_burnin(
            local_means, history[:L], cfg.C, sigma2, cfg.detection.iters, det_rng
        )
        labels = detection.assignment.labels
        state.set_assignment(labels, cfg.C, history=history)
        result["detected_assignment"] = labels
        result["detection_status"] = detection.status
        result["detection_iterations"] = detection.iterations
        if detection.status == DetectionStatus.ABORTED:
            logger.warning("Cluster detection aborted; continuing with the last valid labels")

    if burn_end > 0:
        burnin_finalize(state)

    c1 = cfg.resolve_c1()
    algo_rng = ep.rngs.stream(ALGORITHM_STREAM)
    forced = 0
    for t in range(burn_end + 1, cfg.T + 1):
        forced += int(lagging_agents(state).sum())
        arms = sbm_select_arms(state, t, c1, cfg.forced_exploration, algo_rng)
        rewards = ep.pull(t, arms)
        state.record_pull(arms, rewards)
        g = ep.next_graph()
        batch = state.emit(t)
        sbm_update(rule, state, batch, g, t, cfg.tau)
    result["final_tilde_mu"] = state.tilde_mu.copy()
    learning_rounds = cfg.T - burn_end
    if learning_rounds > 0:
        result["forced_fraction"] = forced / (cfg.M * learning_rounds)


def run_episode(
    cfg: ExperimentConfig,
    seed: int,
    algorithm: Optional[Algorithm] = None,
    base_dir: Optional[Path] = None,
) -> RunResult:
    """Run one seeded episode; identical (cfg, seed) give identical results"""
    algorithm = Algorithm(algorithm or cfg.algorithms[0])
    bm = cfg.build_block_model()
    rm = cfg.build_reward_model(bm)
    stats = global_stats(rm, bm)

    ep = _Episode(
        cfg=cfg,
        bm=bm,
        rngs=RngManager(seed),
        static=cfg.static_graph(base_dir),
        monitor=ConnectivityMonitor(bm, cfg.tau, enabled=cfg.track_events),
        rewards_model=rm,
        gaps=stats.gaps,
        counts=np.zeros((cfg.M, cfg.K), dtype=np.int64),
        per_round=np.zeros(cfg.T),
        arm_history=np.zeros((cfg.T, cfg.M), dtype=np.int64) if cfg.full_trace else None,
        agents=np.arange(cfg.M),
    )
    logger.debug(f"Episode start: {algorithm.value}, seed {seed}")

    extras: Dict = {}
    if algorithm in (Algorithm.HOMO_UCB, Algorithm.LOCAL_UCB):
        _run_homo(ep, cooperative=algorithm == Algorithm.HOMO_UCB)
    else:
        _run_sbm(ep, algorithm, extras)

    trace = np.cumsum(ep.per_round)
    total = cfg.M * cumulative_regret(ep.counts, stats)
    logger.debug(f"Episode done: {algorithm.value}, seed {seed}, regret {trace[-1]:.4f}")
    return RunResult(
        seed=seed,
        algorithm=algorithm,
        regret_trace=trace,
        total_regret=total,
        counts=ep.counts,
        events=ep.monitor.log(),
        arm_history=ep.arm_history,
        **extras,
    )


def summarize(
    results: Sequence[RunResult],
    checkpoints: np.ndarray,
) -> BatchSummary:
    """Mean regret and 1.96·s/√n half-widths at the checkpoints"""
    if not results:
        raise ValueError("cannot summarize an empty batch")
    ordered = sorted(results, key=lambda r: r.seed)
    traces = np.vstack([r.regret_trace[checkpoints - 1] for r in ordered])
    n_runs = traces.shape[0]
    mean = traces.mean(axis=0)
    if n_runs > 1:
        half_width = CI_Z * traces.std(axis=0, ddof=1) / np.sqrt(n_runs)
        degenerate = False
    else:
        half_width = np.zeros_like(mean)
        degenerate = True
        logger.warning("Single-run batch: confidence interval is degenerate")
    return BatchSummary(
        algorithm=ordered[0].algorithm,
        checkpoints=checkpoints,
        mean=mean,
        half_width=half_width,
        n_runs=n_runs,
        degenerate=degenerate,
    )


def run_batch(
    cfg: ExperimentConfig,
    seeds: Sequence[int],
    algorithm: Optional[Algorithm] = None,
    jobs: int = 1,
    base_dir: Optional[Path] = None,
) -> Tuple[BatchSummary, List[RunResult]]:
    """Independent episodes over distinct seeds, sorted by seed"""
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    algorithm = Algorithm(algorithm or cfg.algorithms[0])
    worker = BatchWorker(jobs=jobs)
    episode = partial(run_episode, cfg, algorithm=algorithm, base_dir=base_dir)
    results = sorted(worker.map(episode, list(seeds)), key=lambda r: r.seed)
    summary = summarize(results, checkpoint_rounds(cfg.T, cfg.checkpoints))
    logger.info(
        f"Batch {algorithm.value}: {summary.n_runs} runs, final mean regret {summary.final_mean:.4f}"
    )
    return summary, results


def event_frequencies(results: Sequence[RunResult]) -> EventFrequencies:
    """Empirical frequencies over all rounds of all runs"""

    def frequency(name: str) -> Optional[float]:
        parts = [getattr(r.events, name) for r in results]
        flat = np.concatenate(parts) if parts else np.array([], dtype=bool)
        return float(flat.mean()) if flat.size else None

    return EventFrequencies(
        graph_connected=frequency("graph_connected"),
        quotient_connected=frequency("quotient_connected"),
        window_connected=frequency("window_connected"),
    )
