"""
Decision rules for cooperative agents

Implements the single-cluster cooperative UCB, a no-communication UCB1
baseline, and the UCB-SBM algorithm: a round-robin burn-in followed by
UCB play where estimators are refreshed with Rule 1 (agent-level
weighting) or Rule 2 (cluster-level aggregation).

State is held for the whole population so one round is a handful of
array operations. Messages of a round are staged in a MessageBatch built
from the senders' state after their local pull and before any
aggregation, then delivered along the round's adjacency (plus a
self-delivery), which is exactly each agent's inbox of neighbors.
Local counts and means also travel hop by hop, so cluster aggregates
see every member's most recent statistics rather than only those of
the last direct contact.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from bandit_sbm.errors import ConfigurationError
from bandit_sbm.graph import GraphSample

logger = logging.getLogger(__name__)


class ForcedExploration(str, Enum):
    """How an agent picks an arm when its cluster count lags the global count"""
    ROUND_ROBIN = "round_robin"
    UNIFORM = "uniform"


class UpdateRule(str, Enum):
    RULE1 = "rule1"
    RULE2 = "rule2"


def default_c1(sigma: float) -> float:
    return 2.0 * sigma ** 2


def _ucb_bonus(c1: float, t: int, counts: np.ndarray) -> np.ndarray:
    """sqrt(c1 ln t / n), +inf where n is 0"""
    safe = np.maximum(counts, 1)
    bonus = np.sqrt(c1 * np.log(t) / safe)
    return np.where(counts > 0, bonus, np.inf)


# ---------------------------------------------------------------------------
# Single-cluster cooperative UCB and the local baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomoPayload:
    """Cumulative own observations of one sender"""
    sender: int
    counts: np.ndarray
    sums: np.ndarray
    round: int


class HomoNetworkState:
    """Own statistics plus the latest peer snapshots, per agent"""

    def __init__(self, n_agents: int, n_arms: int):
        self.n_agents = n_agents
        self.n_arms = n_arms
        self.own_count = np.zeros((n_agents, n_arms), dtype=np.int64)
        self.own_sum = np.zeros((n_agents, n_arms))
        # [receiver, sender, arm]
        self.peer_count = np.zeros((n_agents, n_agents, n_arms), dtype=np.int64)
        self.peer_sum = np.zeros((n_agents, n_agents, n_arms))
        self.last_contact = np.full((n_agents, n_agents), -1, dtype=np.int64)

    def record_pull(self, arms: np.ndarray, rewards: np.ndarray) -> None:
        agents = np.arange(self.n_agents)
        self.own_count[agents, arms] += 1
        self.own_sum[agents, arms] += rewards

    def merged_count(self) -> np.ndarray:
        return self.own_count + self.peer_count.sum(axis=1)

    def merged_mean(self) -> np.ndarray:
        count = self.merged_count()
        total = self.own_sum + self.peer_sum.sum(axis=1)
        return np.divide(total, count, out=np.zeros_like(total), where=count > 0)

    def own_mean(self) -> np.ndarray:
        return np.divide(
            self.own_sum, self.own_count,
            out=np.zeros_like(self.own_sum), where=self.own_count > 0,
        )

    def payload(self, sender: int, t: int) -> HomoPayload:
        return HomoPayload(
            sender=sender,
            counts=self.own_count[sender].copy(),
            sums=self.own_sum[sender].copy(),
            round=t,
        )


def homo_ucb_index(state: HomoNetworkState, m: int, k: int, t: int) -> float:
    """Merged mean + sqrt(ln t / Ñ); +inf for an arm nobody reported yet"""
    return float(homo_ucb_indices(state, t)[m, k])


def homo_ucb_indices(state: HomoNetworkState, t: int) -> np.ndarray:
    return state.merged_mean() + _ucb_bonus(1.0, t, state.merged_count())


def homo_select_arms(state: HomoNetworkState, t: int) -> np.ndarray:
    return np.argmax(homo_ucb_indices(state, t), axis=1)


def homo_merge(
    state: HomoNetworkState,
    m: int,
    inbox: Iterable[HomoPayload],
) -> HomoNetworkState:
    """Replace agent m's peer snapshots with newer payloads; stale ones are dropped"""
    for payload in inbox:
        j = payload.sender
        if j == m:
            continue
        if payload.round < state.last_contact[m, j]:
            logger.debug(f"Agent {m} ignored stale payload from {j} (round {payload.round})")
            continue
        state.peer_count[m, j] = payload.counts
        state.peer_sum[m, j] = payload.sums
        state.last_contact[m, j] = payload.round
    return state


def homo_exchange(state: HomoNetworkState, graph: GraphSample, t: int) -> HomoNetworkState:
    """Every agent sends its own statistics to its current neighbors"""
    adjacency = graph.adjacency
    mask = adjacency[:, :, None]
    state.peer_count = np.where(mask, state.own_count[None, :, :], state.peer_count)
    state.peer_sum = np.where(mask, state.own_sum[None, :, :], state.peer_sum)
    state.last_contact[adjacency] = t
    return state


def local_ucb_arms(state: HomoNetworkState, t: int, c1: float) -> np.ndarray:
    """UCB1 on own observations; untried arms first, lowest index first"""
    index = state.own_mean() + _ucb_bonus(c1, t, state.own_count)
    return np.argmax(index, axis=1)


def local_ucb_step(state: HomoNetworkState, m: int, t: int, c1: float) -> int:
    return int(local_ucb_arms(state, t, c1)[m])


# ---------------------------------------------------------------------------
# UCB-SBM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MessagePayload:
    """What one agent transmits in one round

    known_* rows relay the freshest local statistics the sender holds
    about every agent, stamped with the round they were emitted.
    """
    sender: int
    n: np.ndarray
    N: np.ndarray
    Ntilde: np.ndarray
    bar_mu: np.ndarray
    hat_mu: np.ndarray
    tilde_mu: np.ndarray
    round: int
    known_n: Optional[np.ndarray] = None
    known_bar_mu: Optional[np.ndarray] = None
    known_round: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MessageBatch:
    """All payloads of one round, indexed by sender"""
    n: np.ndarray
    N: np.ndarray
    Ntilde: np.ndarray
    bar_mu: np.ndarray
    hat_mu: np.ndarray
    tilde_mu: np.ndarray
    round: int
    # [sender, subject, arm] and [sender, subject]
    known_n: np.ndarray
    known_bar_mu: np.ndarray
    known_round: np.ndarray

    def payload(self, sender: int) -> MessagePayload:
        return MessagePayload(
            sender=sender,
            n=self.n[sender],
            N=self.N[sender],
            Ntilde=self.Ntilde[sender],
            bar_mu=self.bar_mu[sender],
            hat_mu=self.hat_mu[sender],
            tilde_mu=self.tilde_mu[sender],
            round=self.round,
            known_n=self.known_n[sender],
            known_bar_mu=self.known_bar_mu[sender],
            known_round=self.known_round[sender],
        )


@dataclass(frozen=True)
class SbmAgentState:
    """Read-only view of one agent's estimator stack"""
    m: int
    n: np.ndarray
    N: np.ndarray
    Ntilde: np.ndarray
    bar_mu: np.ndarray
    hat_mu: np.ndarray
    tilde_bar_mu: np.ndarray
    tilde_mu: np.ndarray
    P: np.ndarray
    last_contact: np.ndarray


_SNAPSHOT_FIELDS = ("n", "N", "Ntilde", "bar_mu", "hat_mu", "tilde_mu")


class SbmNetworkState:
    """Local, cluster and global estimators of every agent

    Snapshot arrays are indexed [receiver, sender, arm] and hold the
    latest payload each receiver got from each sender. The diagonal is
    refreshed every round with the agent's own payload.

    Known arrays are indexed [receiver, subject, arm] and hold the
    freshest local counts and means of each subject the receiver has
    heard of, directly or relayed. Cluster counts and cluster means are
    built from them, so N is comparable with the Ñ that travels along
    the same edges.
    """

    def __init__(
        self,
        n_agents: int,
        n_arms: int,
        assignment: Optional[Sequence[int]] = None,
        n_clusters: Optional[int] = None,
    ):
        self.n_agents = n_agents
        self.n_arms = n_arms
        shape = (n_agents, n_arms)
        self.n = np.zeros(shape, dtype=np.int64)
        self.N = np.zeros(shape, dtype=np.int64)
        self.Ntilde = np.zeros(shape, dtype=np.int64)
        self.bar_mu = np.zeros(shape)
        self.hat_mu = np.zeros(shape)
        self.tilde_bar_mu = np.zeros(shape)
        self.tilde_mu = np.zeros(shape)

        snap_shape = (n_agents, n_agents, n_arms)
        self.snap_n = np.zeros(snap_shape, dtype=np.int64)
        self.snap_N = np.zeros(snap_shape, dtype=np.int64)
        self.snap_Ntilde = np.zeros(snap_shape, dtype=np.int64)
        self.snap_bar_mu = np.zeros(snap_shape)
        self.snap_hat_mu = np.zeros(snap_shape)
        self.snap_tilde_mu = np.zeros(snap_shape)

        self.known_n = np.zeros(snap_shape, dtype=np.int64)
        self.known_bar_mu = np.zeros(snap_shape)
        self.known_round = np.full((n_agents, n_agents), -1, dtype=np.int64)

        self.last_contact = np.full((n_agents, n_agents), -1, dtype=np.int64)
        self.contact_count = np.zeros((n_agents, n_agents), dtype=np.int64)
        self.rounds = 0

        self.assignment: Optional[np.ndarray] = None
        self.n_clusters: Optional[int] = None
        self.cluster_contact_count: Optional[np.ndarray] = None
        if assignment is not None:
            self.set_assignment(assignment, n_clusters)

    # -- cluster structure ---------------------------------------------------

    def set_assignment(
        self,
        assignment: Sequence[int],
        n_clusters: Optional[int] = None,
        history: Iterable[GraphSample] = (),
    ) -> None:
        """Install cluster labels; cluster contacts are replayed from history"""
        labels = np.asarray(assignment, dtype=np.int64)
        if n_clusters is None:
            n_clusters = int(labels.max()) + 1
        if labels.shape != (self.n_agents,):
            raise ConfigurationError(
                f"assignment must have length {self.n_agents}, got shape {labels.shape}"
            )
        if labels.min() < 0 or labels.max() >= n_clusters:
            raise ConfigurationError(f"cluster label out of range [0, {n_clusters})")
        sizes = np.bincount(labels, minlength=n_clusters)
        if np.any(sizes == 0):
            raise ConfigurationError("assignment leaves a cluster empty")

        self.assignment = labels
        self.n_clusters = n_clusters
        self._one_hot = np.zeros((self.n_agents, n_clusters))
        self._one_hot[np.arange(self.n_agents), labels] = 1.0
        self._same_cluster = labels[:, None] == labels[None, :]
        self._own_cluster_size = sizes[labels].astype(float)
        # receiver size over sender size, puts relayed Ñ on the receiver's cluster scale
        self._size_ratio = self._own_cluster_size[:, None] / self._own_cluster_size[None, :]
        self.cluster_contact_count = np.zeros((n_clusters, n_clusters), dtype=np.int64)
        for graph in history:
            self.cluster_contact_count += self._cluster_edges(graph)

    def _cluster_edges(self, graph: GraphSample) -> np.ndarray:
        z = self._one_hot
        return ((z.T @ graph.adjacency.astype(float) @ z) > 0).astype(np.int64)

    def _cluster_mean(self, snapshots: np.ndarray) -> np.ndarray:
        """Average of snapshots over each receiver's own cluster"""
        mask = self._same_cluster[:, :, None]
        return np.where(mask, snapshots, 0).sum(axis=1) / self._own_cluster_size[:, None]

    def _cluster_sum(self, snapshots: np.ndarray) -> np.ndarray:
        return np.where(self._same_cluster[:, :, None], snapshots, 0).sum(axis=1)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def contact_frequency(self) -> np.ndarray:
        """P_t(m, j): fraction of rounds with an edge; self counts as always connected"""
        if self.rounds == 0:
            freq = np.zeros((self.n_agents, self.n_agents))
        else:
            freq = self.contact_count / self.rounds
        np.fill_diagonal(freq, 1.0)
        return freq

    @property
    def cluster_contact_frequency(self) -> Optional[np.ndarray]:
        """P_t(c, c'): fraction of rounds with at least one cross edge"""
        if self.cluster_contact_count is None:
            return None
        if self.rounds == 0:
            freq = np.zeros((self.n_clusters, self.n_clusters))
        else:
            freq = self.cluster_contact_count / self.rounds
        np.fill_diagonal(freq, 1.0)
        return freq

    def record_pull(self, arms: np.ndarray, rewards: np.ndarray) -> None:
        agents = np.arange(self.n_agents)
        self.n[agents, arms] += 1
        count = self.n[agents, arms]
        self.bar_mu[agents, arms] += (rewards - self.bar_mu[agents, arms]) / count

    def emit(self, t: int) -> MessageBatch:
        """Stage every agent's payload from its current state"""
        idx = np.arange(self.n_agents)
        known_n = self.known_n.copy()
        known_bar_mu = self.known_bar_mu.copy()
        known_round = self.known_round.copy()
        known_n[idx, idx] = self.n
        known_bar_mu[idx, idx] = self.bar_mu
        known_round[idx, idx] = t

        if self.assignment is None:
            fresh_hat = self.bar_mu.copy()
        else:
            fresh_hat = self._cluster_mean(known_bar_mu)
        return MessageBatch(
            n=self.n.copy(),
            N=self.N.copy(),
            Ntilde=self.Ntilde.copy(),
            bar_mu=self.bar_mu.copy(),
            hat_mu=fresh_hat,
            tilde_mu=self.tilde_mu.copy(),
            round=t,
            known_n=known_n,
            known_bar_mu=known_bar_mu,
            known_round=known_round,
        )

    def _merge_known(self, batch: MessageBatch, received: np.ndarray) -> None:
        """Keep, per subject, the freshest entry among own table and received tables"""
        # [receiver, sender, subject]
        offered = np.where(received[:, :, None], batch.known_round[None, :, :], -1)
        best_sender = offered.argmax(axis=1)
        best_round = offered.max(axis=1)
        newer = best_round > self.known_round
        subjects = np.arange(self.n_agents)[None, :]
        self.known_n = np.where(newer[:, :, None], batch.known_n[best_sender, subjects], self.known_n)
        self.known_bar_mu = np.where(
            newer[:, :, None], batch.known_bar_mu[best_sender, subjects], self.known_bar_mu
        )
        self.known_round = np.where(newer, best_round, self.known_round)

    def deliver(self, batch: MessageBatch, graph: GraphSample) -> None:
        """Store payloads along the round's edges and update contact statistics"""
        adjacency = graph.adjacency
        if adjacency.shape[0] != self.n_agents:
            raise ValueError(
                f"graph has {adjacency.shape[0]} vertices, state has {self.n_agents} agents"
            )
        received = adjacency | np.eye(self.n_agents, dtype=bool)
        mask = received[:, :, None]
        for name in _SNAPSHOT_FIELDS:
            snap_name = f"snap_{name}"
            setattr(
                self,
                snap_name,
                np.where(mask, getattr(batch, name)[None, :, :], getattr(self, snap_name)),
            )
        self._merge_known(batch, received)
        self.last_contact[received] = batch.round
        self.contact_count += adjacency
        self.rounds += 1
        if self.cluster_contact_count is not None:
            self.cluster_contact_count += self._cluster_edges(graph)

    def agent(self, m: int) -> SbmAgentState:
        return SbmAgentState(
            m=m,
            n=self.n[m].copy(),
            N=self.N[m].copy(),
            Ntilde=self.Ntilde[m].copy(),
            bar_mu=self.bar_mu[m].copy(),
            hat_mu=self.hat_mu[m].copy(),
            tilde_bar_mu=self.tilde_bar_mu[m].copy(),
            tilde_mu=self.tilde_mu[m].copy(),
            P=self.contact_frequency[m].copy(),
            last_contact=self.last_contact[m].copy(),
        )


def burnin_arms(state: SbmNetworkState, t: int) -> np.ndarray:
    return np.full(state.n_agents, t % state.n_arms, dtype=np.int64)


def burnin_step(
    state: SbmNetworkState,
    t: int,
    rewards: np.ndarray,
    graph: GraphSample,
) -> MessageBatch:
    """Round-robin pull of arm t mod K, then share local means with neighbors"""
    state.record_pull(burnin_arms(state, t), rewards)
    batch = state.emit(t)
    state.deliver(batch, graph)
    return batch


def burnin_finalize(state: SbmNetworkState) -> SbmNetworkState:
    """Seed the global estimator from the burn-in snapshots

    Every contacted peer (and the agent itself) gets weight 1/M; an agent
    that never met anyone keeps its own local means.
    """
    m_agents = state.n_agents
    active = state.contact_count > 0
    np.fill_diagonal(active, True)
    weights = active / m_agents
    tilde = np.einsum("mj,mjk->mk", weights, state.snap_bar_mu)

    isolated = active.sum(axis=1) == 1
    if m_agents > 1 and isolated.any():
        logger.warning(
            f"Burn-in ended with agents {np.flatnonzero(isolated).tolist()} never contacted; "
            "falling back to local means"
        )
        tilde[isolated] = state.bar_mu[isolated]

    state.N = state.n.copy()
    state.Ntilde = state.n.copy()
    state.tilde_mu = tilde
    state.tilde_bar_mu = tilde.copy()
    state.hat_mu = (
        state._cluster_mean(state.known_bar_mu) if state.assignment is not None
        else state.bar_mu.copy()
    )
    state.snap_N = state.snap_n.copy()
    state.snap_Ntilde = state.snap_n.copy()
    state.snap_hat_mu = state.snap_bar_mu.copy()
    state.snap_tilde_mu = state.snap_bar_mu.copy()
    idx = np.arange(m_agents)
    state.snap_tilde_mu[idx, idx] = tilde
    return state


def lagging_agents(state: SbmNetworkState) -> np.ndarray:
    """Agents with some arm where N <= Ñ - K"""
    return np.any(state.N <= state.Ntilde - state.n_arms, axis=1)


def sbm_select_arms(
    state: SbmNetworkState,
    t: int,
    c1: float,
    forced: ForcedExploration = ForcedExploration.ROUND_ROBIN,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Forced exploration when N lags Ñ by K, otherwise argmax of μ̃ + sqrt(C1 ln t / N)"""
    k_arms = state.n_arms
    index = state.tilde_mu + _ucb_bonus(c1, t, state.N)
    arms = np.argmax(index, axis=1)

    lagging = lagging_agents(state)
    if lagging.any():
        if forced == ForcedExploration.UNIFORM:
            if rng is None:
                raise ValueError("uniform forced exploration needs a random generator")
            arms[lagging] = rng.integers(k_arms, size=int(lagging.sum()))
        else:
            arms[lagging] = t % k_arms
    return arms


def sbm_select_arm(state: SbmNetworkState, m: int, t: int, c1: float) -> int:
    return int(sbm_select_arms(state, t, c1)[m])


def _raise_global_counts(
    state: SbmNetworkState,
    batch: MessageBatch,
    graph: GraphSample,
    size_ratio: Optional[np.ndarray] = None,
) -> None:
    """Ñ = max(own Ñ, own N, neighbors' Ñ from this round)

    With size_ratio, a neighbor's Ñ is rescaled from its cluster size to
    the receiver's before the max.
    """
    offered = np.broadcast_to(batch.Ntilde[None, :, :], (state.n_agents,) + batch.Ntilde.shape)
    if size_ratio is not None:
        offered = np.floor(offered * size_ratio[:, :, None] + 1e-9).astype(np.int64)
    neighbor_max = np.where(graph.adjacency[:, :, None], offered, 0).max(axis=1)
    state.Ntilde = np.maximum(np.maximum(state.Ntilde, state.N), neighbor_max)


def _aggregate_global(state: SbmNetworkState, active: np.ndarray, local_terms: np.ndarray) -> np.ndarray:
    """μ̃ = Σ_j P'_{m,j} μ̃_j + d_m Σ_j local_j, with P' = (M-1)/M² on active pairs"""
    m_agents = state.n_agents
    p_prime = np.where(active, (m_agents - 1) / m_agents ** 2, 0.0)
    d = (1.0 - p_prime.sum(axis=1)) / m_agents
    return (
        np.einsum("mj,mjk->mk", p_prime, state.snap_tilde_mu)
        + d[:, None] * local_terms.sum(axis=1)
    )


def rule1_update(
    state: SbmNetworkState,
    batch: MessageBatch,
    graph: GraphSample,
    t: int,
) -> SbmNetworkState:
    """Deliver the round's messages and apply agent-level weighting"""
    state.deliver(batch, graph)
    state.N = state.n.copy()
    _raise_global_counts(state, batch, graph)

    active = state.contact_count > 0
    np.fill_diagonal(active, True)
    state.tilde_mu = _aggregate_global(state, active, state.snap_bar_mu)
    return state


def rule2_update(
    state: SbmNetworkState,
    batch: MessageBatch,
    graph: GraphSample,
    t: int,
    tau: int = 1,
) -> SbmNetworkState:
    """Deliver the round's messages; every tau rounds aggregate at cluster level"""
    if state.assignment is None:
        raise ConfigurationError("rule 2 needs a cluster assignment")
    state.deliver(batch, graph)
    if t % tau != 0:
        return state

    state.N = state._cluster_sum(state.known_n)
    _raise_global_counts(state, batch, graph, state._size_ratio)
    state.hat_mu = state._cluster_mean(state.known_bar_mu)
    state.tilde_bar_mu = state._cluster_mean(state.snap_tilde_mu)

    labels = state.assignment
    cluster_active = state.cluster_contact_count > 0
    np.fill_diagonal(cluster_active, True)
    active = cluster_active[labels][:, labels] & (state.last_contact >= 0)
    np.fill_diagonal(active, True)

    local_terms = state.snap_hat_mu.copy()
    idx = np.arange(state.n_agents)
    local_terms[idx, idx] = state.hat_mu
    state.tilde_mu = _aggregate_global(state, active, local_terms)
    return state


def sbm_update(
    rule: UpdateRule,
    state: SbmNetworkState,
    batch: MessageBatch,
    graph: GraphSample,
    t: int,
    tau: int = 1,
) -> SbmNetworkState:
    if rule == UpdateRule.RULE1:
        return rule1_update(state, batch, graph, t)
    return rule2_update(state, batch, graph, t, tau)
