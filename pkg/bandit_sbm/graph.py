"""
Stochastic-block-model graphs

Sampling of time-varying SBM graphs, connectivity predicates, cluster
quotients, graph composition and static edge-list ingestion.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Set, TextIO, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from bandit_sbm.errors import ConfigurationError, EdgeListParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BlockModel:
    """Cluster assignment plus a symmetric C×C edge-probability matrix"""

    n_agents: int
    n_clusters: int
    assignment: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "probs", probs)

        if self.n_agents < 1:
            raise ConfigurationError("n_agents must be positive")
        if not 1 <= self.n_clusters <= self.n_agents:
            raise ConfigurationError(
                f"n_clusters must lie in [1, {self.n_agents}], got {self.n_clusters}"
            )
        if assignment.shape != (self.n_agents,):
            raise ConfigurationError(
                f"assignment must have length {self.n_agents}, got shape {assignment.shape}"
            )
        if assignment.min() < 0 or assignment.max() >= self.n_clusters:
            raise ConfigurationError(
                f"cluster labels must lie in [0, {self.n_clusters})"
            )
        if np.unique(assignment).size != self.n_clusters:
            raise ConfigurationError("every cluster label must appear at least once")
        if probs.shape != (self.n_clusters, self.n_clusters):
            raise ConfigurationError(
                f"probs must be {self.n_clusters}x{self.n_clusters}, got shape {probs.shape}"
            )
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ConfigurationError("edge probabilities must lie in [0, 1]")
        if not np.array_equal(probs, probs.T):
            raise ConfigurationError("probs must be symmetric")

    @classmethod
    def planted(
        cls,
        n_agents: int,
        n_clusters: int,
        p_intra: float,
        q_inter: float,
        assignment: Optional[Sequence[int]] = None,
    ) -> "BlockModel":
        """Two-level SBM: p_intra on the diagonal, q_inter elsewhere

        Without an explicit assignment agents are split into contiguous,
        as-equal-as-possible clusters.
        """
        if assignment is None:
            assignment = [m * n_clusters // n_agents for m in range(n_agents)]
        probs = np.full((n_clusters, n_clusters), float(q_inter))
        np.fill_diagonal(probs, float(p_intra))
        return cls(n_agents, n_clusters, np.asarray(assignment), probs)

    @cached_property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)

    @property
    def min_cluster_size(self) -> int:
        return int(self.cluster_sizes.min())

    @property
    def balanced(self) -> bool:
        return bool(np.all(self.cluster_sizes * self.n_clusters == self.n_agents))

    @cached_property
    def one_hot(self) -> np.ndarray:
        """M×C membership matrix"""
        z = np.zeros((self.n_agents, self.n_clusters))
        z[np.arange(self.n_agents), self.assignment] = 1.0
        return z

    @cached_property
    def same_cluster(self) -> np.ndarray:
        """M×M mask, True where two agents share a cluster (diagonal included)"""
        return self.assignment[:, None] == self.assignment[None, :]

    @cached_property
    def pair_probs(self) -> np.ndarray:
        """Edge probability of every unordered pair i<j in row-major order"""
        iu, ju = np.triu_indices(self.n_agents, k=1)
        return self.probs[self.assignment[iu], self.assignment[ju]]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)

    def min_intra_probability(self) -> float:
        return float(np.diag(self.probs).min())

    def min_inter_probability(self) -> Optional[float]:
        """Smallest off-diagonal probability, None for a single cluster"""
        if self.n_clusters == 1:
            return None
        off = ~np.eye(self.n_clusters, dtype=bool)
        return float(self.probs[off].min())


@dataclass(frozen=True, eq=False)
class GraphSample:
    """Undirected simple graph as a symmetric boolean adjacency matrix"""

    adjacency: np.ndarray

    def __post_init__(self):
        adjacency = np.asarray(self.adjacency, dtype=bool)
        object.__setattr__(self, "adjacency", adjacency)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adjacency.shape}")
        if adjacency.shape[0] < 1:
            raise ValueError("graph needs at least one vertex")
        if not np.array_equal(adjacency, adjacency.T):
            raise ValueError("adjacency must be symmetric")
        if adjacency.diagonal().any():
            raise ValueError("adjacency must have an empty diagonal")

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def empty(cls, n_vertices: int) -> "GraphSample":
        return cls(np.zeros((n_vertices, n_vertices), dtype=bool))

    @classmethod
    def complete(cls, n_vertices: int) -> "GraphSample":
        return cls(~np.eye(n_vertices, dtype=bool))

    @classmethod
    def from_edges(cls, n_vertices: int, edges: Iterable[tuple]) -> "GraphSample":
        adjacency = np.zeros((n_vertices, n_vertices), dtype=bool)
        for i, j in edges:
            adjacency[i, j] = adjacency[j, i] = True
        return cls(adjacency)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphSample):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self) -> int:
        return hash(self.adjacency.tobytes())


@dataclass(frozen=True)
class GraphWindow:
    """Consecutive graphs over one vertex set"""

    graphs: List[GraphSample] = field(default_factory=list)

    def __post_init__(self):
        sizes = {g.n_vertices for g in self.graphs}
        if len(sizes) > 1:
            raise ValueError(f"window graphs disagree on vertex count: {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.graphs)


def sample_graph(model: BlockModel, rng: np.random.Generator) -> GraphSample:
    """Draw one SBM graph

    Consumes exactly M(M-1)/2 uniforms, one per pair i<j in row-major
    order, so a seed pins the graph independently of platform.
    """
    m = model.n_agents
    iu, ju = np.triu_indices(m, k=1)
    draws = rng.random(iu.size)
    present = draws < model.pair_probs
    adjacency = np.zeros((m, m), dtype=bool)
    adjacency[iu[present], ju[present]] = True
    adjacency |= adjacency.T
    return GraphSample(adjacency)


def neighbors(g: GraphSample, m: int) -> Set[int]:
    if not 0 <= m < g.n_vertices:
        raise IndexError(f"vertex {m} out of range for {g.n_vertices} vertices")
    return set(np.flatnonzero(g.adjacency[m]).tolist())


def is_connected(g: GraphSample) -> bool:
    """Breadth-first traversal from vertex 0 reaches every vertex"""
    if g.n_vertices == 1:
        return True
    reached = breadth_first_order(
        csr_matrix(g.adjacency), 0, directed=False, return_predecessors=False
    )
    return reached.size == g.n_vertices


def cluster_quotient(g: GraphSample, model: BlockModel) -> GraphSample:
    """Graph on clusters: x~y iff some agent of x is adjacent to some agent of y"""
    if g.n_vertices != model.n_agents:
        raise ValueError(
            f"graph has {g.n_vertices} vertices but the model has {model.n_agents} agents"
        )
    z = model.one_hot
    quotient = (z.T @ g.adjacency.astype(float) @ z) > 0
    np.fill_diagonal(quotient, False)
    return GraphSample(quotient)


def compose(window: Union[GraphWindow, Sequence[GraphSample]]) -> GraphSample:
    """Walk composition of consecutive graphs

    (i, j) is an edge iff a walk i = v0, ..., vl = j exists whose k-th step
    is an edge of the k-th graph, in either direction of travel. The
    diagonal is cleared.
    """
    graphs = window.graphs if isinstance(window, GraphWindow) else list(window)
    if not graphs:
        raise ValueError("cannot compose an empty window")
    reach = graphs[0].adjacency.astype(np.int64)
    for g in graphs[1:]:
        reach = ((reach @ g.adjacency.astype(np.int64)) > 0).astype(np.int64)
    composed = reach > 0
    composed = composed | composed.T
    np.fill_diagonal(composed, False)
    return GraphSample(composed)


def is_l_periodically_connected(seq: Sequence[GraphSample], l: int) -> bool:
    """Every window of l consecutive graphs composes to a connected graph"""
    if not 1 <= l <= len(seq):
        raise ValueError(f"window length {l} must lie in [1, {len(seq)}]")
    return all(
        is_connected(compose(seq[start:start + l]))
        for start in range(len(seq) - l + 1)
    )


def union_graph(graphs: Sequence[GraphSample]) -> GraphSample:
    """Edge iff present in at least one of the graphs"""
    if not graphs:
        raise ValueError("cannot take the union of no graphs")
    adjacency = np.zeros_like(graphs[0].adjacency)
    for g in graphs:
        adjacency |= g.adjacency
    return GraphSample(adjacency)


def cluster_edge_probability(q: float, n_agents: int, n_clusters: int) -> float:
    """Probability that two clusters are adjacent in the quotient graph

    Exact for balanced clusters: 1 - (1 - q)^((M/C)^2).
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if n_clusters < 1 or n_agents % n_clusters != 0:
        raise ConfigurationError(
            f"cluster edge probability needs balanced clusters (C | M), got M={n_agents}, C={n_clusters}"
        )
    size = n_agents // n_clusters
    return 1.0 - (1.0 - q) ** (size * size)


def cluster_edge_probability_lower_bound(q: float, n_agents: int, n_clusters: int) -> float:
    """(1 - 1/e) * min{1, (M/C)^2 q}, valid for balanced clusters"""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if n_clusters < 1 or n_agents % n_clusters != 0:
        raise ConfigurationError(
            f"cluster edge probability needs balanced clusters (C | M), got M={n_agents}, C={n_clusters}"
        )
    ratio = (n_agents / n_clusters) ** 2
    return (1.0 - np.exp(-1.0)) * min(1.0, ratio * q)


def load_edge_list(text: Union[str, TextIO], n_vertices: int) -> GraphSample:
    """Parse 'u v' lines (0-based, '#' comments, blank lines skipped)"""
    lines = text.splitlines() if isinstance(text, str) else text.read().splitlines()
    adjacency = np.zeros((n_vertices, n_vertices), dtype=bool)
    for line_number, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise EdgeListParseError("expected two vertex indices", line_number)
        try:
            u, v = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise EdgeListParseError("non-integer vertex index", line_number) from None
        if not (0 <= u < n_vertices and 0 <= v < n_vertices):
            raise EdgeListParseError(
                f"vertex index out of range [0, {n_vertices})", line_number
            )
        if u == v:
            raise EdgeListParseError("self-loop", line_number)
        adjacency[u, v] = adjacency[v, u] = True
    logger.info(f"Loaded edge list: {n_vertices} vertices, {int(adjacency.sum()) // 2} edges")
    return GraphSample(adjacency)
