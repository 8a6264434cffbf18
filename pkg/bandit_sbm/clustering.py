"""
Cluster detection for contextual SBMs

Iterative least-squares refinement over graph blocks and node
covariates, a spectral initializer, the recovery SNR, and the pipeline
that turns burn-in output into a cluster assignment.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from bandit_sbm.errors import (
    DegenerateAssignmentError,
    DetectionError,
    DetectionStatus,
    InestimableSigmaError,
)
from bandit_sbm.graph import GraphSample, union_graph

logger = logging.getLogger(__name__)

KMEANS_RESTARTS = 20

ArrayOrGraph = Union[GraphSample, np.ndarray]


def _adjacency(a: ArrayOrGraph) -> np.ndarray:
    if isinstance(a, GraphSample):
        return a.adjacency.astype(float)
    return np.asarray(a, dtype=float)


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    """M×C one-hot cluster membership"""

    Z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.Z, dtype=float)
        object.__setattr__(self, "Z", z)
        if z.ndim != 2:
            raise ValueError(f"assignment matrix must be 2-D, got shape {z.shape}")
        if not np.all((z == 0) | (z == 1)) or not np.all(z.sum(axis=1) == 1):
            raise ValueError("assignment rows must be one-hot")

    @classmethod
    def from_labels(cls, labels: Sequence[int], n_clusters: int) -> "AssignmentMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= n_clusters):
            raise ValueError(f"labels must lie in [0, {n_clusters})")
        z = np.zeros((labels.size, n_clusters))
        z[np.arange(labels.size), labels] = 1.0
        return cls(z)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.Z, axis=1)

    @property
    def n_clusters(self) -> int:
        return self.Z.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return self.Z.sum(axis=0).astype(np.int64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AssignmentMatrix):
            return NotImplemented
        return np.array_equal(self.Z, other.Z)


@dataclass(frozen=True, eq=False)
class ModelEstimates:
    sizes: np.ndarray
    W: np.ndarray
    Pi: np.ndarray
    mu: np.ndarray
    p_hat: float
    q_hat: float
    # Scalar s of Σ = s·I; None when inestimable
    sigma_scale: Optional[float]


@dataclass(frozen=True)
class DetectionResult:
    assignment: AssignmentMatrix
    status: DetectionStatus
    iterations: int
    covariate_only_iterations: int = 0


def estimate_parameters(A: ArrayOrGraph, V: np.ndarray, Z: AssignmentMatrix) -> ModelEstimates:
    """Block densities, covariate means and the graph-term weight for Z"""
    adjacency = _adjacency(A)
    V = np.asarray(V, dtype=float)
    n_agents, n_clusters = Z.Z.shape
    sizes = Z.Z.sum(axis=0)
    if np.any(sizes == 0):
        raise DegenerateAssignmentError(
            f"degenerate assignment: clusters {np.flatnonzero(sizes == 0).tolist()} are empty"
        )

    W = Z.Z / sizes
    Pi = W.T @ adjacency @ W
    mu = W.T @ V
    p_hat = float(np.trace(Pi) / n_clusters)
    if n_clusters > 1:
        q_hat = float((Pi.sum() - np.trace(Pi)) / (n_clusters * (n_clusters - 1)))
    else:
        q_hat = 0.0

    estimates = ModelEstimates(
        sizes=sizes.astype(np.int64), W=W, Pi=Pi, mu=mu,
        p_hat=p_hat, q_hat=q_hat, sigma_scale=None,
    )
    if not 0.0 < q_hat < p_hat < 1.0:
        raise InestimableSigmaError(
            f"inestimable Σ: need 0 < q < p < 1, got p={p_hat:.4g}, q={q_hat:.4g}",
            estimates=estimates,
        )
    scale = (
        n_agents / (n_clusters * (p_hat - q_hat))
        * np.log(p_hat * (1.0 - q_hat) / (q_hat * (1.0 - p_hat)))
    )
    return ModelEstimates(
        sizes=estimates.sizes, W=W, Pi=Pi, mu=mu,
        p_hat=p_hat, q_hat=q_hat, sigma_scale=float(scale),
    )


def _criterion(adjacency: np.ndarray, V: np.ndarray, est: ModelEstimates, sigma2: float) -> np.ndarray:
    """M×C least-squares cost of placing node i in cluster n"""
    cost = ((est.mu[None, :, :] - V[:, None, :]) ** 2).sum(axis=2) / sigma2
    if est.sigma_scale is not None:
        AW = adjacency @ est.W
        graph_residual = ((AW[:, None, :] - est.Pi[None, :, :]) ** 2).sum(axis=2)
        cost = cost + est.sigma_scale * graph_residual
    return cost


def _repair_empty(labels: np.ndarray, n_clusters: int, badness: np.ndarray) -> np.ndarray:
    """Move the worst point of the largest cluster into each empty cluster"""
    labels = labels.copy()
    while True:
        sizes = np.bincount(labels, minlength=n_clusters)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return labels
        largest = int(np.argmax(sizes))
        members = np.flatnonzero(labels == largest)
        worst = members[np.argmax(badness[members])]
        labels[worst] = empty[0]
        badness[worst] = -np.inf
        logger.debug(f"Repaired empty cluster {empty[0]} with node {worst}")


def refine_assignment(
    A: ArrayOrGraph,
    V: np.ndarray,
    est: ModelEstimates,
    sigma2: float,
) -> AssignmentMatrix:
    """Assign every node to its least-squares cluster, lowest index on ties"""
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    adjacency = _adjacency(A)
    V = np.asarray(V, dtype=float)
    cost = _criterion(adjacency, V, est, sigma2)
    labels = np.argmin(cost, axis=1)
    n_clusters = est.Pi.shape[0]
    badness = cost[np.arange(labels.size), labels].copy()
    labels = _repair_empty(labels, n_clusters, badness)
    return AssignmentMatrix.from_labels(labels, n_clusters)


def ir_lss(
    A: ArrayOrGraph,
    V: np.ndarray,
    sigma2: float,
    Z0: AssignmentMatrix,
    iters: int,
) -> DetectionResult:
    """Alternate estimate and refine until Z is a fixed point or iters runs out

    An iteration whose graph weight cannot be estimated refines on
    covariates alone. A degenerate assignment aborts with the last valid Z.
    """
    if iters < 1:
        raise ValueError(f"iters must be at least 1, got {iters}")
    adjacency = _adjacency(A)
    Z = Z0
    covariate_only = 0
    for iteration in range(1, iters + 1):
        try:
            est = estimate_parameters(adjacency, V, Z)
        except InestimableSigmaError as exc:
            logger.warning(f"IR-LSS iteration {iteration}: {exc}; refining on covariates only")
            est = exc.estimates
            covariate_only += 1
        except DegenerateAssignmentError as exc:
            logger.warning(f"IR-LSS aborted at iteration {iteration}: {exc}")
            return DetectionResult(Z, DetectionStatus.ABORTED, iteration - 1, covariate_only)

        refined = refine_assignment(adjacency, V, est, sigma2)
        if refined == Z:
            return DetectionResult(Z, DetectionStatus.CONVERGED, iteration, covariate_only)
        Z = refined
    return DetectionResult(Z, DetectionStatus.MAX_ITERATIONS, iters, covariate_only)


def initialize_assignment(
    A: ArrayOrGraph,
    V: np.ndarray,
    n_clusters: int,
    rng: np.random.Generator,
) -> AssignmentMatrix:
    """Spectral start: k-means on top eigenvectors plus standardized covariates"""
    adjacency = _adjacency(A)
    V = np.asarray(V, dtype=float)
    n_agents = adjacency.shape[0]
    if not 1 <= n_clusters <= n_agents:
        raise ValueError(f"n_clusters must lie in [1, {n_agents}], got {n_clusters}")
    if n_clusters == 1:
        return AssignmentMatrix.from_labels(np.zeros(n_agents, dtype=np.int64), 1)
    if n_clusters == n_agents:
        return AssignmentMatrix.from_labels(np.arange(n_agents), n_agents)

    _, vectors = np.linalg.eigh(adjacency)
    spectral = vectors[:, -n_clusters:] * np.sqrt(n_agents)
    spread = V.std(axis=0)
    spread[spread == 0] = 1.0
    covariates = (V - V.mean(axis=0)) / spread
    features = np.hstack([spectral, covariates])

    kmeans = KMeans(
        n_clusters=n_clusters,
        n_init=KMEANS_RESTARTS,
        random_state=int(rng.integers(2**31 - 1)),
    )
    labels = kmeans.fit_predict(features)
    distance = np.linalg.norm(features - kmeans.cluster_centers_[labels], axis=1)
    labels = _repair_empty(labels.astype(np.int64), n_clusters, distance)
    return AssignmentMatrix.from_labels(labels, n_clusters)


class SnrVariant(str, Enum):
    """Covariate prefactor used in the SNR"""
    PLAIN = "plain"
    BURNIN_MAIN = "burnin_main"
    BURNIN_APPENDIX = "burnin_appendix"


@dataclass(frozen=True)
class SnrParams:
    n_agents: int
    n_clusters: int
    n_arms: int
    sigma: float
    cluster_means: np.ndarray
    p_prime: float
    q_prime: float
    log_T: Optional[float] = None
    variant: SnrVariant = SnrVariant.PLAIN
    gate_delta: float = 0.25

    def __post_init__(self):
        if self.q_prime < 0 or self.p_prime < self.q_prime:
            raise ValueError(f"need p' >= q' >= 0, got p'={self.p_prime}, q'={self.q_prime}")
        if self.variant != SnrVariant.PLAIN and self.log_T is None:
            raise ValueError(f"SNR variant {self.variant.value} needs log_T")


@dataclass(frozen=True)
class SnrReport:
    snr: float
    covariate_term: float
    graph_term: float
    above_log_threshold: bool
    recovery_gate: bool


def compute_snr(params: SnrParams) -> SnrReport:
    """Covariate separation plus graph-density separation, with recovery gates"""
    means = np.asarray(params.cluster_means, dtype=float)
    n_clusters = params.n_clusters
    if n_clusters > 1:
        diffs = means[:, None, :] - means[None, :, :]
        sq = (diffs ** 2).sum(axis=2)
        min_sep = float(sq[~np.eye(n_clusters, dtype=bool)].min())
    else:
        min_sep = 0.0

    sigma2 = params.sigma ** 2
    if params.variant == SnrVariant.BURNIN_MAIN:
        factor = n_clusters * params.log_T / (8.0 * params.n_agents * sigma2) if sigma2 else np.inf
    elif params.variant == SnrVariant.BURNIN_APPENDIX:
        factor = params.log_T / (8.0 * params.n_arms * sigma2) if sigma2 else np.inf
    else:
        factor = 1.0 / (8.0 * sigma2) if sigma2 else np.inf
    covariate_term = float(factor * min_sep) if min_sep > 0 else 0.0

    log_m = np.log(params.n_agents)
    graph_term = float(log_m / n_clusters * (np.sqrt(params.p_prime) - np.sqrt(params.q_prime)) ** 2)
    snr = covariate_term + graph_term
    return SnrReport(
        snr=snr,
        covariate_term=covariate_term,
        graph_term=graph_term,
        above_log_threshold=bool(snr > 2.0 * log_m),
        recovery_gate=bool(n_clusters ** 3 <= snr * params.gate_delta),
    )


def default_detection_sigma2(sigma: float, n_arms: int, burnin_length: int) -> float:
    """Variance of a local mean after round-robin burn-in: σ²K/L"""
    return sigma ** 2 * n_arms / burnin_length


def detect_clusters_from_burnin(
    bar_mu: np.ndarray,
    graphs: Sequence[GraphSample],
    n_clusters: int,
    sigma2: float,
    iters: int,
    rng: np.random.Generator,
) -> DetectionResult:
    """Detect clusters from burn-in local means and the ever-connected graph"""
    if len(graphs) == 0:
        raise DetectionError("cluster detection needs at least one burn-in round")
    adjacency = union_graph(graphs).adjacency.astype(float)
    V = np.asarray(bar_mu, dtype=float)
    if V.shape[0] != adjacency.shape[0]:
        raise DetectionError(
            f"covariates have {V.shape[0]} rows but the graph has {adjacency.shape[0]} vertices"
        )
    # floor keeps noiseless burn-in from dividing by zero
    sigma2 = max(sigma2, 1e-12)
    Z0 = initialize_assignment(adjacency, V, n_clusters, rng)
    result = ir_lss(adjacency, V, sigma2, Z0, iters)
    logger.info(
        f"Cluster detection {result.status.value} after {result.iterations} iterations "
        f"(sizes {result.assignment.sizes.tolist()})"
    )
    return result


@dataclass(frozen=True)
class LabelMatch:
    accuracy: float
    mapping: Dict[int, int]
    matched: np.ndarray


def match_labels(predicted: Sequence[int], truth: Sequence[int]) -> LabelMatch:
    """Maximum-overlap relabeling of predicted clusters onto true ones"""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValueError(f"label vectors differ in shape: {predicted.shape} vs {truth.shape}")
    overlap = np.zeros((predicted.max() + 1, truth.max() + 1), dtype=np.int64)
    np.add.at(overlap, (predicted, truth), 1)
    rows, cols = linear_sum_assignment(-overlap)
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    # Unmatched predicted labels (more predicted than true clusters) map to -1
    matched = np.array([mapping.get(int(label), -1) for label in predicted], dtype=np.int64)
    accuracy = float(np.mean(matched == truth)) if truth.size else 1.0
    return LabelMatch(accuracy=accuracy, mapping=mapping, matched=matched)


def exact_recovery(predicted: Sequence[int], truth: Sequence[int]) -> bool:
    return match_labels(predicted, truth).accuracy == 1.0
