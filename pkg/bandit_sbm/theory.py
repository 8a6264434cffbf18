"""
Closed-form assumption thresholds and regret bounds

Evaluates the edge-probability lower bounds each regret guarantee rests
on, the burn-in length and exploration constant they prescribe, the
bound expressions themselves, and a checker comparing a block model
against all of them.
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import gammaln

from bandit_sbm.errors import TheoryParameterError
from bandit_sbm.graph import BlockModel

logger = logging.getLogger(__name__)

E_FACTOR = math.e / (math.e - 1.0)


class Threshold(str, Enum):
    """Edge-probability lower bounds"""
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5_INTER = "T5_inter"
    T6_INTRA = "T6_intra"
    T6_INTER = "T6_inter"


class Theorem(str, Enum):
    """Regret guarantees: T1 single cluster, T2 Rule 1, T3-T6 Rule 2"""
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5 = "T5"
    T6 = "T6"


class TheoryParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_agents: int = Field(..., ge=1)
    n_clusters: int = Field(..., ge=1)
    n_arms: int = Field(..., ge=1)
    horizon: int = Field(..., ge=2)
    epsilon: float = Field(0.01, gt=0.0, lt=1.0)
    delta: float = Field(0.1, gt=0.0, lt=1.0)
    c0: float = Field(0.5, gt=0.0, lt=1.0)
    sigma2: float = Field(1.0, ge=0.0)
    gaps: Optional[List[float]] = None
    l: Optional[int] = Field(None, ge=1)
    min_cluster_size: Optional[int] = Field(None, ge=1)
    p_intra: Optional[float] = Field(None, ge=0.0, le=1.0)
    success_probability: Optional[float] = Field(None, gt=0.0, le=1.0)
    d: Optional[float] = Field(None, ge=0.0)
    detection_length: int = Field(0, ge=0)
    t1_constant: float = Field(8.0, gt=0.0)

    @field_validator("gaps")
    @classmethod
    def validate_gaps(cls, v):
        if v is None:
            return v
        if any(g < 0 for g in v):
            raise ValueError("gaps must be nonnegative")
        if sum(1 for g in v if g == 0) != 1:
            raise ValueError("gaps must contain exactly one zero (the optimal arm)")
        return v

    @model_validator(mode="after")
    def validate_sizes(self):
        if self.n_clusters > self.n_agents:
            raise ValueError(f"n_clusters ({self.n_clusters}) exceeds n_agents ({self.n_agents})")
        if self.gaps is not None and len(self.gaps) != self.n_arms:
            raise ValueError(f"gaps must have {self.n_arms} entries, got {len(self.gaps)}")
        return self

    @property
    def cluster_size(self) -> int:
        """c_M: the smallest cluster size, M/C when balanced"""
        if self.min_cluster_size is not None:
            return self.min_cluster_size
        return self.n_agents // self.n_clusters


def factorial_ratio(top: int, bottom: int) -> float:
    """top! / bottom! via log-gamma"""
    if top < 0 or bottom < 0:
        raise TheoryParameterError(f"factorials need nonnegative arguments, got {top}, {bottom}")
    return float(np.exp(gammaln(top + 1) - gammaln(bottom + 1)))


def _chernoff_term(delta: float, size: int, horizon: int) -> float:
    """½ + ½ sqrt(1 - (δ/(size·T))^{2/(size-1)})"""
    return 0.5 + 0.5 * math.sqrt(1.0 - (delta / (size * horizon)) ** (2.0 / (size - 1)))


def _chebyshev_term(delta: float, size: int, horizon: int) -> float:
    """1 - δ(size-1)/(8·size·T)"""
    return 1.0 - delta * (size - 1) / (8.0 * size * horizon)


def _periodic_term(delta: float, size: int, horizon: int, l: int) -> float:
    """max over the two (size-l-1)!/(size-2)! shaped bounds"""
    ratio = factorial_ratio(size - l - 1, size - 2)
    return max(ratio * _chebyshev_term(delta, size, horizon), ratio * 0.75 ** (1.0 / l))


def _require_l(params: TheoryParams, size: int, label: str) -> int:
    if params.l is None:
        raise TheoryParameterError(f"{label} needs the window length l")
    if not 2 <= params.l <= size - 1:
        raise TheoryParameterError(f"{label} needs 2 <= l <= {size - 1}, got l={params.l}")
    return params.l


def edge_threshold(kind: Threshold, params: TheoryParams) -> float:
    """Lower bound the minimal edge probability must meet"""
    kind = Threshold(kind)
    m, c, horizon, delta = params.n_agents, params.n_clusters, params.horizon, params.delta
    ratio = (c / m) ** 2

    if kind == Threshold.T2:
        if m < 2:
            raise TheoryParameterError("T2 threshold needs at least two agents")
        return _chernoff_term(delta, m, horizon)

    if kind in (Threshold.T3, Threshold.T4):
        if c < 2:
            raise TheoryParameterError(f"{kind.value} threshold needs at least two clusters")
        chernoff = _chernoff_term(delta, c, horizon)
        if kind == Threshold.T3:
            return 1.0 - (1.0 - chernoff) ** ratio
        inner = min(chernoff, _chebyshev_term(delta, c, horizon))
        return 1.0 - (1.0 - inner) ** ratio

    if kind == Threshold.T5_INTER:
        if c < 4:
            raise TheoryParameterError(f"T5 threshold needs C >= 4, got C={c}")
        l = _require_l(params, c, "T5 threshold")
        return E_FACTOR * ratio * _periodic_term(delta, c, horizon, l)

    if kind == Threshold.T6_INTER:
        if c < 3:
            raise TheoryParameterError(f"T6 inter-cluster threshold needs C >= 3, got C={c}")
        l = _require_l(params, c, "T6 inter-cluster threshold")
        return E_FACTOR * ratio * _periodic_term(delta, c, horizon, l)

    size = params.cluster_size
    if size < 3:
        raise TheoryParameterError(f"T6 intra-cluster threshold needs clusters of size >= 3, got {size}")
    l = _require_l(params, size, "T6 intra-cluster threshold")
    return _periodic_term(delta, size, horizon, l)


def optimal_l(params: TheoryParams) -> int:
    """Window length minimizing the T5 threshold, smallest on ties"""
    c = params.n_clusters
    if c < 4:
        raise TheoryParameterError(f"optimal l needs C >= 4, got C={c}")
    best_l, best_value = 2, math.inf
    for l in range(2, c):
        value = edge_threshold(Threshold.T5_INTER, params.model_copy(update={"l": l}))
        if value < best_value:
            best_l, best_value = l, value
    return best_l


def delta_cap(params: TheoryParams) -> float:
    """Upper limit on δ: ½ + ¼ sqrt(1 - (ε/(MT))^{2/(M-1)})"""
    m = params.n_agents
    if m < 2:
        raise TheoryParameterError("δ cap needs at least two agents")
    return 0.5 + 0.25 * math.sqrt(
        1.0 - (params.epsilon / (m * params.horizon)) ** (2.0 / (m - 1))
    )


def burnin_length(theorem: Theorem, params: TheoryParams) -> int:
    """L = h·max{ln(T/2ε)/(2δ²), 4K log₂T / c₀}, h = 1 for Rule 1 and C/M for Rule 2"""
    theorem = Theorem(theorem)
    if theorem == Theorem.T1:
        raise TheoryParameterError("the single-cluster algorithm has no burn-in period")
    base = max(
        math.log(params.horizon / (2.0 * params.epsilon)) / (2.0 * params.delta ** 2),
        4.0 * params.n_arms * math.log2(params.horizon) / params.c0,
    )
    if theorem != Theorem.T2:
        base *= params.n_clusters / params.n_agents
    return max(params.n_arms, int(math.ceil(base)))


def c1_value(theorem: Theorem, params: TheoryParams, scaled: bool = False) -> float:
    """Exploration constant C₁; scaled multiplies the max-formula by 8σ²"""
    theorem = Theorem(theorem)
    if theorem == Theorem.T1:
        raise TheoryParameterError("the single-cluster algorithm has no C1 constant")
    m, c0 = params.n_agents, params.c0
    d = params.d if params.d is not None else 1.0 / m ** 2
    first = 4.0 * (m + 2) * (1.0 - (1.0 - c0) / (2.0 * (m + 2))) ** 2 / (3.0 * m * (1.0 - c0))
    second = (m + 2) * (1.0 + 4.0 * m * d ** 2)
    if theorem != Theorem.T2:
        second /= m
    value = max(first, second)
    return 8.0 * params.sigma2 * value if scaled else value


def regret_bound(theorem: Theorem, params: TheoryParams, c1: Optional[float] = None) -> float:
    """Value of the regret bound expression for the given gaps"""
    theorem = Theorem(theorem)
    if params.gaps is None:
        raise TheoryParameterError("regret bound needs the arm gaps")
    gaps = np.asarray(params.gaps, dtype=float)
    suboptimal = gaps[gaps > 0]
    m, k_arms, horizon = params.n_agents, params.n_arms, params.horizon
    log_t = math.log(horizon)

    if theorem == Theorem.T1:
        if params.p_intra is None:
            raise TheoryParameterError("T1 bound needs the intra-cluster edge probability")
        if params.p_intra == 0.0:
            raise TheoryParameterError("T1 bound is unbounded when p_intra is 0")
        leading = float(np.sum(log_t / (m * suboptimal)))
        return params.t1_constant * leading + k_arms / params.p_intra ** (m * m)

    if c1 is None:
        c1 = c1_value(theorem, params)
    if params.success_probability is not None:
        p_event = params.success_probability
    else:
        p_event = 1.0 - 7.0 * params.epsilon
        if p_event <= 0:
            raise TheoryParameterError(
                f"1 - 7ε must be positive for the default event probability, got ε={params.epsilon}"
            )

    h = 1.0 if theorem == Theorem.T2 else params.n_clusters / m
    per_arm = (
        np.maximum(h * 4.0 * c1 * log_t / suboptimal ** 2, 2.0 * (k_arms ** 2 + m * k_arms))
        + 2.0 * math.pi ** 2 / (3.0 * p_event)
        + k_arms ** 2
        + (2 * m - 1) * k_arms
    )
    bound = burnin_length(theorem, params) + params.detection_length + float(np.sum(suboptimal * per_arm))
    if theorem == Theorem.T6:
        if params.l is None:
            raise TheoryParameterError("T6 bound needs the window length l")
        bound += params.l
    return bound


class TheoremCheck(BaseModel):
    theorem: Theorem
    applicable: bool
    detail: str = ""
    required_intra: Optional[float] = None
    required_inter: Optional[float] = None
    supplied_intra: float
    supplied_inter: Optional[float] = None
    intra_pass: Optional[bool] = None
    inter_pass: Optional[bool] = None
    intra_slack: Optional[float] = None
    inter_slack: Optional[float] = None
    passed: Optional[bool] = None
    approaches_one: bool = False


class AssumptionReport(BaseModel):
    epsilon: float
    delta: float
    c0: float
    delta_cap: Optional[float] = None
    delta_within_cap: Optional[bool] = None
    l: Optional[int] = None
    checks: List[TheoremCheck]

    @property
    def all_passed(self) -> bool:
        return all(check.passed for check in self.checks if check.applicable)


def _compare(supplied: Optional[float], required: Optional[float]):
    if required is None or supplied is None:
        return None, None
    return supplied >= required, supplied - required


def _check_one(theorem: Theorem, bm: BlockModel, params: TheoryParams) -> TheoremCheck:
    intra = bm.min_intra_probability()
    inter = bm.min_inter_probability()
    base = dict(theorem=theorem, supplied_intra=intra, supplied_inter=inter)
    try:
        if theorem == Theorem.T2:
            required = edge_threshold(Threshold.T2, params)
            required_intra, required_inter = required, required
        elif theorem in (Theorem.T3, Theorem.T4, Theorem.T5):
            kind = {
                Theorem.T3: Threshold.T3,
                Theorem.T4: Threshold.T4,
                Theorem.T5: Threshold.T5_INTER,
            }[theorem]
            required_intra = 1.0
            required_inter = edge_threshold(kind, params) if bm.n_clusters > 1 else None
        else:
            required_intra = edge_threshold(Threshold.T6_INTRA, params)
            required_inter = edge_threshold(Threshold.T6_INTER, params) if bm.n_clusters > 1 else None
    except TheoryParameterError as exc:
        return TheoremCheck(applicable=False, detail=str(exc), **base)

    intra_pass, intra_slack = _compare(intra, required_intra)
    inter_pass, inter_slack = _compare(inter, required_inter)
    passed = bool(intra_pass) and inter_pass is not False
    return TheoremCheck(
        applicable=True,
        required_intra=required_intra,
        required_inter=required_inter,
        intra_pass=intra_pass,
        inter_pass=inter_pass,
        intra_slack=intra_slack,
        inter_slack=inter_slack,
        passed=passed,
        approaches_one=theorem in (Theorem.T3, Theorem.T4),
        **base,
    )


def check_assumptions(
    bm: BlockModel,
    params: TheoryParams,
    theorems: Sequence[Theorem] = (Theorem.T2, Theorem.T3, Theorem.T4, Theorem.T5, Theorem.T6),
) -> AssumptionReport:
    """Compare the model's minimal intra/inter probabilities with every threshold"""
    if params.min_cluster_size is None:
        params = params.model_copy(update={"min_cluster_size": bm.min_cluster_size})
    if params.l is None and params.n_clusters >= 4:
        params = params.model_copy(update={"l": optimal_l(params)})

    checks = [_check_one(Theorem(theorem), bm, params) for theorem in theorems]
    for check in checks:
        if not check.applicable:
            logger.info(f"{check.theorem.value} not applicable: {check.detail}")

    try:
        cap = delta_cap(params)
    except TheoryParameterError:
        cap = None
    return AssumptionReport(
        epsilon=params.epsilon,
        delta=params.delta,
        c0=params.c0,
        delta_cap=cap,
        delta_within_cap=None if cap is None else params.delta < cap,
        l=params.l,
        checks=checks,
    )
