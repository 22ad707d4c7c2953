"""Closed-form order-optimal cache allocations, regime boundary indices, and
scaling-law evaluators for both uncoded and MDS-coded caching.

Conventions: every Theta-constant in the boundary formulas is set to 1,
boundary indices are rounded half-up and clamped to [1, M], and ties in
regime membership resolve toward the lower-index regime (more replication).
Downstream comparisons are ratio/slope based, never absolute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .delay_model import NetworkConfig
from .popularity import PopularityModel, harmonic_class, harmonic_sum

__all__ = [
    "Allocation",
    "ScalingRecord",
    "InfeasibleBudgetError",
    "uncoded_boundary",
    "uncoded_allocation",
    "mds_boundaries",
    "mds_allocation",
    "delay_scaling",
    "classify_boundaries",
    "validate_allocation",
]

_REL_TOL = 1e-9


class InfeasibleBudgetError(ValueError):
    """Raised when the aggregate cache budget cannot satisfy the lower bounds."""


@dataclass(frozen=True)
class Allocation:
    """Per-content cache allocation.

    values[m-1] is X_m (uncoded replicas per subpacket) or r_m (MDS-coded
    subpackets). m1 is the first content index of the proportional regime,
    m2 (MDS only) the first index of the minimum-K regime; either may be
    M + 1 when the corresponding regime is empty. budget_used counts cache
    slots: K * sum(values) for uncoded, sum(values) for MDS.
    """

    kind: str
    values: np.ndarray
    m1: int
    m2: int | None
    budget_used: float

    @property
    def M(self) -> int:
        return int(self.values.size)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_feasible(cfg: NetworkConfig, M: int) -> None:
    if cfg.S * cfg.n < cfg.K * M:
        raise InfeasibleBudgetError(
            f"cache budget S*n = {cfg.S * cfg.n} cannot hold K*M = {cfg.K * M} subpackets"
        )


def uncoded_boundary(cfg: NetworkConfig, pop: PopularityModel) -> int:
    """First content index of the proportional regime for uncoded caching.

    Evaluates (n * area / H_{alpha/2}(M)) ** (2/alpha) with constant
    convention 1, clamped to [1, M]; for alpha <= 2 the entire library is
    fully replicated once area reaches M/n.
    """
    M = pop.M
    if pop.alpha <= 2.0 and cfg.area * cfg.n >= M * (1.0 - 1e-12):
        return M
    raw = (cfg.n * cfg.area / pop.h_half_alpha) ** (2.0 / pop.alpha)
    return max(1, min(M, _round_half_up(raw)))


def _proportional_band(
    weights: np.ndarray,
    budget: float,
    lower: float,
    upper: float,
    exact: bool = False,
) -> np.ndarray:
    """Distribute `budget` over a band proportionally to `weights`, clipping
    at the box [lower, upper].

    Entries above the cap are fixed at the cap and the remainder is
    re-distributed until no new cap violations appear; entries below the
    floor are lifted in a single re-normalization pass (exact=False, the
    closed-form path) or iterated to the exact box water-filling fixpoint
    (exact=True, the numeric path).
    """
    size = weights.size
    values = np.empty(size)
    capped = np.zeros(size, dtype=bool)
    floored = np.zeros(size, dtype=bool)
    passes = 2 * size + 2 if exact else 1
    for _ in range(2 * size + 2):
        free = ~capped & ~floored
        budget_free = budget - upper * np.count_nonzero(capped) - lower * np.count_nonzero(floored)
        if not free.any():
            break
        wsum = weights[free].sum()
        values[free] = budget_free * weights[free] / wsum if budget_free > 0 else lower
        over = free & (values > upper * (1.0 + 1e-15))
        if over.any():
            capped |= over
            continue
        under = free & (values < lower * (1.0 - 1e-15))
        if under.any() and passes > 0:
            passes -= 1
            floored |= under
            continue
        break
    values[capped] = upper
    values[floored] = lower
    return np.clip(values, lower, upper)


def uncoded_allocation(cfg: NetworkConfig, pop: PopularityModel) -> Allocation:
    """Order-optimal uncoded allocation: full replication (1/area copies)
    ahead of the boundary index, sqrt-popularity proportional shares of the
    residual replica budget behind it."""
    M = pop.M
    _check_feasible(cfg, M)
    cap = 1.0 / cfg.area
    budget = cfg.S * cfg.n / cfg.K  # replica units
    m1 = uncoded_boundary(cfg, pop)
    # the constant-1 boundary may overshoot what the budget can replicate
    while m1 > 1 and budget - (m1 - 1) * cap < (M - m1 + 1):
        m1 -= 1
    values = np.empty(M)
    values[: m1 - 1] = cap
    tail_budget = budget - (m1 - 1) * cap
    weights = np.sqrt(pop.pmf[m1 - 1 :])
    values[m1 - 1 :] = _proportional_band(weights, tail_budget, 1.0, cap)
    m1_post, _ = classify_boundaries(values, cfg.area, cfg.K, "uncoded")
    return Allocation(
        kind="uncoded",
        values=values,
        m1=m1_post,
        m2=None,
        budget_used=float(cfg.K * values.sum()),
    )


def mds_boundaries(cfg: NetworkConfig, pop: PopularityModel) -> tuple[int, int]:
    """Regime boundary indices (m1, m2) for MDS-coded caching, from the
    closed forms with constant convention 1 and epsilon = 0."""
    M = pop.M
    if M >= cfg.n:
        raise InfeasibleBudgetError(
            f"library size M={M} must be smaller than node count n={cfg.n}"
        )
    alpha = pop.alpha
    inv_a = 1.0 / cfg.area
    spare = cfg.n - M
    if alpha > 2.0:
        m2_raw = spare ** (2.0 / alpha)
        m1_raw = (cfg.K * spare * cfg.area) ** (2.0 / alpha)
    else:
        m2_raw = spare * (inv_a / cfg.K) ** (2.0 / alpha - 1.0)
        m1_raw = spare * cfg.K * cfg.area
    m2 = max(1, min(M, _round_half_up(m2_raw)))
    m1 = max(1, min(M, _round_half_up(m1_raw)))
    return min(m1, m2), m2


def _top_up(values: np.ndarray, residual: float, saturation: float, cap: float) -> float:
    """Spend residual budget on the most popular contents first: raise
    entries to the delay-saturation level, then (zero marginal gain) on to
    the box cap. Returns the unspent residual."""
    for target in (saturation, cap):
        if residual <= 0:
            break
        for i in range(values.size):
            add = min(target - values[i], residual)
            if add > 0:
                values[i] += add
                residual -= add
            if residual <= 0:
                break
    return residual


def mds_allocation(cfg: NetworkConfig, pop: PopularityModel) -> Allocation:
    """Order-optimal MDS-coded allocation: 1/area coded subpackets ahead of
    m1, sqrt-popularity proportional shares in [m1, m2), the minimum K from
    m2 on. Residual budget (middle band empty or clipped) is pushed back
    onto the most popular contents up to the 1/area + K cap."""
    M = pop.M
    _check_feasible(cfg, M)
    inv_a = 1.0 / cfg.area
    cap = inv_a + cfg.K
    budget = float(cfg.S * cfg.n)
    m1, m2 = mds_boundaries(cfg, pop)
    while m1 > 1 and budget - (m1 - 1) * inv_a - (M - m2 + 1) * cfg.K < cfg.K * (m2 - m1):
        m1 -= 1
    values = np.empty(M)
    values[: m1 - 1] = inv_a
    values[m2 - 1 :] = float(cfg.K)
    if m2 > m1:
        band_budget = budget - (m1 - 1) * inv_a - (M - m2 + 1) * cfg.K
        weights = np.sqrt(pop.pmf[m1 - 1 : m2 - 1])
        values[m1 - 1 : m2 - 1] = _proportional_band(weights, band_budget, float(cfg.K), cap)
    residual = budget - values.sum()
    if residual > _REL_TOL * budget:
        _top_up(values, residual, inv_a + cfg.K - 1.0, cap)
    values = np.minimum.accumulate(values)  # guard: monotone after lifting
    m1_post, m2_post = classify_boundaries(values, cfg.area, cfg.K, "mds")
    return Allocation(
        kind="mds",
        values=values,
        m1=m1_post,
        m2=m2_post,
        budget_used=float(values.sum()),
    )


def classify_boundaries(
    values: np.ndarray, area: float, K: int, kind: str
) -> tuple[int, int | None]:
    """Post-hoc regime partition of an allocation vector.

    m1 = first index with fewer than 1/area copies (ties toward the
    replicated regime); for MDS, m2 = first index of the trailing run of
    exactly-K entries. Both default to M + 1 for empty regimes.
    """
    M = values.size
    cap = 1.0 / area
    m1 = M + 1
    for i in range(M):
        if values[i] < cap * (1.0 - 1e-12):
            m1 = i + 1
            break
    if kind != "mds":
        return m1, None
    m2 = M + 1
    for i in range(M - 1, -1, -1):
        if values[i] > K * (1.0 + 1e-12):
            break
        m2 = i + 1
    return min(m1, m2), m2


def validate_allocation(alloc: Allocation, cfg: NetworkConfig) -> list[str]:
    """Check the Allocation invariants; returns a list of violations."""
    problems: list[str] = []
    v = alloc.values
    M = v.size
    if np.any(np.diff(v) > _REL_TOL * np.abs(v[:-1])):
        problems.append("values are not non-increasing")
    cap = 1.0 / cfg.area
    if alloc.kind == "uncoded":
        if np.any(v < 1.0 - _REL_TOL) or np.any(v > cap * (1.0 + _REL_TOL)):
            problems.append(f"values leave the band [1, 1/area={cap:g}]")
        budget = alloc.budget_used
    else:
        if np.any(v < cfg.K - _REL_TOL) or np.any(v > cap + cfg.K + _REL_TOL):
            problems.append(f"values leave the band [K={cfg.K}, 1/area+K={cap + cfg.K:g}]")
        budget = alloc.budget_used
    limit = cfg.S * cfg.n
    if budget > limit * (1.0 + 1e-6):
        problems.append(f"budget_used {budget:g} exceeds S*n = {limit}")
    if not (1 <= alloc.m1 <= M + 1):
        problems.append(f"m1={alloc.m1} out of range")
    if alloc.m2 is not None and not (alloc.m1 <= alloc.m2 <= M + 1):
        problems.append(f"m2={alloc.m2} inconsistent with m1={alloc.m1}")
    return problems


@dataclass(frozen=True)
class ScalingRecord:
    """Dominant-term evaluation of the minimum-delay scaling law."""

    strategy: str
    case: str
    delay_value: float
    delay_class: str
    dominant: str
    throughput_value: float
    throughput_class: str
    m1: int
    m2: int | None


def _squared_label(alpha_half_cls) -> str:
    if alpha_half_cls.kind == "constant":
        return "1"
    if alpha_half_cls.kind == "log":
        return "log(M)^2"
    return f"M^{2 * alpha_half_cls.exponent:g}"


def _ratio_label(numerator: str, denominator: str, prefix: str = "") -> str:
    num = prefix if numerator == "1" else (f"{prefix}*{numerator}" if prefix else numerator)
    if denominator == "1":
        return f"{num}/(n*a)" if num else "1/(n*a)"
    return f"{num}/(n*a*{denominator})" if num else f"1/(n*a*{denominator})"


def delay_scaling(cfg: NetworkConfig, pop: PopularityModel, strategy: str) -> ScalingRecord:
    """Evaluate the minimum average-delay scaling law (and the matching
    per-node throughput) with exact finite-M harmonic sums."""
    h_a = pop.h_alpha
    h_h = pop.h_half_alpha
    na = cfg.n * cfg.area
    K = cfg.K
    num_label = _squared_label(harmonic_class(pop.alpha, of_half=True))
    den_label = harmonic_class(pop.alpha).label()
    if strategy == "uncoded":
        load = K * h_h**2 / (na * h_a)
        value = max(float(K), load)
        dominant = "K" if K >= load else "load"
        delay_class = "K" if dominant == "K" else _ratio_label(num_label, den_label, "K")
        thr = min(1.0 / (na * K), h_a / (K * h_h**2))
        thr_class = "1/(n*a*K)" if 1.0 / (na * K) <= h_a / (K * h_h**2) else f"{den_label}/(K*{num_label})"
        m1 = uncoded_boundary(cfg, pop)
        return ScalingRecord(
            strategy="uncoded",
            case="uncoded",
            delay_value=value,
            delay_class=delay_class,
            dominant=dominant,
            throughput_value=thr,
            throughput_class=thr_class,
            m1=m1,
            m2=None,
        )
    if strategy != "mds":
        raise ValueError(f"unknown strategy {strategy!r}")
    m1, m2 = mds_boundaries(cfg, pop)
    M = pop.M
    if m1 >= M:
        value, dominant, delay_class, case = float(K), "K", "K", "replicated"
        thr = 1.0 / (na * K)
        thr_class = "1/(n*a*K)"
    elif m2 >= M:
        load = h_h**2 / (na * h_a)
        value = max(float(K), load)
        dominant = "K" if K >= load else "load"
        delay_class = "K" if dominant == "K" else _ratio_label(num_label, den_label)
        case = "mixed"
        thr = min(1.0 / (na * K), h_a / h_h**2)
        thr_class = "1/(n*a*K)" if 1.0 / (na * K) <= h_a / h_h**2 else f"{den_label}/{num_label}"
    else:
        h_h_m2 = harmonic_sum(m2, pop.alpha / 2.0)
        load = h_h_m2**2 / (cfg.area * h_a * (cfg.n - M))
        logk = math.log(K) / cfg.area if K > 1 else 0.0
        value = max(float(K), load, logk)
        terms = {"K": float(K), "load": load, "logK": logk}
        dominant = max(terms, key=terms.get)
        delay_class = {"K": "K", "load": "H(a/2,m2)^2/((n-M)*a*" + den_label + ")", "logK": "log(K)/a"}[dominant]
        case = "sparse"
        thr_terms = {
            "1/(n*a*K)": 1.0 / (na * K),
            "load": h_a * (cfg.n - M) / (cfg.n * h_h_m2**2),
            "1/(n*log(K))": 1.0 / (cfg.n * math.log(K)) if K > 1 else math.inf,
        }
        thr_class = min(thr_terms, key=thr_terms.get)
        thr = thr_terms[thr_class]
    return ScalingRecord(
        strategy="mds",
        case=case,
        delay_value=value,
        delay_class=delay_class,
        dominant=dominant,
        throughput_value=thr,
        throughput_class=thr_class,
        m1=m1,
        m2=m2,
    )
