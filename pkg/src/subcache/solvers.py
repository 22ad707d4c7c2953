"""Numerical solvers for the cache-allocation problems, plus an exhaustive
integer oracle for desk-scale validation.

The uncoded problem is solved exactly by water-filling: a bisection on the
budget multiplier delta with per-content closed form
clip(sqrt(p_m / (area * delta)), 1, 1/area).

The MDS problem is solved two ways and the better allocation is returned:
(1) an exhaustive search over regime-partition pairs (m1, m2), each pair
    filled with sqrt-popularity proportional shares and residual budget
    pushed onto popular contents, and
(2) an exact dual water-filling on the min-form delay objective, which has
    kinks where (r - j) * area crosses 1 but stays convex.
Route (2) certifies the relaxation bound against the integer oracle;
route (1) realizes the closed-form partition structure and wins ties.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .allocation import (
    Allocation,
    InfeasibleBudgetError,
    classify_boundaries,
    _top_up,
)
from .delay_model import NetworkConfig
from .popularity import PopularityModel

__all__ = [
    "SolverReport",
    "SearchSpaceError",
    "solve_uncoded",
    "solve_mds",
    "brute_force",
    "order_objective_uncoded",
    "order_objective_mds",
    "partition_allocation",
]

_MAX_BISECT = 200
_BRUTE_LIMIT = 10**7


class SearchSpaceError(ValueError):
    """Raised when the brute-force lattice exceeds the enforced point limit."""


@dataclass(frozen=True)
class SolverReport:
    """Solver outcome: allocation, order-form objective, dual state."""

    allocation: Allocation
    objective: float
    dual_delta: float
    kkt_residual: float
    iterations: int
    status: str  # "Converged" | "IterationLimit" | "Infeasible"


def order_objective_uncoded(pop: PopularityModel, cfg: NetworkConfig, X) -> float:
    """Order-form delay sum(K * p_m / min(1, area * X_m))."""
    X = np.asarray(X, dtype=np.float64)
    return float(np.sum(cfg.K * pop.pmf / np.minimum(1.0, cfg.area * X)))

def order_objective_mds(pop: PopularityModel, cfg: NetworkConfig, r) -> float:
    """Order-form delay sum_m p_m * sum_j 1 / min(1, (r_m - j) * area)."""
    r = np.asarray(r, dtype=np.float64)
    js = np.arange(cfg.K, dtype=np.float64)
    denom = np.minimum(1.0, (r[:, None] - js[None, :]) * cfg.area)
    return float(np.sum(pop.pmf * np.sum(1.0 / denom, axis=1)))


def _check_feasible(cfg: NetworkConfig, M: int) -> None:
    if cfg.S * cfg.n < cfg.K * M:
        raise InfeasibleBudgetError(
            f"cache budget S*n = {cfg.S * cfg.n} cannot hold K*M = {cfg.K * M} subpackets"
        )


def solve_uncoded(pop: PopularityModel, cfg: NetworkConfig, tol: float = 1e-9) -> SolverReport:
    """Water-filling solution of the uncoded allocation problem.

    Bisects the budget multiplier delta until the replica budget S*n/K is
    met (or every entry is clipped at its box bound) and reports the KKT
    stationarity/complementary-slackness residual.
    """
    M = pop.M
    _check_feasible(cfg, M)
    a = cfg.area
    cap = min(1.0 / a, float(cfg.n))
    budget = cfg.S * cfg.n / cfg.K  # replica units
    p = pop.pmf

    def demand(delta: float) -> np.ndarray:
        return np.clip(np.sqrt(p / (a * delta)), 1.0, cap)

    iterations = 0
    if M * cap <= budget * (1.0 + 1e-15):
        X = np.full(M, cap)
        delta = 0.0
    else:
        lo = p.min() * a / cfg.n**2
        hi = p.max() / a
        while demand(lo).sum() < budget and lo > 1e-300:
            lo /= 4.0
        while demand(hi).sum() > budget and hi < 1e300:
            hi *= 4.0
        for iterations in range(1, _MAX_BISECT + 1):
            mid = 0.5 * (lo + hi)
            if demand(mid).sum() > budget:
                lo = mid
            else:
                hi = mid
            if (hi - lo) <= 1e-16 * hi:
                break
        delta = 0.5 * (lo + hi)
        X = demand(delta)
    residual, budget_gap = _uncoded_kkt_residual(pop, cfg, X, delta, cap, budget)
    converged = residual <= 1e-8 and budget_gap <= 1e-8
    m1, _ = classify_boundaries(X, a, cfg.K, "uncoded")
    alloc = Allocation("uncoded", X, m1, None, float(cfg.K * X.sum()))
    return SolverReport(
        allocation=alloc,
        objective=order_objective_uncoded(pop, cfg, X),
        dual_delta=delta,
        kkt_residual=residual,
        iterations=iterations,
        status="Converged" if converged else "IterationLimit",
    )


def _uncoded_kkt_residual(pop, cfg, X, delta, cap, budget) -> tuple[float, float]:
    a = cfg.area
    grad = pop.pmf / (a * X**2)  # = delta at interior stationarity
    interior = (X > 1.0 + 1e-12) & (X < cap - 1e-12 * cap)
    res = 0.0
    if interior.any():
        res = float(np.max(np.abs(grad[interior] - delta)) / (1.0 + delta))
    at_cap = X >= cap - 1e-12 * cap
    if at_cap.any():  # cap multiplier must be nonnegative
        res = max(res, float(np.max(np.maximum(0.0, delta - grad[at_cap])) / (1.0 + delta)))
    at_floor = X <= 1.0 + 1e-12
    if at_floor.any():  # floor multiplier must be nonnegative
        res = max(res, float(np.max(np.maximum(0.0, grad[at_floor] - delta)) / (1.0 + delta)))
    gap = cfg.K * X.sum() - cfg.S * cfg.n
    budget_violation = max(0.0, gap) / (cfg.S * cfg.n)
    res = max(res, budget_violation, abs(delta * gap))
    return res, budget_violation


def partition_allocation(
    pop: PopularityModel, cfg: NetworkConfig, m1: int, m2: int
) -> np.ndarray | None:
    """Construct the MDS allocation for a regime partition (m1, m2).

    Contents before m1 get 1/area coded subpackets, from m2 on exactly K,
    the middle band sqrt-popularity proportional shares of the remaining
    budget (feasible only inside [K, 1/area]). Residual budget is pushed
    onto popular contents up to the 1/area + K cap. None if infeasible.
    """
    M = pop.M
    inv_a = 1.0 / cfg.area
    budget = float(cfg.S * cfg.n)
    head = (m1 - 1) * inv_a
    tail = (M - m2 + 1) * cfg.K
    values = np.empty(M)
    values[: m1 - 1] = inv_a
    values[m2 - 1 :] = float(cfg.K)
    if m2 > m1:
        band_budget = budget - head - tail
        if band_budget <= 0:
            return None
        w = np.sqrt(pop.pmf[m1 - 1 : m2 - 1])
        band = band_budget * w / w.sum()
        if band[0] > inv_a * (1.0 + 1e-12) or band[-1] < cfg.K * (1.0 - 1e-12):
            return None
        values[m1 - 1 : m2 - 1] = band
    elif head + tail > budget * (1.0 + 1e-12):
        return None
    residual = budget - values.sum()
    if residual > 1e-12 * budget:
        _top_up(values, residual, inv_a + cfg.K - 1.0, inv_a + cfg.K)
    return values


def _partition_search(pop: PopularityModel, cfg: NetworkConfig):
    """Best regime partition by order-form objective (exhaustive at desk
    scale, surrogate-guided at sweep scale)."""
    M = pop.M
    if M <= 40:
        best = None
        best_obj = math.inf
        for m1 in range(1, M + 2):
            for m2 in range(m1, M + 2):
                values = partition_allocation(pop, cfg, m1, m2)
                if values is None:
                    continue
                obj = order_objective_mds(pop, cfg, values)
                if obj < best_obj * (1.0 - 1e-12):
                    best, best_obj = values, obj
        return best, best_obj
    # surrogate shortlist: piecewise objective with exact harmonic tail term
    a = cfg.area
    sqrt_p = np.sqrt(pop.pmf)
    pref_p = np.concatenate(([0.0], np.cumsum(pop.pmf)))
    pref_w = np.concatenate(([0.0], np.cumsum(sqrt_p)))
    tail_unit = sum(1.0 / min(1.0, (cfg.K - j) * a) for j in range(cfg.K))
    inv_a = 1.0 / a
    budget = float(cfg.S * cfg.n)
    best_pair = None
    best_surrogate = math.inf
    for m1 in range(1, M + 2):
        head = (m1 - 1) * inv_a
        if head > budget:
            break
        for m2 in range(m1, M + 2):
            tail = (M - m2 + 1) * cfg.K
            cost = cfg.K * pref_p[m1 - 1] + tail_unit * (pref_p[M] - pref_p[m2 - 1])
            if m2 > m1:
                band_budget = budget - head - tail
                if band_budget <= 0:
                    continue
                w = pref_w[m2 - 1] - pref_w[m1 - 1]
                top = band_budget * sqrt_p[m1 - 1] / w
                bottom = band_budget * sqrt_p[m2 - 2] / w
                if top > inv_a * (1.0 + 1e-12) or bottom < cfg.K * (1.0 - 1e-12):
                    continue
                cost += cfg.K * w**2 / (a * band_budget)
            elif head + tail > budget * (1.0 + 1e-12):
                continue
            if cost < best_surrogate * (1.0 - 1e-12):
                best_surrogate = cost
                best_pair = (m1, m2)
    if best_pair is None:
        return None, math.inf
    values = partition_allocation(pop, cfg, *best_pair)
    if values is None:
        return None, math.inf
    return values, order_objective_mds(pop, cfg, values)


def _mds_marginal(pop, cfg, r: np.ndarray) -> np.ndarray:
    """Magnitude of the min-form objective slope, -p_m * d(cost)/dr at r."""
    a = cfg.area
    js = np.arange(cfg.K, dtype=np.float64)
    d = r[:, None] - js[None, :]
    active = (d * a) < 1.0
    return pop.pmf / a * np.sum(np.where(active, 1.0 / d**2, 0.0), axis=1)


def _mds_waterfill(pop: PopularityModel, cfg: NetworkConfig, tol: float):
    """Exact dual water-filling on the min-form MDS objective."""
    M = pop.M
    a = cfg.area
    sat = 1.0 / a + cfg.K - 1.0  # cost saturates: every reception certain
    cap = 1.0 / a + cfg.K
    budget = float(cfg.S * cfg.n)
    lo_box = float(cfg.K)
    if M * cap <= budget * (1.0 + 1e-15):
        return np.full(M, cap), 0.0, 0

    def r_of(lam: float) -> np.ndarray:
        r_lo = np.full(M, lo_box)
        r_hi = np.full(M, sat)
        at_floor = _mds_marginal(pop, cfg, r_lo) <= lam
        for _ in range(60):
            mid = 0.5 * (r_lo + r_hi)
            go_up = _mds_marginal(pop, cfg, mid) >= lam
            r_lo = np.where(go_up, mid, r_lo)
            r_hi = np.where(go_up, r_hi, mid)
        r = np.where(at_floor, lo_box, r_lo)
        return r

    lam_lo = 0.0  # budget slack end
    lam_hi = float(_mds_marginal(pop, cfg, np.full(M, lo_box)).max()) * 2.0 + 1.0
    iterations = 0
    for iterations in range(1, _MAX_BISECT + 1):
        lam = 0.5 * (lam_lo + lam_hi)
        total = r_of(lam).sum()
        if total > budget:
            lam_lo = lam
        else:
            lam_hi = lam
        if (lam_hi - lam_lo) <= 1e-16 * max(lam_hi, 1e-300):
            break
    lam = lam_hi  # feasible side
    r = r_of(lam)
    # spend any bisection leftover on the most popular contents
    residual = budget - r.sum()
    if residual > 0:
        room = np.minimum(sat - r, residual)
        for i in range(M):
            add = min(room[i], residual)
            if add > 0:
                r[i] += add
                residual -= add
            if residual <= 0:
                break
    return r, lam, iterations


def _mds_kkt_residual(pop, cfg, r, lam) -> tuple[float, float]:
    a = cfg.area
    sat = 1.0 / a + cfg.K - 1.0
    budget = float(cfg.S * cfg.n)
    eps = 1e-7
    res = 0.0
    g_left = _mds_marginal(pop, cfg, np.maximum(r - eps, cfg.K))
    g_right = _mds_marginal(pop, cfg, r + eps)
    at_floor = r <= cfg.K + 1e-9
    at_sat = r >= sat - 1e-9
    interior = ~at_floor & ~at_sat
    if interior.any():  # lambda must sit in the subgradient interval
        res = max(
            res,
            float(np.max(np.maximum(0.0, g_right[interior] - lam)) / (1.0 + lam)),
            float(np.max(np.maximum(0.0, lam - g_left[interior])) / (1.0 + lam)),
        )
    if at_floor.any():
        res = max(res, float(np.max(np.maximum(0.0, g_right[at_floor] - lam)) / (1.0 + lam)))
    if at_sat.any():
        res = max(res, float(np.max(np.maximum(0.0, lam - g_left[at_sat])) / (1.0 + lam)))
    gap = r.sum() - budget
    budget_violation = max(0.0, gap) / budget
    res = max(res, budget_violation, abs(lam * gap) / (1.0 + lam * budget))
    return res, budget_violation


def solve_mds(pop: PopularityModel, cfg: NetworkConfig, tol: float = 1e-9) -> SolverReport:
    """Solve the MDS allocation problem; see the module docstring for the
    two routes. Ties prefer the partition construction."""
    _check_feasible(cfg, pop.M)
    part_values, part_obj = _partition_search(pop, cfg)
    wf_values, lam, iterations = _mds_waterfill(pop, cfg, tol)
    wf_obj = order_objective_mds(pop, cfg, wf_values)
    use_partition = part_values is not None and part_obj <= wf_obj * (1.0 + 1e-12)
    values = part_values if use_partition else wf_values
    objective = part_obj if use_partition else wf_obj
    residual, budget_gap = _mds_kkt_residual(pop, cfg, values, lam)
    if use_partition and residual > 1e-8:
        # the partition tie was not an exact optimum after all
        values, objective = wf_values, wf_obj
        residual, budget_gap = _mds_kkt_residual(pop, cfg, values, lam)
    m1, m2 = classify_boundaries(values, cfg.area, cfg.K, "mds")
    alloc = Allocation("mds", values, m1, m2, float(values.sum()))
    converged = residual <= 1e-8 and budget_gap <= 1e-8
    return SolverReport(
        allocation=alloc,
        objective=objective,
        dual_delta=lam,
        kkt_residual=residual,
        iterations=iterations,
        status="Converged" if converged else "IterationLimit",
    )


def brute_force(
    pop: PopularityModel,
    cfg: NetworkConfig,
    strategy: str,
    objective: str = "order",
) -> SolverReport:
    """Global integer optimum by exhaustive enumeration over the box and
    budget (desk-scale instances only)."""
    M = pop.M
    _check_feasible(cfg, M)
    a = cfg.area
    if strategy == "uncoded":
        low = 1
        high = int(math.floor(min(1.0 / a, float(cfg.n)) + 1e-9))
        per_slot = cfg.K  # each replica unit costs K cache slots
    elif strategy == "mds":
        low = cfg.K
        high = int(math.floor(1.0 / a + cfg.K + 1e-9))
        per_slot = 1
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if high < low:
        raise InfeasibleBudgetError(f"box [{low}, {high}] is empty")
    span = high - low + 1
    if span**M > _BRUTE_LIMIT:
        raise SearchSpaceError(
            f"{span}^{M} lattice points exceed the {_BRUTE_LIMIT} limit"
        )
    budget = cfg.S * cfg.n
    if objective == "order":
        if strategy == "uncoded":
            evaluate = lambda v: order_objective_uncoded(pop, cfg, v)
        else:
            evaluate = lambda v: order_objective_mds(pop, cfg, v)
    elif objective == "exact":
        from .delay_model import expected_delay_mds, expected_delay_uncoded

        if strategy == "uncoded":
            evaluate = lambda v: expected_delay_uncoded(cfg, pop, v).exact_slots
        else:
            evaluate = lambda v: expected_delay_mds(cfg, pop, v).exact_slots
    else:
        raise ValueError(f"unknown objective kind {objective!r}")
    best = None
    best_obj = math.inf
    points = 0
    # descending lexicographic order: ties resolve to replicating popular content
    for candidate in itertools.product(range(high, low - 1, -1), repeat=M):
        points += 1
        if per_slot * sum(candidate) > budget:
            continue
        obj = evaluate(np.array(candidate, dtype=np.float64))
        if obj < best_obj - 1e-15 * (1.0 + abs(obj)):
            best = candidate
            best_obj = obj
    if best is None:
        raise InfeasibleBudgetError("no lattice point satisfies the budget")
    values = np.array(best, dtype=np.float64)
    kind = "uncoded" if strategy == "uncoded" else "mds"
    m1, m2 = classify_boundaries(values, a, cfg.K, kind)
    used = float(per_slot * values.sum())
    alloc = Allocation(kind, values, m1, m2, used)
    return SolverReport(
        allocation=alloc,
        objective=best_obj,
        dual_delta=0.0,
        kkt_residual=0.0,
        iterations=points,
        status="Converged",
    )
