"""Contact probabilities, expected content-transfer delays, per-node
throughput, and random-walk delay bounds for the cache-enabled mobile network.

Two delay forms are computed side by side: the exact form built from
geometric contact probabilities 1 - (1 - a)**copies, and the order form
built from min(1, a * copies) denominators. The order form is what the
allocation solvers optimize; the exact form is what the Monte Carlo
simulator is compared against. All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .popularity import PopularityModel

__all__ = [
    "NetworkConfig",
    "DelayEstimate",
    "contact_prob",
    "contact_prob_order",
    "expected_delay_uncoded",
    "expected_delay_mds",
    "per_node_throughput",
    "expected_delay_random_walk",
]

MOBILITY_KINDS = ("reshuffle", "random_walk")


@dataclass(frozen=True)
class NetworkConfig:
    """Network-wide parameters.

    n        -- node count
    area     -- per-slot communication area a(n) = R**2, in (0, 1]
    K        -- subpackets per content object
    S        -- cache slots per node (defaults to K)
    delta    -- protocol-model guard factor
    mobility -- "reshuffle" or "random_walk"
    flight_length -- mean flight length L for random-walk mobility
    beta, gamma   -- optional scaling annotations (M = n**beta, K = n**gamma)
                     used only by sweep generators
    """

    n: int
    area: float
    K: int
    S: int | None = None
    delta: float = 1.0
    mobility: str = "reshuffle"
    flight_length: float | None = None
    beta: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"node count must be >= 1, got n={self.n}")
        if not (0.0 < self.area <= 1.0):
            raise ValueError(f"area must lie in (0, 1], got {self.area}")
        if self.K < 1:
            raise ValueError(f"subpacket count must be >= 1, got K={self.K}")
        if self.S is None:
            object.__setattr__(self, "S", self.K)
        if self.S < 1:
            raise ValueError(f"cache size must be >= 1, got S={self.S}")
        if self.delta < 0:
            raise ValueError(f"guard factor must be >= 0, got {self.delta}")
        if self.mobility not in MOBILITY_KINDS:
            raise ValueError(f"unknown mobility kind {self.mobility!r}")
        if self.mobility == "random_walk" and self.flight_length is None:
            object.__setattr__(self, "flight_length", math.sqrt(self.area))

    @property
    def cell_radius(self) -> float:
        """Transmission range R = sqrt(area)."""
        return math.sqrt(self.area)

    @property
    def meets_connectivity(self) -> bool:
        """Whether area >= log(n)/n, the dense-network connectivity regime.

        Advisory only: desk-scale test instances routinely sit below it.
        """
        return self.area >= math.log(max(self.n, 2)) / self.n


@dataclass(frozen=True)
class DelayEstimate:
    """Expected content-transfer delay in slots.

    exact_slots uses geometric contact means, order_slots the min-form
    denominators. bounds, when present, brackets the random-walk delay
    (lower = reshuffling order form, upper = same with area/log(n)).
    """

    exact_slots: float
    order_slots: float
    bounds: tuple[float, float] | None = None


def contact_prob(area: float, copies: float) -> float:
    """Per-slot probability that a requester finds one of `copies` uniformly
    placed cache holders inside its communication area: 1 - (1 - a)**copies."""
    if not (0.0 < area <= 1.0):
        raise ValueError(f"area must lie in (0, 1], got {area}")
    if copies < 0:
        raise ValueError(f"copies must be >= 0, got {copies}")
    return -math.expm1(copies * math.log1p(-area)) if area < 1.0 else (1.0 if copies > 0 else 0.0)


def contact_prob_order(area: float, copies: float) -> float:
    """Order form of the contact probability: min(1, area * copies)."""
    if not (0.0 < area <= 1.0):
        raise ValueError(f"area must lie in (0, 1], got {area}")
    if copies < 0:
        raise ValueError(f"copies must be >= 0, got {copies}")
    return min(1.0, area * copies)


def _check_allocation(pop: PopularityModel, values, lower: float, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (pop.M,):
        raise ValueError(f"allocation length {values.size} != library size {pop.M}")
    if np.any(values < lower):
        raise ValueError(f"every {what} must be >= {lower}")
    return values


def expected_delay_uncoded(cfg: NetworkConfig, pop: PopularityModel, X) -> DelayEstimate:
    """Expected delay under sequential reception of uncoded subpackets.

    Each of the K subpackets of content m is a geometric wait with success
    probability contact_prob(area, X_m).
    """
    X = _check_allocation(pop, X, 1.0, "replica count")
    a = cfg.area
    exact = sum(
        pop.pmf[i] * cfg.K / contact_prob(a, X[i]) for i in range(pop.M)
    )
    order = sum(
        pop.pmf[i] * cfg.K / contact_prob_order(a, X[i]) for i in range(pop.M)
    )
    return DelayEstimate(exact_slots=float(exact), order_slots=float(order))


def expected_delay_mds(cfg: NetworkConfig, pop: PopularityModel, r) -> DelayEstimate:
    """Expected delay under random reception of coded subpackets.

    After j receptions, r_m - j useful holders remain, so the j-th wait is
    geometric with success probability contact_prob(area, r_m - j).
    """
    r = _check_allocation(pop, r, float(cfg.K), "coded-subpacket count")
    a = cfg.area
    exact = 0.0
    order = 0.0
    for i in range(pop.M):
        e = sum(1.0 / contact_prob(a, r[i] - j) for j in range(cfg.K))
        o = sum(1.0 / contact_prob_order(a, r[i] - j) for j in range(cfg.K))
        exact += pop.pmf[i] * e
        order += pop.pmf[i] * o
    return DelayEstimate(exact_slots=float(exact), order_slots=float(order))


def per_node_throughput(cfg: NetworkConfig, d_avg: float) -> float:
    """Per-node throughput 1 / (n * area * d_avg), constant convention 1."""
    if d_avg <= 0:
        raise ValueError(f"average delay must be positive, got {d_avg}")
    return 1.0 / (cfg.n * cfg.area * d_avg)


def expected_delay_random_walk(
    cfg: NetworkConfig,
    pop: PopularityModel,
    alloc,
    strategy: str,
) -> DelayEstimate:
    """Delay bracket under random-walk mobility.

    The lower bound is the reshuffling order form; the upper bound replaces
    area by area/log(n) in every min-form denominator (natural log).
    """
    if strategy not in ("uncoded_seq", "mds_random"):
        raise ValueError(f"unknown reception strategy {strategy!r}")
    log_n = math.log(max(cfg.n, 2))
    a = cfg.area
    a_slow = a / log_n
    if strategy == "uncoded_seq":
        values = _check_allocation(pop, alloc, 1.0, "replica count")
        base = expected_delay_uncoded(cfg, pop, values)
        upper = sum(
            pop.pmf[i] * cfg.K / min(1.0, a_slow * values[i]) for i in range(pop.M)
        )
    else:
        values = _check_allocation(pop, alloc, float(cfg.K), "coded-subpacket count")
        base = expected_delay_mds(cfg, pop, values)
        upper = sum(
            pop.pmf[i] * sum(1.0 / min(1.0, a_slow * (values[i] - j)) for j in range(cfg.K))
            for i in range(pop.M)
        )
    return DelayEstimate(
        exact_slots=base.exact_slots,
        order_slots=base.order_slots,
        bounds=(base.order_slots, float(upper)),
    )
