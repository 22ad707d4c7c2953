"""Zipf content popularity: PMF/CDF construction, generalized harmonic sums,
and their asymptotic scaling classes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PopularityModel",
    "HarmonicClass",
    "harmonic_sum",
    "zipf_pmf",
    "harmonic_class",
]


def harmonic_sum(M: int, s: float) -> float:
    """Generalized harmonic number: sum of i**(-s) for i = 1..M.

    Summed in ascending index with exact (compensated) accumulation so the
    many small terms at large M do not vanish for s < 1.
    """
    if M < 1:
        raise ValueError(f"library size must be >= 1, got M={M}")
    if s <= 0:
        raise ValueError(f"exponent must be positive, got s={s}")
    return math.fsum(i ** (-s) for i in range(1, M + 1))


@dataclass(frozen=True)
class HarmonicClass:
    """Asymptotic scaling class of a generalized harmonic sum in M.

    kind is one of "constant", "log", "power"; exponent is the power of M
    for the "power" kind (zero otherwise).
    """

    kind: str
    exponent: float = 0.0

    def label(self) -> str:
        if self.kind == "constant":
            return "1"
        if self.kind == "log":
            return "log(M)"
        return f"M^{self.exponent:g}"


def harmonic_class(alpha: float, of_half: bool = False) -> HarmonicClass:
    """Scaling class of H_s(M) for s = alpha (or s = alpha/2 when of_half).

    The crossover sits exactly at s = 1: above it the sum is bounded, at it
    the sum grows logarithmically, below it polynomially with exponent 1 - s.
    """
    if alpha <= 0:
        raise ValueError(f"exponent must be positive, got alpha={alpha}")
    s = alpha / 2.0 if of_half else alpha
    if s > 1.0:
        return HarmonicClass("constant")
    if s == 1.0:
        return HarmonicClass("log")
    return HarmonicClass("power", 1.0 - s)


@dataclass(frozen=True)
class PopularityModel:
    """Zipf popularity over a library of M contents.

    pmf[m-1] is the request probability of content m (1-based rank); cdf is
    its prefix sum. h_alpha and h_half_alpha are the exact harmonic sums
    H_alpha(M) and H_{alpha/2}(M) used throughout the allocation formulas.
    """

    M: int
    alpha: float
    pmf: np.ndarray
    cdf: np.ndarray
    h_alpha: float
    h_half_alpha: float

    def prob(self, m: int) -> float:
        """Request probability of content m (1-based)."""
        return float(self.pmf[m - 1])

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw content ids (1-based) by inverse-CDF binary search."""
        u = rng.random(size)
        return np.searchsorted(self.cdf, u, side="right") + 1


def zipf_pmf(M: int, alpha: float) -> PopularityModel:
    """Build the Zipf popularity model p_m = m**(-alpha) / H_alpha(M)."""
    if M < 1:
        raise ValueError(f"library size must be >= 1, got M={M}")
    if alpha <= 0:
        raise ValueError(f"exponent must be positive, got alpha={alpha}")
    h = harmonic_sum(M, alpha)
    ranks = np.arange(1, M + 1, dtype=np.float64)
    pmf = ranks ** (-alpha) / h
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0  # kill the last rounding ulp so searchsorted never overflows
    return PopularityModel(
        M=M,
        alpha=alpha,
        pmf=pmf,
        cdf=cdf,
        h_alpha=h,
        h_half_alpha=harmonic_sum(M, alpha / 2.0),
    )
