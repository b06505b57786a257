"""Truncated-Gaussian moments E{d^n u(d)} for d ~ N(mu_d, a^2), n = 0, 1, 2.

Only ``|a|`` enters the results; the sign of ``a`` is kept on the
:class:`ScalarGaussian` because downstream operator entries need ``sgn(a)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

__all__ = [
    "ScalarGaussian",
    "std_normal_cdf",
    "std_normal_pdf",
    "inverse_std_normal_cdf",
    "moment0",
    "moment1",
    "moment2",
]

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
_NORMAL = NormalDist()


@dataclass(frozen=True)
class ScalarGaussian:
    """Distribution of the desired response, d ~ N(mu_d, a^2)."""

    mu_d: float
    a: float

    def __post_init__(self):
        if not (math.isfinite(self.mu_d) and math.isfinite(self.a)):
            raise ValueError(f"non-finite parameters: mu_d={self.mu_d}, a={self.a}")
        if self.a == 0.0:
            raise ValueError("a must be nonzero")

    @property
    def sigma(self) -> float:
        return abs(self.a)

    @property
    def z(self) -> float:
        """Standardized mean mu_d / |a|."""
        return self.mu_d / abs(self.a)

    def gauss_factor(self) -> float:
        """exp(-mu_d^2 / (2 a^2)) / sqrt(2 pi), the density of N(0,1) at mu_d/|a|."""
        return std_normal_pdf(self.z)


def std_normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / SQRT2PI


def std_normal_cdf(z: float) -> float:
    """Phi(z) = (erf(z/sqrt 2) + 1)/2, evaluated through erfc to keep the lower tail accurate."""
    return 0.5 * math.erfc(-z / SQRT2)


def inverse_std_normal_cdf(p: float) -> float:
    """Return z with Phi(z) = p.

    Starts from the rational approximation in :class:`statistics.NormalDist`
    and applies one Newton step on :func:`std_normal_cdf`.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    z = _NORMAL.inv_cdf(p)
    pdf = std_normal_pdf(z)
    if pdf > 0.0:
        z -= (std_normal_cdf(z) - p) / pdf
    return z


def moment0(g: ScalarGaussian) -> float:
    """E{u(d)} = Pr[d > 0] = Phi(mu_d/|a|)."""
    return std_normal_cdf(g.z)


def moment1(g: ScalarGaussian) -> float:
    """E{d u(d)} = |a| phi(mu_d/|a|) + mu_d Pr[d > 0]."""
    return g.sigma * g.gauss_factor() + g.mu_d * moment0(g)


def moment2(g: ScalarGaussian) -> float:
    """E{d^2 u(d)} = |a| mu_d phi(mu_d/|a|) + (mu_d^2 + a^2) Pr[d > 0]."""
    return g.sigma * g.mu_d * g.gauss_factor() + (g.mu_d**2 + g.a**2) * moment0(g)
