"""Gaussian signal model for a single ReLU unit.

Inputs are ``x ~ N(mu, I)`` and the desired response is exactly linear in the
last input coordinate, ``d = a * x[L-1] + c`` (the rotated form of a general
linear target, valid because the input covariance is isotropic).

Augmented vectors put the bias first: ``w_bar = [b, w_1, ..., w_L]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .moments import ScalarGaussian, inverse_std_normal_cdf, moment0

__all__ = [
    "SignalModel",
    "SamplePair",
    "make_model_with_activation",
    "linspace_mu",
    "sweep_mu",
    "sample",
    "sample_batch",
    "optimal_weights",
]


@dataclass(frozen=True, eq=False)
class SignalModel:
    mu: np.ndarray
    a: float
    c: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "c", float(self.c))
        if mu.size < 3:
            raise ValueError(f"need L >= 3 inputs, got L={mu.size}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite")
        if self.a == 0.0 or not math.isfinite(self.a):
            raise ValueError(f"a must be finite and nonzero, got {self.a}")
        if not math.isfinite(self.c):
            raise ValueError(f"c must be finite, got {self.c}")

    @property
    def L(self) -> int:
        return int(self.mu.size)

    @property
    def mu_d(self) -> float:
        return self.a * float(self.mu[-1]) + self.c

    @property
    def gaussian(self) -> ScalarGaussian:
        return ScalarGaussian(self.mu_d, self.a)

    @property
    def activation_prob(self) -> float:
        """Pr[d > 0]."""
        return moment0(self.gaussian)

    def __eq__(self, other):
        if not isinstance(other, SignalModel):
            return NotImplemented
        return self.a == other.a and self.c == other.c and np.array_equal(self.mu, other.mu)

    def __hash__(self):
        return hash((self.mu.tobytes(), self.a, self.c))

    def to_dict(self) -> dict[str, Any]:
        return {
            "L": self.L,
            "mu": [float(m) for m in self.mu],
            "a": self.a,
            "c": self.c,
            "activation_prob": self.activation_prob,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "SignalModel":
        """Build from ``{L, mu, a, c}`` or ``{L, mu, a, activation_prob}``.

        When both ``c`` and ``activation_prob`` are present, ``c`` wins.
        """
        mu = np.asarray(record["mu"], dtype=float)
        if "L" in record and int(record["L"]) != mu.size:
            raise ValueError(f"L={record['L']} does not match len(mu)={mu.size}")
        if "c" in record:
            return cls(mu, record["a"], record["c"])
        if "activation_prob" in record:
            return make_model_with_activation(mu, record["a"], record["activation_prob"])
        raise ValueError("model record needs either 'c' or 'activation_prob'")


@dataclass(frozen=True)
class SamplePair:
    x: np.ndarray
    d: float


def make_model_with_activation(mu, a: float, p_target: float) -> SignalModel:
    """Pick the offset ``c`` so that Pr[d > 0] equals ``p_target``."""
    if not (0.0 < p_target < 1.0):
        raise ValueError(f"p_target must lie in (0, 1), got {p_target!r}")
    if a == 0.0:
        raise ValueError("a must be nonzero")
    mu = np.asarray(mu, dtype=float)
    c = abs(a) * inverse_std_normal_cdf(p_target) - a * float(mu[-1])
    return SignalModel(mu, a, c)


def linspace_mu(L: int, hi: float = 2.0) -> np.ndarray:
    """Evenly spaced input means from ``hi`` down to ``-hi``."""
    return np.linspace(hi, -hi, L)


def sweep_mu() -> np.ndarray:
    """The 11-entry mean vector [2, 1.6, ..., -1.6, -2] used in the verification runs."""
    return linspace_mu(11, 2.0)


def sample_batch(model: SignalModel, rng: np.random.Generator, n: int):
    """Draw ``n`` i.i.d. pairs; returns ``(x, d)`` with shapes ``(n, L)`` and ``(n,)``."""
    x = rng.standard_normal((n, model.L))
    x += model.mu
    d = model.a * x[:, -1] + model.c
    return x, d


def sample(model: SignalModel, rng: np.random.Generator) -> SamplePair:
    x, d = sample_batch(model, rng, 1)
    return SamplePair(x[0], float(d[0]))


def optimal_weights(model: SignalModel) -> np.ndarray:
    """Zero-error augmented solution ``[c, 0, ..., 0, a]``."""
    w = np.zeros(model.L + 1)
    w[0] = model.c
    w[-1] = model.a
    return w
