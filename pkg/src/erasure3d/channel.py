"""Distance-dependent erasure links and the finite-field additive interference rule.

A receiver decodes the intended symbol only when that symbol survives and
every concurrent interfering symbol is erased.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Interferers whose non-erasure probability falls below this are dropped.
TRUNCATION = 1e-9


class DecayFamily(str, Enum):
    EXPONENTIAL = "exponential"
    POLYNOMIAL = "polynomial"


class StalledLinkError(RuntimeError):
    """Raised when a link can never succeed, so ARQ would retry forever."""


@dataclass(frozen=True)
class ErasureModel:
    family: DecayFamily
    gamma: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", DecayFamily(self.family))
        if self.family is DecayFamily.EXPONENTIAL:
            if self.gamma is None or not 0 < self.gamma < 1:
                raise ValueError("exponential model needs 0 < gamma < 1")
        else:
            if self.alpha is None or self.alpha <= 0:
                raise ValueError("polynomial model needs alpha > 0")
            if self.alpha <= 3:
                warnings.warn(
                    f"alpha={self.alpha} <= 3 lies outside the regime with proven scaling",
                    stacklevel=3,
                )

    @classmethod
    def exponential(cls, gamma: float) -> ErasureModel:
        return cls(DecayFamily.EXPONENTIAL, gamma=gamma)

    @classmethod
    def polynomial(cls, alpha: float) -> ErasureModel:
        return cls(DecayFamily.POLYNOMIAL, alpha=alpha)

    @property
    def d_star(self) -> float:
        """Critical distance with gamma**d == exp(-d / d_star)."""
        if self.family is not DecayFamily.EXPONENTIAL:
            raise AttributeError("d_star is defined for the exponential family only")
        return -1.0 / math.log(self.gamma)

    def log_success(self, d):
        """Log of the non-erasure probability 1 - eps at (effective) distance d."""
        d = np.asarray(d, dtype=float)
        if self.family is DecayFamily.EXPONENTIAL:
            return d * math.log(self.gamma)
        # success probability capped at 1 below unit distance
        with np.errstate(divide="ignore"):
            return -self.alpha * np.log(np.maximum(d, 1.0))

    def success(self, d):
        return np.exp(self.log_success(d))

    def log_erasure(self, d):
        """Log of eps, stable when eps is close to 1."""
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(self.log_success(d)))


def erasure_probability(d, model: ErasureModel):
    """eps(d) = 1 - gamma**d, or max(0, 1 - d**-alpha)."""
    out = -np.expm1(model.log_success(d))
    return float(out) if np.ndim(out) == 0 else out


def log_success_probability(d_intended: float, d_interferers, model: ErasureModel) -> float:
    d_int = np.asarray(d_interferers, dtype=float)
    total = float(model.log_success(d_intended))
    if d_int.size:
        keep = model.success(d_int) >= TRUNCATION
        if np.any(keep):
            total += float(np.sum(model.log_erasure(d_int[keep])))
    return total


def success_probability(d_intended: float, d_interferers, model: ErasureModel) -> float:
    """(1 - eps_intended) * prod(eps_interferer), evaluated in the log domain.

    Interferers that get through with probability below ``TRUNCATION`` are
    ignored; an interferer at zero distance annihilates the link.
    """
    return math.exp(log_success_probability(d_intended, d_interferers, model))


def decode_success(d_intended: float, d_interferers, model: ErasureModel, rng) -> bool:
    """One slot of the additive-interference channel with fresh Bernoulli draws."""
    if rng.random() >= float(model.success(d_intended)):
        return False
    d_int = np.asarray(d_interferers, dtype=float)
    if d_int.size == 0:
        return True
    through = rng.random(d_int.size) < model.success(d_int)
    return not bool(np.any(through))


def arq_attempts(success_prob, rng, size=None):
    """Slot attempts until the first success (geometric with mean 1/success_prob)."""
    p = np.asarray(success_prob, dtype=float)
    if np.any(p <= 0):
        raise StalledLinkError("link success probability is zero")
    if np.any(p > 1):
        raise ValueError("success probability above 1")
    out = rng.geometric(p, size=size)
    return int(out) if np.ndim(out) == 0 else out
