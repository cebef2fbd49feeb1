"""
The two right-hand-side profiles and their couplings.

Exponential: h(t) = exp(-t), paired with g(s, t) = s - t.
Power:       h(t) = t**-(s+1) with s = n + p, paired with g(s, t) = s / t.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DivisionByZero, DomainError, HypothesisViolated

B1_SAMPLES = (1e1, 1e2, 1e3, 1e4)


class Kind(str, Enum):
    EXPONENTIAL = "exp"
    POWER = "power"


class Coupling(str, Enum):
    DIFFERENCE = "difference"
    RATIO = "ratio"


@dataclass(frozen=True)
class Profile:
    kind: Kind
    dim: int
    p: float = 1.0

    @classmethod
    def exponential(cls, dim: int) -> "Profile":
        return cls(Kind.EXPONENTIAL, dim, 1.0)

    @classmethod
    def power(cls, dim: int, p: float) -> "Profile":
        return cls(Kind.POWER, dim, float(p))

    @property
    def s(self) -> float:
        """s = n + p (Power only)."""
        return self.dim + self.p

    @property
    def is_power(self) -> bool:
        return self.kind is Kind.POWER

    @property
    def coupling(self) -> Coupling:
        return Coupling.RATIO if self.is_power else Coupling.DIFFERENCE


def _check_power_domain(t):
    if np.any(np.asarray(t) <= 0):
        raise DomainError("power profile needs t > 0")


def h_eval(profile: Profile, t):
    """h(t); positive and strictly decreasing."""
    t = np.asarray(t, dtype=float)
    if profile.is_power:
        _check_power_domain(t)
        return t ** -(profile.s + 1)
    return np.exp(-t)


def H_eval(profile: Profile, t):
    """Tail primitive H(t) = int_t^inf h."""
    t = np.asarray(t, dtype=float)
    if profile.is_power:
        _check_power_domain(t)
        return t ** -profile.s / profile.s
    return np.exp(-t)


def H_inv(profile: Profile, u):
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("H_inv needs u > 0")
    if profile.is_power:
        return (profile.s * u) ** (-1.0 / profile.s)
    return -np.log(u)


def couple(coupling: Coupling, s, t):
    if coupling is Coupling.RATIO:
        if np.any(np.asarray(t) == 0):
            raise DivisionByZero("ratio coupling with t = 0")
        return np.asarray(s, dtype=float) / t
    return np.asarray(s, dtype=float) - t


@dataclass(frozen=True)
class B1Report:
    p: float
    C: float
    ratios: tuple


def check_hypothesis_b1(profile: Profile) -> B1Report:
    """
    Decay check h(t) <= C t^-(n+p+1) at t in {10, ..., 1e4}.

    For the exponential profile any p works; p = 1 is reported with
    C = sup_t t^(n+2) e^-t, attained at t = n + 2.
    """
    n = profile.dim
    if profile.is_power:
        p = profile.p
        C = 1.0
    else:
        p = 1.0
        q = n + p + 1
        C = q ** q * np.exp(-q)
    if p <= 0:
        raise HypothesisViolated(f"decay exponent p = {p} must be positive", sample=None)
    ratios = []
    for t in B1_SAMPLES:
        if profile.is_power:
            lhs = t ** -(profile.s + 1)
        else:
            lhs = np.exp(-t)
        bound = C * t ** -(n + p + 1)
        ratios.append(lhs / bound)
        if lhs > bound * (1 + 1e-12):
            raise HypothesisViolated(f"h({t}) = {lhs} exceeds {bound}", sample=t)
    return B1Report(p, float(C), tuple(ratios))
