"""Stationary occupancy of the good state under i.i.d. Bernoulli(p) pulls.

With c1..c4 derived from the transition matrix, the long-run probability of
state 1 when the arm is pulled independently with probability p each step is

    f(p) = (c1 + c2 p) / (c3 + c4 p)

and its curvature on [0, 1] has a fixed sign, so every arm is either concave
or strictly convex.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import TransitionMatrix

#: |c4| below this is treated as zero when classifying curvature
C4_ZERO = 1e-12


class CurvatureClass(enum.Enum):
    CONCAVE = "concave"
    STRICTLY_CONVEX = "strictly_convex"


@dataclass(frozen=True)
class SteadyStateConstants:
    c1: float
    c2: float
    c3: float
    c4: float

    @property
    def slope_numerator(self) -> float:
        """c2*c3 - c1*c4, the numerator of f'."""
        return self.c2 * self.c3 - self.c1 * self.c4


def constants(m: TransitionMatrix) -> SteadyStateConstants:
    return SteadyStateConstants(
        c1=m.p01_passive,
        c2=m.p01_active - m.p01_passive,
        c3=1.0 - m.p11_passive + m.p01_passive,
        c4=m.p11_passive - m.p11_active - m.p01_passive + m.p01_active,
    )


def f(m: TransitionMatrix, p):
    """Stationary state-1 probability when pulled w.p. ``p`` (scalar or array)."""
    p = np.asarray(p, dtype=float)
    num = (1.0 - p) * m.p01_passive + p * m.p01_active
    den = 1.0 - (1.0 - p) * m.p11_passive - p * m.p11_active + num
    out = num / den
    return float(out) if out.ndim == 0 else out


def f_prime(m: TransitionMatrix, p):
    c = constants(m)
    p = np.asarray(p, dtype=float)
    out = c.slope_numerator / (c.c3 + c.c4 * p) ** 2
    return float(out) if out.ndim == 0 else out


def f_second(m: TransitionMatrix, p):
    """Second derivative, 2 c4 (c1 c4 - c2 c3) / (c3 + c4 p)^3."""
    c = constants(m)
    p = np.asarray(p, dtype=float)
    out = 2.0 * c.c4 * (-c.slope_numerator) / (c.c3 + c.c4 * p) ** 3
    return float(out) if out.ndim == 0 else out


def classify(m: TransitionMatrix) -> CurvatureClass:
    c = constants(m)
    if abs(c.c4) < C4_ZERO:
        return CurvatureClass.CONCAVE
    if c.c2 == 0.0:
        return CurvatureClass.STRICTLY_CONVEX if c.c1 > 0.0 else CurvatureClass.CONCAVE
    d = c.c1 - c.c2 * c.c3 / c.c4
    return CurvatureClass.STRICTLY_CONVEX if d > 0.0 else CurvatureClass.CONCAVE


def is_concave(m: TransitionMatrix) -> bool:
    return classify(m) is CurvatureClass.CONCAVE


# vectorized forms over arrays of constants, used by the planner

def f_vec(c1, c2, c3, c4, p):
    return (c1 + c2 * p) / (c3 + c4 * p)


def f_prime_vec(c1, c2, c3, c4, p):
    return (c2 * c3 - c1 * c4) / (c3 + c4 * p) ** 2


def constant_arrays(matrices) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    cs = [constants(m) for m in matrices]
    return (np.array([c.c1 for c in cs], dtype=float), np.array([c.c2 for c in cs], dtype=float),
            np.array([c.c3 for c in cs], dtype=float), np.array([c.c4 for c in cs], dtype=float))
