"""Exact optimum over open-loop schedules for tiny instances.

Every N x T binary schedule with exactly k pulls per column (and, optionally,
a periodicity or minimum-fraction constraint) is scored by exact expected
occupancy; the best is returned.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .model import Cohort, ValidationError
from .simulator import expected_reward_exact

MAX_SCHEDULES = 10 ** 7


class OracleSizeError(ValidationError):
    pass


@dataclass(frozen=True)
class ScheduleConstraint:
    """``kind`` is "budget_only", "periodicity" (with ``nu``) or "min_fraction" (with ``psi``)."""

    kind: str = "budget_only"
    nu: Optional[int] = None
    psi: Optional[float] = None

    def validate(self, t_horizon: int) -> None:
        if self.kind == "budget_only":
            return
        if self.kind == "periodicity":
            if self.nu is None or not 1 <= self.nu <= t_horizon:
                raise ValidationError(f"periodicity needs 1 <= nu <= T={t_horizon}, got {self.nu}")
            return
        if self.kind == "min_fraction":
            if self.psi is None or not 0.0 < self.psi < 1.0:
                raise ValidationError(f"min_fraction needs psi in (0, 1), got {self.psi}")
            return
        raise ValidationError(f"unknown constraint kind {self.kind!r}")

    def min_pulls(self, t_horizon: int) -> int:
        # guard against psi*T landing a hair above an integer
        return math.ceil(round(self.psi * t_horizon, 9))

    def satisfied(self, schedule: np.ndarray) -> bool:
        s = np.asarray(schedule)
        T = s.shape[1]
        if self.kind == "periodicity":
            for start in range(0, T - self.nu + 1, self.nu):
                if not s[:, start:start + self.nu].any(axis=1).all():
                    return False
            return True
        if self.kind == "min_fraction":
            return bool((s.sum(axis=1) >= self.min_pulls(T)).all())
        return True


BUDGET_ONLY = ScheduleConstraint()


def schedule_count_bound(n: int, k: int, t_horizon: int) -> int:
    return math.comb(n, k) ** t_horizon


def enumerate_schedules(n: int, k: int, t_horizon: int,
                        constraint: ScheduleConstraint = BUDGET_ONLY) -> Iterator[np.ndarray]:
    """Yield feasible schedules in lexicographic order of their column choices."""
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    constraint.validate(t_horizon)
    total = schedule_count_bound(n, k, t_horizon)
    if total > MAX_SCHEDULES:
        raise OracleSizeError(f"C({n},{k})^{t_horizon} = {total} schedules exceeds the limit {MAX_SCHEDULES}")
    columns = []
    for subset in itertools.combinations(range(n), k):
        col = np.zeros(n, dtype=np.int8)
        col[list(subset)] = 1
        columns.append(col)
    for choice in itertools.product(range(len(columns)), repeat=t_horizon):
        sched = np.stack([columns[c] for c in choice], axis=1)
        if constraint.satisfied(sched):
            yield sched


def _lex_key(sched: np.ndarray) -> tuple:
    return tuple(sched.ravel().tolist())


def optimal_schedule(cohort: Cohort, k: int, t_horizon: int,
                     constraint: ScheduleConstraint = BUDGET_ONLY,
                     tie_tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Best open-loop schedule; ties go to the lexicographically smallest row-major schedule."""
    best, best_val = None, -np.inf
    for sched in enumerate_schedules(cohort.n, k, t_horizon, constraint):
        val = expected_reward_exact(cohort, sched)
        if val > best_val + tie_tol or (abs(val - best_val) <= tie_tol and _lex_key(sched) < _lex_key(best)):
            best, best_val = sched, max(val, best_val)
    if best is None:
        raise ValidationError(f"no schedule satisfies {constraint} with n={cohort.n}, k={k}, T={t_horizon}")
    return best, float(best_val)
