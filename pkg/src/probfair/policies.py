"""Action-selection policies.

A policy is built once per simulation from a :class:`PolicyKind` and a shared
:class:`PolicyContext` (which caches the expensive per-cohort precomputation:
index tables and stationary ProbFair plans) and then queried once per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rounding
from .model import Cohort, FairnessParams, ValidationError
from .planner import StationaryPolicy, plan
from .whittle import CohortIndices, RewardSpec, cohort_indices, select_top_k

KINDS = (
    "noact", "random", "round_robin", "threshold_whittle", "risk_aware_whittle",
    "probfair", "heuristic_first", "heuristic_last", "heuristic_random",
)

LABELS = {
    "noact": "NoAct", "random": "Random", "round_robin": "RoundRobin",
    "threshold_whittle": "ThresholdWhittle", "risk_aware_whittle": "RiskAwareWhittle",
    "probfair": "ProbFair", "heuristic_first": "HeuristicFirst",
    "heuristic_last": "HeuristicLast", "heuristic_random": "HeuristicRandom",
}


@dataclass(frozen=True)
class PolicyKind:
    kind: str
    lam: float = 20.0
    ell: float = 0.0
    u: float = 1.0
    eps: float = 0.01
    nu: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.is_heuristic and (self.nu is None or self.nu < 1):
            raise ValidationError(f"{self.kind} needs a positive integer nu")
        if self.kind == "risk_aware_whittle" and not self.lam > 0:
            raise ValidationError("risk_aware_whittle needs lam > 0")
        if self.kind == "probfair" and not (0.0 <= self.ell <= self.u <= 1.0 and self.eps > 0):
            raise ValidationError("probfair needs 0 <= ell <= u <= 1 and eps > 0")

    @property
    def is_heuristic(self) -> bool:
        return self.kind.startswith("heuristic_")

    @property
    def label(self) -> str:
        return LABELS[self.kind]

    @property
    def params(self) -> str:
        if self.kind == "probfair":
            return f"ell={self.ell:g};u={self.u:g};eps={self.eps:g}"
        if self.kind == "risk_aware_whittle":
            return f"lam={self.lam:g}"
        if self.is_heuristic:
            return f"nu={self.nu}"
        return ""

    def check_feasible(self, n: int, k: int) -> None:
        if self.is_heuristic:
            need = math.ceil(n / k)
            if self.nu < need:
                raise ValidationError(
                    f"{self.kind}: nu={self.nu} < ceil(N/k)={need}, the constraint cannot be met")
        if self.kind == "probfair":
            FairnessParams(self.ell, self.u).validate(n, k)


@dataclass
class Observation:
    """What a policy sees at decision time ``t`` (arrays of length N)."""

    t: int
    belief: np.ndarray
    last_state: np.ndarray
    steps_since: np.ndarray
    via_pull: np.ndarray


@dataclass
class PolicyContext:
    """Per-cohort cache shared by all simulations of one experiment."""

    cohort: Cohort
    horizon: int
    budget: int
    index_beta: float = 0.95
    index_tol: float = 1e-6
    _indices: dict = field(default_factory=dict)
    _plans: dict = field(default_factory=dict)

    def indices(self, reward: RewardSpec) -> CohortIndices:
        if reward not in self._indices:
            self._indices[reward] = cohort_indices(self.cohort, self.horizon, reward,
                                                   self.index_beta, self.index_tol)
        return self._indices[reward]

    def stationary(self, ell: float, u: float, eps: float) -> StationaryPolicy:
        key = (ell, u, eps)
        if key not in self._plans:
            self._plans[key] = plan(self.cohort, self.budget, eps=eps, ell=ell, u=u)
        return self._plans[key]


class Policy:
    def __init__(self, n: int, k: int):
        self.n, self.k = n, k

    def act(self, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class NoAct(Policy):
    def act(self, obs, rng):
        return np.zeros(self.n, dtype=np.int8)


class RandomPolicy(Policy):
    def act(self, obs, rng):
        out = np.zeros(self.n, dtype=np.int8)
        out[rng.choice(self.n, self.k, replace=False)] = 1
        return out


class RoundRobin(Policy):
    def act(self, obs, rng):
        out = np.zeros(self.n, dtype=np.int8)
        out[(obs.t * self.k + np.arange(self.k)) % self.n] = 1
        return out


class IndexPolicy(Policy):
    def __init__(self, n, k, table: CohortIndices):
        super().__init__(n, k)
        self.table = table

    def current(self, obs: Observation) -> np.ndarray:
        return self.table.lookup(obs.last_state, obs.steps_since, obs.via_pull)

    def act(self, obs, rng):
        return select_top_k(self.current(obs), self.k)


class ProbFairPolicy(Policy):
    def __init__(self, n, k, stationary: StationaryPolicy):
        super().__init__(n, k)
        self.stationary = stationary

    def act(self, obs, rng):
        return rounding.sample(self.stationary.probs, rng)


class IntervalLedger:
    """Arms whose periodicity constraint is met in the current interval."""

    def __init__(self, n: int, nu: int, horizon: int):
        self.n, self.nu, self.horizon = n, nu, horizon
        self.satisfied = np.zeros(n, dtype=bool)
        self.interval = -1
        self.slots: frozenset = frozenset()

    def complete(self, interval: int) -> bool:
        return (interval + 1) * self.nu <= self.horizon

    def enter(self, t: int, slots: frozenset) -> None:
        self.interval = t // self.nu
        self.satisfied[:] = False
        self.slots = slots if self.complete(self.interval) else frozenset()

    def record(self, action: np.ndarray) -> None:
        self.satisfied |= action.astype(bool)

    @property
    def all_satisfied(self) -> bool:
        return bool(self.satisfied.all())


class Heuristic(IndexPolicy):
    """Periodicity-enforcing index policy.

    Each complete length-``nu`` interval has ``ceil(N/k)`` constrained slots
    (at its start, its end, or uniformly placed).  At a constrained slot the
    top-k choice is restricted to arms not yet pulled in the interval; every
    other slot, and every slot once all arms are covered, picks over all arms.
    """

    def __init__(self, n, k, table, variant: str, nu: int, horizon: int):
        super().__init__(n, k, table)
        self.variant = variant
        self.nu = nu
        self.n_slots = math.ceil(n / k)
        if nu < self.n_slots:
            raise ValidationError(f"nu={nu} < ceil(N/k)={self.n_slots}")
        self.ledger = IntervalLedger(n, nu, horizon)

    def _slots(self, rng) -> frozenset:
        c = self.n_slots
        if self.variant == "first":
            return frozenset(range(c))
        if self.variant == "last":
            return frozenset(range(self.nu - c, self.nu))
        return frozenset(int(x) for x in rng.choice(self.nu, c, replace=False))

    def act(self, obs, rng):
        if obs.t // self.nu != self.ledger.interval:
            self.ledger.enter(obs.t, self._slots(rng))
        idx = self.current(obs)
        if (obs.t % self.nu) in self.ledger.slots and not self.ledger.all_satisfied:
            action = select_top_k(idx, self.k, np.flatnonzero(~self.ledger.satisfied))
        else:
            action = select_top_k(idx, self.k)
        self.ledger.record(action)
        return action


def build(kind: PolicyKind, ctx: PolicyContext) -> Policy:
    n, k = ctx.cohort.n, ctx.budget
    kind.check_feasible(n, k)
    if kind.kind == "noact":
        return NoAct(n, k)
    if kind.kind == "random":
        return RandomPolicy(n, k)
    if kind.kind == "round_robin":
        return RoundRobin(n, k)
    if kind.kind == "threshold_whittle":
        return IndexPolicy(n, k, ctx.indices(RewardSpec("identity")))
    if kind.kind == "risk_aware_whittle":
        return IndexPolicy(n, k, ctx.indices(RewardSpec("risk_aware", kind.lam)))
    if kind.kind == "probfair":
        return ProbFairPolicy(n, k, ctx.stationary(kind.ell, kind.u, kind.eps))
    variant = kind.kind.split("_", 1)[1]
    return Heuristic(n, k, ctx.indices(RewardSpec("identity")), variant, kind.nu, ctx.horizon)
