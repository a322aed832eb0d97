"""Core domain types for two-state collapsing bandits.

Transition probabilities are stored as the four "into state 1" entries; the
"into state 0" entries are their complements.  Everything here is an immutable
value object.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when a model object cannot be constructed from its inputs."""


@dataclass(frozen=True)
class TransitionMatrix:
    p01_passive: float
    p11_passive: float
    p01_active: float
    p11_active: float

    def row(self, action: int) -> tuple[float, float]:
        """(P[0->1], P[1->1]) under ``action``."""
        if action:
            return self.p01_active, self.p11_active
        return self.p01_passive, self.p11_passive

    def prob_to_good(self, state: int, action: int) -> float:
        p01, p11 = self.row(action)
        return p11 if state else p01

    def as_array(self) -> np.ndarray:
        """Full P[a, s, s'] array of shape (2, 2, 2)."""
        out = np.empty((2, 2, 2))
        for a in (0, 1):
            p01, p11 = self.row(a)
            out[a, 0] = (1.0 - p01, p01)
            out[a, 1] = (1.0 - p11, p11)
        return out

    def entries(self) -> tuple[float, float, float, float]:
        return (self.p01_passive, self.p11_passive, self.p01_active, self.p11_active)


STRUCTURAL_LABELS = {
    "a": "p01_passive < p11_passive",
    "b": "p01_active < p11_active",
    "c": "p01_passive < p01_active",
    "d": "p11_passive < p11_active",
}


@dataclass(frozen=True)
class StructuralReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_structural(m: TransitionMatrix) -> StructuralReport:
    """Check entry bounds and the four structural inequalities.

    Violations are returned as labels: ``"bounds:<field>"`` for an entry
    outside the open interval (0, 1), and ``"a"``..``"d"`` for the ordering
    constraints.  Comparisons are strict with no tolerance.
    """
    bad = []
    for name in ("p01_passive", "p11_passive", "p01_active", "p11_active"):
        v = getattr(m, name)
        if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and 0.0 < v < 1.0):
            bad.append(f"bounds:{name}")
    if not m.p01_passive < m.p11_passive:
        bad.append("a")
    if not m.p01_active < m.p11_active:
        bad.append("b")
    if not m.p01_passive < m.p01_active:
        bad.append("c")
    if not m.p11_passive < m.p11_active:
        bad.append("d")
    return StructuralReport(tuple(bad))


@dataclass(frozen=True)
class Arm:
    id: int
    transitions: TransitionMatrix
    initial_state: int = 1

    def __post_init__(self):
        if self.initial_state not in (0, 1):
            raise ValidationError(f"arm {self.id}: initial_state must be 0 or 1")


@dataclass(frozen=True)
class Cohort:
    arms: tuple[Arm, ...]

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        for i, arm in enumerate(self.arms):
            if arm.id != i:
                raise ValidationError(f"arm ids must be 0..n-1 in order; position {i} has id {arm.id}")

    @property
    def n(self) -> int:
        return len(self.arms)

    def __len__(self) -> int:
        return len(self.arms)

    def __iter__(self):
        return iter(self.arms)

    def __getitem__(self, i):
        return self.arms[i]

    @classmethod
    def from_matrices(cls, matrices: Iterable[TransitionMatrix],
                      initial_states: Optional[Sequence[int]] = None) -> "Cohort":
        matrices = list(matrices)
        if initial_states is None:
            initial_states = [1] * len(matrices)
        return cls(tuple(Arm(i, m, int(s)) for i, (m, s) in enumerate(zip(matrices, initial_states))))

    def subset(self, ids: Sequence[int]) -> "Cohort":
        """A new cohort holding the given arms, renumbered from zero."""
        return Cohort(tuple(replace(self.arms[i], id=j) for j, i in enumerate(ids)))

    def transition_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``p01`` and ``p11`` of shape (n, 2), indexed [arm, action]."""
        p01 = np.array([[a.transitions.p01_passive, a.transitions.p01_active] for a in self.arms]).reshape(-1, 2)
        p11 = np.array([[a.transitions.p11_passive, a.transitions.p11_active] for a in self.arms]).reshape(-1, 2)
        return p01, p11

    def initial_states(self) -> np.ndarray:
        return np.array([a.initial_state for a in self.arms], dtype=np.int8)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {"arms": [
            {"id": a.id,
             "p01_passive": a.transitions.p01_passive,
             "p11_passive": a.transitions.p11_passive,
             "p01_active": a.transitions.p01_active,
             "p11_active": a.transitions.p11_active,
             "initial_state": a.initial_state}
            for a in self.arms]}

    @classmethod
    def from_dict(cls, data: dict) -> "Cohort":
        if set(data) != {"arms"}:
            raise ValidationError(f"cohort file must have exactly the key 'arms', got {sorted(data)}")
        keys = {"id", "p01_passive", "p11_passive", "p01_active", "p11_active", "initial_state"}
        arms = []
        for j, rec in enumerate(data["arms"]):
            if set(rec) != keys:
                raise ValidationError(f"arms[{j}]: expected keys {sorted(keys)}, got {sorted(rec)}")
            m = TransitionMatrix(float(rec["p01_passive"]), float(rec["p11_passive"]),
                                 float(rec["p01_active"]), float(rec["p11_active"]))
            arms.append(Arm(int(rec["id"]), m, int(rec["initial_state"])))
        return cls(tuple(arms))

    def dumps(self) -> str:
        # json emits repr() floats, which round-trip exactly
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "Cohort":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Cohort":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class BeliefState:
    """Belief that an arm is in state 1.

    ``steps_since_observed`` is 1 right after an observation, when the belief
    equals the observed state.  ``via_pull`` records whether that observation
    came from a pull (so the next step used the active row) or was the known
    initial state.
    """

    last_observed_state: int
    steps_since_observed: int = 1
    belief_value: float = field(default=None)  # type: ignore[assignment]
    via_pull: bool = False

    def __post_init__(self):
        if self.last_observed_state not in (0, 1):
            raise ValidationError("last_observed_state must be 0 or 1")
        if self.steps_since_observed < 1:
            raise ValidationError("steps_since_observed must be >= 1")
        if self.belief_value is None:
            object.__setattr__(self, "belief_value", float(self.last_observed_state))

    @classmethod
    def observed(cls, state: int, via_pull: bool = False) -> "BeliefState":
        return cls(int(state), 1, float(state), via_pull)


def propagate(b: float, m: TransitionMatrix, action: int = 0) -> float:
    """One-step belief propagation through the row of ``action``."""
    p01, p11 = m.row(action)
    return b * p11 + (1.0 - b) * p01


def belief_update(b: BeliefState, m: TransitionMatrix, pulled: bool,
                  observed_state: Optional[int] = None) -> BeliefState:
    """Collapse on observation, otherwise propagate passively.

    The pulled flag only matters through ``observed_state``: a pull without an
    observation (non-collapsing semantics) propagates like a passive step.
    """
    if observed_state is not None:
        if observed_state not in (0, 1):
            raise ValidationError(f"observed_state must be 0 or 1, got {observed_state!r}")
        return BeliefState.observed(observed_state, via_pull=bool(pulled))
    return BeliefState(b.last_observed_state, b.steps_since_observed + 1,
                       propagate(b.belief_value, m, 0), b.via_pull)


def advance(b: BeliefState, m: TransitionMatrix, action: int) -> BeliefState:
    """Propagate a belief through one transition under ``action``."""
    return BeliefState(b.last_observed_state, b.steps_since_observed + 1,
                       propagate(b.belief_value, m, action), b.via_pull)


def passive_fixed_point(m: TransitionMatrix) -> float:
    return m.p01_passive / (1.0 - m.p11_passive + m.p01_passive)


@dataclass(frozen=True)
class SimulationConfig:
    horizon: int
    budget: int
    discount: float = 1.0
    seed: int = 0
    observe_on_pull: bool = True

    def validate(self, n: int) -> None:
        if self.horizon < 1:
            raise ValidationError("horizon T must be >= 1")
        if not 1 <= self.budget <= n:
            raise ValidationError(f"budget k must satisfy 1 <= k <= N={n}, got {self.budget}")
        if not 0.0 <= self.discount <= 1.0:
            raise ValidationError("discount must lie in [0, 1]")


@dataclass(frozen=True)
class FairnessParams:
    lower: float = 0.0
    upper: float = 1.0
    interval: Optional[int] = None
    min_fraction: Optional[float] = None

    def validate(self, n: int, k: int) -> None:
        """Check 0 < l <= k/N <= u <= 1 (l = 0 allowed: fairness off)."""
        ratio = k / n
        tol = 1e-12
        if not 0.0 <= self.lower:
            raise ValidationError(f"fairness: need ell >= 0, got ell={self.lower}")
        if not self.lower <= ratio + tol:
            raise ValidationError(f"fairness: need ell <= k/N ({self.lower} > {ratio})")
        if not ratio <= self.upper + tol:
            raise ValidationError(f"fairness: need k/N <= u ({ratio} > {self.upper})")
        if not self.upper <= 1.0:
            raise ValidationError(f"fairness: need u <= 1, got u={self.upper}")
        if self.interval is not None and self.interval < 1:
            raise ValidationError("fairness: interval nu must be a positive integer")
        if self.min_fraction is not None and not 0.0 < self.min_fraction < 1.0:
            raise ValidationError("fairness: min_fraction psi must lie in (0, 1)")
