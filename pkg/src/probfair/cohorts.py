"""Seeded cohort generators: synthetic structurally valid arms and a two-state
CPAP adherence model with a supportive-intervention effect."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import steady_state as ss
from .model import Arm, Cohort, TransitionMatrix, ValidationError, validate_structural

MAX_DRAWS_PER_ARM = 10 ** 6
ENTRY_RANGE = (0.05, 0.95)

# stream tags for SeedSequence spawning
_UNFAVORABLE, _FAVORABLE, _NATURAL, _CPAP_GENERAL, _CPAP_NONADHERENT, _INITIAL = range(6)


class GenerationError(RuntimeError):
    pass


class ThresholdClass(enum.Enum):
    FORWARD = "forward"
    REVERSE = "reverse"
    NON_INDEXABLE = "non_indexable"


@dataclass(frozen=True)
class PassiveRow:
    p01: float
    p11: float


# Placeholder base matrices; the source model's estimates are not available.
DEFAULT_GENERAL_PASSIVE = PassiveRow(0.30, 0.90)
DEFAULT_NONADHERENT_PASSIVE = PassiveRow(0.10, 0.60)


@dataclass(frozen=True)
class CohortSpec:
    kind: str = "synthetic"            # "synthetic" | "cpap"
    n: int = 100
    seed: int = 0
    unfavorable_fraction: Optional[float] = None   # None: no class targeting (synthetic only)
    noise_scale: float = 1.0
    intervention_effect: float = 1.1
    intervention_mode: str = "odds"    # "odds" | "probability"
    general_passive: PassiveRow = field(default=DEFAULT_GENERAL_PASSIVE)
    nonadherent_passive: PassiveRow = field(default=DEFAULT_NONADHERENT_PASSIVE)

    def validate(self) -> None:
        if self.kind not in ("synthetic", "cpap"):
            raise ValidationError(f"cohort kind must be 'synthetic' or 'cpap', got {self.kind!r}")
        if self.n < 1:
            raise ValidationError("cohort size n must be >= 1")
        if self.unfavorable_fraction is not None and not 0.0 <= self.unfavorable_fraction <= 1.0:
            raise ValidationError("unfavorable_fraction must lie in [0, 1]")
        if self.kind == "cpap" and self.unfavorable_fraction is None:
            raise ValidationError("cpap cohorts need unfavorable_fraction")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        if self.intervention_mode not in ("odds", "probability"):
            raise ValidationError("intervention_mode must be 'odds' or 'probability'")


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def random_valid_matrix(rng: np.random.Generator, target: Optional[ss.CurvatureClass] = None,
                        max_draws: int = MAX_DRAWS_PER_ARM) -> TransitionMatrix:
    """Rejection-sample entries from U(0.05, 0.95) until the matrix is valid
    (and of the target curvature class, if given)."""
    lo, hi = ENTRY_RANGE
    for _ in range(max_draws):
        m = TransitionMatrix(*(float(x) for x in rng.uniform(lo, hi, size=4)))
        if not validate_structural(m):
            continue
        if target is None or ss.classify(m) is target:
            return m
    raise GenerationError(f"no valid matrix after {max_draws} draws (target={target})")


def _draw_arms(rng, count, target):
    out = []
    for _ in range(count):
        m = random_valid_matrix(rng, target)
        out.append((m, int(rng.integers(0, 2))))
    return out


def _n_unfavorable(spec: CohortSpec) -> int:
    # round half away from zero, not banker's rounding
    return int(np.floor(spec.n * spec.unfavorable_fraction + 0.5))


def gen_synthetic(spec: CohortSpec) -> Cohort:
    """Synthetic cohort.

    With a target fraction, strictly convex ("unfavorable") arms are taken in
    order from one seeded stream and concave arms from another, so cohorts
    generated with the same seed at different fractions share prefixes of
    both streams.  Unfavorable arms come first in the id order.
    """
    spec.validate()
    if spec.kind != "synthetic":
        raise ValidationError("gen_synthetic needs kind='synthetic'")
    if spec.unfavorable_fraction is None:
        drawn = _draw_arms(_rng(spec.seed, _NATURAL), spec.n, None)
    else:
        n_bad = _n_unfavorable(spec)
        drawn = (_draw_arms(_rng(spec.seed, _UNFAVORABLE), n_bad, ss.CurvatureClass.STRICTLY_CONVEX)
                 + _draw_arms(_rng(spec.seed, _FAVORABLE), spec.n - n_bad, ss.CurvatureClass.CONCAVE))
    return Cohort(tuple(Arm(i, m, s) for i, (m, s) in enumerate(drawn)))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def intervene(p: float, alpha: float, mode: str = "odds") -> float:
    """Active-row probability of moving to state 1 given the passive one."""
    if mode == "odds":
        odds = alpha * p / (1.0 - p)
        return float(odds / (1.0 + odds))
    return float(min(alpha * p, 1.0 - 1e-6))


def _cpap_arm(rng, base: PassiveRow, spec: CohortSpec, nonadherent: bool, max_tries: int = 10_000):
    logits = _logit(np.array([base.p01, base.p11]))
    for _ in range(max_tries):
        noise = rng.logistic(0.0, spec.noise_scale, size=2) if spec.noise_scale > 0 else np.zeros(2)
        if nonadherent:
            noise = np.minimum(noise, 0.0)
        p01, p11 = (float(x) for x in _sigmoid(logits + noise))
        m = TransitionMatrix(p01, p11,
                             intervene(p01, spec.intervention_effect, spec.intervention_mode),
                             intervene(p11, spec.intervention_effect, spec.intervention_mode))
        if validate_structural(m):
            return m
        if spec.noise_scale == 0:
            break
    raise GenerationError(
        f"could not produce a structurally valid CPAP arm from base {base} "
        f"(alpha={spec.intervention_effect}, sigma={spec.noise_scale})")


def gen_cpap(spec: CohortSpec) -> Cohort:
    """CPAP-style cohort.

    Passive rows come from the general-population or non-adherent base matrix
    with logistic noise on the log-odds (non-adherent noise is clipped at zero
    so it can only lower adherence).  Active rows apply the intervention
    effect to each passive entry.  Non-valid draws are resampled.
    """
    spec.validate()
    if spec.kind != "cpap":
        raise ValidationError("gen_cpap needs kind='cpap'")
    n_bad = _n_unfavorable(spec)
    rng_bad = _rng(spec.seed, _CPAP_NONADHERENT)
    rng_good = _rng(spec.seed, _CPAP_GENERAL)
    drawn = []
    for _ in range(n_bad):
        drawn.append((_cpap_arm(rng_bad, spec.nonadherent_passive, spec, True), int(rng_bad.integers(0, 2))))
    for _ in range(spec.n - n_bad):
        drawn.append((_cpap_arm(rng_good, spec.general_passive, spec, False), int(rng_good.integers(0, 2))))
    return Cohort(tuple(Arm(i, m, s) for i, (m, s) in enumerate(drawn)))


def generate(spec: CohortSpec) -> Cohort:
    return gen_synthetic(spec) if spec.kind == "synthetic" else gen_cpap(spec)


def classify_threshold_optimality(m: TransitionMatrix) -> ThresholdClass:
    passive_gap = m.p11_passive - m.p01_passive
    active_gap = m.p11_active - m.p01_active
    if passive_gap + active_gap > 1.0:
        return ThresholdClass.NON_INDEXABLE
    if passive_gap >= active_gap:
        return ThresholdClass.FORWARD
    return ThresholdClass.REVERSE


def threshold_curvature_census(count: int, seed: int = 0) -> dict:
    """Joint counts of threshold class and curvature class over random arms."""
    rng = _rng(seed, 99)
    table: dict = {}
    for _ in range(count):
        m = random_valid_matrix(rng)
        key = (classify_threshold_optimality(m).value, ss.classify(m).value)
        table[key] = table.get(key, 0) + 1
    return table
