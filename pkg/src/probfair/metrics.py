"""Reward and fairness metrics over simulated trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z95 = 1.96


class DegenerateBaselineError(ZeroDivisionError):
    """The two normalization anchors coincide."""


def intervention_benefit(r_alg, r_noact, r_tw):
    """Percentage of the NoAct-to-ThresholdWhittle reward gap recovered."""
    denom = r_tw - r_noact
    if denom == 0:
        raise DegenerateBaselineError("intervention benefit undefined: r_tw == r_noact")
    return 100.0 * (np.asarray(r_alg, dtype=float) - r_noact) / denom


def pull_histogram(actions, horizon=None) -> np.ndarray:
    """``F[j]`` = number of arms pulled exactly ``j`` times, j = 0..T."""
    actions = np.asarray(actions)
    T = actions.shape[1] if horizon is None else horizon
    return np.bincount(actions.sum(axis=1).astype(int), minlength=T + 1)[: T + 1]


def emd(f_alg, f_ref) -> float:
    """1-D earth mover's distance between histograms on buckets 0..T."""
    a = np.asarray(f_alg, dtype=float)
    b = np.asarray(f_ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"histogram lengths differ: {a.shape} vs {b.shape}")
    if not np.isclose(a.sum(), b.sum(), rtol=0, atol=1e-9):
        raise ValueError(f"histograms carry different mass: {a.sum()} vs {b.sum()}")
    return float(np.abs(np.cumsum(a - b)).sum())


def transport_emd(f_alg, f_ref) -> float:
    """Cost of the monotone greedy transport plan (north-west corner rule)."""
    supply = [float(x) for x in f_alg]
    demand = [float(x) for x in f_ref]
    i = j = 0
    cost = 0.0
    while i < len(supply) and j < len(demand):
        moved = min(supply[i], demand[j])
        cost += moved * abs(i - j)
        supply[i] -= moved
        demand[j] -= moved
        if supply[i] <= 1e-15:
            i += 1
        if j < len(demand) and demand[j] <= 1e-15:
            j += 1
    return cost


def normalized_emd(e_alg, e_rr, e_tw):
    """EMD as a percentage of ThresholdWhittle's; distances are taken to the
    RoundRobin histogram, so ``e_rr`` must be 0."""
    if e_rr != 0:
        raise ValueError(f"reference EMD must be 0, got {e_rr}")
    if e_tw == 0:
        raise DegenerateBaselineError("normalized EMD undefined: ThresholdWhittle EMD is 0")
    return 100.0 * np.asarray(e_alg, dtype=float) / e_tw


def price_of_fairness(r_tw: float, r_alg: float) -> float:
    if r_tw <= 0:
        raise ValueError("price of fairness needs r_tw > 0")
    return (r_tw - r_alg) / r_tw


def pof_from_ib(ib: float, r_noact: float, r_tw: float) -> float:
    return (1.0 - ib / 100.0) * (r_tw - r_noact) / r_tw


def hhi(actions) -> float:
    """Herfindahl-Hirschman index of per-arm pull shares."""
    pulls = np.asarray(actions).sum(axis=1).astype(np.int64)
    total = int(pulls.sum())
    if total == 0:
        raise ValueError("HHI undefined with zero pulls")
    # integer numerator keeps equal-share cases exact
    return float(int((pulls * pulls).sum())) / float(total * total)


@dataclass(frozen=True)
class Estimate:
    mean: float
    moe: float


def mean_moe(values) -> Estimate:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return Estimate(float(v.mean()), 0.0)
    return Estimate(float(v.mean()), float(Z95 * v.std(ddof=1) / np.sqrt(len(v))))


def ratio_estimate(num, den, scale: float = 100.0) -> Estimate:
    """``scale * mean(num) / mean(den)`` with a delta-method 95% margin.

    ``num`` and ``den`` are paired per-seed samples.
    """
    x = np.asarray(num, dtype=float)
    y = np.asarray(den, dtype=float)
    mx, my = x.mean(), y.mean()
    if my == 0:
        raise DegenerateBaselineError("ratio estimate with zero mean denominator")
    r = mx / my
    if len(x) < 2:
        return Estimate(float(scale * r), 0.0)
    resid = x - r * y
    se = np.sqrt(resid.var(ddof=1) / len(x)) / abs(my)
    return Estimate(float(scale * r), float(scale * Z95 * se))
