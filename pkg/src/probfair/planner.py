"""Stationary fair policy construction.

Arms are split by the curvature of their occupancy function f_i.  Concave arms
share a budget ``z`` through a concave program (P1); strictly convex arms share
``k - z`` through a combinatorial program whose optimum has at most one arm
strictly between the bounds (P2).  ``plan`` grid-searches ``z``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import steady_state as ss
from .model import Cohort, TransitionMatrix, ValidationError

SUM_TOL = 1e-6


class InfeasibleError(ValidationError):
    """A budget split or fairness configuration admits no feasible policy."""


@dataclass(frozen=True)
class BudgetSplit:
    z: float
    value: float


@dataclass
class StationaryPolicy:
    probs: np.ndarray
    ell: float
    u: float
    k: int
    split: Optional[BudgetSplit] = field(default=None, compare=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)

    @property
    def n(self) -> int:
        return len(self.probs)

    def check(self, box_tol: float = 1e-12) -> None:
        if abs(self.probs.sum() - self.k) > SUM_TOL:
            raise ValidationError(f"policy sums to {self.probs.sum()!r}, expected k={self.k}")
        if np.any(self.probs < self.ell - box_tol) or np.any(self.probs > self.u + box_tol):
            raise ValidationError("policy has probabilities outside [ell, u]")

    def objective(self, cohort: Cohort) -> float:
        return float(sum(ss.f(a.transitions, p) for a, p in zip(cohort, self.probs)))

    def to_dict(self) -> dict:
        return {"ell": self.ell, "u": self.u, "k": self.k, "probs": [float(p) for p in self.probs]}

    @classmethod
    def from_dict(cls, d: dict) -> "StationaryPolicy":
        if set(d) != {"ell", "u", "k", "probs"}:
            raise ValidationError(f"policy file must have keys ell, u, k, probs; got {sorted(d)}")
        return cls(np.array(d["probs"], dtype=float), float(d["ell"]), float(d["u"]), int(d["k"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "StationaryPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def uniform_policy(n: int, k: int) -> StationaryPolicy:
    return StationaryPolicy(np.full(n, k / n), k / n, k / n, k)


def partition(cohort: Cohort) -> tuple[list[int], list[int]]:
    """Ids of concave arms (X) and strictly convex arms (Y)."""
    xs, ys = [], []
    for arm in cohort:
        (xs if ss.is_concave(arm.transitions) else ys).append(arm.id)
    return xs, ys


# ---------------------------------------------------------------------------
# P1: concave arms

def _as_matrices(arms) -> list[TransitionMatrix]:
    return [a.transitions if hasattr(a, "transitions") else a for a in arms]


def _box_sum_fill(lo_p, hi_p, z):
    """Blend two box points so the row sums hit ``z`` exactly.

    ``lo_p`` and ``hi_p`` are evaluations at the two ends of a converged
    bisection bracket, with sums bracketing ``z``.
    """
    s_lo = lo_p.sum(axis=-1)
    s_hi = hi_p.sum(axis=-1)
    gap = s_hi - s_lo
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(gap > 0, (z - s_lo) / np.where(gap > 0, gap, 1.0), 0.0)
    theta = np.clip(theta, 0.0, 1.0)
    return lo_p + theta[..., None] * (hi_p - lo_p)


def _p1_alloc(lam, c, ell, u):
    """Box-clipped inverse of f_i' at level ``lam`` (broadcast over rows)."""
    c1, c2, c3, c4 = c
    D = c2 * c3 - c1 * c4
    curved = c4 > ss.C4_ZERO
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(np.where(lam > 0, D / np.where(lam > 0, lam, 1.0), np.inf))
        inv = np.where(curved, (root - c3) / np.where(curved, c4, 1.0), 0.0)
    inv = np.where(curved & (lam <= 0), np.inf, inv)
    slope = D / c3 ** 2
    flat = np.where(lam < slope, np.inf, -np.inf)
    return np.clip(np.where(curved, inv, flat), ell, u)


def _p1_kkt_batch(c, zs, ell, u, iters: int = 110):
    """Solve P1 for every budget in ``zs`` by bisection on the shared slope."""
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    c1, c2, c3, c4 = (np.asarray(x, dtype=float)[None, :] for x in c)
    n = c1.shape[1]
    if n == 0:
        return np.zeros((len(zs), 0))
    lam_lo = np.full((len(zs), 1), -1.0)
    top = float(np.max(ss.f_prime_vec(c1, c2, c3, c4, np.minimum(ell, 1.0)))) + 1.0
    lam_hi = np.full((len(zs), 1), max(top, 1.0))
    cc = (c1, c2, c3, c4)
    for _ in range(iters):
        mid = 0.5 * (lam_lo + lam_hi)
        s = _p1_alloc(mid, cc, ell, u).sum(axis=1, keepdims=True)
        above = s > zs[:, None]          # too much mass: raise the slope level
        lam_lo = np.where(above, mid, lam_lo)
        lam_hi = np.where(above, lam_hi, mid)
    return _box_sum_fill(_p1_alloc(lam_hi, cc, ell, u), _p1_alloc(lam_lo, cc, ell, u), zs)


def project_box_sum(y, z, ell, u, iters: int = 200):
    """Euclidean projection of ``y`` onto {sum p = z, ell <= p <= u}."""
    y = np.asarray(y, dtype=float)
    lo, hi = float(y.min() - u) - 1.0, float(y.max() - ell) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.clip(y - mid, ell, u).sum() > z:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(lo)):
            break
    return _box_sum_fill(np.clip(y - hi, ell, u), np.clip(y - lo, ell, u), np.float64(z))


def _p1_pga(c, z, ell, u, tol=1e-9, max_iter=100_000):
    c1, c2, c3, c4 = (np.asarray(x, dtype=float) for x in c)
    n = len(c1)
    D = c2 * c3 - c1 * c4
    curv = np.abs(2.0 * c4 * D) / np.minimum(c3, c3 + c4) ** 3
    lip = max(float(curv.max()), 1e-3)

    def obj(p):
        return float(ss.f_vec(c1, c2, c3, c4, p).sum())

    p = project_box_sum(np.clip(np.full(n, z / n), ell, u), z, ell, u)
    val = obj(p)
    for _ in range(max_iter):
        q = project_box_sum(p + ss.f_prime_vec(c1, c2, c3, c4, p) / lip, z, ell, u)
        new = obj(q)
        if new - val < tol:
            if new > val:
                p, val = q, new
            break
        p, val = q, new
    return p


def _check_p1(n, z, ell, u):
    if not (ell * n - 1e-9 <= z <= u * n + 1e-9):
        raise InfeasibleError(f"P1 infeasible: need ell*|X| <= z <= u*|X| ({ell * n} <= {z} <= {u * n})")


def solve_p1(arms: Sequence, z: float, ell: float, u: float, tol: float = 1e-9,
             method: str = "kkt") -> np.ndarray:
    """Maximize sum f_i(p_i) over concave arms with sum p_i = z, p in [ell, u].

    ``method="kkt"`` equalizes marginal gains by bisection on the common
    derivative level; ``method="pga"`` runs projected gradient ascent with an
    exact box-and-sum projection.
    """
    mats = _as_matrices(arms)
    n = len(mats)
    _check_p1(n, z, ell, u)
    if n == 0:
        return np.zeros(0)
    c = ss.constant_arrays(mats)
    if method == "kkt":
        return _p1_kkt_batch(c, [z], ell, u)[0]
    if method == "pga":
        return _p1_pga(c, z, ell, u, tol=tol)
    raise ValueError(f"unknown P1 method {method!r}")


# ---------------------------------------------------------------------------
# P2: strictly convex arms

@dataclass(frozen=True)
class P2Solution:
    probs: np.ndarray
    value: float
    gamma: int
    p_prime: float


def _p2_counts(n, budget, ell, u):
    if abs(u - ell) <= 1e-15:
        return n, ell
    gamma = math.floor((n * u - budget) / (u - ell))
    gamma = min(max(gamma, 0), n)
    if gamma >= n:
        return n, ell
    p_prime = budget - gamma * ell - (n - 1 - gamma) * u
    # p' lies in (ell, u] analytically; drift only
    return gamma, min(max(p_prime, ell), u)


def _solve_p2_core(c, ids, budget, ell, u, method="exact") -> P2Solution:
    c1, c2, c3, c4 = c
    n = len(c1)
    if n == 0:
        if abs(budget) > 1e-9:
            raise InfeasibleError(f"P2 infeasible: no convex arms but budget {budget}")
        return P2Solution(np.zeros(0), 0.0, 0, ell)
    if not (n * ell - 1e-9 <= budget <= n * u + 1e-9):
        raise InfeasibleError(
            f"P2 infeasible: need ell*|Y| <= k-z <= u*|Y| ({n * ell} <= {budget} <= {n * u})")
    gamma, p_prime = _p2_counts(n, budget, ell, u)
    f_ell = ss.f_vec(c1, c2, c3, c4, ell)
    if gamma >= n:
        return P2Solution(np.full(n, ell), float(f_ell.sum()), n, ell)
    m3 = n - gamma - 1
    gain_u = ss.f_vec(c1, c2, c3, c4, u) - f_ell
    gain_p = ss.f_vec(c1, c2, c3, c4, p_prime) - f_ell
    ids = np.asarray(ids)
    asc = np.lexsort((ids, gain_u))  # ascending by (gain, id)

    if method == "greedy":
        top3 = asc[n - m3:]
        rest = asc[:n - m3]
        j = rest[np.lexsort((ids[rest], gain_p[rest]))[-1]]
    elif method == "exact":
        # the Y2 arm may be drawn from the top group; account for the swap
        desc = asc[::-1]
        rank = np.empty(n, dtype=int)
        rank[desc] = np.arange(n)
        t_m = gain_u[desc[:m3]].sum()
        t_m1 = t_m + gain_u[desc[m3]]
        vals = np.where(rank < m3, t_m1 - gain_u + gain_p, t_m + gain_p)
        best = vals.max()
        cand = np.flatnonzero(vals >= best)
        j = cand[np.argmin(ids[cand])]
        if rank[j] < m3:
            top3 = np.array([i for i in desc[:m3 + 1] if i != j], dtype=int)
        else:
            top3 = desc[:m3]
    else:
        raise ValueError(f"unknown P2 method {method!r}")

    probs = np.full(n, ell)
    probs[top3] = u
    probs[j] = p_prime
    value = float(ss.f_vec(c1, c2, c3, c4, probs).sum())
    return P2Solution(probs, value, gamma, p_prime)


def solve_p2(arms: Sequence, k: float, z: float, ell: float, u: float,
             method: str = "exact") -> np.ndarray:
    """Assign strictly convex arms to ell / p' / u with sum equal to k - z.

    ``gamma`` arms sit at ``ell``, one arm at ``p'`` and the rest at ``u``.
    ``method="greedy"`` fills the ``u`` group first by largest f(u) - f(ell)
    and then picks the ``p'`` arm among the remainder; ``method="exact"``
    also considers moving one of the ``u`` arms to ``p'``.
    """
    mats = _as_matrices(arms)
    c = ss.constant_arrays(mats)
    return _solve_p2_core(c, np.arange(len(mats)), k - z, ell, u, method).probs


# ---------------------------------------------------------------------------

def feasible_split_interval(n_x: int, n_y: int, k: float, ell: float, u: float) -> tuple[float, float]:
    return max(ell * n_x, k - u * n_y), min(u * n_x, k - ell * n_y)


def split_grid(zlo: float, zhi: float, eps: float) -> np.ndarray:
    j0 = math.ceil(zlo / eps - 1e-9)
    j1 = math.floor(zhi / eps + 1e-9)
    pts = [eps * j for j in range(j0, j1 + 1) if zlo - 1e-12 <= eps * j <= zhi + 1e-12]
    grid = np.unique(np.clip(np.array(pts + [zlo, zhi], dtype=float), zlo, zhi))
    # drop near-duplicates of the endpoints introduced by eps*j rounding
    keep = np.concatenate(([True], np.diff(grid) > 1e-12))
    return grid[keep]


def check_feasible(n: int, k: float, ell: float, u: float) -> None:
    if not 0.0 <= ell <= u <= 1.0:
        raise InfeasibleError(f"need 0 <= ell <= u <= 1, got ell={ell}, u={u}")
    if ell * n > k + 1e-9:
        raise InfeasibleError(f"infeasible: ell*N <= k violated ({ell}*{n} = {ell * n} > {k})")
    if k > u * n + 1e-9:
        raise InfeasibleError(f"infeasible: k <= u*N violated ({k} > {u}*{n} = {u * n})")


def split_values(cohort: Cohort, k: int, ell: float, u: float, zs, p2_method: str = "exact"):
    """Total objective at each budget split in ``zs`` (vectorized P1)."""
    xs, ys = partition(cohort)
    cx = ss.constant_arrays([cohort[i].transitions for i in xs])
    cy = ss.constant_arrays([cohort[i].transitions for i in ys])
    zs = np.asarray(zs, dtype=float)
    p1 = _p1_kkt_batch(cx, zs, ell, u)
    v1 = ss.f_vec(*(x[None, :] for x in cx), p1).sum(axis=1) if xs else np.zeros(len(zs))
    sols = [_solve_p2_core(cy, np.asarray(ys), k - z, ell, u, p2_method) for z in zs]
    v2 = np.array([s.value for s in sols])
    return v1 + v2, p1, sols


def plan(cohort: Cohort, k: int, eps: float = 0.01, ell: float = 0.0, u: float = 1.0,
         p1_method: str = "kkt", p2_method: str = "exact") -> StationaryPolicy:
    """Budget-exact stationary pull probabilities maximizing sum_i f_i(p_i)."""
    n = cohort.n
    if eps <= 0:
        raise InfeasibleError("grid step eps must be positive")
    check_feasible(n, k, ell, u)
    xs, ys = partition(cohort)
    zlo, zhi = feasible_split_interval(len(xs), len(ys), k, ell, u)
    grid = split_grid(zlo, zhi, eps)
    values, p1, sols = split_values(cohort, k, ell, u, grid, p2_method)
    best = int(np.argmax(values))  # first maximum: ties go to the smaller z
    z = float(grid[best])

    probs = np.empty(n)
    if xs:
        if p1_method == "kkt":
            px = p1[best]
        else:
            px = solve_p1([cohort[i] for i in xs], z, ell, u, method=p1_method)
        probs[xs] = px
    if ys:
        probs[ys] = sols[best].probs
    policy = StationaryPolicy(probs, ell, u, k)
    policy.split = BudgetSplit(z, policy.objective(cohort))
    return policy
