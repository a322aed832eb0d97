"""Whittle indices for collapsing two-state arms.

The finite-horizon value function with passive subsidy ``m`` is evaluated on
the exact set of beliefs a collapsing arm can reach: passive chains starting
from a known state, and chains starting one active step after an observation.
Indices are found by a bracketed root search on ``m`` over the
passive-minus-active value gap, batched across all queried beliefs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .model import BeliefState, TransitionMatrix

CONVERGED = 1e-15
MAX_DOUBLINGS = 60
SEED_WIDTH = 1e-2


class IndexabilityError(RuntimeError):
    """Bracket search for the indifference subsidy did not succeed."""


@dataclass(frozen=True)
class RewardSpec:
    """Belief reward: identity ``r(b) = b`` or risk-aware ``-exp(lam (1 - b))``.

    Risk-aware values are handled in units of ``exp(lam)``, i.e. as
    ``-exp(-lam b)``; ranking across arms is unaffected because every arm
    uses the same unit.
    """

    kind: str = "identity"
    lam: float = 20.0

    def __post_init__(self):
        if self.kind not in ("identity", "risk_aware"):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.kind == "risk_aware" and not self.lam > 0:
            raise ValueError("risk-aware reward needs lam > 0")

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        if self.kind == "identity":
            return b
        return -np.exp(-self.lam * b)

    def raw(self, b):
        b = np.asarray(b, dtype=float)
        if self.kind == "identity":
            return b
        return -np.exp(self.lam * (1.0 - b))

    @property
    def scale(self) -> float:
        return 1.0 if self.kind == "identity" else math.exp(self.lam)

    @property
    def max_abs(self) -> float:
        return 1.0


IDENTITY = RewardSpec("identity")


class _BeliefGraph:
    """Passive chains from a set of root beliefs, plus the two post-pull roots."""

    def __init__(self, m: TransitionMatrix, roots: Sequence[float], max_len: int):
        self.m = m
        starts = [m.p01_active, m.p11_active] + [float(r) for r in roots]
        beliefs, nxt, heads = [], [], []
        for b in starts:
            heads.append(len(beliefs))
            for j in range(max_len):
                idx = len(beliefs)
                beliefs.append(b)
                nb = b * m.p11_passive + (1.0 - b) * m.p01_passive
                if j == max_len - 1 or abs(nb - b) <= CONVERGED:
                    nxt.append(idx)
                    break
                nxt.append(idx + 1)
                b = nb
        self.belief = np.array(beliefs)
        self.nxt = np.array(nxt)
        self.heads = heads
        self.a0, self.a1 = heads[0], heads[1]

    def chain(self, root: int, length: int) -> np.ndarray:
        """Node ids of the first ``length`` positions along a root's chain."""
        out = np.empty(length, dtype=int)
        node = self.heads[root + 2]
        for j in range(length):
            out[j] = node
            node = self.nxt[node]
        return out

    def chain_a(self, state: int, length: int) -> np.ndarray:
        out = np.empty(length, dtype=int)
        node = self.a1 if state else self.a0
        for j in range(length):
            out[j] = node
            node = self.nxt[node]
        return out

    def q_values(self, subsidy, reward: RewardSpec, beta: float, horizon: int):
        """Passive and active action values for each subsidy row, all nodes."""
        subsidy = np.asarray(subsidy, dtype=float).reshape(-1, 1)
        b = self.belief[None, :]
        r = reward(self.belief)[None, :]
        V = np.zeros((subsidy.shape[0], len(self.belief)))
        for _ in range(horizon):
            qp = subsidy + r + beta * V[:, self.nxt]
            qa = r + beta * (b * V[:, self.a1:self.a1 + 1] + (1.0 - b) * V[:, self.a0:self.a0 + 1])
            V = np.maximum(qp, qa)
        return qp, qa


def value_function(subsidy: float, b: float, m: TransitionMatrix, reward: RewardSpec = IDENTITY,
                   beta: float = 0.95, horizon: int = 1) -> tuple[float, int]:
    """Optimal ``horizon``-step value at belief ``b`` and the optimal first action.

    Ties go to the passive action.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    g = _BeliefGraph(m, [b], horizon + 1)
    qp, qa = g.q_values([subsidy], reward, beta, horizon)
    node = g.heads[2]
    vp, va = float(qp[0, node]), float(qa[0, node])
    return (va, 1) if va > vp else (vp, 0)


def _bracket(beta, horizon, reward):
    scale = horizon if beta >= 1.0 else 1.0 / (1.0 - beta)
    return 1.0 + reward.max_abs * scale


@njit(cache=True)
def _stage_gap(belief, nxt, r, a0, a1, beta, horizon, m, node, V, W):
    """Passive-minus-active value at ``node`` under subsidy ``m``."""
    n = belief.shape[0]
    for i in range(n):
        V[i] = 0.0
    for _ in range(horizon - 1):
        v0 = V[a0]
        v1 = V[a1]
        for i in range(n):
            b = belief[i]
            qp = m + r[i] + beta * V[nxt[i]]
            qa = r[i] + beta * (b * v1 + (1.0 - b) * v0)
            W[i] = qp if qp >= qa else qa
        for i in range(n):
            V[i] = W[i]
    b = belief[node]
    return beta * V[nxt[node]] + m - beta * (b * V[a1] + (1.0 - b) * V[a0])


@njit(cache=True)
def _solve_kernel(belief, nxt, r, a0, a1, beta, horizon, nodes, bound, tol, seed_width, max_doublings):
    n = belief.shape[0]
    V = np.empty(n)
    W = np.empty(n)
    out = np.empty(nodes.shape[0])
    ok = True
    prev = 0.0
    for q in range(nodes.shape[0]):
        node = nodes[q]
        # warm start: neighbouring chain positions have nearby indices
        half = seed_width
        lo = max(prev - half, -bound)
        hi = min(prev + half, bound)
        found = False
        for _ in range(max_doublings):
            glo = _stage_gap(belief, nxt, r, a0, a1, beta, horizon, lo, node, V, W)
            if glo >= 0.0:
                hi = lo
                lo = lo - 2.0 * half
                half *= 2.0
                continue
            ghi = _stage_gap(belief, nxt, r, a0, a1, beta, horizon, hi, node, V, W)
            if ghi < 0.0:
                lo = hi
                hi = hi + 2.0 * half
                half *= 2.0
                continue
            found = True
            break
        if not found:
            ok = False
            out[q] = np.nan
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _stage_gap(belief, nxt, r, a0, a1, beta, horizon, mid, node, V, W) >= 0.0:
                hi = mid
            else:
                lo = mid
        out[q] = 0.5 * (lo + hi)
        prev = out[q]
    return out, ok


def _solve_indices(g: _BeliefGraph, nodes: np.ndarray, reward, beta, horizon, tol) -> np.ndarray:
    """Indifference subsidies for the given graph nodes, in query order."""
    uniq, first = np.unique(nodes, return_index=True)
    order = uniq[np.argsort(first)]          # keep chain order for warm starts
    r = np.asarray(reward(g.belief), dtype=float)
    bound = _bracket(beta, horizon, reward) * 2.0 ** MAX_DOUBLINGS
    vals, ok = _solve_kernel(g.belief, g.nxt.astype(np.int64), r, g.a0, g.a1, float(beta), int(horizon),
                             order.astype(np.int64), bound, float(tol), SEED_WIDTH, MAX_DOUBLINGS + 8)
    if not ok:
        raise IndexabilityError(f"subsidy bracket expansion failed after {MAX_DOUBLINGS} doublings")
    lookup = dict(zip(order.tolist(), vals.tolist()))
    return np.array([lookup[x] for x in nodes.tolist()])


def whittle_index(m: TransitionMatrix, b: float, reward: RewardSpec = IDENTITY, beta: float = 0.95,
                  horizon: int = 180, tol: float = 1e-6) -> float:
    """Infimum subsidy making the passive action at least as good as pulling."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = _BeliefGraph(m, [b], horizon + 1)
    return float(_solve_indices(g, np.array([g.heads[2]]), reward, beta, horizon, tol)[0])


@dataclass
class IndexTable:
    """Per-arm indices on belief-chain coordinates.

    ``start[s, j]`` is the index at the belief ``j`` passive steps after the
    known state ``s``; ``pulled[s, j]`` is the index ``j`` steps after observing
    ``s`` on a pull (first step active), with ``pulled[s, 0] = start[s, 0]``.
    Position ``j`` corresponds to ``steps_since_observed = j + 1``.
    """

    start: np.ndarray
    pulled: np.ndarray
    reward: RewardSpec = IDENTITY

    def lookup(self, b: BeliefState) -> float:
        table = self.pulled if b.via_pull else self.start
        return float(table[b.last_observed_state, b.steps_since_observed - 1])


def index_table(m: TransitionMatrix, positions: int, reward: RewardSpec = IDENTITY,
                beta: float = 0.95, horizon: Optional[int] = None, tol: float = 1e-6) -> IndexTable:
    """Indices for chain positions ``0 .. positions - 1`` of every chain."""
    horizon = positions if horizon is None else horizon
    g = _BeliefGraph(m, [0.0, 1.0], positions + horizon + 1)
    start_nodes = np.stack([g.chain(0, positions), g.chain(1, positions)])
    pulled_nodes = start_nodes.copy()
    if positions > 1:
        pulled_nodes[0, 1:] = g.chain_a(0, positions - 1)
        pulled_nodes[1, 1:] = g.chain_a(1, positions - 1)
    flat = np.concatenate([start_nodes.ravel(), pulled_nodes.ravel()])
    idx = _solve_indices(g, flat, reward, beta, horizon, tol)
    half = start_nodes.size
    return IndexTable(idx[:half].reshape(2, positions), idx[half:].reshape(2, positions), reward)


@dataclass
class CohortIndices:
    """Stacked index tables, arrays of shape (N, 2, positions)."""

    start: np.ndarray
    pulled: np.ndarray
    reward: RewardSpec

    def lookup(self, last_state, steps_since, via_pull) -> np.ndarray:
        arms = np.arange(self.start.shape[0])
        pos = np.minimum(np.asarray(steps_since) - 1, self.start.shape[2] - 1)
        return np.where(via_pull, self.pulled[arms, last_state, pos], self.start[arms, last_state, pos])

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm", "chain", "last_state", "steps_since_seen", "index"])
            for i in range(self.start.shape[0]):
                for name, tab in (("start", self.start), ("pulled", self.pulled)):
                    for s in (0, 1):
                        for j in range(tab.shape[2]):
                            w.writerow([i, name, s, j + 1, repr(float(tab[i, s, j]))])


def cohort_indices(cohort, horizon_T: int, reward: RewardSpec = IDENTITY, beta: float = 0.95,
                   tol: float = 1e-6, dp_horizon: Optional[int] = None) -> CohortIndices:
    tabs = [index_table(a.transitions, horizon_T + 1, reward, beta, dp_horizon or horizon_T, tol)
            for a in cohort]
    return CohortIndices(np.stack([t.start for t in tabs]), np.stack([t.pulled for t in tabs]), reward)


def select_top_k(indices, k: int, available=None) -> np.ndarray:
    """Pull the ``k`` highest-index arms among ``available`` (ties: smaller id).

    When fewer than ``k`` arms are available, all of them are pulled and the
    remaining budget goes to the best of the other arms.
    """
    indices = np.asarray(indices, dtype=float)
    n = len(indices)
    ids = np.arange(n)
    order = np.lexsort((ids, -indices))
    out = np.zeros(n, dtype=np.int8)
    if available is None:
        out[order[:k]] = 1
        return out
    avail = np.zeros(n, dtype=bool)
    avail[np.asarray(list(available), dtype=int)] = True
    first = order[avail[order]][:k]
    out[first] = 1
    short = k - len(first)
    if short > 0:
        rest = order[~avail[order]][:short]
        out[rest] = 1
    return out
