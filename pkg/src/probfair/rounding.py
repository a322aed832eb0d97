"""Dependent rounding of a fractional pull vector.

Pairs of fractional coordinates are merged with ``simplify``: each call keeps
their sum and their marginals, and fixes at least one of the two to 0 or 1.
Repeated pairing therefore yields a binary vector with exactly ``k`` ones and
``Pr[bit_i = 1] = p_i``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

BRANCH_TOL = 1e-12
INTEGRAL_TOL = 1e-6


def _check_unit(x, name):
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")


@njit(cache=True)
def _simplify(alpha, beta, draw):
    s = alpha + beta
    if alpha == 0.0 and beta == 0.0:
        return 0.0, 0.0
    if alpha == 1.0 and beta == 1.0:
        return 1.0, 1.0
    if abs(s - 1.0) <= BRANCH_TOL:
        if draw < alpha:
            return 1.0, 0.0
        return 0.0, 1.0
    if s < 1.0:
        if draw < alpha / s:
            return s, 0.0
        return 0.0, s
    if draw < (1.0 - beta) / (2.0 - s):
        return 1.0, s - 1.0
    return s - 1.0, 1.0


def simplify_with_uniform(alpha: float, beta: float, draw: float) -> tuple[float, float]:
    """``simplify`` driven by a single U(0,1) draw."""
    return _simplify(float(alpha), float(beta), float(draw))


def simplify(alpha: float, beta: float, rng: np.random.Generator) -> tuple[float, float]:
    _check_unit(alpha, "alpha")
    _check_unit(beta, "beta")
    return simplify_with_uniform(alpha, beta, float(rng.random()))


@njit(cache=True)
def _is_fixed(v):
    return v <= BRANCH_TOL or v >= 1.0 - BRANCH_TOL


@njit(cache=True)
def _round_inplace(p, draws):
    """Level-wise pairing of fractional coordinates until at most one is left."""
    n = p.shape[0]
    queue = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if not _is_fixed(p[i]):
            queue[m] = i
            m += 1
    used = 0
    while m > 1:
        cnt = 0
        for j in range(0, m - 1, 2):
            a = queue[j]
            b = queue[j + 1]
            p[a], p[b] = _simplify(p[a], p[b], draws[used])
            used += 1
            if not _is_fixed(p[a]):
                nxt[cnt] = a
                cnt += 1
            if not _is_fixed(p[b]):
                nxt[cnt] = b
                cnt += 1
        if m % 2 == 1:
            nxt[cnt] = queue[m - 1]
            cnt += 1
        for j in range(cnt):
            queue[j] = nxt[j]
        m = cnt


def sample(probs, rng: np.random.Generator) -> np.ndarray:
    """Draw a binary action vector with exactly ``round(sum(probs))`` ones.

    Accepts a ``StationaryPolicy`` or a plain probability vector.
    """
    p = np.array(getattr(probs, "probs", probs), dtype=float)
    total = p.sum()
    k = int(round(total))
    if abs(total - k) > INTEGRAL_TOL:
        raise ValueError(f"probabilities sum to {total!r}, which is not an integer")
    if np.any(p < -BRANCH_TOL) or np.any(p > 1.0 + BRANCH_TOL):
        raise ValueError("probabilities must lie in [0, 1]")
    np.clip(p, 0.0, 1.0, out=p)

    # each pairing fixes at least one coordinate, so n - 1 draws suffice
    _round_inplace(p, rng.random(len(p)))
    bits = (p >= 0.5).astype(np.int8)
    # float drift can leave the last survivor near 0/1 on the wrong side
    diff = int(bits.sum()) - k
    if diff:
        bits = _repair(bits, p, diff)
    return bits


def _repair(bits, p, diff):
    order = np.argsort(p)
    if diff > 0:
        for i in order:
            if diff == 0:
                break
            if bits[i]:
                bits[i] = 0
                diff -= 1
    else:
        for i in order[::-1]:
            if diff == 0:
                break
            if not bits[i]:
                bits[i] = 1
                diff += 1
    return bits
