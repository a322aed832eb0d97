import numpy as np
import pytest
from hypothesis import given, strategies as st

from probfair import steady_state as ss
from probfair.model import TransitionMatrix, passive_fixed_point
from strategies import valid_matrices


def _stationary_by_linear_solve(m: TransitionMatrix, p: float) -> float:
    # mixed chain P = (1-p) P0 + p P1, solve pi P = pi with sum(pi) = 1
    P = np.zeros((2, 2))
    for a, w in ((0, 1 - p), (1, p)):
        p01, p11 = m.row(a)
        P += w * np.array([[1 - p01, p01], [1 - p11, p11]])
    A = np.vstack([P.T - np.eye(2), np.ones(2)])
    pi = np.linalg.lstsq(A, np.array([0.0, 0.0, 1.0]), rcond=None)[0]
    return float(pi[1])


@given(valid_matrices(), st.floats(0, 1))
def test_f_matches_linear_solve(m, p):
    assert ss.f(m, p) == pytest.approx(_stationary_by_linear_solve(m, p), abs=1e-12)


@given(valid_matrices())
def test_f_at_zero_is_passive_fixed_point(m):
    assert ss.f(m, 0.0) == pytest.approx(passive_fixed_point(m), abs=1e-14)


@given(valid_matrices())
def test_constants_reproduce_f(m):
    c = ss.constants(m)
    for p in (0.0, 0.37, 1.0):
        assert (c.c1 + c.c2 * p) / (c.c3 + c.c4 * p) == pytest.approx(ss.f(m, p), abs=1e-13)


@given(valid_matrices(), st.floats(0.01, 0.99))
def test_derivative_matches_finite_difference(m, p):
    h = 1e-6
    fd = (ss.f(m, p + h) - ss.f(m, p - h)) / (2 * h)
    assert ss.f_prime(m, p) == pytest.approx(fd, rel=1e-5, abs=1e-8)
    fd2 = (ss.f_prime(m, p + h) - ss.f_prime(m, p - h)) / (2 * h)
    assert ss.f_second(m, p) == pytest.approx(fd2, rel=1e-4, abs=1e-6)


@given(valid_matrices())
def test_f_strictly_increasing(m):
    grid = np.linspace(0, 1, 101)
    assert np.all(np.diff(ss.f(m, grid)) > 0)
    assert ss.constants(m).slope_numerator > 0


@given(valid_matrices())
def test_classification_matches_curvature_sign(m):
    second = ss.f_second(m, np.linspace(0, 1, 11))
    if ss.classify(m) is ss.CurvatureClass.STRICTLY_CONVEX:
        assert np.all(second > 0)
    else:
        assert np.all(second <= 1e-12)


def test_linear_arm_is_concave():
    # c4 = p11p - p11a - p01p + p01a = 0
    m = TransitionMatrix(0.2, 0.6, 0.4, 0.8)
    assert abs(ss.constants(m).c4) < ss.C4_ZERO
    assert ss.classify(m) is ss.CurvatureClass.CONCAVE


def test_monte_carlo_occupancy():
    m = TransitionMatrix(0.2, 0.7, 0.5, 0.85)
    rng = np.random.default_rng(7)
    steps = 200_000
    for p in (0.0, 0.5, 1.0):
        pulls = rng.random(steps) < p
        u = rng.random(steps)
        s, hits = 1, 0
        p01 = np.where(pulls, m.p01_active, m.p01_passive)
        p11 = np.where(pulls, m.p11_active, m.p11_passive)
        for t in range(steps):
            s = int(u[t] < (p11[t] if s else p01[t]))
            hits += s
        assert hits / steps == pytest.approx(ss.f(m, p), abs=0.01)


def test_vectorized_forms_agree():
    mats = [TransitionMatrix(0.2, 0.8, 0.4, 0.9), TransitionMatrix(0.1, 0.5, 0.3, 0.7)]
    c = ss.constant_arrays(mats)
    p = np.array([0.3, 0.6])
    assert np.allclose(ss.f_vec(*c, p), [ss.f(m, x) for m, x in zip(mats, p)])
    assert np.allclose(ss.f_prime_vec(*c, p), [ss.f_prime(m, x) for m, x in zip(mats, p)])
