import numpy as np
import pytest

from probfair.cohorts import CohortSpec, generate
from probfair.model import Cohort, SimulationConfig, TransitionMatrix
from probfair.policies import PolicyContext, PolicyKind
from probfair.simulator import expected_reward_exact, run, simulate, transition_uniforms


def _single(m, s0=1):
    return Cohort.from_matrices([m], [s0])


def _power_sum(m, s0, action, T):
    p01, p11 = m.row(action)
    P = np.array([[1 - p01, p01], [1 - p11, p11]])
    q = np.eye(2)[s0]
    total = 0.0
    for _ in range(T):
        q = q @ P
        total += q[1]
    return total


@pytest.mark.parametrize("action", [0, 1])
def test_exact_reward_matches_matrix_power(action):
    m = TransitionMatrix(0.2, 0.8, 0.4, 0.9)
    T = 15
    sched = np.full((1, T), action)
    assert expected_reward_exact(_single(m), sched) == pytest.approx(_power_sum(m, 1, action, T), abs=1e-12)


def test_noact_monte_carlo_matches_exact():
    cohort = generate(CohortSpec(n=3, seed=4))
    T, S = 20, 3000
    exact = expected_reward_exact(cohort, np.zeros((3, T), dtype=int))
    ctx = PolicyContext(cohort, T, 1)
    rewards = np.array([run(cohort, PolicyKind("noact"), SimulationConfig(T, 1, seed=s), ctx).total_reward
                        for s in range(S)])
    se = rewards.std(ddof=1) / np.sqrt(S)
    assert abs(rewards.mean() - exact) <= 4 * se


def test_round_robin_monte_carlo_matches_exact():
    cohort = generate(CohortSpec(n=4, seed=1))
    T, S = 12, 3000
    ctx = PolicyContext(cohort, T, 2)
    cfg = SimulationConfig(T, 2, seed=0)
    sched = run(cohort, PolicyKind("round_robin"), cfg, ctx).actions
    exact = expected_reward_exact(cohort, sched)
    rewards = np.array([run(cohort, PolicyKind("round_robin"), SimulationConfig(T, 2, seed=s), ctx).total_reward
                        for s in range(S)])
    se = rewards.std(ddof=1) / np.sqrt(S)
    assert abs(rewards.mean() - exact) <= 4 * se


def test_random_schedule_monte_carlo():
    rng = np.random.default_rng(2)
    cohort = generate(CohortSpec(n=3, seed=9))
    T = 10
    sched = (rng.random((3, T)) < 0.5).astype(int)
    exact = expected_reward_exact(cohort, sched)
    p01, p11 = cohort.transition_arrays()
    S = 200_000
    s = np.tile(cohort.initial_states(), (S, 1))
    total = np.zeros(S)
    for t in range(T):
        a = sched[:, t]
        pr = np.where(s == 1, p11[np.arange(3), a], p01[np.arange(3), a])
        s = (rng.random((S, 3)) < pr).astype(int)
        total += s.sum(axis=1)
    se = total.std(ddof=1) / np.sqrt(S)
    assert abs(total.mean() - exact) <= 3 * se


def test_geometric_persistence():
    m = TransitionMatrix(0.01, 0.99, 0.02, 0.995)
    cohort = _single(m, 1)
    traj = run(cohort, PolicyKind("noact"), SimulationConfig(200_000, 1, seed=3))
    s = traj.states[0]
    runs, cur = [], 0
    for x in s:
        if x:
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    assert np.mean(runs) == pytest.approx(100, rel=0.1)


def test_determinism():
    cohort = generate(CohortSpec(n=10, seed=0))
    cfg = SimulationConfig(30, 3, seed=8)
    a = run(cohort, PolicyKind("probfair", ell=0.1), cfg)
    b = run(cohort, PolicyKind("probfair", ell=0.1), cfg)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.beliefs, b.beliefs) and a.total_reward == b.total_reward


def test_collapse_and_propagation():
    cohort = generate(CohortSpec(n=6, seed=3))
    T = 25
    traj = run(cohort, PolicyKind("random"), SimulationConfig(T, 2, seed=1))
    p01, p11 = cohort.transition_arrays()
    for t in range(1, T):
        for i in range(6):
            b_prev, b = traj.beliefs[i, t - 1], traj.beliefs[i, t]
            if traj.actions[i, t - 1]:
                s = traj.states[i, t - 1]
                assert b == pytest.approx(p11[i, 1] if s else p01[i, 1])
            else:
                assert b == pytest.approx(b_prev * p11[i, 0] + (1 - b_prev) * p01[i, 0])


def test_budget_and_reward_accounting():
    cohort = generate(CohortSpec(n=8, seed=0))
    traj = run(cohort, PolicyKind("threshold_whittle"), SimulationConfig(20, 3, seed=2))
    assert np.all(traj.actions.sum(axis=0) == 3)
    assert traj.total_reward == traj.states[:, 1:].sum()


def test_discounted_reward():
    cohort = generate(CohortSpec(n=3, seed=0))
    traj = run(cohort, PolicyKind("round_robin"), SimulationConfig(10, 1, discount=0.9, seed=0))
    want = sum(0.9 ** t * traj.states[:, t + 1].sum() for t in range(10))
    assert traj.total_reward == pytest.approx(want)


def test_common_random_numbers():
    u1 = transition_uniforms(5, 4, 10)
    u2 = transition_uniforms(5, 4, 10)
    assert np.array_equal(u1, u2)
    # same seed, policies that act identically produce identical states
    cohort = generate(CohortSpec(n=4, seed=0))
    a = run(cohort, PolicyKind("round_robin"), SimulationConfig(10, 4, seed=5))
    b = run(cohort, PolicyKind("threshold_whittle"), SimulationConfig(10, 4, seed=5))
    assert np.array_equal(a.states, b.states)


def test_pulling_never_lowers_expected_reward():
    rng = np.random.default_rng(0)
    cohort = generate(CohortSpec(n=3, seed=2))
    for _ in range(50):
        sched = (rng.random((3, 8)) < 0.4).astype(int)
        i, t = rng.integers(0, 3), rng.integers(0, 8)
        more = sched.copy()
        more[i, t] = 1
        assert expected_reward_exact(cohort, more) >= expected_reward_exact(cohort, sched) - 1e-12


def test_fully_observed_mode():
    cohort = generate(CohortSpec(n=5, seed=0))
    traj = run(cohort, PolicyKind("threshold_whittle"), SimulationConfig(15, 2, observe_on_pull=False))
    assert np.array_equal(traj.beliefs, traj.states[:, :-1].astype(float))


def test_trajectory_csv(tmp_path):
    cohort = generate(CohortSpec(n=2, seed=0))
    traj = run(cohort, PolicyKind("round_robin"), SimulationConfig(3, 1))
    traj.dump_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,arm,state,action,belief" and len(lines) == 7


def test_policy_budget_violation_is_error():
    from probfair.policies import Policy

    class Greedy(Policy):
        def act(self, obs, rng):
            return np.ones(self.n, dtype=np.int8)

    cohort = generate(CohortSpec(n=3, seed=0))
    with pytest.raises(Exception, match="budget"):
        simulate(cohort, Greedy(3, 1), SimulationConfig(2, 1))
