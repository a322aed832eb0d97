"""Seeded trajectory simulation with collapsing observations.

Per step: the policy observes beliefs, acts, every arm transitions through
the row of its action, and reward accrues on the post-transition state.
Transition uniforms come from one stream per (seed, arm) and policy
randomness from one stream per (seed, t), so different policies simulated
with the same seed face the same transition noise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Cohort, SimulationConfig, ValidationError
from .policies import Observation, Policy, PolicyContext, PolicyKind, build

_TRANSITION_TAG = 1
_POLICY_TAG = 2


@dataclass
class Trajectory:
    """One simulated run.

    ``states`` has T+1 columns (``states[:, 0]`` is the initial state); the
    reward counts columns 1..T.  ``beliefs[:, t]`` is the belief on which the
    action at ``t`` was chosen.
    """

    states: np.ndarray
    actions: np.ndarray
    beliefs: np.ndarray
    total_reward: float
    seed: int

    @property
    def pulls(self) -> np.ndarray:
        return self.actions.sum(axis=1)

    def dump_csv(self, path) -> None:
        n, T = self.actions.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "arm", "state", "action", "belief"])
            for t in range(T):
                for i in range(n):
                    w.writerow([t, i, int(self.states[i, t]), int(self.actions[i, t]),
                                repr(float(self.beliefs[i, t]))])


def transition_uniforms(seed: int, n: int, horizon: int) -> np.ndarray:
    out = np.empty((n, horizon))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), _TRANSITION_TAG, i]))
        out[i] = rng.random(horizon)
    return out


def policy_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _POLICY_TAG, t]))


def simulate(cohort: Cohort, policy: Policy, config: SimulationConfig, budget_exact: bool = True) -> Trajectory:
    """Run ``policy`` for ``config.horizon`` steps from the cohort's initial states."""
    n, T = cohort.n, config.horizon
    config.validate(n)
    p01, p11 = cohort.transition_arrays()
    arms = np.arange(n)
    uniforms = transition_uniforms(config.seed, n, T)

    state = cohort.initial_states().astype(np.int8)
    last = state.copy()
    steps = np.ones(n, dtype=np.int64)
    via = np.zeros(n, dtype=bool)
    belief = state.astype(float)

    states = np.empty((n, T + 1), dtype=np.int8)
    actions = np.empty((n, T), dtype=np.int8)
    beliefs = np.empty((n, T))
    states[:, 0] = state
    discount = config.discount
    total = 0.0
    weight = 1.0

    for t in range(T):
        if not config.observe_on_pull:
            # fully observed: every arm's state is seen before acting
            last, steps, via, belief = state.copy(), np.ones(n, dtype=np.int64), np.zeros(n, bool), state.astype(float)
        obs = Observation(t, belief.copy(), last.copy(), steps.copy(), via.copy())
        a = np.asarray(policy.act(obs, policy_rng(config.seed, t)), dtype=np.int8)
        if a.shape != (n,):
            raise ValidationError(f"policy returned shape {a.shape}, expected ({n},)")
        if budget_exact and int(a.sum()) != config.budget:
            raise ValidationError(f"policy pulled {int(a.sum())} arms at t={t}, budget is {config.budget}")
        beliefs[:, t] = belief
        actions[:, t] = a

        go_good = np.where(state == 1, p11[arms, a], p01[arms, a])
        new_state = (uniforms[:, t] < go_good).astype(np.int8)

        pulled = a == 1
        passive_next = belief * p11[:, 0] + (1.0 - belief) * p01[:, 0]
        if config.observe_on_pull:
            # a pull reveals the current state; the next belief is one active step from it
            seen_next = np.where(state == 1, p11[:, 1], p01[:, 1])
            belief = np.where(pulled, seen_next, passive_next)
            last = np.where(pulled, state, last)
            steps = np.where(pulled, 2, steps + 1)
            via = np.where(pulled, True, via)
        else:
            active_next = belief * p11[:, 1] + (1.0 - belief) * p01[:, 1]
            belief = np.where(pulled, active_next, passive_next)
            steps = steps + 1

        state = new_state
        states[:, t + 1] = state
        total += weight * float(state.sum())
        weight *= discount

    return Trajectory(states, actions, beliefs, total, config.seed)


def run(cohort: Cohort, kind: PolicyKind, config: SimulationConfig,
        ctx: Optional[PolicyContext] = None) -> Trajectory:
    """Build a fresh policy instance for ``kind`` and simulate it."""
    ctx = ctx or PolicyContext(cohort, config.horizon, config.budget)
    policy = build(kind, ctx)
    return simulate(cohort, policy, config, budget_exact=kind.kind != "noact")


def expected_reward_exact(cohort: Cohort, schedule, discount: float = 1.0) -> float:
    """Expected total state-1 occupancy (t = 1..T) under an open-loop schedule.

    Exact distribution propagation, O(N T).
    """
    sched = np.asarray(schedule, dtype=int)
    n = cohort.n
    if sched.ndim != 2 or sched.shape[0] != n:
        raise ValidationError(f"schedule must be N x T with N={n}, got shape {sched.shape}")
    p01, p11 = cohort.transition_arrays()
    arms = np.arange(n)
    q = cohort.initial_states().astype(float)
    total, weight = 0.0, 1.0
    for t in range(sched.shape[1]):
        a = sched[:, t]
        q = q * p11[arms, a] + (1.0 - q) * p01[arms, a]
        total += weight * float(q.sum())
        weight *= discount
    return total
