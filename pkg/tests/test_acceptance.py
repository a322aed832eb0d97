"""Acceptance criteria, one test each.  A pass/fail line per criterion is
printed in the terminal summary."""
import csv
import itertools
import time

import numpy as np
import pytest
import yaml

from probfair import metrics as M
from probfair import planner as P
from probfair import steady_state as ss
from probfair.cohorts import CohortSpec, generate, random_valid_matrix
from probfair.experiment import run_experiment
from probfair.model import SimulationConfig
from probfair.oracle import optimal_schedule
from probfair.planner import project_box_sum
from probfair.policies import PolicyContext, PolicyKind
from probfair.rounding import sample
from probfair.simulator import run

N, K, T, SEEDS = 100, 20, 180, 100
ELLS = (0.056, 0.1, 1 / 6)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def full_grid(tmp_path_factory):
    """The N=100, k=20, T=180, 100-seed grid shared by several criteria."""
    d = tmp_path_factory.mktemp("grid")
    cfg = {
        "cohort": {"kind": "synthetic", "n": N, "seed": 0},
        "simulation": {"horizon": T, "budget": K},
        "seeds": SEEDS,
        "output": "grid.csv",
        "policies": [{"kind": "probfair", "ell": 0.0, "u": 1.0}]
        + [{"kind": "probfair", "ell": ell, "u": 1.0} for ell in ELLS]
        + [{"kind": "random"}],
    }
    path = d / "grid.yaml"
    path.write_text(yaml.safe_dump(cfg))
    start = time.perf_counter()
    out, _ = run_experiment(path)
    return _rows(out), time.perf_counter() - start


def _probfair_row(rows, ell):
    want = f"ell={ell:g};u=1;eps=0.01"
    return next(r for r in rows if r["policy"] == "ProbFair" and r["params"] == want)


def test_criterion_01_rounding_exactness(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    p = project_box_sum(rng.random(10), 3.0, 0.0, 1.0)
    draws = 100_000
    counts = np.zeros(10)
    exact = 0
    for _ in range(draws):
        bits = sample(p, rng)
        exact += int(bits.sum() == 3)
        counts += bits
    err = float(np.abs(counts / draws - p).max())
    elapsed = time.perf_counter() - start
    ok = exact == draws and err <= 0.01 and elapsed < 10
    acceptance(1, "dependent rounding exactness", ok,
               f"exact-3 {exact}/{draws}, max marginal error {err:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_steady_state_fidelity(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    mats = [random_valid_matrix(rng) for _ in range(20)]
    ps = (0.0, 0.3, 1.0)
    steps = 100_000
    chains = [(m, p) for m in mats for p in ps]
    p01 = np.array([[m.p01_passive, m.p01_active] for m, _ in chains])
    p11 = np.array([[m.p11_passive, m.p11_active] for m, _ in chains])
    prob = np.array([p for _, p in chains])
    rows = np.arange(len(chains))
    s = np.ones(len(chains), dtype=int)
    hits = np.zeros(len(chains))
    for _ in range(steps):
        a = (rng.random(len(chains)) < prob).astype(int)
        go = np.where(s == 1, p11[rows, a], p01[rows, a])
        s = (rng.random(len(chains)) < go).astype(int)
        hits += s
    want = np.array([ss.f(m, p) for m, p in chains])
    err = float(np.abs(hits / steps - want).max())
    elapsed = time.perf_counter() - start
    ok = err <= 0.01 and elapsed < 30
    acceptance(2, "steady-state fidelity", ok, f"max |freq - f(p)| {err:.4f} over 60 chains, {elapsed:.1f}s")
    assert ok


def test_criterion_03_curvature_classification(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    h = 0.05
    pts = np.linspace(0.1, 0.9, 9)
    agree = 0
    for _ in range(1000):
        m = random_valid_matrix(rng)
        d2 = ss.f(m, pts + h) - 2 * ss.f(m, pts) + ss.f(m, pts - h)
        if ss.classify(m) is ss.CurvatureClass.STRICTLY_CONVEX:
            agree += bool(np.all(d2 > 0))
        else:
            agree += bool(np.all(d2 <= 0))
    elapsed = time.perf_counter() - start
    ok = agree == 1000 and elapsed < 5
    acceptance(3, "curvature classification", ok, f"{agree}/1000 agree, {elapsed:.2f}s")
    assert ok


def _vertex_best(mats, budget, ell, u):
    best = -np.inf
    n = len(mats)
    for labels in itertools.product((0, 1, 2), repeat=n):
        free = [i for i, x in enumerate(labels) if x == 2]
        if len(free) > 1:
            continue
        p = np.array([ell if x == 0 else u for x in labels], dtype=float)
        if free:
            p[free[0]] = budget - (p.sum() - p[free[0]])
            if not ell - 1e-12 <= p[free[0]] <= u + 1e-12:
                continue
        elif abs(p.sum() - budget) > 1e-12:
            continue
        best = max(best, float(sum(ss.f(m, x) for m, x in zip(mats, p))))
    return best


def test_criterion_04_solve_p2_optimality(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, interior_ok = 0.0, True
    for _ in range(200):
        n = int(rng.integers(1, 7))
        mats = [random_valid_matrix(rng, ss.CurvatureClass.STRICTLY_CONVEX) for _ in range(n)]
        ell = float(rng.uniform(0, 0.3))
        u = float(rng.uniform(ell + 0.05, 1.0))
        budget = float(rng.uniform(n * ell, n * u))
        probs = P.solve_p2(mats, budget, 0.0, ell, u)
        got = float(sum(ss.f(m, x) for m, x in zip(mats, probs)))
        worst = max(worst, abs(got - _vertex_best(mats, budget, ell, u)))
        interior_ok &= int(np.sum((probs > ell + 1e-12) & (probs < u - 1e-12))) <= 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and interior_ok and elapsed < 30
    acceptance(4, "P2 optimality vs brute force", ok,
               f"max gap {worst:.2e}, <=1 interior: {interior_ok}, {elapsed:.1f}s")
    assert ok


def _grid_best(mats, z, ell, u, step=1e-3):
    c = ss.constant_arrays(mats)
    fi = [lambda x, i=i: ss.f_vec(c[0][i], c[1][i], c[2][i], c[3][i], x) for i in range(len(mats))]
    if len(mats) == 1:
        return float(fi[0](z))
    g = ell + step * np.arange(int(round((u - ell) / step)) + 1)
    if len(mats) == 2:
        rest = z - g
        ok = (rest >= ell - 1e-12) & (rest <= u + 1e-12)
        return float((fi[0](g) + fi[1](rest))[ok].max())
    best = -np.inf
    for a in g:
        rest = z - a - g
        ok = (rest >= ell - 1e-12) & (rest <= u + 1e-12)
        if ok.any():
            best = max(best, float((fi[0](a) + fi[1](g) + fi[2](rest))[ok].max()))
    return best


def test_criterion_05_solve_p1_optimality(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        mats = [random_valid_matrix(rng, ss.CurvatureClass.CONCAVE) for _ in range(n)]
        ell = round(float(rng.uniform(0, 0.3)), 3)
        u = round(float(rng.uniform(max(ell + 0.1, 0.4), 1.0)), 3)
        z = round(float(rng.uniform(n * ell, n * u)), 3)
        p = P.solve_p1(mats, z, ell, u, method="pga")
        got = float(sum(ss.f(m, x) for m, x in zip(mats, p)))
        worst = max(worst, abs(got - _grid_best(mats, z, ell, u)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 60
    acceptance(5, "P1 projected gradient vs exhaustive grid", ok, f"max gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_06_price_of_state_agnosticism(acceptance, full_grid):
    rows, elapsed = full_grid
    ib = float(_probfair_row(rows, 0.0)["ib_mean"])
    moe = float(_probfair_row(rows, 0.0)["ib_moe"])
    ok = ib >= 90.0 and elapsed < 600
    acceptance(6, "ProbFair(ell=0) intervention benefit >= 90%", ok,
               f"IB {ib:.2f} +/- {moe:.2f}, grid run {elapsed:.0f}s")
    assert ok


def test_criterion_07_oracle_parity(acceptance):
    start = time.perf_counter()
    cohort = generate(CohortSpec(n=2, seed=0))
    horizon = 6
    _, opt = optimal_schedule(cohort, 1, horizon)
    ctx = PolicyContext(cohort, horizon, 1)
    rewards = np.array([run(cohort, PolicyKind("probfair"), SimulationConfig(horizon, 1, seed=s), ctx).total_reward
                        for s in range(500)])
    est = M.mean_moe(rewards)
    elapsed = time.perf_counter() - start
    ok = abs(est.mean - opt) <= est.moe and elapsed < 120
    acceptance(7, "ProbFair within 95% CI of exact open-loop optimum", ok,
               f"ProbFair {est.mean:.4f} +/- {est.moe:.4f}, optimum {opt:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_08_fairness_reward_trend(acceptance, full_grid):
    rows, elapsed = full_grid
    ib = [float(_probfair_row(rows, ell)["ib_mean"]) for ell in ELLS]
    emd = [float(_probfair_row(rows, ell)["emd_norm_mean"]) for ell in ELLS]
    ok = ib[0] > ib[1] > ib[2] and emd[0] > emd[1] > emd[2] and elapsed < 1800
    acceptance(8, "IB and normalized EMD strictly decrease in ell", ok,
               "IB " + ", ".join(f"{x:.2f}" for x in ib) + "; EMD " + ", ".join(f"{x:.2f}" for x in emd))
    assert ok


def test_criterion_09_heuristic_constraints(acceptance):
    start = time.perf_counter()
    cohort = generate(CohortSpec(n=N, seed=0))
    ctx = PolicyContext(cohort, T, K)
    violations, checked = 0, 0
    for variant in ("heuristic_first", "heuristic_last", "heuristic_random"):
        for nu in (18, 10, 6):
            for seed in range(20):
                acts = run(cohort, PolicyKind(variant, nu=nu), SimulationConfig(T, K, seed=seed), ctx).actions
                for lo in range(0, T - nu + 1, nu):
                    checked += 1
                    violations += int(not acts[:, lo:lo + nu].any(axis=1).all())
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 300
    acceptance(9, "heuristics satisfy periodicity", ok,
               f"{violations} violations in {checked} intervals, {elapsed:.0f}s")
    assert ok


def test_criterion_10_metric_anchors(acceptance, full_grid, tmp_path):
    rows, _ = full_grid
    # round-robin counts are uniform only when N divides T*k
    small ={"cohort": {"n": 12, "seed": 3}, "simulation": {"horizon": 20, "budget": 3}, "seeds": 5,
             "output": "small.csv", "policies": [{"kind": "random"}]}
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(small))
    out, _ = run_experiment(path)
    ok = True
    for table, n in ((rows, N), (_rows(out), 12)):
        by = {r["policy"]: r for r in table}
        ok &= float(by["NoAct"]["ib_mean"]) == 0.0
        ok &= float(by["ThresholdWhittle"]["ib_mean"]) == 100.0
        ok &= float(by["RoundRobin"]["emd_norm_mean"]) == 0.0
        ok &= float(by["ThresholdWhittle"]["emd_norm_mean"]) == 100.0
        ok &= float(by["RoundRobin"]["hhi"]) == 1.0 / n
    acceptance(10, "metric anchors in every report", ok, "IB(NoAct)=0, IB(TW)=100, EMD(RR)=0, EMD(TW)=100, HHI(RR)=1/N")
    assert ok


def test_criterion_11_emd_properties(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(13)
    ok = True
    for _ in range(500):
        buckets = int(rng.integers(2, 30))
        mass = int(rng.integers(1, 60))
        hs = [np.bincount(rng.integers(0, buckets, mass), minlength=buckets) for _ in range(3)]
        a, b, c = hs
        ok &= M.emd(a, b) == M.emd(b, a)
        ok &= M.emd(a, a) == 0 and ((M.emd(a, b) == 0) == bool(np.array_equal(a, b)))
        ok &= M.emd(a, c) <= M.emd(a, b) + M.emd(b, c) + 1e-12
        ok &= abs(M.emd(a, b) - M.transport_emd(a, b)) <= 1e-9
    elapsed = time.perf_counter() - start
    ok = bool(ok) and elapsed < 10
    acceptance(11, "EMD metric properties", ok, f"500 triples, {elapsed:.2f}s")
    assert ok


def test_criterion_12_determinism(acceptance, tmp_path):
    cfg = {"cohort": {"n": 15, "seed": 9}, "simulation": {"horizon": 24, "budget": 3}, "seeds": 4,
           "output": "det.csv",
           "policies": [{"kind": "random"}, {"kind": "probfair", "ell": 0.1},
                        {"kind": "risk_aware_whittle", "lam": 20}, {"kind": "heuristic_random", "nu": 6}]}
    path = tmp_path / "det.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out, _ = run_experiment(path)
    first = (out.read_bytes(), (tmp_path / "det_histograms.csv").read_bytes())
    run_experiment(path)
    second = (out.read_bytes(), (tmp_path / "det_histograms.csv").read_bytes())
    ok = first == second
    acceptance(12, "byte-identical results on rerun", ok, "results and histogram CSVs compared")
    assert ok
