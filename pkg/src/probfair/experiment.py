"""Config-driven experiment runner.

A config names a cohort, simulation settings, a list of policies and a seed
count.  Every (policy, seed) cell is simulated with common random numbers;
NoAct, ThresholdWhittle and RoundRobin anchors are added when missing, and a
results table plus a pull-histogram table are written as CSV.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import metrics as M
from .cohorts import CohortSpec, PassiveRow, generate
from .model import Cohort, SimulationConfig
from .policies import PolicyContext, PolicyKind
from .simulator import run

WORKERS_ENV = "PROBFAIR_WORKERS"
ANCHORS = (PolicyKind("noact"), PolicyKind("threshold_whittle"), PolicyKind("round_robin"))

RESULT_COLUMNS = ["policy", "params", "min_expected_pulls", "ib_mean", "ib_moe",
                  "emd_norm_mean", "emd_norm_moe", "pof", "hhi", "seeds"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PassiveRowConfig(_Strict):
    p01: float = Field(gt=0, lt=1)
    p11: float = Field(gt=0, lt=1)


class CohortConfig(_Strict):
    kind: Literal["synthetic", "cpap"] = "synthetic"
    n: int = Field(default=100, ge=1)
    seed: int = 0
    unfavorable_fraction: Optional[float] = Field(default=None, ge=0, le=1)
    noise_scale: float = Field(default=1.0, ge=0)
    intervention_effect: float = Field(default=1.1, gt=0)
    intervention_mode: Literal["odds", "probability"] = "odds"
    general_passive: PassiveRowConfig = PassiveRowConfig(p01=0.30, p11=0.90)
    nonadherent_passive: PassiveRowConfig = PassiveRowConfig(p01=0.10, p11=0.60)
    file: Optional[str] = None

    def spec(self) -> CohortSpec:
        return CohortSpec(
            kind=self.kind, n=self.n, seed=self.seed, unfavorable_fraction=self.unfavorable_fraction,
            noise_scale=self.noise_scale, intervention_effect=self.intervention_effect,
            intervention_mode=self.intervention_mode,
            general_passive=PassiveRow(self.general_passive.p01, self.general_passive.p11),
            nonadherent_passive=PassiveRow(self.nonadherent_passive.p01, self.nonadherent_passive.p11))

    def build(self, base_dir: Path) -> Cohort:
        if self.file is not None:
            path = Path(self.file)
            return Cohort.load(path if path.is_absolute() else base_dir / path)
        return generate(self.spec())


class SimulationSection(_Strict):
    horizon: int = Field(ge=1)
    budget: int = Field(ge=1)
    discount: float = Field(default=1.0, ge=0, le=1)
    observe_on_pull: bool = True


class PolicyConfig(_Strict):
    kind: Literal["noact", "random", "round_robin", "threshold_whittle", "risk_aware_whittle",
                  "probfair", "heuristic_first", "heuristic_last", "heuristic_random"]
    lam: float = Field(default=20.0, gt=0)
    ell: float = Field(default=0.0, ge=0, le=1)
    u: float = Field(default=1.0, ge=0, le=1)
    eps: float = Field(default=0.01, gt=0)
    nu: Optional[int] = Field(default=None, ge=1)

    def to_kind(self) -> PolicyKind:
        return PolicyKind(self.kind, self.lam, self.ell, self.u, self.eps, self.nu)


class ReportConfig(_Strict):
    index_beta: float = Field(default=0.95, ge=0, lt=1)
    index_tol: float = Field(default=1e-6, gt=0)
    histograms: bool = True
    trajectories: bool = False


class ExperimentConfig(_Strict):
    cohort: CohortConfig = CohortConfig()
    simulation: SimulationSection
    policies: list[PolicyConfig] = Field(default_factory=list)
    seeds: int = Field(default=10, ge=1)
    seed_offset: int = Field(default=0, ge=0)
    output: str = "results.csv"
    report: ReportConfig = ReportConfig()

    @model_validator(mode="after")
    def _budget_fits(self):
        if self.cohort.file is None and self.simulation.budget > self.cohort.n:
            raise ValueError(f"simulation.budget={self.simulation.budget} exceeds cohort.n={self.cohort.n}")
        return self


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return ExperimentConfig.model_validate(data or {})


def report_fairness_bracket(ell: float, horizon: int, tol: float = 1e-9) -> tuple[float, Optional[int]]:
    """Minimum expected pulls ``ell*T`` and the equivalent interval length, if integral.

    Tolerances are loose enough for rounded inputs (e.g. ell=0.056 at T=180).
    """
    pulls = ell * horizon
    nearest = round(pulls)
    if nearest >= 1 and abs(pulls - nearest) <= max(tol, 0.5 * 10 ** -_decimals(ell) * horizon):
        nu = horizon / nearest
        if abs(nu - round(nu)) <= 1e-9:
            return pulls, int(round(nu))
    return pulls, None


def _decimals(x: float) -> int:
    text = repr(float(x))
    return len(text.split(".")[1]) if "." in text and "e" not in text else 0


def policy_list(cfg: ExperimentConfig) -> list[PolicyKind]:
    kinds = list(ANCHORS)
    for p in cfg.policies:
        k = p.to_kind()
        if k not in kinds:
            kinds.append(k)
    return kinds


# worker-side cache so that index tables are built once per process
_CTX: dict = {}


def _context(cohort: Cohort, sim: SimulationSection, report: ReportConfig) -> PolicyContext:
    key = (cohort.dumps(), sim.horizon, sim.budget, report.index_beta, report.index_tol)
    if key not in _CTX:
        _CTX.clear()
        _CTX[key] = PolicyContext(cohort, sim.horizon, sim.budget, report.index_beta, report.index_tol)
    return _CTX[key]


def _simulate_cell(args):
    cohort, sim, report, kind, seed = args
    ctx = _context(cohort, sim, report)
    cfg = SimulationConfig(sim.horizon, sim.budget, sim.discount, seed, sim.observe_on_pull)
    return run(cohort, kind, cfg, ctx)


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def simulate_grid(cohort: Cohort, cfg: ExperimentConfig, kinds: list[PolicyKind]) -> dict:
    """Trajectories keyed by (policy position, seed)."""
    for k in kinds:
        k.check_feasible(cohort.n, cfg.simulation.budget)
    seeds = range(cfg.seed_offset, cfg.seed_offset + cfg.seeds)
    cells = [(i, s) for i in range(len(kinds)) for s in seeds]
    args = [(cohort, cfg.simulation, cfg.report, kinds[i], s) for i, s in cells]
    workers = _workers()
    if workers == 1:
        out = [_simulate_cell(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_simulate_cell, args, chunksize=max(1, len(args) // (4 * workers))))
    return dict(zip(cells, out))


def _mean_hhi(trajs) -> float:
    totals = {int(t.actions.sum()) for t in trajs}
    if 0 in totals:
        return math.nan
    if len(totals) == 1:
        total = totals.pop()
        num = sum(int((t.pulls.astype(np.int64) ** 2).sum()) for t in trajs)
        return num / (len(trajs) * total * total)
    return math.fsum(M.hhi(t.actions) for t in trajs) / len(trajs)


def _min_expected_pulls(kind: PolicyKind, ctx: PolicyContext, horizon: int):
    if kind.kind == "probfair":
        return float(ctx.stationary(kind.ell, kind.u, kind.eps).probs.min()) * horizon
    if kind.is_heuristic:
        return float(horizon // kind.nu)
    return None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def summarize(cohort: Cohort, cfg: ExperimentConfig, kinds: list[PolicyKind], trajs: dict):
    seeds = list(range(cfg.seed_offset, cfg.seed_offset + cfg.seeds))
    T = cfg.simulation.horizon
    i_noact, i_tw, i_rr = (kinds.index(a) for a in ANCHORS)

    def series(i):
        return [trajs[(i, s)] for s in seeds]

    rewards = {i: np.array([t.total_reward for t in series(i)]) for i in range(len(kinds))}
    hists = {i: [M.pull_histogram(t.actions, T) for t in series(i)] for i in range(len(kinds))}
    rr_hist = dict(zip(seeds, hists[i_rr]))
    emds = {i: np.array([M.emd(h, rr_hist[s]) for h, s in zip(hists[i], seeds)]) for i in range(len(kinds))}

    gap = rewards[i_tw] - rewards[i_noact]
    r_tw = float(rewards[i_tw].mean())
    ctx = _context(cohort, cfg.simulation, cfg.report)
    rows = []
    for i, kind in enumerate(kinds):
        ib = M.ratio_estimate(rewards[i] - rewards[i_noact], gap)
        en = M.ratio_estimate(emds[i], emds[i_tw]) if emds[i_tw].mean() > 0 else M.Estimate(math.nan, math.nan)
        pof = M.price_of_fairness(r_tw, float(rewards[i].mean())) if r_tw > 0 else math.nan
        rows.append({
            "policy": kind.label, "params": kind.params,
            "min_expected_pulls": _min_expected_pulls(kind, ctx, T),
            "ib_mean": ib.mean, "ib_moe": ib.moe, "emd_norm_mean": en.mean, "emd_norm_moe": en.moe,
            "pof": pof, "hhi": _mean_hhi(series(i)), "seeds": len(seeds),
        })
    hist_rows = []
    for i, kind in enumerate(kinds):
        mean_counts = np.sum(hists[i], axis=0) / len(seeds)
        for j, v in enumerate(mean_counts):
            hist_rows.append({"policy": kind.label, "params": kind.params, "pulls": j, "mean_arms": float(v)})
    return rows, hist_rows


def histogram_path(output: Path) -> Path:
    return output.with_name(output.stem + "_histograms.csv")


def write_results(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r["policy"], r["params"], _fmt(r["min_expected_pulls"]), _fmt(r["ib_mean"]),
                        _fmt(r["ib_moe"]), _fmt(r["emd_norm_mean"]), _fmt(r["emd_norm_moe"]),
                        _fmt(r["pof"]), _fmt(r["hhi"]), r["seeds"]])


def write_histograms(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "params", "pulls", "mean_arms"])
        for r in rows:
            w.writerow([r["policy"], r["params"], r["pulls"], _fmt(r["mean_arms"])])


def run_experiment(config: Union[str, Path, ExperimentConfig], output: Optional[Union[str, Path]] = None,
                   base_dir: Optional[Path] = None):
    """Run a full experiment and write its CSVs; returns (results path, rows)."""
    if isinstance(config, (str, Path)):
        base_dir = base_dir or Path(config).resolve().parent
        config = load_config(config)
    base_dir = base_dir or Path.cwd()
    out = Path(output) if output is not None else Path(config.output)
    if not out.is_absolute():
        out = base_dir / out if output is None else out
    cohort = config.cohort.build(base_dir)
    SimulationConfig(config.simulation.horizon, config.simulation.budget,
                     config.simulation.discount).validate(cohort.n)
    kinds = policy_list(config)
    trajs = simulate_grid(cohort, config, kinds)
    rows, hist_rows = summarize(cohort, config, kinds, trajs)
    write_results(rows, out)
    if config.report.histograms:
        write_histograms(hist_rows, histogram_path(out))
    if config.report.trajectories:
        tdir = out.with_name(out.stem + "_trajectories")
        tdir.mkdir(exist_ok=True)
        for (i, s), t in sorted(trajs.items()):
            t.dump_csv(tdir / f"{i:02d}_{kinds[i].kind}_seed{s}.csv")
    return out, rows
