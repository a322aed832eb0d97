"""Command-line entry point: ``probfair {run,plan,oracle,gen-cohort,indices}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError as ConfigError

from .cohorts import GenerationError, generate
from .experiment import CohortConfig, run_experiment
from .model import Cohort, ValidationError
from .oracle import ScheduleConstraint, optimal_schedule
from .planner import plan
from .whittle import RewardSpec, cohort_indices


def _cmd_run(args) -> int:
    out, rows = run_experiment(args.config, output=args.output)
    print(f"wrote {out} ({len(rows)} policies)")
    return 0


def _cmd_plan(args) -> int:
    cohort = Cohort.load(args.cohort)
    pol = plan(cohort, args.k, eps=args.eps, ell=args.ell, u=args.u, p2_method=args.p2_method)
    print(pol.dumps())
    return 0


def _cmd_oracle(args) -> int:
    if args.nu is not None and args.psi is not None:
        raise ValidationError("pass at most one of --nu and --psi")
    if args.nu is not None:
        constraint = ScheduleConstraint("periodicity", nu=args.nu)
    elif args.psi is not None:
        constraint = ScheduleConstraint("min_fraction", psi=args.psi)
    else:
        constraint = ScheduleConstraint()
    cohort = Cohort.load(args.cohort)
    sched, value = optimal_schedule(cohort, args.k, args.T, constraint)
    print(json.dumps({"expected_reward": value, "schedule": sched.tolist()}))
    return 0


def _cmd_gen(args) -> int:
    text = Path(args.spec).read_text()
    data = json.loads(text) if args.spec.endswith(".json") else yaml.safe_load(text)
    cfg = CohortConfig.model_validate(data or {})
    if cfg.file is not None:
        raise ValidationError("gen-cohort needs a generator spec, not a cohort file reference")
    generate(cfg.spec()).save(args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_indices(args) -> int:
    cohort = Cohort.load(args.cohort)
    reward = RewardSpec("risk_aware", args.lam) if args.risk_aware else RewardSpec()
    cohort_indices(cohort, args.T, reward, args.beta).dump_csv(args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probfair", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config (YAML or JSON)")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the results CSV path")
    r.set_defaults(func=_cmd_run)

    pl = sub.add_parser("plan", help="print the fair stationary policy for a cohort")
    pl.add_argument("cohort")
    pl.add_argument("--k", type=int, required=True)
    pl.add_argument("--ell", type=float, default=0.0)
    pl.add_argument("--u", type=float, default=1.0)
    pl.add_argument("--eps", type=float, default=0.01)
    pl.add_argument("--p2-method", choices=["exact", "greedy"], default="exact")
    pl.set_defaults(func=_cmd_plan)

    o = sub.add_parser("oracle", help="exact best open-loop schedule for a tiny cohort")
    o.add_argument("cohort")
    o.add_argument("--k", type=int, required=True)
    o.add_argument("--T", type=int, required=True)
    o.add_argument("--nu", type=int)
    o.add_argument("--psi", type=float)
    o.set_defaults(func=_cmd_oracle)

    g = sub.add_parser("gen-cohort", help="generate a cohort from a spec file")
    g.add_argument("spec")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_cmd_gen)

    ix = sub.add_parser("indices", help="dump per-arm index tables as CSV")
    ix.add_argument("cohort")
    ix.add_argument("--T", type=int, required=True)
    ix.add_argument("--beta", type=float, default=0.95)
    ix.add_argument("--risk-aware", action="store_true")
    ix.add_argument("--lam", type=float, default=20.0)
    ix.add_argument("-o", "--output", required=True)
    ix.set_defaults(func=_cmd_indices)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return 2
    except (ValidationError, GenerationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
