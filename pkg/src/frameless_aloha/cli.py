"""Command-line front end: analyze, simulate, optimize, profile.

Every command writes CSV tables plus a JSON summary and a JSON manifest into the
output directory (``--out``, else ``$FRAMELESS_ALOHA_OUT``, else the working
directory).  Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure such as pruning leakage above ``--max-leak``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_PRUNE,
    batched_order,
    interleaved_order,
    intermediate_profile,
    unresolved_pmf,
)
from .core import ConfigError, SystemConfig, format_classes, parse_classes
from .optimizer import OptimizationProblem, multistart_optimize
from .simulator import fresh_seed, run_adaptive, run_trials

log = logging.getLogger("frameless_aloha")

OUT_ENV = "FRAMELESS_ALOHA_OUT"
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class NumericalFailure(RuntimeError):
    pass


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys are optional."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


_CASTS = {
    "users": int, "slots": int, "target": int, "trials": int, "seed": int, "k": int,
    "starts": int, "jobs": int, "max_evals": int, "prune": float, "max_leak": float,
    "adaptive": float, "classes": str, "order": str, "initial": str, "out": str,
}


def apply_config_file(args: argparse.Namespace) -> None:
    """Fill options not given on the command line from ``--config``, then defaults."""
    if getattr(args, "config", None):
        _apply_file(args)
    for key, value in args.defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)


def _apply_file(args: argparse.Namespace) -> None:
    for key, raw in read_config_file(args.config).items():
        if key not in _CASTS or not hasattr(args, key):
            raise ConfigError(key, f"unknown key for '{args.command}'")
        if getattr(args, key) is None:
            try:
                setattr(args, key, _CASTS[key](raw))
            except ValueError:
                raise ConfigError(key, f"cannot parse {raw!r}") from None


def require(args, *fields):
    for name in fields:
        if getattr(args, name, None) is None:
            raise ConfigError(name, "is required")


def build_config(args) -> SystemConfig:
    require(args, "users", "classes")
    config = SystemConfig(args.users, parse_classes(args.classes))
    if args.slots is not None and args.slots != config.total_slots:
        raise ConfigError("slots", f"{args.slots} != sum of class slot counts {config.total_slots}")
    return config


def check_target(args, n):
    if args.target is not None and not 0 <= args.target <= n:
        raise ConfigError("target", f"t={args.target} outside [0, {n}]")


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def fmt(x: float) -> str:
    return repr(float(x))


def config_dict(config: SystemConfig) -> dict:
    return {
        "users": config.n,
        "slots": config.total_slots,
        "classes": format_classes(config.classes),
    }


def write_manifest(out: Path, command: str, configuration: dict, started: float, **extra) -> None:
    manifest = {
        "command": command,
        "configuration": configuration,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 3),
    }
    manifest.update(extra)
    write_json(out / f"{command}_manifest.json", manifest)


def pmf_rows(pmf: np.ndarray):
    cdf = np.cumsum(pmf)
    return [(u, fmt(pmf[u]), fmt(cdf[u])) for u in range(len(pmf))]


def cmd_analyze(args) -> int:
    config = build_config(args)
    check_target(args, config.n)
    started = time.perf_counter()
    profile = unresolved_pmf(config, args.prune)
    out = output_dir(args)
    write_csv(out / "analyze_pmf.csv", ["u", "P_u", "F_{n-u}"], pmf_rows(profile.pmf))
    summary = {
        **config_dict(config),
        "prune": args.prune,
        "leaked_mass": profile.leaked_mass,
        "expected_per": profile.expected_per,
        "throughput": profile.throughput,
        "throughput_defined": profile.throughput_defined,
        "mean_resolved": profile.mean_resolved,
        "pmf": [float(p) for p in profile.pmf],
        "reliability": [float(f) for f in profile.reliability],
    }
    if args.target is not None:
        summary["target"] = args.target
        summary["F_target"] = profile.F(args.target)
    write_json(out / "analyze_summary.json", summary)
    write_manifest(out, "analyze", {**config_dict(config), "target": args.target, "prune": args.prune},
                   started, seed=None, leaked_mass=profile.leaked_mass)
    line = f"P={profile.expected_per:.6g} T={profile.throughput:.6g} leaked={profile.leaked_mass:.3g}"
    if args.target is not None:
        line = f"F_{args.target}={profile.F(args.target):.7f} " + line
    print(line)
    if profile.leaked_mass > args.max_leak:
        raise NumericalFailure(f"leaked mass {profile.leaked_mass:.3g} exceeds --max-leak {args.max_leak:g}")
    return 0


def cmd_simulate(args) -> int:
    require(args, "trials")
    if args.trials < 1:
        raise ConfigError("trials", "must be at least 1")
    seed = args.seed if args.seed is not None else fresh_seed()
    started = time.perf_counter()
    if args.adaptive is not None:
        require(args, "users", "slots")
        if args.users < 1 or args.slots < 0:
            raise ConfigError("users", "need users >= 1 and slots >= 0")
        if args.adaptive <= 0:
            raise ConfigError("adaptive", "beta* must be positive")
        n = args.users
        check_target(args, n)
        result = run_adaptive(n, args.slots, args.adaptive, args.trials, seed, args.jobs)
        configuration = {"users": n, "slots": args.slots, "adaptive_beta_star": args.adaptive}
    else:
        config = build_config(args)
        n = config.n
        check_target(args, n)
        result = run_trials(config, args.trials, seed, args.jobs)
        configuration = config_dict(config)
    out = output_dir(args)
    lo, hi = result.confidence_interval()
    cdf = np.cumsum(result.pmf)
    rows = [
        (u, fmt(result.pmf[u]), fmt(cdf[u]), fmt(result.stderr[u]), fmt(lo[u]), fmt(hi[u]))
        for u in range(n + 1)
    ]
    write_csv(out / "simulate_pmf.csv", ["u", "P_u", "F_{n-u}", "stderr", "ci_low", "ci_high"], rows)
    summary = {
        **configuration,
        "trials": result.trials,
        "seed": seed,
        "counts": [int(c) for c in result.counts],
        "failure_rate": result.failure_rate,
        "reliability": [float(f) for f in result.reliability],
        "ci_level": 0.997,
    }
    if args.target is not None:
        summary["target"] = args.target
        summary["F_target"] = result.F(args.target)
    write_json(out / "simulate_summary.json", summary)
    write_manifest(out, "simulate", {**configuration, "target": args.target, "jobs": args.jobs},
                   started, seed=seed, trials=result.trials)
    print(f"trials={result.trials} seed={seed} failure_rate={result.failure_rate:.3g}")
    return 0


def cmd_optimize(args) -> int:
    require(args, "users", "slots", "k", "target")
    initial = ()
    if args.initial:
        classes = parse_classes(args.initial)
        if len(classes) != args.k:
            raise ConfigError("initial", f"has {len(classes)} classes, --k is {args.k}")
        if sum(c.slot_count for c in classes) != args.slots:
            raise ConfigError("initial", "slot counts must sum to --slots")
        initial = ((tuple(c.slot_count for c in classes), tuple(c.mean_degree for c in classes)),)
    problem = OptimizationProblem(
        n=args.users, m=args.slots, k=args.k, t=args.target, starts=args.starts,
        seed=args.seed, max_evals=args.max_evals, initial=initial,
    )
    started = time.perf_counter()
    result = multistart_optimize(problem, jobs=args.jobs)
    out = output_dir(args)
    payload = {
        "users": problem.n,
        "slots": problem.m,
        "k": problem.k,
        "target": problem.t,
        "seed": problem.seed,
        "best": {
            "classes": format_classes(result.config.classes),
            "slot_counts": result.counts,
            "betas": result.betas,
            "F_target": result.F,
        },
        "evaluations": result.evaluations,
        "starts": [
            {
                "start_classes": format_classes(
                    SystemConfig.from_pairs(problem.n, list(zip(s.start_counts, s.start_betas))).classes
                ),
                "slot_counts": s.counts,
                "betas": s.betas,
                "F_target": s.F,
                "evaluations": s.evaluations,
                "converged": s.converged,
                "trajectory": s.trajectory,
            }
            for s in result.starts
        ],
    }
    write_json(out / "optimize_result.json", payload)
    write_csv(
        out / "optimize_starts.csv",
        ["start", "F_target", "evaluations", "converged", "classes"],
        [
            (i, fmt(s.F), s.evaluations, int(s.converged),
             format_classes(SystemConfig.from_pairs(problem.n, list(zip(s.counts, s.betas))).classes))
            for i, s in enumerate(result.starts)
        ],
    )
    write_manifest(
        out, "optimize",
        {"users": problem.n, "slots": problem.m, "k": problem.k, "target": problem.t,
         "starts": problem.starts, "max_evals": problem.max_evals, "initial": args.initial,
         "jobs": args.jobs},
        started, seed=problem.seed,
    )
    print(f"F_{problem.t}={result.F:.7f} classes={format_classes(result.config.classes)} "
          f"evaluations={result.evaluations}")
    return 0


def parse_order(spec: str, config: SystemConfig) -> list[int]:
    if spec == "batched":
        return batched_order(config)
    if spec == "interleaved":
        return interleaved_order(config)
    try:
        # explicit list of 1-based class labels, one per slot
        return [int(tok) - 1 for tok in spec.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError("order", f"expected batched, interleaved or a class list, got {spec!r}") from None


def cmd_profile(args) -> int:
    config = build_config(args)
    order = parse_order(args.order or "batched", config)
    started = time.perf_counter()
    curve = intermediate_profile(config, order, args.prune)
    out = output_dir(args)
    write_csv(out / "profile.csv", ["slot", "n_r"], [(i, fmt(v)) for i, v in enumerate(curve)])
    write_json(out / "profile_summary.json", {
        **config_dict(config),
        "order": args.order or "batched",
        "final_n_r": float(curve[-1]),
        "n_r": [float(v) for v in curve],
    })
    write_manifest(out, "profile", {**config_dict(config), "order": args.order or "batched", "prune": args.prune},
                   started, seed=None)
    print(f"final n_r={curve[-1]:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frameless-aloha",
        description="Reliability-latency analysis, simulation and optimization of frameless ALOHA.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, classes=True):
        p.add_argument("--config", help="key = value file mirroring the flags")
        p.add_argument("--users", type=int, help="number of contending users n")
        p.add_argument("--slots", type=int, help="total number of slots m")
        if classes:
            p.add_argument("--classes", help="comma-separated SLOTS:BETA pairs, e.g. 88:2.4,12:12.94")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")

    p = sub.add_parser("analyze", help="exact pmf of unresolved users and reliability")
    common(p)
    p.add_argument("--target", type=int, help="report F_t for this t")
    p.add_argument("--prune", type=float, help=f"pruning threshold (default {DEFAULT_PRUNE:g})")
    p.add_argument("--max-leak", type=float, help="fail with exit 3 above this leaked mass (default 1e-6)")
    p.set_defaults(func=cmd_analyze, defaults={"prune": DEFAULT_PRUNE, "max_leak": 1e-6})

    p = sub.add_parser("simulate", help="Monte Carlo contention periods")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--target", type=int)
    p.add_argument("--adaptive", type=float, metavar="BETA_STAR", help="use the adaptive mean-degree rule")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_simulate, defaults={"jobs": 1})

    p = sub.add_parser("optimize", help="multi-start simplex search maximizing F_t")
    common(p, classes=False)
    p.add_argument("--k", type=int, help="number of slot classes")
    p.add_argument("--target", type=int)
    p.add_argument("--starts", type=int, help="random starts (default 8)")
    p.add_argument("--seed", type=int, help="start-point seed (default 0)")
    p.add_argument("--max-evals", type=int, help="evaluation budget per start (default 400)")
    p.add_argument("--initial", help="extra start point as SLOTS:BETA pairs")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_optimize, defaults={"starts": 8, "seed": 0, "max_evals": 400, "jobs": 1})

    p = sub.add_parser("profile", help="mean resolved users after every slot prefix")
    common(p)
    p.add_argument("--order", help="batched (default), interleaved, or comma-separated class labels 1..k")
    p.add_argument("--prune", type=float, help=f"pruning threshold (default {DEFAULT_PRUNE:g})")
    p.set_defaults(func=cmd_profile, defaults={"prune": DEFAULT_PRUNE})
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_config_file(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"frameless-aloha {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"frameless-aloha {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"frameless-aloha {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
