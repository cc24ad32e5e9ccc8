"""Command line entry point: ``sectorgame {generate,run,verify,bench,export}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import oracle
from .dynamics import Trace
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    normalize_times,
    read_metrics,
    run_experiment,
)
from .ga import GAConfig
from .scenario import PRESETS, GenerationError, ScenarioFileError, dumps, preset, tiny_instance

log = logging.getLogger("sectorgame")

GA_FIELDS = {f.name: f.type for f in fields(GAConfig) if f.name != "seed"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs: list[str]) -> dict:
    """``["capacity=8", "route_length=[2,4]"]`` -> dict; lists become tuples."""
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ExperimentError(f"expected key=value, got {pair!r}")
        v = _parse_value(value)
        out[key] = tuple(v) if isinstance(v, list) else v
    return out


def _ga_config(args) -> GAConfig:
    over = _overrides(args.ga)
    unknown = set(over) - set(GA_FIELDS)
    if unknown:
        raise ExperimentError(f"unknown GA settings {sorted(unknown)}; known: {sorted(GA_FIELDS)}")
    return replace(GAConfig(), **over)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="brest-like", help="scenario preset (%(default)s)")
    p.add_argument("--scenario", help="scenario JSON file; overrides --preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="generator override, repeatable")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--ga", action="append", metavar="KEY=VALUE", help="GA setting override, repeatable")
    p.add_argument("--max-rounds", type=int, default=1000)
    p.add_argument("--agent-order", choices=["by_id", "seeded_shuffle_per_round"], default="by_id")
    p.add_argument("--threads", type=int, help="worker processes (default: $SECTORGAME_THREADS or 1)")
    p.add_argument("--no-runs", action="store_true", help="skip per-run JSON files")
    p.add_argument("--no-occupancy", action="store_true", help="skip the occupancy series")


def _experiment_config(args, methods, out_dir, **extra) -> ExperimentConfig:
    return ExperimentConfig(
        preset=args.preset,
        scenario_file=args.scenario,
        preset_overrides={**_overrides(args.set), **extra},
        methods=tuple(methods),
        trials=args.trials,
        base_seed=args.seed,
        out_dir=str(out_dir),
        ga=_ga_config(args),
        max_rounds=args.max_rounds,
        agent_order=args.agent_order,
        threads=args.threads,
        write_runs=not args.no_runs,
        write_occupancy=not args.no_occupancy,
    )


def _kappa_methods(kappas: str) -> list[str]:
    return [f"dynamics:{k.strip()}" for k in kappas.split(",") if k.strip()]


# ------------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    if args.preset.startswith("tiny"):
        scen = tiny_instance(args.seed, single_window=args.preset == "tiny-window")
    else:
        scen = preset(args.preset, seed=args.seed, **_overrides(args.set))
    text = dumps(scen)
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote {args.output}: {scen.n_sectors} sectors, {scen.n_flights} flights")
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    methods = list(args.methods.split(",")) if args.methods else []
    if args.kappas:
        methods = _kappa_methods(args.kappas) + [m for m in methods if not m.startswith("dynamics")]
    cfg = _experiment_config(args, methods, args.out)
    res = run_experiment(cfg)
    _print_summary(res.rows)
    print(f"metrics: {res.metrics_path}")
    return 0


def _print_summary(rows) -> None:
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.method, r.kappa), []).append(r)
    for (method, kappa), rs in groups.items():
        red = [r.reduction_pct for r in rs if r.reduction_pct is not None]
        label = f"{method}({kappa})" if kappa else method
        mean_red = f"{np.mean(red):6.2f}%" if red else "   n/a"
        zero = sum(r.final_overload == 0 for r in rs)
        print(f"{label:24s} mean reduction {mean_red}  overload-free {zero}/{len(rs)}")


def verify_battery(instances: int, seed: int = 0) -> list[oracle.VerifierReport]:
    """Run every oracle check over a fresh tiny battery."""
    from .dynamics import RunConfig, run

    sw = [(s, tiny_instance(s, True)) for s in range(seed, seed + instances)]
    bn = [(s, tiny_instance(s, False)) for s in range(seed, seed + instances)]
    reports = [oracle.check_exact_potential(sw, k) for k in ("1/4", "1/2", "3/4")]
    reports.append(oracle.check_exact_potential(bn, "1/2", "fixed_resources"))
    reports.append(oracle.check_exact_potential(sw + bn, 1, "unconditional"))
    reports.append(oracle.adjudicate_kappa_zero(sw))
    reports.append(oracle.check_self_prioritization(sw))
    reports.append(oracle.check_invariance(sw + bn))
    reports.append(oracle.check_feasible_minimizer(sw + bn))
    nash = oracle.VerifierReport("convergence_and_nash")
    invariants = oracle.VerifierReport("trace_invariants")
    for s, scen in sw + bn:
        for k in ("0", 1e-6, "1/2", "1"):
            tr = run(scen, None, RunConfig(kappa=k, solver="exhaustive"))
            nash.instances += 1
            nash.deviations += 1
            if tr.termination_reason == "step_limit":
                nash.violations.append({"seed": s, "kappa": str(k), "kind": "round limit"})
            for v in oracle.nash_violations(scen, tr.terminal_profile, k):
                nash.violations.append({"seed": s, "kappa": str(k), **v})
            invariants.merge(oracle.check_trace_invariants(tr, scen))
    reports += [nash, invariants]
    return reports


def cmd_verify(args) -> int:
    tic = time.perf_counter()
    reports = verify_battery(args.instances, args.seed)
    for r in reports:
        print(r.summary())
    print(f"{time.perf_counter() - tic:.1f}s")
    if args.output:
        Path(args.output).write_text(json.dumps([r.to_dict() for r in reports], indent=1))
    return 0 if all(r.passed for r in reports) else 1


def loglog_slope(ns, times) -> float:
    """Least-squares slope of log(time) against log(n)."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(times, float)), 1)[0])


def cmd_bench(args) -> int:
    sizes = [int(n) for n in args.sizes.split(",")]
    methods = _kappa_methods(args.kappas)
    out = Path(args.out)
    rows = []
    for n in sizes:
        cfg = _experiment_config(args, methods, out / f"n{n}", n=n)
        res = run_experiment(cfg)
        for r in res.rows:
            rows.append((n, r.method, r.kappa, r.m, r.total_time, r.per_agent_time, r.evaluations))
            print(f"n={n:6d} {r.method}({r.kappa}) total {r.total_time:8.2f}s per-agent {r.per_agent_time:.4f}s")
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "method", "kappa", "m", "total_time", "per_agent_time", "evaluations"])
        w.writerows(rows)
    if len(sizes) >= 2:
        by_n: dict[int, list[float]] = {}
        for n, *_, total, _, _ in rows:
            by_n.setdefault(n, []).append(total)
        ns = sorted(by_n)
        med = [float(np.median(by_n[n])) for n in ns]
        print(f"log-log slope over last decade: {loglog_slope(ns[-2:], med[-2:]):.3f}")
    return 0


def cmd_export(args) -> int:
    if args.what == "trace":
        payload = json.loads(Path(args.input).read_text())
        trace = Trace.from_dict(payload.get("trace", payload))
        text = trace.to_csv()
    else:
        src = Path(args.input)
        timings = read_metrics(src / "timings.csv" if src.is_dir() else src)
        rows = normalize_times(timings, reference=args.reference)
        cols = list(rows[0]) if rows else []
        buf = [",".join(cols)]
        for r in rows:
            buf.append(",".join(_fmt(r[c]) for c in cols))
        text = "\n".join(buf) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6f}"
    return str(v)


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sectorgame", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scenario as JSON")
    g.add_argument("--preset", default="brest-like", choices=sorted(PRESETS) + ["tiny", "tiny-window"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("-o", "--out", "--output", dest="output")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="Monte Carlo batch over methods")
    _add_experiment_flags(r)
    r.add_argument("--methods", default="centralized,fcfs",
                   help="comma list of fcfs, centralized, dynamics:<kappa> (%(default)s)")
    r.add_argument("--kappas", default="0,1e-6,0.5,1", help="dynamics kappa grid (%(default)s)")
    r.add_argument("-o", "--out", default="results")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the brute-force oracle battery")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("-o", "--output", help="JSON report path")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="runtime sweep over flight counts")
    _add_experiment_flags(b)
    b.set_defaults(preset="europe-like", trials=1)
    b.add_argument("--sizes", default="10,100,1000,5000")
    b.add_argument("--kappas", default="1")
    b.add_argument("-o", "--out", default="bench")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("export", help="convert outputs to plot-ready CSV")
    e.add_argument("what", choices=["trace", "normalized-times"])
    e.add_argument("input", help="run JSON (trace) or results dir / timings.csv")
    e.add_argument("--reference", default="centralized")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_export)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ExperimentError, GenerationError, ScenarioFileError, oracle.OracleRefusal) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
