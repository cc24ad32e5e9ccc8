"""Monte Carlo batches: run several methods over seeded trials and write CSVs.

Output layout of ``run_experiment`` (all inside ``config.out_dir``):

``metrics.csv``
    One row per (trial, method), columns ``METRIC_COLUMNS``.  Only
    deterministic quantities go here, so identical configs give
    byte-identical files whatever the thread budget.
``timings.csv``
    Wall-clock columns ``TIMING_COLUMNS`` keyed by (trial, method, kappa).
``occupancy.csv``
    ``trial, method, kappa, phase, sector, bin_start_minute, count`` with
    phase ``before``/``after``; zero counts are omitted.
``runs/``
    One JSON per run holding the terminal profile (and the trace for
    dynamics runs).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .airspace import ActionProfile, Scenario, compute_loads
from .baselines import centralized, fcfs
from .dynamics import RunConfig, Trace, run
from .ga import GAConfig
from .game import as_kappa
from .scenario import PRESETS, GenerationError, load, preset

log = logging.getLogger(__name__)

THREADS_ENV = "SECTORGAME_THREADS"

METRIC_COLUMNS = [
    "trial", "method", "kappa", "n", "m", "capacity", "initial_overload", "final_overload",
    "reduction_pct", "rounds", "accepted_updates", "evaluations", "steps_to_centralized_level",
]
TIMING_COLUMNS = [
    "trial", "method", "kappa", "total_time", "per_agent_time", "time_to_centralized_level",
]
UNDEFINED = "NA"


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """A batch of trials.

    ``methods`` entries are ``"fcfs"``, ``"centralized"`` or ``"dynamics:<kappa>"``.
    With ``scenario_file`` set every trial reuses that scenario and only the
    solver seeds change; otherwise trial ``k`` generates ``preset`` from a
    seed drawn from ``(base_seed, k)``.
    """

    preset: str = "brest-like"
    scenario_file: str | None = None
    preset_overrides: dict = field(default_factory=dict)
    methods: tuple[str, ...] = ("dynamics:0", "dynamics:1e-6", "dynamics:0.5", "dynamics:1", "centralized", "fcfs")
    trials: int = 10
    base_seed: int = 0
    out_dir: str = "results"
    ga: GAConfig = GAConfig()
    max_rounds: int = 1000
    agent_order: str = "by_id"
    threads: int | None = None
    write_runs: bool = True
    write_occupancy: bool = True

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ExperimentError("trials must be at least 1")
        if not self.methods:
            raise ExperimentError("need at least one method")
        for m in self.methods:
            parse_method(m)

    def thread_budget(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ExperimentError(f"{THREADS_ENV}={env!r} is not an integer") from None
        return 1


def parse_method(spec: str) -> tuple[str, str]:
    """``"dynamics:0.5"`` -> ``("dynamics", "0.5")``; baselines get an empty kappa."""
    name, _, kappa = spec.partition(":")
    if name in ("fcfs", "centralized"):
        if kappa:
            raise ExperimentError(f"method {name!r} takes no kappa")
        return name, ""
    if name != "dynamics" or not kappa:
        raise ExperimentError(f"bad method {spec!r}; use fcfs, centralized or dynamics:<kappa>")
    try:
        as_kappa(_kappa_value(kappa))
    except (ValueError, ZeroDivisionError) as exc:
        raise ExperimentError(f"bad kappa in {spec!r}: {exc}") from None
    return name, kappa


def _kappa_value(text: str):
    return float(text) if any(c in text for c in ".eE") else text


@dataclass
class MetricsRow:
    trial: int
    method: str
    kappa: str
    n: int
    m: int
    capacity: str
    initial_overload: int
    final_overload: int
    rounds: int
    accepted_updates: int
    evaluations: int
    total_time: float
    steps_to_centralized_level: int | None = None
    time_to_centralized_level: float | None = None

    @property
    def reduction_pct(self) -> float | None:
        if self.initial_overload == 0:
            return None
        return 100.0 * (self.initial_overload - self.final_overload) / self.initial_overload

    @property
    def per_agent_time(self) -> float:
        return self.total_time / self.m

    def metric_cells(self) -> list:
        red = self.reduction_pct
        return [
            self.trial, self.method, self.kappa, self.n, self.m, self.capacity,
            self.initial_overload, self.final_overload,
            UNDEFINED if red is None else f"{red:.6f}",
            self.rounds, self.accepted_updates, self.evaluations,
            UNDEFINED if self.steps_to_centralized_level is None else self.steps_to_centralized_level,
        ]

    def timing_cells(self) -> list:
        ttc = self.time_to_centralized_level
        return [
            self.trial, self.method, self.kappa, f"{self.total_time:.6f}", f"{self.per_agent_time:.6f}",
            UNDEFINED if ttc is None else f"{ttc:.6f}",
        ]


@dataclass
class TrialOutput:
    trial: int
    rows: list[MetricsRow]
    occupancy: list[tuple]
    runs: dict[str, dict]


def trial_seeds(base_seed: int, trial: int) -> tuple[int, int]:
    """Scenario seed and solver seed for one trial."""
    a, b = np.random.SeedSequence([base_seed, trial]).generate_state(2)
    return int(a), int(b)


def _capacity_label(scenario: Scenario) -> str:
    caps = set(scenario.capacities)
    return str(caps.pop()) if len(caps) == 1 else "mixed"


def _occupancy_rows(trial: int, method: str, kappa: str, phase: str, scenario: Scenario, profile: ActionProfile):
    occ = compute_loads(scenario, profile).occupancy
    s_idx, t_idx = np.nonzero(occ)
    return [
        (trial, method, kappa, phase, int(s), int(t) * scenario.bin_width, int(occ[s, t]))
        for s, t in zip(s_idx, t_idx)
    ]


def _first_reach(trace: Trace, level: int) -> tuple[int | None, float | None]:
    if trace.initial_total_overload <= level:
        return 0, 0.0
    for step in trace.steps:
        if step.total_overload <= level:
            return step.t + 1, step.elapsed
    return None, None


def _scenario_for(config: ExperimentConfig, trial: int) -> Scenario:
    if config.scenario_file is not None:
        return load(config.scenario_file)
    scen_seed, _ = trial_seeds(config.base_seed, trial)
    return preset(config.preset, seed=scen_seed, **config.preset_overrides)


def run_trial(config: ExperimentConfig, trial: int) -> TrialOutput:
    scenario = _scenario_for(config, trial)
    _, solver_seed = trial_seeds(config.base_seed, trial)
    ga_cfg = replace(config.ga, seed=solver_seed)
    x0 = ActionProfile.zeros(scenario)
    n, m, cap = scenario.n_flights, scenario.n_sectors, _capacity_label(scenario)
    rows: list[MetricsRow] = []
    traces: dict[int, Trace] = {}
    occupancy: list[tuple] = []
    runs: dict[str, dict] = {}
    if config.write_occupancy:
        occupancy += _occupancy_rows(trial, "initial", "", "before", scenario, x0)
    for spec in config.methods:
        name, kappa = parse_method(spec)
        tic = time.perf_counter()
        if name == "dynamics":
            rc = RunConfig(
                kappa=_kappa_value(kappa), ga=ga_cfg, max_rounds=config.max_rounds,
                agent_order=config.agent_order,
            )
            trace = run(scenario, x0, rc)
            elapsed = time.perf_counter() - tic
            profile = trace.terminal_profile
            row = MetricsRow(
                trial, name, kappa, n, m, cap, trace.initial_total_overload, trace.final_total_overload,
                trace.rounds, len(trace.accepted_steps), trace.evaluations, elapsed,
            )
            traces[len(rows)] = trace
            runs[spec] = {"method": name, "kappa": kappa, "profile": list(profile.delay_index), "trace": trace.to_dict()}
        else:
            res = centralized(scenario, x0, ga_cfg) if name == "centralized" else fcfs(scenario, x0)
            profile = res.profile
            row = MetricsRow(
                trial, name, kappa, n, m, cap, res.total_overload_before, res.total_overload_after,
                0, 0, res.evaluations, res.wall_time,
            )
            runs[spec] = {"method": name, "kappa": kappa, "profile": list(profile.delay_index),
                          "residual": [list(r) for r in res.residual]}
        rows.append(row)
        if config.write_occupancy:
            occupancy += _occupancy_rows(trial, name, kappa, "after", scenario, profile)
    central = [r for r in rows if r.method == "centralized"]
    if central:
        level = central[0].final_overload
        for i, trace in traces.items():
            rows[i].steps_to_centralized_level, rows[i].time_to_centralized_level = _first_reach(trace, level)
    return TrialOutput(trial, rows, occupancy, runs)


def _run_trial_args(args: tuple[ExperimentConfig, int]) -> TrialOutput:
    return run_trial(*args)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _prepare_out_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ExperimentError(f"output directory {str(path)!r} is not writable: {exc}") from None


@dataclass
class ExperimentResult:
    rows: list[MetricsRow]
    out_dir: Path

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.csv"

    @property
    def timings_path(self) -> Path:
        return self.out_dir / "timings.csv"


def _check_preset(name: str, overrides: dict) -> None:
    if name in ("tiny", "tiny-window"):
        if overrides:
            raise ExperimentError("tiny presets take no overrides")
        return
    if name not in PRESETS:
        raise ExperimentError(f"invalid preset {name!r}; choose from {sorted(PRESETS) + ['tiny', 'tiny-window']}")
    try:
        replace(PRESETS[name], **overrides)
    except (GenerationError, TypeError) as exc:
        raise ExperimentError(f"invalid preset overrides {overrides}: {exc}") from None


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every trial and write the CSV/JSON outputs.

    Trials are spread over ``config.thread_budget()`` worker processes; each
    trial seeds itself from ``(base_seed, trial)`` so the budget never changes
    any number in ``metrics.csv``.
    """
    out = Path(config.out_dir)
    if config.scenario_file is None:
        _check_preset(config.preset, config.preset_overrides)
    elif not Path(config.scenario_file).is_file():
        raise ExperimentError(f"scenario file {config.scenario_file!r} not found")
    _prepare_out_dir(out)
    jobs = [(config, k) for k in range(config.trials)]
    workers = min(config.thread_budget(), config.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_trial_args, jobs))
    else:
        outputs = [_run_trial_args(j) for j in jobs]
    outputs.sort(key=lambda o: o.trial)
    rows = [r for o in outputs for r in o.rows]
    (out / "metrics.csv").write_text(_csv_text(METRIC_COLUMNS, (r.metric_cells() for r in rows)))
    (out / "timings.csv").write_text(_csv_text(TIMING_COLUMNS, (r.timing_cells() for r in rows)))
    if config.write_occupancy:
        occ_header = ["trial", "method", "kappa", "phase", "sector", "bin_start_minute", "count"]
        (out / "occupancy.csv").write_text(_csv_text(occ_header, (row for o in outputs for row in o.occupancy)))
    if config.write_runs:
        runs_dir = out / "runs"
        runs_dir.mkdir(exist_ok=True)
        for o in outputs:
            for spec, payload in o.runs.items():
                fname = f"trial{o.trial:03d}_{spec.replace(':', '-')}.json"
                (runs_dir / fname).write_text(json.dumps(payload))
    return ExperimentResult(rows, out)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def normalize_times(
    rows: Sequence[dict],
    reference: str = "centralized",
    group_by: Sequence[str] = (),
    time_columns: Sequence[str] = ("total_time", "per_agent_time", "time_to_centralized_level"),
) -> list[dict]:
    """Divide each time cell by the median ``reference`` time of its group.

    ``rows`` are dicts as read from ``timings.csv`` (optionally merged with
    metrics columns used in ``group_by``).  The whole batch is one group
    unless ``group_by`` names columns to split on.
    """
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r["method"] == reference:
            groups.setdefault(tuple(r[c] for c in group_by), []).append(float(r["total_time"]))
    medians = {k: statistics.median(v) for k, v in groups.items()}
    out = []
    for r in rows:
        key = tuple(r[c] for c in group_by)
        if key not in medians:
            label = ", ".join(f"{c}={v}" for c, v in zip(group_by, key)) or "whole batch"
            raise ExperimentError(f"no {reference!r} rows in group ({label})")
        med = medians[key]
        new = dict(r)
        for c in time_columns:
            v = r.get(c)
            if v in (None, "", UNDEFINED):
                continue
            new[c] = float(v) / med if med > 0 else math.inf
        out.append(new)
    return out
