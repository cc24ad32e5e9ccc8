"""Synthetic scenario generation, presets and scenario file I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema
import numpy as np

from .airspace import ActionProfile, Flight, Scenario, ScenarioError, Segment, compute_loads

DEFAULT_ACTIONS = (0, 5, 10, 15, 20, 25, 30)


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class GenParams:
    """Knobs of the synthetic traffic generator.

    Exactly one of ``capacity`` (uniform D) and ``headroom`` (D as a fraction
    of the zero-delay peak occupancy) must be set.  ``origin_fraction`` is the
    share of sectors that host departures; the remaining sectors only see
    overflights, which is what makes cooperation matter.
    """

    m: int = 28
    n: int = 1247
    horizon: int = 1440
    bin_width: int = 5
    capacity: int | None = 10
    headroom: float | None = None
    route_length: tuple[int, int] = (2, 5)
    transit_time: tuple[int, int] = (8, 25)
    peak_count: int = 3
    peak_width: float = 75.0
    background: float = 0.15
    adjacency: str = "grid"
    origin_fraction: float = 0.5
    action_set: tuple[int, ...] = DEFAULT_ACTIONS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 0:
            raise GenerationError("need m >= 1 and n >= 0")
        if (self.capacity is None) == (self.headroom is None):
            raise GenerationError("set exactly one of capacity and headroom")
        if self.headroom is not None and not 0 < self.headroom <= 1:
            raise GenerationError("headroom must lie in (0, 1]")
        for name in ("route_length", "transit_time"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise GenerationError(f"{name} range {lo, hi} is empty or non-positive")
        if self.adjacency not in ("ring", "grid", "complete"):
            raise GenerationError(f"unknown adjacency {self.adjacency!r}")
        if not 0 < self.origin_fraction <= 1:
            raise GenerationError("origin_fraction must lie in (0, 1]")


def adjacency_lists(m: int, kind: str) -> list[list[int]]:
    if m == 1:
        return [[]]
    if kind == "complete":
        return [[j for j in range(m) if j != i] for i in range(m)]
    if kind == "ring":
        return [sorted({(i - 1) % m, (i + 1) % m}) for i in range(m)]
    cols = math.ceil(math.sqrt(m))
    nbrs = []
    for i in range(m):
        r, c = divmod(i, cols)
        cand = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
        nbrs.append(sorted(rr * cols + cc for rr, cc in cand if 0 <= cc < cols and 0 <= rr * cols + cc < m and rr >= 0))
    return nbrs


def _departure_sampler(params: GenParams, rng: np.random.Generator, latest: np.ndarray) -> np.ndarray:
    n = len(latest)
    centers = (np.arange(params.peak_count) + 0.5) / max(params.peak_count, 1) * params.horizon
    from_peak = rng.random(n) >= params.background
    which = rng.integers(max(params.peak_count, 1), size=n)
    peaked = centers[which] + rng.normal(0.0, params.peak_width, size=n) if params.peak_count else np.zeros(n)
    uniform = rng.random(n) * params.horizon
    t = np.where(from_peak & (params.peak_count > 0), peaked, uniform)
    return np.clip(np.round(t), 0, latest).astype(np.int64)


def generate(params: GenParams) -> Scenario:
    """Random scenario; identical params give an identical scenario."""
    rng = np.random.default_rng(params.seed)
    m = params.m
    max_delay = max(params.action_set)
    lo_len, hi_len = params.route_length
    lo_len, hi_len = min(lo_len, m), min(hi_len, m)
    if lo_len * params.transit_time[0] + max_delay > params.horizon:
        raise GenerationError(
            f"shortest route ({lo_len} x {params.transit_time[0]} min) plus max delay "
            f"{max_delay} exceeds the horizon {params.horizon}"
        )
    nbrs = adjacency_lists(m, params.adjacency)
    n_origins = max(1, round(params.origin_fraction * m))
    origins = np.sort(rng.choice(m, size=n_origins, replace=False))

    routes, durations = [], []
    for _ in range(params.n):
        length = int(rng.integers(lo_len, hi_len + 1))
        route = [int(rng.choice(origins))]
        while len(route) < length:
            options = [s for s in nbrs[route[-1]] if s not in route]
            if not options:
                break
            route.append(int(rng.choice(options)))
        times = rng.integers(params.transit_time[0], params.transit_time[1] + 1, size=len(route))
        while times.sum() + max_delay > params.horizon:
            times = np.maximum(1, times // 2)
        routes.append(route)
        durations.append(times)
    latest = np.array([params.horizon - max_delay - int(d.sum()) for d in durations], dtype=np.int64)
    departures = _departure_sampler(params, rng, latest)

    flights = []
    for k, (route, times, dep) in enumerate(zip(routes, durations, departures)):
        edges = np.concatenate([[0], np.cumsum(times)])
        segs = tuple(Segment(s, int(edges[q]), int(edges[q + 1])) for q, s in enumerate(route))
        flights.append(Flight(k, route[0], int(dep), segs))

    if params.capacity is not None:
        caps = (int(params.capacity),) * m
        return Scenario(caps, tuple(flights), params.horizon, params.bin_width, tuple(params.action_set))

    probe = Scenario((1,) * m, tuple(flights), params.horizon, params.bin_width, tuple(params.action_set))
    peak = int(compute_loads(probe, ActionProfile.zeros(probe)).occupancy.max()) if flights else 0
    if peak == 0:
        raise GenerationError("no traffic: a headroom capacity needs a non-zero occupancy peak")
    D = max(1, math.floor(params.headroom * peak))
    if params.headroom < 1 and D >= peak:
        raise GenerationError(f"occupancy peak {peak} is too low for headroom {params.headroom} to cause overload")
    return replace(probe, capacities=(D,) * m)


PRESETS: dict[str, GenParams] = {
    "brest-like": GenParams(),
    "brest-stress": GenParams(capacity=7),
    "europe-like": GenParams(
        m=12, n=1000, capacity=None, headroom=0.85, route_length=(1, 3),
        transit_time=(30, 90), adjacency="complete", origin_fraction=0.5,
    ),
}


def preset(name: str, seed: int = 0, **overrides) -> Scenario:
    if name.startswith("tiny"):
        return tiny_instance(seed, single_window=name == "tiny-window")
    try:
        params = PRESETS[name]
    except KeyError:
        raise GenerationError(f"unknown preset {name!r}; choose from {sorted(PRESETS) + ['tiny', 'tiny-window']}") from None
    return generate(replace(params, seed=seed, **overrides))


def tiny_instance(
    seed: int,
    single_window: bool = False,
    max_sectors: int = 4,
    max_flights: int = 6,
    max_actions: int = 3,
) -> Scenario:
    """Oracle-scale random instance: m <= 4, n <= 6, p <= 3, at most 3 bins.

    Single-window instances clip presence at the horizon so that a delay can
    push a flight out of the counting window.
    """
    rng = np.random.default_rng([seed, int(single_window)])
    m = int(rng.integers(2, max_sectors + 1))
    n = int(rng.integers(2, max_flights + 1))
    p = int(rng.integers(2, max_actions + 1))
    if single_window:
        horizon, width, step = 12, 12, 4
    else:
        horizon, width, step = 18, 6, 3
    actions = tuple(step * a for a in range(p))
    room = horizon - (0 if single_window else actions[-1])
    flights = []
    for k in range(n):
        owner = int(rng.integers(m))
        route = [owner]
        if rng.random() < 0.6:
            route.append(int(rng.choice([s for s in range(m) if s != owner])))
        lengths = rng.integers(2, 6, size=len(route))
        while lengths.sum() > room:
            lengths = np.maximum(1, lengths - 1)
        base = int(rng.integers(0, room - int(lengths.sum()) + 1))
        edges = np.concatenate([[0], np.cumsum(lengths)])
        segs = tuple(Segment(s, int(edges[q]), int(edges[q + 1])) for q, s in enumerate(route))
        flights.append(Flight(k, owner, base, segs))
    caps = tuple(int(c) for c in rng.integers(1, 3, size=m))
    return Scenario(caps, tuple(flights), horizon, width, actions, clip_to_horizon=single_window)


# ---------------------------------------------------------------- file I/O

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["sectors", "flights", "horizon", "bin_width", "action_set"],
    "properties": {
        "sectors": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "capacity"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "capacity": {"type": "integer", "minimum": 1},
                },
            },
        },
        "flights": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "owner", "base_departure", "segments"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "owner": {"type": "integer", "minimum": 0},
                    "base_departure": {"type": "number", "minimum": 0},
                    "segments": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["sector", "entry", "exit"],
                            "properties": {
                                "sector": {"type": "integer", "minimum": 0},
                                "entry": {"type": "number", "minimum": 0},
                                "exit": {"type": "number", "minimum": 0},
                            },
                        },
                    },
                },
            },
        },
        "horizon": {"type": "integer", "minimum": 1},
        "bin_width": {"type": "integer", "minimum": 1},
        "action_set": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "clip_to_horizon": {"type": "boolean"},
    },
}


class ScenarioFileError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def to_dict(scenario: Scenario) -> dict:
    d = {
        "sectors": [{"id": i, "capacity": c} for i, c in enumerate(scenario.capacities)],
        "flights": [
            {
                "id": f.id,
                "owner": f.owner,
                "base_departure": _num(f.base_departure),
                "segments": [
                    {"sector": s.sector, "entry": _num(s.entry), "exit": _num(s.exit)} for s in f.segments
                ],
            }
            for f in scenario.flights
        ],
        "horizon": scenario.horizon,
        "bin_width": scenario.bin_width,
        "action_set": list(scenario.action_set),
    }
    if scenario.clip_to_horizon:
        d["clip_to_horizon"] = True
    return d


def from_dict(data: dict) -> Scenario:
    err = next(iter(sorted(jsonschema.Draft7Validator(SCENARIO_SCHEMA).iter_errors(data), key=lambda e: list(e.absolute_path))), None)
    if err is not None:
        raise ScenarioFileError(_pointer(err.absolute_path), err.message)
    for k, s in enumerate(data["sectors"]):
        if s["id"] != k:
            raise ScenarioFileError(f"/sectors/{k}/id", "sector ids must be contiguous from 0 in list order")
    caps = tuple(s["capacity"] for s in data["sectors"])
    flights = []
    for k, f in enumerate(data["flights"]):
        segs = tuple(Segment(s["sector"], _num(s["entry"]), _num(s["exit"])) for s in f["segments"])
        flights.append(Flight(f["id"], f["owner"], _num(f["base_departure"]), segs))
    try:
        return Scenario(
            caps, tuple(flights), data["horizon"], data["bin_width"], tuple(data["action_set"]),
            clip_to_horizon=data.get("clip_to_horizon", False),
        )
    except ScenarioError as exc:
        raise ScenarioFileError("", str(exc)) from exc


def dumps(scenario: Scenario) -> str:
    return json.dumps(to_dict(scenario), indent=1)


def save(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps(scenario) + "\n")


def load(path: str | Path) -> Scenario:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        raise ScenarioFileError("", "CSV flight plans need capacities and timing: use load_csv")
    return from_dict(json.loads(path.read_text()))


CSV_COLUMNS = ["flight_id", "owner_sector", "base_departure", "sector", "entry_offset", "exit_offset"]


def load_csv(
    path: str | Path,
    capacities,
    horizon: int,
    bin_width: int,
    action_set=DEFAULT_ACTIONS,
    clip_to_horizon: bool = False,
) -> Scenario:
    """Flight plans with one row per trajectory segment.

    ``capacities`` is either a sequence indexed by sector id or a single
    uniform capacity (the sector count is then taken from the file).
    """
    rows: dict[int, list[dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ScenarioFileError("", f"missing CSV columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                rows.setdefault(int(row["flight_id"]), []).append(
                    {k: _num(float(row[k])) for k in CSV_COLUMNS}
                )
            except ValueError as exc:
                raise ScenarioFileError(f"/line/{line}", str(exc)) from exc
    flights = []
    max_sector = -1
    for fid in sorted(rows):
        segs = sorted(rows[fid], key=lambda r: r["entry_offset"])
        owners = {r["owner_sector"] for r in segs}
        deps = {r["base_departure"] for r in segs}
        if len(owners) != 1 or len(deps) != 1:
            raise ScenarioFileError(f"/flight/{fid}", "owner_sector and base_departure must agree across rows")
        max_sector = max(max_sector, owners.copy().pop(), *(r["sector"] for r in segs))
        flights.append(
            Flight(
                fid,
                int(owners.pop()),
                deps.pop(),
                tuple(Segment(int(r["sector"]), r["entry_offset"], r["exit_offset"]) for r in segs),
            )
        )
    if isinstance(capacities, int):
        capacities = (capacities,) * (max_sector + 1)
    return Scenario(tuple(capacities), tuple(flights), horizon, bin_width, tuple(action_set), clip_to_horizon)
