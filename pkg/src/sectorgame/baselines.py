"""Comparison methods: a centralized GA over the joint schedule and an FCFS heuristic."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import sparse

from .airspace import ActionProfile, Scenario, check_profile, compute_loads, presence_bins, update_loads
from .ga import GAConfig, minimize


@dataclass
class BaselineResult:
    method: Literal["centralized", "fcfs"]
    profile: ActionProfile
    total_overload_before: int
    total_overload_after: int
    wall_time: float
    evaluations: int = 0
    residual: list[tuple[int, int, int]] = field(default_factory=list)


class JointEvaluator:
    """Total overload of whole-population joint schedules."""

    def __init__(self, scenario: Scenario):
        idx = scenario._index
        self.n, self.p = idx.n, idx.p
        self.matrix = idx.matrix.astype(np.int32)
        self.cap = idx.resource_capacity

    def total(self, genes: np.ndarray) -> np.ndarray:
        genes = np.atleast_2d(genes)
        P = genes.shape[0]
        cols = (genes + np.arange(self.n) * self.p).ravel()
        select = sparse.csr_matrix(
            (np.ones(cols.size, dtype=np.int32), cols, np.arange(0, cols.size + 1, self.n)),
            shape=(P, self.n * self.p),
        )
        occ = (select @ self.matrix).toarray()
        return np.maximum(0, occ - self.cap).sum(axis=1).astype(float)


def centralized(
    scenario: Scenario,
    x0: ActionProfile | None = None,
    ga_config: GAConfig = GAConfig(),
    rng: np.random.Generator | None = None,
) -> BaselineResult:
    """One GA run minimising the system-wide overload over every flight's delay."""
    tic = time.perf_counter()
    if x0 is None:
        x0 = ActionProfile.zeros(scenario)
    x = check_profile(scenario, x0)
    before = compute_loads(scenario, x0).total
    if scenario.n_flights == 0:
        return BaselineResult("centralized", x0, before, before, time.perf_counter() - tic)
    ev = JointEvaluator(scenario)
    res = minimize(np.full(scenario.n_flights, scenario.n_actions), ev.total, x, ga_config, rng)
    prof = ActionProfile(tuple(res.best.tolist()))
    after = compute_loads(scenario, prof).total
    return BaselineResult("centralized", prof, before, after, time.perf_counter() - tic, res.evaluations)


def _entry_into(scenario: Scenario, flight: int, delay: int, sector: int, t: int) -> float:
    f = scenario.flights[flight]
    shift = f.base_departure + delay
    entries = [
        seg.entry + shift
        for seg in f.segments
        if seg.sector == sector and t in presence_bins(seg.entry + shift, seg.exit + shift, scenario.bin_width, scenario.n_bins)
    ]
    return min(entries)


def _resources(matrix: sparse.csr_matrix, row: int) -> np.ndarray:
    return matrix.indices[matrix.indptr[row]:matrix.indptr[row + 1]]


def fcfs(scenario: Scenario, x0: ActionProfile | None = None) -> BaselineResult:
    """Chronological scan that delays the latest entrant of each overloaded (sector, bin).

    A flight gets the smallest larger delay from the action set that takes it
    out of the congested bin.  Flights that cannot leave the bin are skipped;
    if nobody can leave, the residual excess is recorded and the scan moves on.
    Delays only ever grow, and the scan never revisits an earlier bin.
    """
    tic = time.perf_counter()
    if x0 is None:
        x0 = ActionProfile.zeros(scenario)
    x = check_profile(scenario, x0).copy()
    idx = scenario._index
    p, nb = idx.p, idx.n_bins
    by_column = idx.matrix.tocsc()
    loads = compute_loads(scenario, x0)
    before = loads.total
    profile = x0
    residual = []
    caps = scenario.capacities
    for t in range(nb):
        for s in range(scenario.n_sectors):
            r = s * nb + t
            col_rows = by_column.indices[by_column.indptr[r]:by_column.indptr[r + 1]]
            stuck: set[int] = set()
            while loads.occupancy[s, t] > caps[s]:
                present = [int(q // p) for q in col_rows if x[q // p] == q % p]
                ranked = sorted(
                    (f for f in present if f not in stuck),
                    key=lambda f: (_entry_into(scenario, f, scenario.action_set[x[f]], s, t), f),
                    reverse=True,
                )
                moved = False
                for f in ranked:
                    later = [a for a in range(x[f] + 1, p) if r not in _resources(idx.matrix, f * p + a)]
                    if not later:
                        stuck.add(f)
                        continue
                    x[f] = later[0]
                    new_profile = ActionProfile(tuple(x.tolist()))
                    loads = update_loads(scenario, loads, profile, new_profile)
                    profile = new_profile
                    moved = True
                    break
                if not moved:
                    residual.append((s, t, int(loads.occupancy[s, t] - caps[s])))
                    break
    return BaselineResult("fcfs", profile, before, loads.total, time.perf_counter() - tic, residual=residual)
