"""Airspace world model: scenarios, action profiles and occupancy-based loads.

Time is discretised into half-open bins ``[t*w, (t+1)*w)``.  A flight occupies
bin ``t`` of sector ``s`` when one of its delayed segments in ``s`` intersects
that bin.  The overload of a sector is the sum over bins of the occupancy in
excess of the sector capacity.  With a single bin (``bin_width == horizon``)
this reduces to ``max(0, sum_j C_ji - D_i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse


class ScenarioError(ValueError):
    """Raised when a scenario violates one of its structural invariants."""


class ProfileError(ValueError):
    """Raised when an action profile does not fit its scenario."""


class DeviationError(ValueError):
    """Raised when a deviation is not unilateral (touches several sectors)."""


@dataclass(frozen=True)
class Segment:
    sector: int
    entry: float
    exit: float


@dataclass(frozen=True)
class Flight:
    id: int
    owner: int
    base_departure: float
    segments: tuple[Segment, ...]

    @property
    def duration(self) -> float:
        return max((s.exit for s in self.segments), default=0.0)


@dataclass(frozen=True)
class Scenario:
    """Immutable description of the airspace and traffic.

    ``capacities[i]`` is the capacity of sector ``i``; sector ids are the
    dense range ``0..m-1`` and flight ids are ``0..n-1`` in list order.

    ``clip_to_horizon`` relaxes the rule that every delayed trajectory must fit
    inside the horizon: presence past the horizon is simply not counted.  It is
    needed for single-window instances, where a strict horizon would make every
    delay load-neutral.
    """

    capacities: tuple[int, ...]
    flights: tuple[Flight, ...]
    horizon: int
    bin_width: int
    action_set: tuple[int, ...]
    clip_to_horizon: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        object.__setattr__(self, "flights", tuple(self.flights))
        object.__setattr__(self, "action_set", tuple(self.action_set))
        self._validate()

    def _validate(self) -> None:
        m = len(self.capacities)
        if m < 1:
            raise ScenarioError("scenario needs at least one sector")
        for i, c in enumerate(self.capacities):
            if c < 1:
                raise ScenarioError(f"sector {i}: capacity must be a positive integer, got {c}")
        if self.horizon <= 0 or self.bin_width <= 0:
            raise ScenarioError("horizon and bin_width must be positive")
        if self.horizon % self.bin_width:
            raise ScenarioError(f"bin_width {self.bin_width} does not divide horizon {self.horizon}")
        acts = self.action_set
        if not acts or list(acts) != sorted(set(acts)):
            raise ScenarioError("action_set must be sorted and distinct")
        if acts[0] != 0:
            raise ScenarioError("action_set must contain the no-delay option 0")
        max_delay = acts[-1]
        for k, f in enumerate(self.flights):
            if f.id != k:
                raise ScenarioError(f"flight ids must be contiguous from 0; position {k} has id {f.id}")
            if not 0 <= f.owner < m:
                raise ScenarioError(f"flight {k}: owner {f.owner} is not a sector")
            if f.base_departure < 0:
                raise ScenarioError(f"flight {k}: negative base_departure")
            prev_exit = -math.inf
            for seg in f.segments:
                if not 0 <= seg.sector < m:
                    raise ScenarioError(f"flight {k}: segment sector {seg.sector} is not a sector")
                if seg.entry < 0 or seg.exit <= seg.entry:
                    raise ScenarioError(f"flight {k}: segment must satisfy 0 <= entry < exit")
                if seg.entry < prev_exit:
                    raise ScenarioError(f"flight {k}: segments must be sorted and non-overlapping")
                prev_exit = seg.exit
            if not self.clip_to_horizon and f.base_departure + f.duration + max_delay > self.horizon:
                raise ScenarioError(
                    f"flight {k}: presence leaves the horizon for delay {max_delay}"
                )

    @property
    def n_sectors(self) -> int:
        return len(self.capacities)

    @property
    def n_flights(self) -> int:
        return len(self.flights)

    @property
    def n_actions(self) -> int:
        return len(self.action_set)

    @property
    def n_bins(self) -> int:
        return self.horizon // self.bin_width

    @property
    def single_window(self) -> bool:
        return self.bin_width == self.horizon

    def flights_of(self, sector: int) -> np.ndarray:
        return self._index.flights_of[sector]

    @cached_property
    def _index(self) -> "FootprintIndex":
        return FootprintIndex(self)


def presence_bins(start: float, end: float, bin_width: int, n_bins: int) -> range:
    """Bins intersected by the half-open interval ``[start, end)``, clipped to the horizon."""
    first = max(0, math.floor(start / bin_width))
    last = min(n_bins - 1, math.ceil(end / bin_width) - 1)
    return range(first, last + 1)


class FootprintIndex:
    """Precomputed (flight, delay) -> occupied resources incidence.

    A resource is a (sector, bin) pair with flat id ``sector * n_bins + bin``.
    Row ``f * p + a`` of :attr:`matrix` marks the resources flight ``f`` occupies
    under delay index ``a``.
    """

    def __init__(self, scenario: Scenario) -> None:
        m, n, p, nb = scenario.n_sectors, scenario.n_flights, scenario.n_actions, scenario.n_bins
        self.m, self.n, self.p, self.n_bins = m, n, p, nb
        self.n_resources = m * nb
        rows: list[int] = []
        cols: list[int] = []
        own_rows: list[int] = []
        own_cols: list[int] = []
        for f in scenario.flights:
            for a, delay in enumerate(scenario.action_set):
                r = f.id * p + a
                occupied: set[int] = set()
                shift = f.base_departure + delay
                for seg in f.segments:
                    for t in presence_bins(seg.entry + shift, seg.exit + shift, scenario.bin_width, nb):
                        occupied.add(seg.sector * nb + t)
                for res in sorted(occupied):
                    rows.append(r)
                    cols.append(res)
                    if res // nb == f.owner:
                        own_rows.append(r)
                        own_cols.append(res)
        shape = (n * p, self.n_resources)
        self.matrix = sparse.csr_matrix(
            (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=shape
        )
        self.own_matrix = sparse.csr_matrix(
            (np.ones(len(own_rows), dtype=np.int64), (own_rows, own_cols)), shape=shape
        )
        self.owner = np.array([f.owner for f in scenario.flights], dtype=np.int64)
        self.flights_of = [np.flatnonzero(self.owner == s) for s in range(m)]
        self.resource_sector = np.repeat(np.arange(m), nb)
        self.resource_capacity = np.repeat(np.asarray(scenario.capacities, dtype=np.int64), nb)
        sector_of = sparse.csr_matrix(
            (np.ones(self.n_resources, dtype=np.int64), (np.arange(self.n_resources), self.resource_sector)),
            shape=(self.n_resources, m),
        )
        # bins occupied in each sector, per (flight, delay) row
        self.bins_in_sector = np.asarray((self.matrix @ sector_of).todense(), dtype=np.int64)

    def rows(self, delay_index: np.ndarray, flights: np.ndarray | None = None) -> np.ndarray:
        if flights is None:
            flights = np.arange(self.n)
        return flights * self.p + delay_index[flights]


@dataclass(frozen=True)
class ActionProfile:
    """One delay index (into ``Scenario.action_set``) per flight."""

    delay_index: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "delay_index", tuple(int(a) for a in self.delay_index))

    @classmethod
    def zeros(cls, scenario: Scenario) -> "ActionProfile":
        return cls((0,) * scenario.n_flights)

    def __len__(self) -> int:
        return len(self.delay_index)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.delay_index, dtype=np.int64)

    def with_delays(self, flights: Iterable[int], indices: Iterable[int]) -> "ActionProfile":
        d = list(self.delay_index)
        for f, a in zip(flights, indices):
            d[int(f)] = int(a)
        return ActionProfile(tuple(d))

    def delays(self, scenario: Scenario) -> list[int]:
        return [scenario.action_set[a] for a in self.delay_index]


def check_profile(scenario: Scenario, profile: ActionProfile) -> np.ndarray:
    x = profile.as_array()
    if len(x) != scenario.n_flights:
        raise ProfileError(
            f"profile has {len(x)} entries but scenario has {scenario.n_flights} flights"
        )
    if len(x) and (x.min() < 0 or x.max() >= scenario.n_actions):
        raise ProfileError("delay index out of range of the action set")
    return x


@dataclass(frozen=True, eq=False)
class LoadTable:
    """Occupancy per (sector, bin) and the overloads derived from it.

    ``own_occupancy[s, t]`` counts only the flights owned by sector ``s``.
    """

    occupancy: np.ndarray
    own_occupancy: np.ndarray
    capacities: np.ndarray
    excess: np.ndarray = field(init=False)
    per_sector_overload: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        excess = np.maximum(0, self.occupancy - self.capacities[:, None])
        object.__setattr__(self, "excess", excess)
        object.__setattr__(self, "per_sector_overload", excess.sum(axis=1))

    @property
    def overloaded_sectors(self) -> frozenset[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.per_sector_overload > 0))

    @property
    def overloaded_resources(self) -> frozenset[tuple[int, int]]:
        s, t = np.nonzero(self.excess)
        return frozenset(zip(s.tolist(), t.tolist()))

    @property
    def total(self) -> int:
        return int(self.per_sector_overload.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LoadTable):
            return NotImplemented
        return (
            np.array_equal(self.occupancy, other.occupancy)
            and np.array_equal(self.own_occupancy, other.own_occupancy)
            and np.array_equal(self.capacities, other.capacities)
        )


def _row_sum(matrix: sparse.csr_matrix, rows: np.ndarray) -> np.ndarray:
    if len(rows) == 0:
        return np.zeros(matrix.shape[1], dtype=np.int64)
    return np.asarray(matrix[rows].sum(axis=0), dtype=np.int64).ravel()


def compute_loads(scenario: Scenario, profile: ActionProfile) -> LoadTable:
    x = check_profile(scenario, profile)
    idx = scenario._index
    rows = idx.rows(x)
    occ = _row_sum(idx.matrix, rows).reshape(idx.m, idx.n_bins)
    own = _row_sum(idx.own_matrix, rows).reshape(idx.m, idx.n_bins)
    return LoadTable(occ, own, np.asarray(scenario.capacities, dtype=np.int64))


def update_loads(
    scenario: Scenario, loads: LoadTable, before: ActionProfile, after: ActionProfile
) -> LoadTable:
    """Loads of ``after`` obtained from those of ``before`` by touching only changed flights."""
    xb = check_profile(scenario, before)
    xa = check_profile(scenario, after)
    idx = scenario._index
    changed = np.flatnonzero(xb != xa)
    if len(changed) == 0:
        return loads
    shape = (idx.m, idx.n_bins)
    old_rows, new_rows = idx.rows(xb, changed), idx.rows(xa, changed)
    occ = loads.occupancy + (_row_sum(idx.matrix, new_rows) - _row_sum(idx.matrix, old_rows)).reshape(shape)
    own = loads.own_occupancy + (
        _row_sum(idx.own_matrix, new_rows) - _row_sum(idx.own_matrix, old_rows)
    ).reshape(shape)
    return LoadTable(occ, own, loads.capacities)


def contribution_matrix(scenario: Scenario, profile: ActionProfile) -> np.ndarray:
    """``C[j, i]``: aircraft-bins that flights owned by ``j`` spend in sector ``i``."""
    x = check_profile(scenario, profile)
    idx = scenario._index
    C = np.zeros((idx.m, idx.m), dtype=np.int64)
    np.add.at(C, idx.owner, idx.bins_in_sector[idx.rows(x)])
    return C


def contribution(scenario: Scenario, profile: ActionProfile, source: int, target: int) -> int:
    m = scenario.n_sectors
    if not (0 <= source < m and 0 <= target < m):
        raise IndexError(f"sector ids must lie in [0, {m})")
    return int(contribution_matrix(scenario, profile)[source, target])


def total_overload(loads: LoadTable) -> int:
    return loads.total


def deviating_sector(scenario: Scenario, x: ActionProfile, x_dev: ActionProfile) -> int | None:
    """Owner of every flight that differs between the profiles; None if identical."""
    a, b = check_profile(scenario, x), check_profile(scenario, x_dev)
    owners = set(scenario._index.owner[a != b].tolist())
    if len(owners) > 1:
        raise DeviationError(f"deviation touches flights of sectors {sorted(owners)}")
    return owners.pop() if owners else None


def new_overload_set(scenario: Scenario, x: ActionProfile, x_dev: ActionProfile) -> frozenset[int]:
    """Sectors feasible under ``x`` that become overloaded under ``x_dev``."""
    deviating_sector(scenario, x, x_dev)
    before = compute_loads(scenario, x).per_sector_overload
    after = compute_loads(scenario, x_dev).per_sector_overload
    return frozenset(int(j) for j in np.flatnonzero((before == 0) & (after > 0)))


def as_profile(values: Sequence[int] | np.ndarray | ActionProfile) -> ActionProfile:
    if isinstance(values, ActionProfile):
        return values
    return ActionProfile(tuple(int(v) for v in values))
