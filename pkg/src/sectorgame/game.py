"""Cooperativeness-weighted sector costs, the potential function and related bounds."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational, Real

import numpy as np

from .airspace import (
    ActionProfile,
    DeviationError,
    LoadTable,
    Scenario,
    compute_loads,
    deviating_sector,
)


def as_kappa(value: Real | str) -> Fraction:
    """Exact rational cooperativeness factor in ``[0, 1]``.

    Floats are read through their shortest decimal repr, so ``1e-6`` becomes
    exactly ``1/1000000`` rather than the nearest binary double.
    """
    if isinstance(value, Rational):
        k = Fraction(value)
    elif isinstance(value, str):
        k = Fraction(value)
    else:
        k = Fraction(repr(float(value)))
    if not 0 <= k <= 1:
        raise ValueError(f"kappa must lie in [0, 1], got {value}")
    return k


def cost_from_loads(loads: LoadTable, agent: int, kappa: Fraction) -> Fraction:
    L = loads.per_sector_overload
    own = int(L[agent])
    return own + kappa * (int(L.sum()) - own)


def cost(scenario: Scenario, profile: ActionProfile, agent: int, kappa) -> Fraction:
    """``J_i = L_i + kappa * sum_{j != i} L_j``."""
    if not 0 <= agent < scenario.n_sectors:
        raise IndexError(f"agent {agent} is not a sector")
    return cost_from_loads(compute_loads(scenario, profile), agent, as_kappa(kappa))


def potential_from_loads(loads: LoadTable, kappa: Fraction) -> Fraction:
    # second term: owner's own contribution to every overloaded (sector, bin)
    own_on_overloaded = int(loads.own_occupancy[loads.excess > 0].sum())
    return kappa * loads.total + (1 - kappa) * own_on_overloaded


def potential(scenario: Scenario, profile: ActionProfile, kappa) -> Fraction:
    """``kappa * sum_i L_i + (1 - kappa) * sum_{overloaded} C_ii``.

    In time-binned scenarios the second sum runs over overloaded (sector, bin)
    resources; with one bin it is the sum of ``C_ii`` over overloaded sectors.
    """
    return potential_from_loads(compute_loads(scenario, profile), as_kappa(kappa))


def sum_of_overloads_potential(loads: LoadTable, kappa: Fraction = Fraction(0)) -> Fraction:
    """Candidate potential ``sum_i L_i`` (kappa is ignored)."""
    return Fraction(loads.total)


@dataclass(frozen=True)
class DeviationDelta:
    agent: int
    delta_cost: Fraction
    delta_potential: Fraction
    overload_set_fixed: bool
    resource_overload_set_fixed: bool


def deviation_delta_from_loads(
    before: LoadTable, after: LoadTable, agent: int, kappa: Fraction
) -> DeviationDelta:
    return DeviationDelta(
        agent=agent,
        delta_cost=cost_from_loads(after, agent, kappa) - cost_from_loads(before, agent, kappa),
        delta_potential=potential_from_loads(after, kappa) - potential_from_loads(before, kappa),
        overload_set_fixed=before.overloaded_sectors == after.overloaded_sectors,
        resource_overload_set_fixed=bool(np.array_equal(before.excess > 0, after.excess > 0)),
    )


def deviation_delta(
    scenario: Scenario, x: ActionProfile, x_dev: ActionProfile, agent: int, kappa
) -> DeviationDelta:
    who = deviating_sector(scenario, x, x_dev)
    if who is not None and who != agent:
        raise DeviationError(f"deviation belongs to sector {who}, not {agent}")
    return deviation_delta_from_loads(
        compute_loads(scenario, x), compute_loads(scenario, x_dev), agent, as_kappa(kappa)
    )


def self_prioritization_bound(n: int, m: int) -> Fraction:
    """Largest kappa (exclusive) that keeps every sector self-prioritising: ``1/(n(m-1))``."""
    if m < 2:
        raise ValueError("the bound needs at least two sectors")
    if n < 1:
        raise ValueError("the bound needs at least one flight")
    return Fraction(1, n * (m - 1))
