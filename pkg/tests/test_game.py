from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sectorgame.airspace import ActionProfile, DeviationError, Flight, LoadTable, Scenario, Segment, compute_loads
from sectorgame.game import (
    as_kappa,
    cost,
    cost_from_loads,
    deviation_delta,
    potential,
    potential_from_loads,
    self_prioritization_bound,
)
from sectorgame.scenario import tiny_instance


def _loads(overloads):
    """Single-bin loads with capacity 1 and the given overloads."""
    occ = np.array([[1 + L] for L in overloads])
    return LoadTable(occ, occ.copy(), np.ones(len(overloads), dtype=np.int64))


def test_kappa_parsing():
    assert as_kappa("1/2") == Fraction(1, 2)
    assert as_kappa(0.5) == Fraction(1, 2)
    assert as_kappa(1e-6) == Fraction(1, 10**6)
    assert as_kappa(1) == 1
    for bad in (-0.1, 1.5, "3/2"):
        with pytest.raises(ValueError):
            as_kappa(bad)


def test_cost_examples():
    L = _loads([2, 3])
    assert cost_from_loads(L, 0, as_kappa(1)) == cost_from_loads(L, 1, as_kappa(1)) == 5
    assert cost_from_loads(L, 0, as_kappa("1/2")) == Fraction(7, 2)
    assert cost_from_loads(L, 1, as_kappa("1/2")) == 4
    assert cost_from_loads(L, 0, as_kappa(0)) == 2


def test_potential_example_single_window():
    # M_o = {0}, L_0 = 2, C_00 = 3, L_1 = 0, kappa = 1/2  ->  2.5
    occ = np.array([[3], [0]])
    own = np.array([[3], [0]])
    loads = LoadTable(occ, own, np.array([1, 1]))
    assert loads.per_sector_overload.tolist() == [2, 0]
    assert potential_from_loads(loads, as_kappa("1/2")) == Fraction(5, 2)


def test_feasible_profile_has_zero_potential_at_kappa_one(tiny1):
    assert potential(tiny1, ActionProfile((0, 1)), 1) == 0


def test_deviation_delta_tiny1(tiny1):
    d = deviation_delta(tiny1, ActionProfile((0, 0)), ActionProfile((0, 1)), 0, 1)
    assert (d.delta_cost, d.delta_potential) == (-1, -1)
    assert not d.overload_set_fixed
    same = deviation_delta(tiny1, ActionProfile((0, 0)), ActionProfile((0, 0)), 0, "1/2")
    assert (same.delta_cost, same.delta_potential, same.overload_set_fixed, same.resource_overload_set_fixed) == (0, 0, True, True)


def test_deviation_must_belong_to_agent(tiny1):
    with pytest.raises(DeviationError):
        deviation_delta(tiny1, ActionProfile((0, 0)), ActionProfile((0, 1)), 1, 1)


def test_self_prioritization_bound():
    assert self_prioritization_bound(1247, 28) == Fraction(1, 33669)
    assert float(self_prioritization_bound(1247, 28)) == pytest.approx(2.96e-5, rel=5e-3)
    assert self_prioritization_bound(1, 2) == 1
    assert self_prioritization_bound(2, 3) == Fraction(1, 4)
    with pytest.raises(ValueError):
        self_prioritization_bound(5, 1)
    with pytest.raises(ValueError):
        self_prioritization_bound(0, 3)


instances = st.tuples(st.integers(0, 300), st.booleans(), st.lists(st.integers(0, 2), min_size=6, max_size=6))
kappas = st.fractions(min_value=0, max_value=1, max_denominator=50)


def _profile(s, raw):
    return ActionProfile(tuple(a % s.n_actions for a in raw[: s.n_flights]))


@settings(max_examples=150, deadline=None)
@given(instances, kappas)
def test_potential_nonnegative_and_cost_definition(inst, k):
    seed, sw, raw = inst
    s = tiny_instance(seed, sw)
    x = _profile(s, raw)
    L = compute_loads(s, x).per_sector_overload
    assert potential(s, x, k) >= 0
    for i in range(s.n_sectors):
        assert cost(s, x, i, k) == L[i] + k * (int(L.sum()) - L[i])
    assert (potential(s, x, 1) == 0) == (L.sum() == 0)


@settings(max_examples=150, deadline=None)
@given(instances, st.lists(st.integers(0, 2), min_size=6, max_size=6), kappas)
def test_exactness_when_overloaded_resources_fixed(inst, raw2, k):
    seed, sw, raw = inst
    s = tiny_instance(seed, sw)
    x = _profile(s, raw)
    agent = s.flights[0].owner
    mine = [f.id for f in s.flights if f.owner == agent]
    y = x.with_delays(mine, [raw2[f] % s.n_actions for f in mine])
    d = deviation_delta(s, x, y, agent, k)
    if d.resource_overload_set_fixed or k == 1:
        assert d.delta_cost == d.delta_potential
