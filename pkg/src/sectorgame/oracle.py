"""Brute-force oracle: exhaustive checks of the game's structural guarantees.

Everything here recomputes occupancy with its own naive interval-overlap
counter (:func:`naive_loads`) and shares no load code with
:mod:`sectorgame.airspace`; the two are compared profile by profile.

Check -> guarantee:

=============================  ==========================================================
check_self_prioritization      kappa < 1/(n(m-1)) keeps every improving move self-prioritising
check_exact_potential          fixed overload set => cost change equals potential change;
                               kappa = 1 => exact potential unconditionally
adjudicate_kappa_zero          kappa = 0 unconditional potential claim (verify, don't trust)
check_invariance               a sector's move only changes its own contributions
check_trace_invariants             overloaded set never grows; finite termination; potential descent
check_nash                     terminal profiles are restricted pure Nash equilibria
check_feasible_minimizer       kappa = 1: feasible profiles are exactly the potential minimisers
=============================  ==========================================================
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .airspace import ActionProfile, Flight, Scenario, Segment, compute_loads, contribution_matrix
from .dynamics import Trace
from .game import as_kappa, cost_from_loads, potential_from_loads, self_prioritization_bound
from .scenario import to_dict

DEFAULT_CAP = 3**6


class OracleRefusal(RuntimeError):
    """The requested enumeration exceeds the oracle's cap."""


@dataclass
class VerifierReport:
    check: str
    instances: int = 0
    deviations: int = 0
    violations: list[dict] = field(default_factory=list)
    status: str = ""
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def merge(self, other: "VerifierReport") -> "VerifierReport":
        self.instances += other.instances
        self.deviations += other.deviations
        self.violations.extend(other.violations)
        return self

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f" [{self.status}]" if self.status else ""
        return (
            f"{verdict} {self.check}: {self.instances} instances, {self.deviations} deviations, "
            f"{len(self.violations)} violations{extra}"
        )

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "instances": self.instances,
            "deviations": self.deviations,
            "violations": self.violations[:20],
            "violation_count": len(self.violations),
            "passed": self.passed,
            "status": self.status,
            "notes": self.notes,
        }


# ------------------------------------------------------------ naive counting

@dataclass(frozen=True)
class NaiveLoads:
    occupancy: tuple[tuple[int, ...], ...]
    own: tuple[tuple[int, ...], ...]
    overload: tuple[int, ...]
    own_on_overloaded: int
    overloaded_resources: frozenset[tuple[int, int]]

    @property
    def total(self) -> int:
        return sum(self.overload)

    @property
    def overloaded(self) -> frozenset[int]:
        return frozenset(i for i, v in enumerate(self.overload) if v > 0)


def naive_loads(scenario: Scenario, delays: Sequence[int]) -> NaiveLoads:
    """Occupancy by direct interval/bin overlap tests; ``delays`` are in minutes."""
    m, w, nb = scenario.n_sectors, scenario.bin_width, scenario.horizon // scenario.bin_width
    occ = [[0] * nb for _ in range(m)]
    own = [[0] * nb for _ in range(m)]
    for f, d in zip(scenario.flights, delays):
        for s in range(m):
            for t in range(nb):
                lo, hi = t * w, (t + 1) * w
                inside = any(
                    seg.sector == s
                    and seg.entry + f.base_departure + d < hi
                    and seg.exit + f.base_departure + d > lo
                    for seg in f.segments
                )
                if inside:
                    occ[s][t] += 1
                    if f.owner == s:
                        own[s][t] += 1
    overload, own_over, res = [], 0, set()
    for s in range(m):
        cap = scenario.capacities[s]
        total = 0
        for t in range(nb):
            if occ[s][t] > cap:
                total += occ[s][t] - cap
                own_over += own[s][t]
                res.add((s, t))
        overload.append(total)
    return NaiveLoads(
        tuple(map(tuple, occ)), tuple(map(tuple, own)), tuple(overload), own_over, frozenset(res)
    )


def naive_cost(nl: NaiveLoads, agent: int, kappa: Fraction) -> Fraction:
    return nl.overload[agent] + kappa * (nl.total - nl.overload[agent])


def naive_potential(nl: NaiveLoads, kappa: Fraction) -> Fraction:
    return kappa * nl.total + (1 - kappa) * nl.own_on_overloaded


def _delays(scenario: Scenario, indices: Sequence[int]) -> list[int]:
    return [scenario.action_set[a] for a in indices]


def all_profiles(scenario: Scenario, cap: int = DEFAULT_CAP) -> list[tuple[int, ...]]:
    size = scenario.n_actions ** scenario.n_flights
    if size > cap:
        raise OracleRefusal(f"joint space of {size} profiles exceeds the cap of {cap}")
    return list(itertools.product(range(scenario.n_actions), repeat=scenario.n_flights))


def enumerate_global_min(
    scenario: Scenario, objective: str = "total_overload", kappa=1, cap: int = DEFAULT_CAP
) -> tuple[Fraction, list[ActionProfile]]:
    """Exact minimum of ``total_overload`` or ``potential`` and every profile attaining it."""
    k = as_kappa(kappa)
    best, argmin = None, []
    for prof in all_profiles(scenario, cap):
        nl = naive_loads(scenario, _delays(scenario, prof))
        if objective == "total_overload":
            v = Fraction(nl.total)
        elif objective == "potential":
            v = naive_potential(nl, k)
        else:
            raise ValueError(f"unknown objective {objective!r}")
        if best is None or v < best:
            best, argmin = v, [ActionProfile(prof)]
        elif v == best:
            argmin.append(ActionProfile(prof))
    return best, argmin


# --------------------------------------------------------- profile tables

class ProfileTable:
    """Every profile of a tiny instance with its naive and model-side loads.

    Construction also runs the oracle/model differential check; mismatches
    are kept in :attr:`mismatches`.
    """

    def __init__(self, scenario: Scenario, cap: int = DEFAULT_CAP):
        self.scenario = scenario
        self.profiles = all_profiles(scenario, cap)
        self.X = np.array(self.profiles, dtype=np.int64).reshape(len(self.profiles), scenario.n_flights)
        self.naive = [naive_loads(scenario, _delays(scenario, p)) for p in self.profiles]
        self.model = [compute_loads(scenario, ActionProfile(p)) for p in self.profiles]
        self.L = np.array([nl.overload for nl in self.naive], dtype=np.int64)
        self.mismatches = []
        for p, nl, ml in zip(self.profiles, self.naive, self.model):
            if (
                nl.occupancy != tuple(map(tuple, ml.occupancy.tolist()))
                or nl.own != tuple(map(tuple, ml.own_occupancy.tolist()))
            ):
                self.mismatches.append({"profile": list(p)})
        m = scenario.n_sectors
        self.mo_mask = (self.L > 0) @ (1 << np.arange(m, dtype=np.int64))
        res_bits = {(s, t): k for k, (s, t) in enumerate(itertools.product(range(m), range(scenario.n_bins)))}
        self.res_mask = np.array(
            [sum(1 << res_bits[r] for r in nl.overloaded_resources) for nl in self.naive], dtype=object
        )
        self.owner = np.array([f.owner for f in scenario.flights], dtype=np.int64)

    def groups(self, agent: int) -> list[np.ndarray]:
        """Profile indices partitioned by the actions of everyone but ``agent``."""
        others = self.owner != agent
        if not others.any():
            return [np.arange(len(self.profiles))]
        key = self.X[:, others] @ (self.scenario.n_actions ** np.arange(others.sum(), dtype=np.int64))
        order = np.argsort(key, kind="stable")
        cuts = np.flatnonzero(np.diff(key[order])) + 1
        return np.split(order, cuts)

    def deviation_pairs(self, agent: int) -> Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (group, i_idx, j_idx): all ordered distinct pairs within each group."""
        for g in self.groups(agent):
            if len(g) < 2:
                continue
            a, b = np.meshgrid(np.arange(len(g)), np.arange(len(g)), indexing="ij")
            off = a != b
            yield g, g[a[off]], g[b[off]]


def _scaled(values: Iterable[Fraction], scale: int) -> np.ndarray:
    out = [v * scale for v in values]
    assert all(v.denominator == 1 for v in out)
    return np.array([int(v) for v in out], dtype=object if scale > 2**30 else np.int64)


def _costs_and_potential(table: ProfileTable, kappa: Fraction, potential_fn=None):
    """Oracle-side cost/potential per profile, scaled to integers, plus a game-core diff."""
    m = table.scenario.n_sectors
    scale = kappa.denominator
    J = np.stack([_scaled((naive_cost(nl, i, kappa) for nl in table.naive), scale) for i in range(m)], axis=1)
    if potential_fn is None:
        phi_vals = [naive_potential(nl, kappa) for nl in table.naive]
    else:
        phi_vals = [potential_fn(nl) for nl in table.naive]
    phi = _scaled(phi_vals, scale)
    mismatch = []
    for p, nl, ml in zip(table.profiles, table.naive, table.model):
        core_j = [cost_from_loads(ml, i, kappa) for i in range(m)]
        if core_j != [naive_cost(nl, i, kappa) for i in range(m)] or potential_from_loads(ml, kappa) != naive_potential(nl, kappa):
            mismatch.append({"profile": list(p)})
    return J, phi, mismatch


def _violation(table: ProfileTable, seed, frm: int, to: int, agent: int, **values) -> dict:
    return {
        "seed": seed,
        "profile": list(table.profiles[frm]),
        "deviation": list(table.profiles[to]),
        "agent": agent,
        **{k: str(v) for k, v in values.items()},
    }


def check_exact_potential(
    instances: Sequence[tuple[int, Scenario]],
    kappa,
    premise: str = "fixed_Mo",
    potential_fn: Callable[[NaiveLoads], Fraction] | None = None,
    name: str | None = None,
) -> VerifierReport:
    """Every unilateral deviation (under the premise) changes cost and potential equally.

    ``premise`` is ``fixed_Mo`` (overloaded sector set unchanged),
    ``fixed_resources`` (overloaded (sector, bin) set unchanged) or
    ``unconditional``.
    """
    k = as_kappa(kappa)
    rep = VerifierReport(name or f"exact_potential[kappa={k}, {premise}]")
    for seed, scenario in instances:
        table = ProfileTable(scenario)
        rep.instances += 1
        J, phi, mismatch = _costs_and_potential(table, k, potential_fn)
        for mm in table.mismatches + mismatch:
            rep.violations.append({"seed": seed, "kind": "oracle/model disagreement", **mm})
        for agent in range(scenario.n_sectors):
            for _, i, j in table.deviation_pairs(agent):
                if premise == "fixed_Mo":
                    keep = table.mo_mask[i] == table.mo_mask[j]
                elif premise == "fixed_resources":
                    keep = table.res_mask[i] == table.res_mask[j]
                elif premise == "unconditional":
                    keep = np.ones(len(i), dtype=bool)
                else:
                    raise ValueError(f"unknown premise {premise!r}")
                i, j = i[keep], j[keep]
                rep.deviations += len(i)
                d_cost = J[j, agent] - J[i, agent]
                d_phi = phi[j] - phi[i]
                for q in np.flatnonzero(d_cost != d_phi):
                    rep.violations.append(_violation(
                        table, seed, int(i[q]), int(j[q]), agent,
                        delta_cost=Fraction(int(d_cost[q]), k.denominator),
                        delta_potential=Fraction(int(d_phi[q]), k.denominator),
                    ))
    return rep


def check_self_prioritization(
    instances: Sequence[tuple[int, Scenario]], factor: Fraction = Fraction(9, 10)
) -> VerifierReport:
    """With kappa = factor * 1/(n(m-1)), no cost-improving move raises the mover's overload."""
    rep = VerifierReport("self_prioritization")
    for seed, scenario in instances:
        k = factor * self_prioritization_bound(max(scenario.n_flights, 1), scenario.n_sectors)
        table = ProfileTable(scenario)
        rep.instances += 1
        J, _, _ = _costs_and_potential(table, k)
        for agent in range(scenario.n_sectors):
            for _, i, j in table.deviation_pairs(agent):
                rep.deviations += len(i)
                bad = (J[j, agent] < J[i, agent]) & (table.L[j, agent] > table.L[i, agent])
                for q in np.flatnonzero(bad):
                    rep.violations.append(_violation(table, seed, int(i[q]), int(j[q]), agent, kappa=k))
    return rep


def check_invariance(instances: Sequence[tuple[int, Scenario]]) -> VerifierReport:
    """A move by sector i leaves every contribution C_jk with j != i untouched."""
    rep = VerifierReport("contribution_invariance")
    for seed, scenario in instances:
        table = ProfileTable(scenario)
        rep.instances += 1
        C = np.stack([contribution_matrix(scenario, ActionProfile(p)) for p in table.profiles])
        for agent in range(scenario.n_sectors):
            rows = [j for j in range(scenario.n_sectors) if j != agent]
            for _, i, j in table.deviation_pairs(agent):
                rep.deviations += len(i)
                changed = np.any(C[i][:, rows, :] != C[j][:, rows, :], axis=(1, 2))
                for q in np.flatnonzero(changed):
                    rep.violations.append(_violation(table, seed, int(i[q]), int(j[q]), agent))
    return rep


def check_feasible_minimizer(instances: Sequence[tuple[int, Scenario]]) -> VerifierReport:
    """kappa = 1: when a feasible profile exists, the potential minimisers are exactly the feasible profiles."""
    rep = VerifierReport("feasible_is_global_minimizer")
    with_feasible = 0
    for seed, scenario in instances:
        rep.instances += 1
        best, feasible = enumerate_global_min(scenario, "total_overload")
        phi_min, phi_argmin = enumerate_global_min(scenario, "potential", kappa=1)
        rep.deviations += scenario.n_actions ** scenario.n_flights
        if phi_min < 0:
            rep.violations.append({"seed": seed, "kind": "negative potential", "value": str(phi_min)})
        if best != 0:
            continue
        with_feasible += 1
        if phi_min != 0 or {p.delay_index for p in phi_argmin} != {p.delay_index for p in feasible}:
            rep.violations.append({"seed": seed, "kind": "argmin mismatch", "potential_min": str(phi_min)})
    rep.notes["instances_with_feasible_profile"] = with_feasible
    return rep


# ------------------------------------------------------------------- Nash

def check_nash(
    scenario: Scenario, profile: ActionProfile, kappa, restricted: bool = True, cap: int = DEFAULT_CAP
) -> bool:
    """True iff no sector has a strictly improving unilateral deviation.

    With ``restricted`` only deviations that overload no currently clear
    sector are considered.
    """
    return not nash_violations(scenario, profile, kappa, restricted, cap)


def nash_violations(
    scenario: Scenario, profile: ActionProfile, kappa, restricted: bool = True, cap: int = DEFAULT_CAP
) -> list[dict]:
    k = as_kappa(kappa)
    x = list(profile.delay_index)
    base = naive_loads(scenario, _delays(scenario, x))
    found = []
    for agent in range(scenario.n_sectors):
        mine = [f.id for f in scenario.flights if f.owner == agent]
        if scenario.n_actions ** len(mine) > cap:
            raise OracleRefusal(f"sector {agent} has too many joint actions to enumerate")
        j0 = naive_cost(base, agent, k)
        for choice in itertools.product(range(scenario.n_actions), repeat=len(mine)):
            y = list(x)
            for f, a in zip(mine, choice):
                y[f] = a
            if y == x:
                continue
            nl = naive_loads(scenario, _delays(scenario, y))
            if restricted and any(b == 0 and a > 0 for b, a in zip(base.overload, nl.overload)):
                continue
            if naive_cost(nl, agent, k) < j0:
                found.append({"agent": agent, "deviation": y, "cost": str(naive_cost(nl, agent, k)), "was": str(j0)})
                break
    return found


# ------------------------------------------------------------ trace invariants

def check_trace_invariants(trace: Trace, scenario: Scenario | None = None, name: str = "trace_invariants") -> VerifierReport:
    """Overloaded-set monotonicity, termination and potential descent along a trace.

    Potential descent is demanded at kappa = 1, and in single-window
    scenarios whenever the overloaded set did not change across the step.
    """
    rep = VerifierReport(name, instances=1)
    single_window = scenario.single_window if scenario is not None else False
    prev_after = None
    for s in trace.steps:
        rep.deviations += 1
        where = {"t": s.t, "round": s.round, "agent": s.agent}
        if prev_after is not None and s.overloaded_before != prev_after:
            rep.violations.append({**where, "kind": "discontinuous overloaded set"})
        prev_after = s.overloaded_after
        if not s.overloaded_after <= s.overloaded_before:
            rep.violations.append({**where, "kind": "overloaded set grew",
                                   "before": sorted(s.overloaded_before), "after": sorted(s.overloaded_after)})
        if not s.accepted:
            if s.overloaded_after != s.overloaded_before or s.cost_after != s.cost_before:
                rep.violations.append({**where, "kind": "rejected step changed the state"})
            continue
        if not s.cost_after < s.cost_before:
            rep.violations.append({**where, "kind": "accepted step without strict cost decrease"})
        fixed = s.overloaded_after == s.overloaded_before
        if (trace.kappa == 1 or (single_window and fixed)) and not s.potential_after < s.potential_before:
            rep.violations.append({**where, "kind": "potential did not decrease",
                                   "before": str(s.potential_before), "after": str(s.potential_after)})
    if trace.termination_reason == "step_limit":
        rep.violations.append({"kind": "run hit the round limit"})
    if scenario is not None and trace.terminal_profile is not None:
        recount = naive_loads(scenario, _delays(scenario, trace.terminal_profile.delay_index)).total
        if recount != trace.final_total_overload:
            rep.violations.append({"kind": "final overload disagrees with recount",
                                   "trace": trace.final_total_overload, "recount": recount})
    return rep


# ------------------------------------------------------ kappa = 0 adjudication

def _drop_flight(scenario: Scenario, fid: int) -> Scenario:
    kept = [f for f in scenario.flights if f.id != fid]
    return replace(scenario, flights=tuple(replace(f, id=k) for k, f in enumerate(kept)))


def _drop_sector(scenario: Scenario, sid: int) -> Scenario | None:
    if scenario.n_sectors <= 1 or any(f.owner == sid for f in scenario.flights):
        return None
    remap = lambda s: s - (s > sid)
    flights = []
    for f in scenario.flights:
        segs = tuple(replace(g, sector=remap(g.sector)) for g in f.segments if g.sector != sid)
        flights.append(replace(f, owner=remap(f.owner), segments=segs))
    caps = tuple(c for i, c in enumerate(scenario.capacities) if i != sid)
    return replace(scenario, capacities=caps, flights=tuple(flights))


def shrink(scenario: Scenario, still_fails: Callable[[Scenario], bool]) -> Scenario:
    """Greedy removal of flights, then unowned sectors, while the failure persists."""
    changed = True
    while changed:
        changed = False
        for fid in range(scenario.n_flights):
            smaller = _drop_flight(scenario, fid)
            if still_fails(smaller):
                scenario, changed = smaller, True
                break
        if changed:
            continue
        for sid in range(scenario.n_sectors):
            smaller = _drop_sector(scenario, sid)
            if smaller is not None and still_fails(smaller):
                scenario, changed = smaller, True
                break
    return scenario


def exact_potential_obstructions(table: ProfileTable, kappa: Fraction) -> list[dict]:
    """Four-cycles of unilateral moves whose cost changes do not sum to zero.

    A game has an exact potential iff every such cycle sums to zero; for two
    sectors i, j this is the vanishing of the mixed second difference of
    ``J_i - J_j`` in the (x_i, x_j) coordinates, everything else held fixed.
    """
    scenario = table.scenario
    m, p = scenario.n_sectors, scenario.n_actions
    owned = [np.flatnonzero(table.owner == a) for a in range(m)]
    dims = [p ** len(o) for o in owned]
    codes = np.zeros((len(table.profiles), m), dtype=np.int64)
    for a, o in enumerate(owned):
        if len(o):
            codes[:, a] = table.X[:, o] @ (p ** np.arange(len(o) - 1, -1, -1, dtype=np.int64))
    flat = np.ravel_multi_index(tuple(codes.T), dims)
    J, _, _ = _costs_and_potential(table, kappa)
    tensors = []
    for a in range(m):
        t = np.empty(int(np.prod(dims)), dtype=J.dtype)
        t[flat] = J[:, a]
        tensors.append(t.reshape(dims))
    found = []
    for i, j in itertools.combinations(range(m), 2):
        if dims[i] < 2 or dims[j] < 2:
            continue
        H = np.moveaxis(tensors[i] - tensors[j], (i, j), (0, 1))
        mixed = H - H[:1] - H[:, :1] + H[:1, :1]
        for u, v, *rest in zip(*np.nonzero(mixed)):
            found.append({"sectors": [i, j], "codes": [int(u), int(v)], "rest": [int(r) for r in rest],
                          "cycle_sum": str(Fraction(-int(mixed[(u, v, *rest)]), kappa.denominator))})
            break
    return found


def adjudicate_kappa_zero(instances: Sequence[tuple[int, Scenario]]) -> VerifierReport:
    """Test the claim that at kappa = 0 the sum of overloads is an exact potential.

    Also tests, through four-cycles, whether *any* exact potential exists.
    The report passes either way; ``status`` carries the verdict and
    ``notes`` the shrunk counterexamples.
    """
    zero = Fraction(0)
    total_pot = lambda nl: Fraction(nl.total)
    claim = check_exact_potential(instances, zero, "unconditional", potential_fn=total_pot,
                                  name="kappa_zero_sum_of_overloads")
    rep = VerifierReport("kappa_zero_adjudication", claim.instances, claim.deviations)
    cycles = []
    for seed, scenario in instances:
        obs = exact_potential_obstructions(ProfileTable(scenario), zero)
        if obs:
            cycles.append((seed, scenario, obs[0]))
    rep.notes["sum_of_overloads_violations"] = len(claim.violations)
    rep.notes["instances_without_any_exact_potential"] = len(cycles)

    def claim_fails(s: Scenario) -> bool:
        return s.n_flights > 0 and not check_exact_potential([(0, s)], zero, "unconditional", potential_fn=total_pot).passed

    def no_potential(s: Scenario) -> bool:
        return s.n_flights > 0 and bool(exact_potential_obstructions(ProfileTable(s), zero))

    if claim.violations:
        seed = claim.violations[0]["seed"]
        scenario = dict(instances)[seed]
        small = shrink(scenario, claim_fails)
        witness = check_exact_potential([(seed, small)], zero, "unconditional", potential_fn=total_pot).violations[0]
        rep.notes["sum_of_overloads_counterexample"] = {"seed": seed, "scenario": to_dict(small), "witness": witness}
    if cycles:
        seed, scenario, _ = cycles[0]
        small = shrink(scenario, no_potential)
        rep.notes["no_exact_potential_counterexample"] = {
            "seed": seed, "scenario": to_dict(small),
            "witness": exact_potential_obstructions(ProfileTable(small), zero)[0],
        }
    rep.status = "claim-disputed" if claim.violations else "claim-holds-on-battery"
    return rep
