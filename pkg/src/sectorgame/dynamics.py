"""Sequential best-response dynamics over sectors under the no-new-overload rule."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np
from scipy import sparse

from .ga import GAConfig
from .ga import minimize as ga_minimize
from .airspace import (
    ActionProfile,
    LoadTable,
    Scenario,
    check_profile,
    compute_loads,
    update_loads,
)
from .game import as_kappa, cost_from_loads, potential_from_loads

log = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 2**20
_FLOAT_EXACT = 2**53


class SearchSpaceTooLarge(RuntimeError):
    pass


class ResponseEvaluator:
    """Scores joint delay choices of one sector's flights, others held fixed.

    Only the (sector, bin) resources that some delay of the agent's flights can
    reach are recomputed; every other resource keeps its current occupancy.
    """

    def __init__(self, scenario: Scenario, x: np.ndarray, loads: LoadTable, agent: int, kappa: Fraction):
        idx = scenario._index
        p = idx.p
        self.kappa = kappa
        self.flights = idx.flights_of[agent]
        n_i = len(self.flights)
        self.n_genes = n_i
        self.p = p
        all_rows = (self.flights[:, None] * p + np.arange(p)).ravel()
        sub = idx.matrix[all_rows]
        self.touched = np.unique(sub.indices)
        self.local = sub[:, self.touched].tocsr()
        cur_rows = self.flights * p + x[self.flights]
        occ = loads.occupancy.ravel()[self.touched]
        current = np.asarray(idx.matrix[cur_rows][:, self.touched].sum(axis=0)).ravel()
        self.base = occ - current
        self.cap = idx.resource_capacity[self.touched]

        L = loads.per_sector_overload
        res_sector = idx.resource_sector[self.touched]
        self.sectors, local_sector = np.unique(res_sector, return_inverse=True)
        k = len(self.sectors)
        # touched ids are sorted, so each sector's resources form one contiguous run
        self.sector_starts = np.flatnonzero(np.r_[True, np.diff(local_sector) > 0]) if k else np.zeros(0, np.int64)
        cur_excess = np.maximum(0, occ - self.cap)
        self.rest = L[self.sectors] - np.bincount(local_sector, weights=cur_excess, minlength=k).astype(np.int64)
        self.untouched_total = int(L.sum() - L[self.sectors].sum())
        self.must_stay_clear = L[self.sectors] == 0
        hit = np.flatnonzero(self.sectors == agent)
        self.agent_pos = int(hit[0]) if len(hit) else None
        self.agent_constant = int(L[agent])
        self.current = x[self.flights].copy()

        num, den = kappa.numerator, kappa.denominator
        bound = (int(loads.occupancy.sum()) + 1) * max(scenario.n_bins, 1) * (scenario.n_flights + 1)
        self._scaled = den * bound < _FLOAT_EXACT and num * bound < _FLOAT_EXACT

    def components(self, genes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Own overload, system overload and no-new-overload feasibility per row."""
        genes = np.atleast_2d(np.asarray(genes, dtype=np.int64))
        P = genes.shape[0]
        if self.n_genes == 0:
            total = np.full(P, self.untouched_total + int(self.rest.sum()), dtype=np.int64)
            return np.full(P, self.agent_constant, dtype=np.int64), total, np.ones(P, dtype=bool)
        cols = genes + np.arange(self.n_genes) * self.p
        select = sparse.csr_matrix(
            (np.ones(cols.size, dtype=np.int64), cols.ravel(), np.arange(0, cols.size + 1, self.n_genes)),
            shape=(P, self.n_genes * self.p),
        )
        occ = (select @ self.local).toarray() + self.base
        excess = np.maximum(0, occ - self.cap)
        if len(self.sectors):
            per_sector = np.add.reduceat(excess, self.sector_starts, axis=1) + self.rest
        else:
            per_sector = np.zeros((P, 0), dtype=np.int64)
        total = per_sector.sum(axis=1) + self.untouched_total
        if self.agent_pos is None:
            own = np.full(P, self.agent_constant, dtype=np.int64)
        else:
            own = per_sector[:, self.agent_pos]
        feasible = ~np.any(per_sector[:, self.must_stay_clear] > 0, axis=1)
        return own, total, feasible

    def fitness(self, genes: np.ndarray) -> np.ndarray:
        """GA objective; exact (scaled by kappa's denominator) whenever it fits a double."""
        own, total, feasible = self.components(genes)
        others = total - own
        k = self.kappa
        if self._scaled:
            value = (k.denominator * own + k.numerator * others).astype(float)
        else:
            value = own + float(k) * others
        return np.where(feasible, value, np.inf)


def _apply(x: np.ndarray, flights: np.ndarray, genes: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[flights] = genes
    return out


@dataclass
class ResponseResult:
    profile: ActionProfile
    evaluations: int = 0
    generations: int = 0


def best_response(
    scenario: Scenario,
    x: ActionProfile,
    agent: int,
    kappa,
    ga_config: GAConfig = GAConfig(),
    *,
    loads: LoadTable | None = None,
    rng: np.random.Generator | None = None,
) -> ResponseResult:
    """GA approximation of the agent's restricted best response.

    The incumbent is the agent's current choice, so the returned profile never
    has a higher cost and never overloads a currently clear sector.
    """
    xa = check_profile(scenario, x)
    if loads is None:
        loads = compute_loads(scenario, x)
    ev = ResponseEvaluator(scenario, xa, loads, agent, as_kappa(kappa))
    if ev.n_genes == 0:
        return ResponseResult(x, evaluations=0)
    res = ga_minimize(np.full(ev.n_genes, scenario.n_actions), ev.fitness, ev.current, ga_config, rng)
    if not res.best_fitness < ev.fitness(ev.current[None, :])[0]:
        # no strict improvement: keep the current schedule rather than an equal-cost twin
        return ResponseResult(x, res.evaluations, res.generations)
    return ResponseResult(
        ActionProfile(tuple(_apply(xa, ev.flights, res.best).tolist())), res.evaluations, res.generations
    )


def _enumerate(n_genes: int, p: int, start: int, stop: int) -> np.ndarray:
    # row k holds the base-p digits of k, first gene most significant (lexicographic order)
    codes = np.arange(start, stop, dtype=np.int64)
    out = np.empty((len(codes), n_genes), dtype=np.int64)
    for g in range(n_genes - 1, -1, -1):
        out[:, g] = codes % p
        codes //= p
    return out


def _exact_keys(own: np.ndarray, others: np.ndarray, kappa: Fraction) -> np.ndarray:
    num, den = kappa.numerator, kappa.denominator
    if max(num, den) < 2**30:
        return den * own.astype(np.int64) + num * others.astype(np.int64)
    return den * own.astype(object) + num * others.astype(object)


def exhaustive_best_response(
    scenario: Scenario,
    x: ActionProfile,
    agent: int,
    kappa,
    *,
    cap: int = EXHAUSTIVE_CAP,
    loads: LoadTable | None = None,
    restricted: bool = True,
    chunk: int = 8192,
) -> ResponseResult:
    """Exact restricted argmin of the agent's cost; ties go to the smallest delay vector."""
    kappa = as_kappa(kappa)
    xa = check_profile(scenario, x)
    if loads is None:
        loads = compute_loads(scenario, x)
    ev = ResponseEvaluator(scenario, xa, loads, agent, kappa)
    p, G = scenario.n_actions, ev.n_genes
    size = p**G
    if size > cap:
        raise SearchSpaceTooLarge(f"{p}^{G} = {size} joint actions exceed the cap of {cap}")
    best_key, best_genes = None, ev.current
    for start in range(0, size, chunk):
        genes = _enumerate(G, p, start, min(size, start + chunk))
        own, total, feasible = ev.components(genes)
        keys = _exact_keys(own, total - own, kappa)
        if restricted:
            pick = np.flatnonzero(feasible)
            if len(pick) == 0:
                continue
            genes, keys = genes[pick], keys[pick]
        j = int(np.argmin(keys))
        if best_key is None or keys[j] < best_key:
            best_key, best_genes = keys[j], genes[j]
    return ResponseResult(ActionProfile(tuple(_apply(xa, ev.flights, best_genes).tolist())), evaluations=size)


@dataclass(frozen=True)
class RunConfig:
    kappa: Fraction = Fraction(1)
    ga: GAConfig = GAConfig()
    agent_order: Literal["by_id", "seeded_shuffle_per_round"] = "by_id"
    max_rounds: int = 1000
    solver: Literal["ga", "exhaustive"] = "ga"
    exhaustive_cap: int = EXHAUSTIVE_CAP

    def __post_init__(self) -> None:
        object.__setattr__(self, "kappa", as_kappa(self.kappa))
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


@dataclass
class Step:
    round: int
    t: int
    agent: int
    cost_before: Fraction
    cost_after: Fraction
    potential_before: Fraction
    potential_after: Fraction
    overloaded_before: frozenset[int]
    overloaded_after: frozenset[int]
    total_overload: int
    accepted: bool
    duration: float
    elapsed: float
    evaluations: int


TerminationReason = Literal["feasible_found", "no_improvement_round", "step_limit"]

STEP_COLUMNS = [
    "round", "t", "agent", "accepted", "cost_before", "cost_after", "potential_before",
    "potential_after", "overloaded_before", "overloaded_after", "total_overload",
    "duration", "elapsed", "evaluations",
]


@dataclass
class Trace:
    kappa: Fraction
    initial_total_overload: int
    steps: list[Step] = field(default_factory=list)
    terminal_profile: ActionProfile | None = None
    termination_reason: TerminationReason | None = None
    rounds: int = 0

    @property
    def accepted_steps(self) -> list[Step]:
        return [s for s in self.steps if s.accepted]

    @property
    def final_total_overload(self) -> int:
        return self.steps[-1].total_overload if self.steps else self.initial_total_overload

    @property
    def evaluations(self) -> int:
        return sum(s.evaluations for s in self.steps)

    def to_dict(self) -> dict:
        def step(s: Step) -> dict:
            d = asdict(s)
            for key in ("cost_before", "cost_after", "potential_before", "potential_after"):
                d[key] = str(d[key])
            d["overloaded_before"] = sorted(s.overloaded_before)
            d["overloaded_after"] = sorted(s.overloaded_after)
            return d

        return {
            "kappa": str(self.kappa),
            "initial_total_overload": self.initial_total_overload,
            "termination_reason": self.termination_reason,
            "rounds": self.rounds,
            "terminal_profile": list(self.terminal_profile.delay_index) if self.terminal_profile else None,
            "steps": [step(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trace":
        steps = []
        for s in d["steps"]:
            s = dict(s)
            for key in ("cost_before", "cost_after", "potential_before", "potential_after"):
                s[key] = Fraction(s[key])
            s["overloaded_before"] = frozenset(s["overloaded_before"])
            s["overloaded_after"] = frozenset(s["overloaded_after"])
            steps.append(Step(**s))
        prof = d.get("terminal_profile")
        return cls(
            kappa=Fraction(d["kappa"]),
            initial_total_overload=d["initial_total_overload"],
            steps=steps,
            terminal_profile=ActionProfile(tuple(prof)) if prof is not None else None,
            termination_reason=d["termination_reason"],
            rounds=d.get("rounds", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for s in self.steps:
            w.writerow([
                s.round, s.t, s.agent, int(s.accepted), float(s.cost_before), float(s.cost_after),
                float(s.potential_before), float(s.potential_after),
                " ".join(map(str, sorted(s.overloaded_before))),
                " ".join(map(str, sorted(s.overloaded_after))),
                s.total_overload, f"{s.duration:.6f}", f"{s.elapsed:.6f}", s.evaluations,
            ])
        return buf.getvalue()


def run(scenario: Scenario, x0: ActionProfile | None = None, config: RunConfig = RunConfig()) -> Trace:
    """Best-response dynamics: sweep sectors until a round brings no strict improvement.

    Exits early as soon as the system is overload-free, and after
    ``config.max_rounds`` rounds with reason ``step_limit``.
    """
    if x0 is None:
        x0 = ActionProfile.zeros(scenario)
    check_profile(scenario, x0)
    kappa = config.kappa
    x = x0
    loads = compute_loads(scenario, x)
    trace = Trace(kappa=kappa, initial_total_overload=loads.total)
    order_rng = np.random.default_rng(np.random.SeedSequence([config.ga.seed, 1]))
    agents = np.arange(scenario.n_sectors)
    t = 0
    clock0 = time.perf_counter()
    for rnd in range(1, config.max_rounds + 1):
        trace.rounds = rnd
        improved = False
        order = order_rng.permutation(agents) if config.agent_order == "seeded_shuffle_per_round" else agents
        for agent in order.tolist():
            tic = time.perf_counter()
            j_before = cost_from_loads(loads, agent, kappa)
            phi_before = potential_from_loads(loads, kappa)
            mo_before = loads.overloaded_sectors
            if config.solver == "exhaustive":
                resp = exhaustive_best_response(scenario, x, agent, kappa, cap=config.exhaustive_cap, loads=loads)
            else:
                rng = np.random.default_rng(np.random.SeedSequence([config.ga.seed, 0, t]))
                resp = best_response(scenario, x, agent, kappa, config.ga, loads=loads, rng=rng)
            cand_loads = update_loads(scenario, loads, x, resp.profile)
            j_cand = cost_from_loads(cand_loads, agent, kappa)
            clear_before = loads.per_sector_overload == 0
            no_new = not np.any(clear_before & (cand_loads.per_sector_overload > 0))
            accepted = j_cand < j_before and no_new
            if accepted:
                x, loads = resp.profile, cand_loads
                improved = True
            now = time.perf_counter()
            trace.steps.append(Step(
                round=rnd, t=t, agent=agent,
                cost_before=j_before, cost_after=cost_from_loads(loads, agent, kappa),
                potential_before=phi_before, potential_after=potential_from_loads(loads, kappa),
                overloaded_before=mo_before, overloaded_after=loads.overloaded_sectors,
                total_overload=loads.total, accepted=accepted,
                duration=now - tic, elapsed=now - clock0, evaluations=resp.evaluations,
            ))
            t += 1
            if loads.total == 0:
                trace.terminal_profile, trace.termination_reason = x, "feasible_found"
                return trace
        log.debug("round %d done, total overload %d", rnd, loads.total)
        if not improved:
            trace.terminal_profile, trace.termination_reason = x, "no_improvement_round"
            return trace
    trace.terminal_profile, trace.termination_reason = x, "step_limit"
    log.warning("best-response dynamics hit the round limit (%d)", config.max_rounds)
    return trace
