"""Deterministic genetic algorithm over fixed-length vectors of bounded integer genes.

Fitness is evaluated a whole population at a time: ``fitness(pop)`` takes an
``(P, G)`` integer array and returns ``P`` costs, ``inf`` marking infeasible
chromosomes (death penalty).  Ties are broken by lexicographic chromosome
order so results never depend on evaluation order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

BatchFitness = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 50
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    max_generations: int = 100
    seed: int = 0
    elitism_count: int = 1
    tournament_size: int = 2
    seed_mutation_rate: float = 0.3
    patience: int = 20

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be at least 1")
        for name in ("crossover_rate", "mutation_rate", "seed_mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 1 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must lie in [1, population_size)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be positive")


@dataclass
class GAResult:
    best: np.ndarray
    best_fitness: float
    generations: int
    evaluations: int
    incumbent_infeasible: bool = False
    history: list[float] = field(default_factory=list)


def rank_order(pop: np.ndarray, fit: np.ndarray) -> np.ndarray:
    """Indices sorted by fitness, then lexicographically by genes."""
    keys = [pop[:, g] for g in range(pop.shape[1] - 1, -1, -1)]
    keys.append(fit)
    return np.lexsort(keys)


def _resample(rng: np.random.Generator, shape: tuple[int, int], arities: np.ndarray) -> np.ndarray:
    return np.floor(rng.random(shape) * arities).astype(np.int64)


def minimize(
    arities,
    fitness: BatchFitness,
    incumbent,
    config: GAConfig = GAConfig(),
    rng: np.random.Generator | None = None,
) -> GAResult:
    arities = np.asarray(arities, dtype=np.int64)
    incumbent = np.asarray(incumbent, dtype=np.int64)
    G = len(arities)
    if incumbent.shape != (G,):
        raise ValueError("incumbent length does not match the gene space")
    if G and (np.any(incumbent < 0) or np.any(incumbent >= arities)):
        raise ValueError("incumbent lies outside the gene space")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    inc_fit = float(fitness(incumbent[None, :])[0])
    evaluations = 1
    if not np.isfinite(inc_fit):
        return GAResult(incumbent.copy(), inc_fit, 0, evaluations, incumbent_infeasible=True)
    if G == 0:
        return GAResult(incumbent.copy(), inc_fit, 0, evaluations)

    P = config.population_size
    pop = np.repeat(incumbent[None, :], P, axis=0)
    seed_mask = rng.random((P - 1, G)) < config.seed_mutation_rate
    pop[1:] = np.where(seed_mask, _resample(rng, (P - 1, G), arities), pop[1:])
    fit = np.empty(P)
    fit[0] = inc_fit
    fit[1:] = fitness(pop[1:])
    evaluations += P - 1

    order = rank_order(pop, fit)
    best_fit = fit[order[0]]
    history = [float(best_fit)]
    stale = 0
    n_elite = config.elitism_count
    n_children = P - n_elite
    n_pairs = (n_children + 1) // 2
    generation = 0
    for generation in range(1, config.max_generations + 1):
        rank_of = np.empty(P, dtype=np.int64)
        rank_of[order] = np.arange(P)

        contenders = rng.integers(P, size=(2 * n_pairs, config.tournament_size))
        winners = contenders[np.arange(2 * n_pairs), np.argmin(rank_of[contenders], axis=1)]
        mothers, fathers = pop[winners[:n_pairs]], pop[winners[n_pairs:]]

        swap = rng.random((n_pairs, G)) < 0.5
        swap &= (rng.random(n_pairs) < config.crossover_rate)[:, None]
        children = np.concatenate(
            [np.where(swap, fathers, mothers), np.where(swap, mothers, fathers)]
        )[:n_children]

        mutate = rng.random(children.shape) < config.mutation_rate
        children = np.where(mutate, _resample(rng, children.shape, arities), children)

        elite = order[:n_elite]
        pop = np.concatenate([pop[elite], children])
        fit = np.concatenate([fit[elite], fitness(children)])
        evaluations += n_children

        order = rank_order(pop, fit)
        gen_best = fit[order[0]]
        history.append(float(gen_best))
        if gen_best < best_fit:
            best_fit = gen_best
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    best = pop[order[0]].copy()
    log.debug("GA finished after %d generations, best %.6g", generation, best_fit)
    return GAResult(best, float(fit[order[0]]), generation, evaluations, history=history)
