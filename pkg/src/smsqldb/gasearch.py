"""Genetic-algorithm nearest-value search over a table column.

Genotypes are row indices; the phenotype of a gene is the stored value of
the queried attribute in that row. Fitness is the absolute distance to the
query target, so lower is better and zero is an exact match.

One generation is: evaluate, test acceptance, select parents, arithmetic
crossover, uniform mutation. :func:`oracle_search` is an exhaustive scan
used to validate the GA.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .errors import EmptyTableError
from .microdb import Table

FitnessVector = tuple[int, ...]


class Selection(str, Enum):
    ROULETTE = "roulette"
    TOURNAMENT = "tournament"
    TRUNCATION = "truncation"


class Method(str, Enum):
    GA = "ga"
    ORACLE = "oracle"


class OutcomeKind(str, Enum):
    EXACT = "exact"
    APPROXIMATE = "approximate"
    NOT_FOUND = "not_found"


@dataclass(frozen=True)
class GaConfig:
    """GA run parameters.

    ``exact_first`` applies the zero-distance criterion during the run and
    only settles for ``0 < fit <= fitness_threshold`` once the generation
    budget is spent. With it off, the first individual within the
    threshold is accepted immediately. ``fallback`` returns the best
    individual seen when nothing met the threshold.
    """

    pop_size: int = 16
    num_gens: int = 40
    num_muts: int = 1
    fitness_threshold: int = 1
    selection: Selection = Selection.ROULETTE
    rng_seed: int = 1
    exact_first: bool = True
    fallback: bool = True

    def __post_init__(self) -> None:
        if self.pop_size < 2 or self.pop_size % 2:
            raise ValueError(f"pop_size must be even and >= 2, got {self.pop_size}")
        if self.num_gens < 1:
            raise ValueError(f"num_gens must be >= 1, got {self.num_gens}")
        if self.num_muts < 0:
            raise ValueError(f"num_muts must be >= 0, got {self.num_muts}")
        if self.fitness_threshold < 0:
            raise ValueError(f"fitness_threshold must be >= 0, got {self.fitness_threshold}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "selection", Selection(self.selection))


@dataclass(frozen=True)
class Population:
    genes: tuple[int, ...]
    generation: int = 0


@dataclass(frozen=True)
class SearchResult:
    kind: OutcomeKind
    row: int | None
    distance: int | None
    value: int | None
    generations_used: int
    evaluations: int
    method: Method
    # best-so-far fitness after each evaluated generation (GA only)
    best_trace: tuple[int, ...] = field(default=(), compare=False, repr=False)

    @property
    def found(self) -> bool:
        return self.kind is not OutcomeKind.NOT_FOUND


def init_population(rng: random.Random, cfg: GaConfig, row_count: int) -> Population:
    if row_count < 1:
        raise EmptyTableError("cannot search an empty table")
    return Population(tuple(rng.randrange(row_count) for _ in range(cfg.pop_size)), 0)


def _fitness(genes: Sequence[int], column: Sequence[int], target: int) -> FitnessVector:
    return tuple(abs(column[g] - target) for g in genes)


def evaluate_fitness(pop: Population, table: Table, attribute: str, target: int) -> FitnessVector:
    column = table.column(attribute)
    return _fitness(pop.genes, column, target)


def check_acceptance(fits: Sequence[int], threshold: int) -> int | None:
    """Lowest locus whose fitness is within ``threshold``, else ``None``."""
    for locus, fit in enumerate(fits):
        if fit <= threshold:
            return locus
    return None


def select_parents(
    rng: random.Random,
    pop: Population,
    fits: Sequence[int],
    scheme: Selection = Selection.ROULETTE,
) -> Population:
    """Sample ``pop_size`` parents with replacement.

    Roulette weights are ``max_fit + 1 - fit``: strictly positive and larger
    for closer individuals. Tournament is size two, lower fit wins, ties by
    coin flip. Truncation cycles through the better half, ranked by fit
    then locus.
    """
    genes = pop.genes
    n = len(genes)
    if len(fits) != n:
        raise ValueError("fitness vector is not aligned with the population")
    scheme = Selection(scheme)
    if scheme is Selection.ROULETTE:
        top = max(fits)
        weights = [top + 1 - f for f in fits]
        chosen = rng.choices(genes, weights=weights, k=n)
    elif scheme is Selection.TOURNAMENT:
        chosen = []
        for _ in range(n):
            a, b = rng.randrange(n), rng.randrange(n)
            if fits[a] < fits[b]:
                chosen.append(genes[a])
            elif fits[b] < fits[a]:
                chosen.append(genes[b])
            else:
                chosen.append(genes[a] if rng.random() < 0.5 else genes[b])
    else:
        ranked = sorted(range(n), key=lambda i: (fits[i], i))[: max(1, n // 2)]
        chosen = [genes[ranked[i % len(ranked)]] for i in range(n)]
    return Population(tuple(chosen), pop.generation)


def blend(p1: int, p2: int, alpha: float, row_count: int) -> tuple[int, int]:
    """Arithmetic crossover of two row indices, rounded half-up and clamped."""
    hi = row_count - 1
    c1 = math.floor(alpha * p1 + (1 - alpha) * p2 + 0.5)
    c2 = math.floor((1 - alpha) * p1 + alpha * p2 + 0.5)
    return min(max(c1, 0), hi), min(max(c2, 0), hi)


def crossover(rng: random.Random, parents: Population, row_count: int) -> Population:
    genes = parents.genes
    if len(genes) % 2:
        raise ValueError("crossover needs an even population")
    children: list[int] = []
    for i in range(0, len(genes), 2):
        children.extend(blend(genes[i], genes[i + 1], rng.random(), row_count))
    return Population(tuple(children), parents.generation + 1)


def mutate(rng: random.Random, pop: Population, cfg: GaConfig, row_count: int) -> Population:
    if cfg.num_muts == 0:
        return pop
    genes = list(pop.genes)
    for _ in range(cfg.num_muts):
        genes[rng.randrange(len(genes))] = rng.randrange(row_count)
    return Population(tuple(genes), pop.generation)


def _result(kind, row, column, target, gens, evals, method, trace=()) -> SearchResult:
    if row is None:
        return SearchResult(kind, None, None, None, gens, evals, method, tuple(trace))
    value = column[row]
    return SearchResult(kind, row, abs(value - target), value, gens, evals, method, tuple(trace))


def run_search(cfg: GaConfig, table: Table, attribute: str, target: int) -> SearchResult:
    """Run the GA against a snapshot of one column and return what it found."""
    column = table.column(attribute)
    n = len(column)
    rng = random.Random(cfg.rng_seed)
    pop = init_population(rng, cfg, n)
    early_threshold = 0 if cfg.exact_first else cfg.fitness_threshold

    best_fit: int | None = None
    best_row: int | None = None
    trace: list[int] = []
    evaluations = 0
    for gen in range(cfg.num_gens):
        fits = _fitness(pop.genes, column, target)
        evaluations += len(fits)
        gen_best = min(range(len(fits)), key=fits.__getitem__)
        if best_fit is None or fits[gen_best] < best_fit:
            best_fit, best_row = fits[gen_best], pop.genes[gen_best]
        trace.append(best_fit)

        locus = check_acceptance(fits, early_threshold)
        if locus is not None:
            row = pop.genes[locus]
            kind = OutcomeKind.EXACT if fits[locus] == 0 else OutcomeKind.APPROXIMATE
            return _result(kind, row, column, target, gen + 1, evaluations, Method.GA, trace)
        if gen == cfg.num_gens - 1:
            break
        parents = select_parents(rng, pop, fits, cfg.selection)
        pop = crossover(rng, parents, n)
        pop = mutate(rng, pop, cfg, n)

    gens = len(trace)
    assert best_fit is not None
    if best_fit <= cfg.fitness_threshold or cfg.fallback:
        kind = OutcomeKind.EXACT if best_fit == 0 else OutcomeKind.APPROXIMATE
        return _result(kind, best_row, column, target, gens, evaluations, Method.GA, trace)
    return _result(OutcomeKind.NOT_FOUND, None, column, target, gens, evaluations, Method.GA, trace)


def oracle_search(table: Table, attribute: str, target: int) -> SearchResult:
    """Exhaustive scan: minimum-distance row, lowest index on ties."""
    column = table.column(attribute)
    if not column:
        raise EmptyTableError("cannot search an empty table")
    best_row = 0
    best_fit = abs(column[0] - target)
    for row in range(1, len(column)):
        fit = abs(column[row] - target)
        if fit < best_fit:
            best_row, best_fit = row, fit
    kind = OutcomeKind.EXACT if best_fit == 0 else OutcomeKind.APPROXIMATE
    return _result(kind, best_row, column, target, 0, len(column), Method.ORACLE)
