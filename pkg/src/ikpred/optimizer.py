"""Measurement-schedule optimization under a budget.

Selects the N measurement times in {0..T-1} minimizing the summed
predicted-position error variance. Two solvers: exhaustive enumeration
for small instances and a genetic algorithm (tournament selection,
uniform crossover, per-gene mutation, duplicate repair) for the real
ones. Fitness is the covariance-only recursion; a compiled kernel keeps
the ~1e5 evaluations of a default GA run affordable, with a plain numpy
fallback when numba is unavailable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    InvalidScheduleError,
    Schedule,
    StateSpaceModel,
    WarmupConfig,
    regular_schedule,
    require_valid_model,
)
from .predictor import objective

try:
    from ._kernels import objective_kernel as _objective_kernel
except ImportError:  # pragma: no cover - numba missing
    _objective_kernel = None


@dataclass(frozen=True)
class GaConfig:
    """Genetic-algorithm hyper-parameters.

    mutation_rate=None resolves to 1/N at run time. With
    seed_with_regular the initial population contains the regular
    schedule, which makes "never worse than the regular schedule" a
    structural guarantee.
    """

    population_size: int = 200
    generations: int = 500
    crossover_rate: float = 0.9
    mutation_rate: Optional[float] = None
    elitism_count: int = 2
    rng_seed: int = 0
    seed_with_regular: bool = True

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be positive")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must be in [0, population_size)")


@dataclass(frozen=True)
class OptimizationResult:
    best_schedule: Schedule
    best_objective: float
    history: tuple[float, ...]


def _objective_numpy(A, W, C, R, P0, measured, t0) -> float:
    """Reference implementation of the fitness recursion (see _kernels)."""
    T = measured.shape[0]
    P = P0.copy()
    acc = 0.0
    for t in range(T + 1):
        if t > t0:
            acc += float(np.trace(C @ P @ C.T))
        if t == T:
            break
        if measured[t]:
            PCt = P @ C.T
            S = C @ PCt + R
            P = P - PCt @ np.linalg.solve(S, PCt.T)
            P = 0.5 * (P + P.T)
        P = A @ P @ A.T + W
        P = 0.5 * (P + P.T)
    return acc


class ScheduleObjective:
    """Memoizing fitness function over sorted time tuples.

    Pure function of the schedule; shares nothing mutable with callers,
    so instances can be used from independent workers.
    """

    def __init__(self, model: StateSpaceModel, horizon_T: int, warmup: WarmupConfig):
        require_valid_model(model)
        if warmup.t0 >= horizon_T:
            raise ValueError(f"warm-up t0={warmup.t0} must be < horizon T={horizon_T}")
        self.horizon_T = int(horizon_T)
        self.t0 = warmup.t0
        self._A = np.ascontiguousarray(model.A)
        self._W = np.ascontiguousarray(model.G @ model.Q @ model.G.T)
        self._C = np.ascontiguousarray(model.C)
        self._R = np.ascontiguousarray(model.R)
        self._P0 = np.ascontiguousarray(model.x0_cov)
        self._memo: dict[tuple[int, ...], float] = {}
        self._kernel = _objective_kernel if _objective_kernel is not None else _objective_numpy

    def __call__(self, times: tuple[int, ...]) -> float:
        value = self._memo.get(times)
        if value is None:
            mask = np.zeros(self.horizon_T, dtype=np.bool_)
            if times:
                mask[list(times)] = True
            value = float(
                self._kernel(self._A, self._W, self._C, self._R, self._P0, mask, self.t0)
            )
            self._memo[times] = value
        return value

    @property
    def evaluations(self) -> int:
        return len(self._memo)


def _repair_array(candidate: np.ndarray, horizon_T: int, rng: np.random.Generator) -> np.ndarray:
    """Replace duplicate entries with uniform draws from unused times.

    Each replacement is uniform over the times absent from the candidate
    (and from earlier replacements); the two sampling branches are
    distributionally identical, rejection being cheaper when the free
    set is large.
    """
    values = candidate.tolist()
    seen: set[int] = set()
    kept: list[int] = []
    duplicates = 0
    for value in values:
        if value in seen:
            duplicates += 1
        else:
            seen.add(value)
            kept.append(value)
    if duplicates == 0:
        return np.sort(candidate)
    if horizon_T <= 4 * len(values):
        free = [t for t in range(horizon_T) if t not in seen]
        for _ in range(duplicates):
            kept.append(free.pop(int(rng.integers(len(free)))))
    else:
        while duplicates:
            t = int(rng.integers(horizon_T))
            if t not in seen:
                seen.add(t)
                kept.append(t)
                duplicates -= 1
    kept.sort()
    return np.array(kept, dtype=np.int64)


def repair_duplicates(candidate, horizon_T: int, rng: np.random.Generator) -> Schedule:
    """Duplicate-repair feasibility operator.

    Entries already unique are kept; each repeated entry is replaced by
    a time drawn uniformly from those not present in the candidate.
    """
    arr = np.asarray(candidate, dtype=np.int64).reshape(-1)
    if arr.shape[0] > horizon_T:
        raise InvalidScheduleError(
            f"cannot repair: budget {arr.shape[0]} exceeds horizon {horizon_T}"
        )
    if arr.size and (arr.min() < 0 or arr.max() >= horizon_T):
        raise InvalidScheduleError(f"candidate entries must lie in [0, {horizon_T - 1}]")
    return Schedule(tuple(_repair_array(arr, horizon_T, rng)), horizon_T)


def exhaustive_search(
    model: StateSpaceModel,
    horizon_T: int,
    budget_N: int,
    warmup: WarmupConfig,
    max_candidates: int = 2_000_000,
) -> OptimizationResult:
    """Enumerate all C(T, N) schedules; ties go to the lexicographically
    smallest time vector. Refuses instances above ``max_candidates``."""
    from itertools import combinations

    T, N = int(horizon_T), int(budget_N)
    if N < 0 or N > T:
        raise InvalidScheduleError(f"budget must satisfy 0 <= N <= T, got N={N}, T={T}")
    count = math.comb(T, N)
    if count > max_candidates:
        raise ValueError(
            f"exhaustive search refused: C({T},{N}) = {count} candidates exceeds cap {max_candidates}"
        )
    fitness = ScheduleObjective(model, T, warmup)
    best_times: Optional[tuple[int, ...]] = None
    best_value = math.inf
    for times in combinations(range(T), N):
        value = fitness(times)
        if value < best_value:  # strict: combinations() yields lex order
            best_value = value
            best_times = times
    assert best_times is not None
    schedule = Schedule(best_times, T)
    exact = objective(model, schedule, warmup)
    return OptimizationResult(schedule, exact, (exact,))


def _random_population(rng: np.random.Generator, size: int, T: int, N: int) -> np.ndarray:
    # argsort of uniforms = uniform random N-subsets of {0..T-1}
    pop = np.argsort(rng.random((size, T)), axis=1)[:, :N].astype(np.int64)
    pop.sort(axis=1)
    return pop


def genetic_search(
    model: StateSpaceModel,
    horizon_T: int,
    budget_N: int,
    warmup: WarmupConfig,
    config: GaConfig = GaConfig(),
) -> OptimizationResult:
    """Approximately solve the schedule-selection problem.

    Deterministic given config.rng_seed. Returns the best schedule seen
    over all generations, with its objective recomputed through the
    plain covariance recursion.
    """
    T, N = int(horizon_T), int(budget_N)
    if N < 1 or N > T:
        raise InvalidScheduleError(f"budget must satisfy 1 <= N <= T, got N={N}, T={T}")
    fitness = ScheduleObjective(model, T, warmup)
    rng = np.random.default_rng(config.rng_seed)
    mutation_rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / N
    pop_size = config.population_size

    population = _random_population(rng, pop_size, T, N)
    if config.seed_with_regular:
        population[0] = np.asarray(regular_schedule(T, N).times, dtype=np.int64)

    best_times = tuple(population[0].tolist())
    best_value = math.inf
    history: list[float] = []

    for gen in range(config.generations):
        keys = [tuple(row.tolist()) for row in population]
        values = np.array([fitness(key) for key in keys])
        leader = int(np.argmin(values))
        if values[leader] < best_value:
            best_value = float(values[leader])
            best_times = keys[leader]
        history.append(best_value)
        if gen == config.generations - 1:
            break

        order = np.argsort(values, kind="stable")
        elites = population[order[: config.elitism_count]]
        n_children = pop_size - config.elitism_count

        picks_a = rng.integers(0, pop_size, (n_children, 3))
        picks_b = rng.integers(0, pop_size, (n_children, 3))
        rows = np.arange(n_children)
        parent_a = population[picks_a[rows, np.argmin(values[picks_a], axis=1)]]
        parent_b = population[picks_b[rows, np.argmin(values[picks_b], axis=1)]]

        gene_pick = rng.random((n_children, N)) < 0.5
        children = np.where(gene_pick, parent_a, parent_b)
        skip_cross = rng.random(n_children) >= config.crossover_rate
        children[skip_cross] = parent_a[skip_cross]

        mut_mask = rng.random((n_children, N)) < mutation_rate
        mut_values = rng.integers(0, T, (n_children, N))
        children = np.where(mut_mask, mut_values, children)

        children.sort(axis=1)
        needs_repair = np.nonzero((np.diff(children, axis=1) == 0).any(axis=1))[0]
        for i in needs_repair:
            children[i] = _repair_array(children[i], T, rng)
        population = np.vstack([elites, children])

    best_schedule = Schedule(best_times, T)
    exact = objective(model, best_schedule, warmup)
    if config.seed_with_regular:
        reg = regular_schedule(T, N)
        reg_exact = objective(model, reg, warmup)
        if reg_exact < exact:  # guard against kernel/objective rounding inversions
            best_schedule, exact = reg, reg_exact
    return OptimizationResult(best_schedule, exact, tuple(history))
