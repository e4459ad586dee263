"""Classical differential evolution for well placement.

Maximisation throughout: fitness is NPV in dollars and infeasible candidates
carry ``NEGATIVE_INFINITY`` (death penalty). The loop is generation
synchronous: all random draws of a generation happen before any of its
offspring are evaluated, so evaluating them concurrently gives the same
result as evaluating them in order.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .economics import NEGATIVE_INFINITY, EconomicParams, penalized_npv
from .flow_sim import INJECTOR, PRODUCER, ControlSchedule, FluidProps, WellSpec, simulate
from .grid_field import Grid, RockField, cell_center


class Strategy(str, enum.Enum):
    RAND_1 = "rand/1"
    CURRENT_TO_BEST_1 = "current-to-best/1"


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DEConfig:
    N: int
    F: float
    CR: float
    strategy: Strategy
    budget: int = 10_000
    seed: int = 0
    charge_infeasible: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.N < 4:
            raise ConfigurationError(f"population size must be at least 4, got {self.N}")
        if not 0 <= self.F <= 2:
            raise ConfigurationError(f"F must lie in [0, 2], got {self.F}")
        if not 0 <= self.CR <= 1:
            raise ConfigurationError(f"CR must lie in [0, 1], got {self.CR}")
        if self.budget < self.N:
            raise ConfigurationError(f"budget {self.budget} is smaller than the population size {self.N}")


@dataclass(frozen=True)
class ProblemBounds:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ConfigurationError("bounds must be non-empty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigurationError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def D(self) -> int:
        return len(self.lower)

    @classmethod
    def for_wells(cls, grid: Grid, n_wells: int) -> ProblemBounds:
        """Continuous cell coordinates in [1, nx] x [1, ny] for each well."""
        return cls((1.0, 1.0) * n_wells, (float(grid.nx), float(grid.ny)) * n_wells)


@dataclass
class Candidate:
    x: np.ndarray
    fitness: float = math.nan


class RngStream:
    """Seeded source of U(0,1) reals and uniform integers."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self) -> float:
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def index(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self._gen.integers(n))


@dataclass
class RunHistory:
    best_so_far: list[float] = field(default_factory=list)
    gen_best: list[float] = field(default_factory=list)
    gen_mean_feasible: list[float] = field(default_factory=list)
    evaluations: int = 0
    invocations: int = 0
    final_population: np.ndarray | None = None
    final_fitness: np.ndarray | None = None

    def evaluations_csv(self) -> str:
        lines = ["eval_index,best_so_far_npv"]
        lines += [f"{k},{v:.6g}" for k, v in enumerate(self.best_so_far, start=1)]
        return "\n".join(lines) + "\n"

    def generations_csv(self) -> str:
        lines = ["gen,gen_best,gen_mean_feasible"]
        lines += [f"{g},{b:.6g},{m:.6g}" for g, (b, m) in enumerate(zip(self.gen_best, self.gen_mean_feasible))]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# operators

def init_population(bounds: ProblemBounds, N: int, rng: RngStream) -> np.ndarray:
    """N x D array, each component uniform in its bounds."""
    if N < 4:
        raise ConfigurationError("population size must be at least 4")
    lo = np.array(bounds.lower)
    hi = np.array(bounds.upper)
    u = np.array([rng.uniforms(bounds.D) for _ in range(N)])
    return np.minimum(lo + u * (hi - lo), hi)


def distinct_indices(rng: RngStream, N: int, exclude: Sequence[int], k: int) -> list[int]:
    """k distinct indices from range(N) avoiding ``exclude``, by rejection."""
    banned = set(exclude)
    if N - len(banned) < k:
        raise ConfigurationError(f"population of {N} cannot supply {k} distinct partners")
    picked = []
    while len(picked) < k:
        r = rng.index(N)
        if r not in banned:
            banned.add(r)
            picked.append(r)
    return picked


def mutate_rand1(pop: np.ndarray, i: int, F: float, rng: RngStream) -> np.ndarray:
    r1, r2, r3 = distinct_indices(rng, len(pop), (i,), 3)
    return pop[r1] + F * (pop[r2] - pop[r3])


def mutate_current_to_best1(pop: np.ndarray, i: int, best: int, F: float, rng: RngStream) -> np.ndarray:
    r1, r2 = distinct_indices(rng, len(pop), (i, best), 2)
    x = pop[i]
    return x + F * (pop[best] - x) + F * (pop[r1] - pop[r2])


def binomial_crossover(x: np.ndarray, v: np.ndarray, CR: float, rng: RngStream) -> np.ndarray:
    D = len(x)
    j_rand = rng.index(D)
    take = rng.uniforms(D) <= CR
    take[j_rand] = True
    return np.where(take, v, x)


def clamp_to_bounds(u: np.ndarray, bounds: ProblemBounds) -> np.ndarray:
    return np.clip(u, bounds.lower, bounds.upper)


def select(parent: Candidate, offspring: Candidate) -> Candidate:
    """Offspring survives only if strictly fitter."""
    return offspring if offspring.fitness > parent.fitness else parent


# ---------------------------------------------------------------------------
# well-placement objective

def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def decode_wells(x: Sequence[float], grid: Grid, n_wells: int) -> list[tuple[int, int]]:
    """Round each coordinate pair to a cell index and clamp it to the grid."""
    if len(x) != 2 * n_wells:
        raise ConfigurationError(f"expected {2 * n_wells} coordinates, got {len(x)}")
    cells = []
    for w in range(n_wells):
        i = min(max(_round_half_away(x[2 * w]), 1), grid.nx)
        j = min(max(_round_half_away(x[2 * w + 1]), 1), grid.ny)
        cells.append((i, j))
    return cells


def _min_distance(cells, grid: Grid) -> float:
    centers = [cell_center(grid, i, j) for i, j in cells]
    return min(math.dist(a, b) for a, b in itertools.combinations(centers, 2))


def min_well_distance(x: Sequence[float], grid: Grid, n_wells: int) -> float:
    """Smallest pairwise distance (m) between the centres of the decoded well cells."""
    return _min_distance(decode_wells(x, grid, n_wells), grid)


@dataclass
class CaseContext:
    """Everything needed to turn a coordinate vector into an NPV."""

    rock: RockField
    fluid: FluidProps
    schedule: ControlSchedule
    economics: EconomicParams
    flow_limit: float | None = None
    min_distance: float = 250.0
    n_injectors: int = 2
    n_producers: int = 2
    injector_bhp: tuple[float, ...] = (450.0,) * 5
    producer_bhp: tuple[float, ...] = (100.0,) * 5
    well_radius: float = 0.1
    shut_in: str = "well"
    simulator: Callable = simulate

    @property
    def n_wells(self) -> int:
        return self.n_injectors + self.n_producers

    def wells(self, cells) -> list[WellSpec]:
        out = []
        for k, cell in enumerate(cells):
            if k < self.n_injectors:
                out.append(WellSpec(f"I{k + 1}", INJECTOR, cell, self.injector_bhp, self.well_radius))
            else:
                out.append(WellSpec(f"P{k - self.n_injectors + 1}", PRODUCER, cell, self.producer_bhp,
                                    self.well_radius))
        return out

    def run_layout(self, cells):
        return self.simulator(self.rock, self.fluid, self.wells(cells), self.schedule,
                              flow_limit=self.flow_limit,
                              water_cut_threshold=self.economics.water_cut_threshold,
                              shut_in=self.shut_in)


def canonical_layout(cells, n_injectors: int) -> tuple:
    """Sort wells within each kind; wells of one kind share controls, so order is irrelevant."""
    return tuple(sorted(cells[:n_injectors])) + tuple(sorted(cells[n_injectors:]))


def evaluate_candidate(x: Sequence[float], ctx: CaseContext) -> float:
    """Penalised NPV of a layout; too-close wells are rejected without simulating.

    The layout is simulated in canonical well order so the value depends only
    on the set of injector and producer cells.
    """
    cells = decode_wells(x, ctx.rock.grid, ctx.n_wells)
    if _min_distance(cells, ctx.rock.grid) < ctx.min_distance:
        return NEGATIVE_INFINITY
    return penalized_npv(ctx.run_layout(canonical_layout(cells, ctx.n_injectors)), ctx.economics)


class CaseEvaluator:
    """``evaluate_candidate`` with a memo keyed on the decoded layout.

    The objective only depends on the rounded cells, so repeated layouts are
    served from the memo, keyed on the canonical layout that
    ``evaluate_candidate`` simulates; memo hits therefore return exactly the
    value a fresh evaluation would.
    """

    def __init__(self, ctx: CaseContext, max_entries: int = 500_000):
        self.ctx = ctx
        self.max_entries = max_entries
        self._memo: dict = {}
        self.calls = 0
        self.simulations = 0
        self.rejected = 0

    def __call__(self, x) -> float:
        self.calls += 1
        ctx = self.ctx
        cells = decode_wells(x, ctx.rock.grid, ctx.n_wells)
        if _min_distance(cells, ctx.rock.grid) < ctx.min_distance:
            self.rejected += 1
            return NEGATIVE_INFINITY
        key = canonical_layout(cells, ctx.n_injectors)
        value = self._memo.get(key)
        if value is None:
            self.simulations += 1
            value = penalized_npv(ctx.run_layout(key), ctx.economics)
            if len(self._memo) < self.max_entries:
                self._memo[key] = value
        return value


# ---------------------------------------------------------------------------
# main loop

def _mean_feasible(fit: np.ndarray) -> float:
    ok = np.isfinite(fit)
    return float(fit[ok].mean()) if ok.any() else math.nan


def run_de(config: DEConfig, bounds: ProblemBounds, evaluator: Callable[[np.ndarray], float],
           on_generation: Callable | None = None, map_fn: Callable = map,
           max_invocations: int | None = None) -> tuple[Candidate, RunHistory]:
    """Maximise ``evaluator`` within ``config.budget`` evaluations.

    ``on_generation(gen, population, fitness)`` is called after the initial
    population and after every generation. ``map_fn`` may be a parallel map;
    it only ever receives offspring that fit in the remaining budget. With
    ``charge_infeasible=False`` evaluations returning -inf are free, up to
    ``max_invocations`` evaluator calls in total (default 100 x budget).
    """
    rng = RngStream(config.seed)
    N = config.N
    hist = RunHistory()
    best = Candidate(np.empty(0), NEGATIVE_INFINITY)
    have_best = False
    cap = max_invocations or 100 * config.budget

    def record(x, f):
        nonlocal best, have_best
        hist.invocations += 1
        if config.charge_infeasible or f != NEGATIVE_INFINITY:
            hist.evaluations += 1
            if not have_best or f > best.fitness:
                best = Candidate(x.copy(), f)
                have_best = True
            hist.best_so_far.append(best.fitness)
        elif not have_best:
            best = Candidate(x.copy(), f)

    def evaluate_batch(xs):
        """Evaluate in order while budget remains; returns fitness (nan = not evaluated)."""
        out = np.full(len(xs), math.nan)
        if config.charge_infeasible:
            n = min(len(xs), config.budget - hist.evaluations)
            for k, f in enumerate(map_fn(evaluator, xs[:n])):
                out[k] = f
                record(xs[k], f)
            return out
        for k, x in enumerate(xs):
            if hist.evaluations >= config.budget or hist.invocations >= cap:
                break
            out[k] = evaluator(x)
            record(x, out[k])
        return out

    pop = init_population(bounds, N, rng)
    fit = evaluate_batch(list(pop))
    if np.isnan(fit).any():
        if hist.invocations >= cap:
            raise ConfigurationError("invocation cap reached before the initial population was evaluated")
        raise ConfigurationError("budget exhausted by the initial population")
    hist.gen_best.append(float(fit.max()))
    hist.gen_mean_feasible.append(_mean_feasible(fit))
    if on_generation:
        on_generation(0, pop, fit)

    gen = 0
    while hist.evaluations < config.budget and hist.invocations < cap:
        gen += 1
        i_best = int(np.argmax(fit))
        trials = []
        for i in range(N):
            if config.strategy is Strategy.RAND_1:
                v = mutate_rand1(pop, i, config.F, rng)
            else:
                v = mutate_current_to_best1(pop, i, i_best, config.F, rng)
            u = binomial_crossover(pop[i], v, config.CR, rng)
            trials.append(clamp_to_bounds(u, bounds))
        f_trials = evaluate_batch(trials)
        for i in range(N):
            if f_trials[i] > fit[i]:
                pop[i] = trials[i]
                fit[i] = f_trials[i]
        hist.gen_best.append(float(fit.max()))
        hist.gen_mean_feasible.append(_mean_feasible(fit))
        if on_generation:
            on_generation(gen, pop, fit)

    hist.final_population = pop
    hist.final_fitness = fit
    return best, hist
