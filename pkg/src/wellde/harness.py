"""Experimental protocol: DE configurations, cases, trial batteries and result files."""
from __future__ import annotations

import csv
import io
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .de_core import CaseContext, CaseEvaluator, DEConfig, ProblemBounds, Strategy, run_de
from .economics import EconomicParams
from .flow_sim import ControlSchedule, FluidProps, WellSpec
from .grid_field import FieldWindow, Grid, RockField, generate_synthetic_field, load_spe10_dataset

# N, CR, F, mutation
TABLE3 = {
    1: (100, 0.5, 0.9, Strategy.RAND_1),
    2: (100, 0.9, 0.5, Strategy.RAND_1),
    3: (200, 0.5, 0.9, Strategy.RAND_1),
    4: (200, 0.9, 0.5, Strategy.RAND_1),
    5: (100, 0.5, 0.9, Strategy.CURRENT_TO_BEST_1),
    6: (100, 0.9, 0.5, Strategy.CURRENT_TO_BEST_1),
    7: (200, 0.5, 0.9, Strategy.CURRENT_TO_BEST_1),
    8: (200, 0.9, 0.5, Strategy.CURRENT_TO_BEST_1),
}
PAPER_BUDGET = 10_000
MINI_BUDGET = 2_000
MINI_POPULATION = {100: 20, 200: 40}
CONVERGENCE_STRIDE = 50

# Published memetic PSO results (best, worst, mean) in dollars, kept for reference only.
MEMETIC_PSO_REFERENCE = {
    1: (6.30e8, 5.97e8, 6.15e8),
    2: (8.64e8, 8.04e8, 8.35e8),
    3: (6.05e8, 5.63e8, 5.89e8),
}


def builtin_config(k: int, seed: int = 0, mini: bool = False) -> DEConfig:
    """Row ``k`` of the DE configuration table (budget 10,000).

    ``mini=True`` gives the desk-scale variant: population 100 -> 20,
    200 -> 40 and a 2,000 evaluation budget.
    """
    if k not in TABLE3:
        raise ValueError(f"DE configuration must be in 1..8, got {k}")
    N, CR, F, strategy = TABLE3[k]
    if mini:
        return DEConfig(MINI_POPULATION[N], F, CR, strategy, MINI_BUDGET, seed)
    return DEConfig(N, F, CR, strategy, PAPER_BUDGET, seed)


def config_label(config: DEConfig) -> str:
    for k, (N, CR, F, strategy) in TABLE3.items():
        if (config.N, config.CR, config.F, config.strategy, config.budget) == (N, CR, F, strategy, PAPER_BUDGET):
            return f"config{k}"
        if (config.N, config.CR, config.F, config.strategy, config.budget) == (
                MINI_POPULATION[N], CR, F, strategy, MINI_BUDGET):
            return f"config{k}-mini"
    return f"N{config.N}-F{config.F:g}-CR{config.CR:g}-{config.strategy.value}"


# ---------------------------------------------------------------------------
# cases

@dataclass(frozen=True)
class SyntheticRock:
    seed: int
    nx: int
    ny: int
    log_mean: float
    log_sigma: float
    smoothing_radius: int
    dx: float = 32.0
    dy: float = 32.0
    dz: float = 0.6096

    def build(self) -> RockField:
        grid = Grid(self.nx, self.ny, self.dx, self.dy, self.dz)
        return generate_synthetic_field(self.seed, grid, self.log_mean, self.log_sigma, self.smoothing_radius)


@dataclass(frozen=True)
class Spe10Rock:
    sidecar: str
    window: FieldWindow = FieldWindow()
    dx: float = 32.0
    dy: float = 32.0
    dz: float = 0.6096

    def build(self) -> RockField:
        grid = Grid(self.window.width, self.window.height, self.dx, self.dy, self.dz)
        return load_spe10_dataset(Path(self.sidecar), self.window, grid)


# Stand-in for the SPE10 window when the dataset is not supplied: 60x50,
# strongly heterogeneous, correlated over a few cells.
PAPER_SYNTHETIC_ROCK = SyntheticRock(seed=3, nx=60, ny=50, log_mean=math.log(150.0), log_sigma=1.5,
                                     smoothing_radius=2)
MINI_ROCK = SyntheticRock(seed=7, nx=20, ny=20, log_mean=math.log(100.0), log_sigma=1.0, smoothing_radius=2)


@dataclass(frozen=True)
class CaseSpec:
    """One optimisation problem: field, fluid, controls, economics and constraints."""

    case_id: int
    name: str
    r: float
    flow_limit: float | None
    rock: SyntheticRock | Spe10Rock
    fluid: FluidProps = FluidProps()
    schedule: ControlSchedule = ControlSchedule()
    c_o: float = 80.0
    c_w_disp: float = 12.0
    c_w_inj: float = 8.0
    water_cut_threshold: float = 0.78
    n_injectors: int = 2
    n_producers: int = 2
    min_distance: float = 250.0
    injector_bhp: tuple[float, ...] = (450.0,) * 5
    producer_bhp: tuple[float, ...] = (100.0,) * 5
    well_radius: float = 0.1
    shut_in: str = "well"
    mini: bool = False

    def __post_init__(self):
        expected = {1: (0.10, None), 2: (0.0, None), 3: (0.10, 1000.0)}
        if self.case_id not in expected:
            raise ValueError(f"case must be 1, 2 or 3, got {self.case_id}")
        if (self.r, self.flow_limit) != expected[self.case_id]:
            r, limit = expected[self.case_id]
            raise ValueError(f"case {self.case_id} requires r={r} and flow_limit={limit}")
        for b in self.injector_bhp:
            WellSpec("I", "injector", (1, 1), (b,)).check_bhp_range()
        for b in self.producer_bhp:
            WellSpec("P", "producer", (1, 1), (b,)).check_bhp_range()

    @property
    def economics(self) -> EconomicParams:
        return EconomicParams(self.c_o, self.c_w_disp, self.c_w_inj, self.r, self.water_cut_threshold)

    def context(self, rock: RockField | None = None) -> CaseContext:
        return CaseContext(
            rock=rock if rock is not None else self.rock.build(), fluid=self.fluid, schedule=self.schedule,
            economics=self.economics, flow_limit=self.flow_limit, min_distance=self.min_distance,
            n_injectors=self.n_injectors, n_producers=self.n_producers, injector_bhp=self.injector_bhp,
            producer_bhp=self.producer_bhp, well_radius=self.well_radius, shut_in=self.shut_in)

    def bounds(self) -> ProblemBounds:
        r = self.rock
        nx, ny = (r.window.width, r.window.height) if isinstance(r, Spe10Rock) else (r.nx, r.ny)
        return ProblemBounds.for_wells(Grid(nx, ny), self.n_injectors + self.n_producers)


def make_case(case_id: int, mini: bool = False, **overrides) -> CaseSpec:
    """Case 1 (r=10%), Case 2 (r=0%) or Case 3 (r=10%, 1000 m^3/day cap)."""
    r, flow_limit = {1: (0.10, None), 2: (0.0, None), 3: (0.10, 1000.0)}[case_id]
    name = f"case{case_id}" + ("-mini" if mini else "")
    base = dict(case_id=case_id, name=name, r=r, flow_limit=flow_limit,
                rock=MINI_ROCK if mini else PAPER_SYNTHETIC_ROCK, mini=mini)
    base.update(overrides)
    return CaseSpec(**base)


CASES = {f"case{k}{suffix}": (k, suffix == "-mini") for k in (1, 2, 3) for suffix in ("", "-mini")}


def case_by_name(name, **overrides) -> CaseSpec:
    key = f"case{name}" if isinstance(name, int) or str(name).isdigit() else str(name)
    if key not in CASES:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}")
    k, mini = CASES[key]
    return make_case(k, mini, **overrides)


# ---------------------------------------------------------------------------
# statistics

@dataclass(frozen=True)
class Stats:
    best: float
    worst: float
    mean: float
    sd: float
    median: float


def summarize(finals) -> Stats:
    """Best, worst, mean, sample SD (n-1) and median of final NPVs."""
    values = [float(v) for v in finals]
    if not values:
        raise ValueError("cannot summarise an empty set of trials")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("finals must be finite; report failed trials separately")
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return Stats(max(values), min(values), statistics.fmean(values), sd, statistics.median(values))


@dataclass
class TrialSummary:
    case: str
    config: str
    seeds: list[int]
    finals: list[float]
    curves: np.ndarray
    wall_times: list[float]
    best_x: list[np.ndarray] = field(default_factory=list)
    simulations: list[int] = field(default_factory=list)

    @property
    def failed_trials(self) -> int:
        return sum(1 for v in self.finals if not math.isfinite(v))

    @property
    def stats(self) -> Stats | None:
        ok = [v for v in self.finals if math.isfinite(v)]
        return summarize(ok) if ok else None

    def mean_curve(self) -> np.ndarray:
        return self.curves.mean(axis=0)


class TrialError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# running trials

_WORKER: dict = {}


def _worker_evaluator(case: CaseSpec) -> CaseEvaluator:
    ev = _WORKER.get(case)
    if ev is None:
        ev = CaseEvaluator(case.context())
        _WORKER.clear()
        _WORKER[case] = ev
    return ev


def _run_one(case: CaseSpec, config: DEConfig, trial: int, seed: int, evaluator=None, on_generation=None):
    ev = evaluator if evaluator is not None else _worker_evaluator(case)
    sims0 = getattr(ev, "simulations", 0)
    start = time.perf_counter()
    try:
        best, hist = run_de(replace(config, seed=seed), case.bounds(), ev, on_generation=on_generation)
    except Exception as exc:
        raise TrialError(f"trial {trial} (seed {seed}) failed: {exc}") from exc
    curve = np.asarray(hist.best_so_far, dtype=float)
    if curve.size < config.budget:
        # free infeasible evaluations can leave the budget unspent; hold the last value
        curve = np.concatenate([curve, np.full(config.budget - curve.size, curve[-1] if curve.size else -np.inf)])
    return (best.fitness, curve, time.perf_counter() - start, best.x,
            getattr(ev, "simulations", 0) - sims0)


def _run_one_star(args):
    return _run_one(*args)


def run_trials(case: CaseSpec, config: DEConfig, n_trials: int, base_seed: int = 42, jobs: int = 1,
               evaluator=None, on_generation=None) -> TrialSummary:
    """Independent DE runs; trial ``t`` (0-based) uses seed ``base_seed + t``.

    With ``jobs > 1`` trials run in a process pool. Results do not depend on
    ``jobs``: every trial owns its random stream and the objective is
    deterministic. ``evaluator`` overrides the per-process cached evaluator
    and ``on_generation`` is passed to ``run_de`` (both force sequential runs).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    seeds = [base_seed + t for t in range(n_trials)]
    tasks = [(case, config, t, s) for t, s in enumerate(seeds)]
    if jobs > 1 and evaluator is None and on_generation is None and n_trials > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n_trials)) as pool:
            results = list(pool.map(_run_one_star, tasks))
    else:
        results = [_run_one(*task, evaluator=evaluator, on_generation=on_generation) for task in tasks]
    return TrialSummary(
        case=case.name, config=config_label(config), seeds=seeds,
        finals=[r[0] for r in results], curves=np.vstack([r[1] for r in results]),
        wall_times=[r[2] for r in results], best_x=[r[3] for r in results],
        simulations=[r[4] for r in results])


# ---------------------------------------------------------------------------
# result files

def fmt(v: float) -> str:
    return f"{v:.6g}"


FINALS_HEADER = ["case", "config", "trial", "seed", "final_npv_usd"]
SUMMARY_HEADER = ["case", "config", "n_trials", "failed_trials", "best_npv_usd", "worst_npv_usd",
                  "mean_npv_usd", "sd_npv_usd", "median_npv_usd"]


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def summary_csv_from_finals(finals_text: str) -> str:
    """summary.csv content computed from finals.csv content.

    Statistics use the finals exactly as written, so rebuilding the summary
    from an exported finals.csv reproduces it byte for byte.
    """
    rows = list(csv.DictReader(io.StringIO(finals_text)))
    if not rows:
        raise ValueError("finals.csv has no trials")
    missing = set(FINALS_HEADER) - set(rows[0])
    if missing:
        raise ValueError(f"finals.csv lacks columns {sorted(missing)}")
    values = [float(r["final_npv_usd"]) for r in rows]
    ok = [v for v in values if math.isfinite(v)]
    if ok:
        st = summarize(ok)
        stats = [st.best, st.worst, st.mean, st.sd, st.median]
    else:
        stats = [math.nan] * 5
    row = [rows[0]["case"], rows[0]["config"], len(values), len(values) - len(ok)] + [fmt(v) for v in stats]
    return _csv_text([SUMMARY_HEADER, row])


def export_results(summary: TrialSummary, out_dir, stride: int = CONVERGENCE_STRIDE) -> dict[str, Path]:
    """Write finals.csv, convergence.csv, convergence.dat and summary.csv.

    NPVs are in dollars (not scaled), six significant digits.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    finals_rows = [FINALS_HEADER] + [
        [summary.case, summary.config, t, s, fmt(v)]
        for t, (s, v) in enumerate(zip(summary.seeds, summary.finals))]
    finals_text = _csv_text(finals_rows)

    budget = summary.curves.shape[1]
    idx = list(range(stride, budget + 1, stride))
    if not idx or idx[-1] != budget:
        idx.append(budget)
    mean = summary.mean_curve()
    n = len(summary.finals)
    conv_rows = [["eval_index", "mean_best_so_far_npv_usd"] + [f"trial_{t}_npv_usd" for t in range(n)]]
    dat_lines = ["# NPV in US dollars; mean over trials of the best-so-far NPV",
                 "# eval_index mean_best_so_far_npv_usd"]
    for e in idx:
        conv_rows.append([e, fmt(mean[e - 1])] + [fmt(v) for v in summary.curves[:, e - 1]])
        dat_lines.append(f"{e} {fmt(mean[e - 1])}")

    paths = {name: out / name for name in ("finals.csv", "convergence.csv", "convergence.dat", "summary.csv")}
    paths["finals.csv"].write_text(finals_text)
    paths["convergence.csv"].write_text(_csv_text(conv_rows))
    paths["convergence.dat"].write_text("\n".join(dat_lines) + "\n")
    paths["summary.csv"].write_text(summary_csv_from_finals(finals_text))
    return paths


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1
