"""Two-phase incompressible oil/water simulator with BHP-controlled wells.

Pressure and saturation are advanced in alternating (IMPES) steps: a TPFA
pressure solve every pressure step, followed by CFL-limited explicit upwind
transport sub-steps with the fluxes frozen. Wells are Peaceman-coupled
vertical wells that never cross-flow: a well whose BHP would reverse its flow
is closed for that pressure step.

Rates crossing the public API are in m^3/day, pressures in bar, permeability
in mD and viscosity in cp; the conversions live in :mod:`wellde.units`.
"""
from __future__ import annotations

import csv
import io
import math
import weakref
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _kernels as K
from .grid_field import Grid, RockField
from .units import BAR, CENTIPOISE, DAY, MILLIDARCY, YEAR_DAYS

INJECTOR = "injector"
PRODUCER = "producer"
INJECTOR_BHP_RANGE = (275.0, 450.0)
PRODUCER_BHP_RANGE = (100.0, 250.0)


class SimulationError(RuntimeError):
    """The simulator could not produce a valid state."""


class SingularSystemError(SimulationError):
    pass


class SolverError(SimulationError):
    pass


class CflError(SimulationError):
    pass


class SaturationError(SimulationError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class FluidProps:
    """Oil/water properties with Corey relative permeabilities."""

    mu_o: float = 2.4
    mu_w: float = 1.0
    rho_o: float = 835.0
    rho_w: float = 1000.0
    s_w_init: float = 0.2
    n_w: float = 2.0
    n_o: float = 2.0
    s_wr: float = 0.0
    s_or: float = 0.0

    def __post_init__(self):
        if min(self.mu_o, self.mu_w, self.rho_o, self.rho_w) <= 0:
            raise ValueError("viscosities and densities must be positive")
        for name in ("s_w_init", "s_wr", "s_or"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.s_wr + self.s_or >= 1:
            raise ValueError("s_wr + s_or must be below 1")
        if not self.s_wr <= self.s_w_init <= 1 - self.s_or:
            raise ValueError("initial saturation outside the mobile range")
        if self.n_w <= 0 or self.n_o <= 0:
            raise ValueError("Corey exponents must be positive")

    def _kernel_args(self):
        return (self.mu_w * CENTIPOISE, self.mu_o * CENTIPOISE, self.s_wr, self.s_or,
                float(self.n_w), float(self.n_o))


@dataclass(frozen=True)
class WellSpec:
    """Vertical well in cell ``(i, j)`` (1-based) with one BHP (bar) per control interval."""

    name: str
    kind: str
    cell: tuple[int, int]
    bhp_by_interval: tuple[float, ...]
    r_w: float = 0.1

    def __post_init__(self):
        if self.kind not in (INJECTOR, PRODUCER):
            raise ValueError(f"well kind must be {INJECTOR!r} or {PRODUCER!r}, got {self.kind!r}")
        object.__setattr__(self, "cell", tuple(int(c) for c in self.cell))
        object.__setattr__(self, "bhp_by_interval", tuple(float(b) for b in self.bhp_by_interval))
        if not self.bhp_by_interval:
            raise ValueError("at least one BHP value is required")
        if self.r_w <= 0:
            raise ValueError("wellbore radius must be positive")

    def check_bhp_range(self):
        lo, hi = INJECTOR_BHP_RANGE if self.kind == INJECTOR else PRODUCER_BHP_RANGE
        bad = [b for b in self.bhp_by_interval if not lo <= b <= hi]
        if bad:
            raise ValueError(f"{self.name}: BHP {bad} outside the {self.kind} range [{lo}, {hi}] bar")


@dataclass(frozen=True)
class ControlSchedule:
    horizon_years: float = 10.0
    interval_years: float = 2.0
    pressure_step_days: float = 30.0
    max_transport_cfl: float = 1.0

    def __post_init__(self):
        if self.pressure_step_days <= 0 or self.interval_years <= 0 or self.horizon_years <= 0:
            raise ValueError("schedule lengths must be positive")
        ratio = self.horizon_years / self.interval_years
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("horizon must be a whole number of control intervals")
        if not 0 < self.max_transport_cfl <= 1:
            raise ValueError("max_transport_cfl must lie in (0, 1]")

    @property
    def n_intervals(self) -> int:
        return int(round(self.horizon_years / self.interval_years))

    def steps(self):
        """(start days, length days, interval index) of every pressure step.

        Each control interval is split into equal steps no longer than
        ``pressure_step_days``.
        """
        length = self.interval_years * YEAR_DAYS
        per = math.ceil(length / self.pressure_step_days - 1e-12)
        dt = length / per
        n = per * self.n_intervals
        k = np.arange(n)
        starts = (k // per) * length + (k % per) * dt
        return starts, np.full(n, dt), k // per


@dataclass
class ReservoirState:
    pressure: np.ndarray
    s_w: np.ndarray


@dataclass(frozen=True)
class FlowLimitViolation:
    """A well exceeded the rate cap; the run was stopped."""

    step: int
    time_days: float
    well: str
    rate: float
    limit: float


@dataclass
class ProductionProfile:
    """Per-step well rates (m^3/day, magnitudes) from one simulation."""

    well_names: list[str]
    well_kinds: list[str]
    times: np.ndarray
    dts: np.ndarray
    oil: np.ndarray
    water: np.ndarray
    injection: np.ndarray
    shut_in: np.ndarray
    max_rate: np.ndarray
    signed_rates: np.ndarray
    substeps: np.ndarray = field(default=None)
    final_state: ReservoirState | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def cumulative_injected(self) -> float:
        return float(np.sum(self.injection.sum(axis=1) * self.dts))

    def cumulative_produced(self) -> float:
        return float(np.sum((self.oil + self.water).sum(axis=1) * self.dts))

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO() if stream is None else stream
        writer = csv.writer(buf, lineterminator="\n")
        header = ["time_days", "dt_days"]
        cols = []
        for w, (name, kind) in enumerate(zip(self.well_names, self.well_kinds)):
            if kind == PRODUCER:
                header += [f"{name}_oil_m3d", f"{name}_water_m3d"]
                cols += [self.oil[:, w], self.water[:, w]]
            else:
                header.append(f"{name}_inj_m3d")
                cols.append(self.injection[:, w])
        header += [f"{name}_shut" for name in self.well_names]
        writer.writerow(header)
        for k in range(self.n_steps):
            row = [f"{self.times[k]:.6g}", f"{self.dts[k]:.6g}"]
            row += [f"{c[k]:.6g}" for c in cols]
            row += [str(int(self.shut_in[k, w])) for w in range(len(self.well_names))]
            writer.writerow(row)
        return buf.getvalue() if stream is None else ""


@dataclass
class PressureSolution:
    pressure: np.ndarray        # bar
    flux_x: np.ndarray          # m^3/day across x-faces, shape (ny, nx-1), + towards +x
    flux_y: np.ndarray          # m^3/day across y-faces, shape (ny-1, nx), + towards +y
    well_rates: np.ndarray      # m^3/day, + into the reservoir
    active: np.ndarray

    def well_sources(self, grid: Grid, wells: Sequence[WellSpec]):
        """Per-cell (injection, production) magnitudes in m^3/day."""
        inj = np.zeros(grid.n_cells)
        prod = np.zeros(grid.n_cells)
        for w, q in zip(wells, self.well_rates):
            c = grid.flat_index(*w.cell)
            if q > 0:
                inj[c] += q
            else:
                prod[c] -= q
        return inj, prod


# ---------------------------------------------------------------------------

def relative_mobility(s_w, fluid: FluidProps):
    """Phase mobilities (1/cp) of Corey relative permeabilities."""
    s = np.asarray(s_w, dtype=float)
    se = np.clip((s - fluid.s_wr) / (1 - fluid.s_wr - fluid.s_or), 0.0, 1.0)
    lw = se ** fluid.n_w / fluid.mu_w
    lo = (1 - se) ** fluid.n_o / fluid.mu_o
    if lw.ndim == 0:
        return float(lw), float(lo)
    return lw, lo


def fractional_flow(s_w, fluid: FluidProps):
    lw, lo = relative_mobility(s_w, fluid)
    return lw / (lw + lo)


@lru_cache(maxsize=64)
def max_fractional_flow_slope(fluid: FluidProps) -> float:
    """Upper bound on d f_w / d s_w over the mobile range (1% margin over a dense sample)."""
    span = 1 - fluid.s_wr - fluid.s_or
    se = np.linspace(0.0, 1.0, 20001)
    lw = se ** fluid.n_w / fluid.mu_w
    lo = (1 - se) ** fluid.n_o / fluid.mu_o
    dlw = fluid.n_w * se ** (fluid.n_w - 1) / fluid.mu_w
    dlo = -fluid.n_o * (1 - se) ** (fluid.n_o - 1) / fluid.mu_o
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = (dlw * lo - lw * dlo) / (lw + lo) ** 2
    return 1.01 * float(np.nanmax(slope)) / span


def peaceman_well_index(grid: Grid, kx: float, ky: float, r_w: float) -> float:
    """Peaceman well index in mD*m for a vertical well in an anisotropic cell."""
    if kx <= 0 or ky <= 0 or r_w <= 0:
        raise GeometryError("permeabilities and wellbore radius must be positive")
    a, b = math.sqrt(ky / kx), math.sqrt(kx / ky)
    r_e = 0.28 * math.sqrt(a * grid.dx ** 2 + b * grid.dy ** 2) / ((ky / kx) ** 0.25 + (kx / ky) ** 0.25)
    if r_w >= r_e:
        raise GeometryError(f"wellbore radius {r_w} m is not below the equivalent radius {r_e:.4g} m")
    return 2 * math.pi * math.sqrt(kx * ky) * grid.dz / math.log(r_e / r_w)


_GEOMETRY = weakref.WeakKeyDictionary()


def _geometry(rock: RockField):
    """Geometric transmissibilities (m^3) and pore volumes (m^3), cached per field."""
    cached = _GEOMETRY.get(rock)
    if cached is None:
        g = rock.grid
        kx = rock.as_2d(rock.perm_x) * MILLIDARCY
        ky = rock.as_2d(rock.perm_y) * MILLIDARCY
        tx = 2 * g.dy * g.dz / g.dx / (1 / kx[:, :-1] + 1 / kx[:, 1:])
        ty = 2 * g.dx * g.dz / g.dy / (1 / ky[:-1, :] + 1 / ky[1:, :])
        pv = rock.porosity * g.cell_volume
        cached = (np.ascontiguousarray(tx), np.ascontiguousarray(ty), np.ascontiguousarray(pv))
        _GEOMETRY[rock] = cached
    return cached


def _well_arrays(rock: RockField, wells: Sequence[WellSpec]):
    g = rock.grid
    cells = np.array([g.flat_index(*w.cell) for w in wells], dtype=np.int64)
    wi = np.array([peaceman_well_index(g, rock.perm_x[c], rock.perm_y[c], w.r_w)
                   for w, c in zip(wells, cells)]) * MILLIDARCY
    kind = np.array([K.INJECTOR if w.kind == INJECTOR else K.PRODUCER for w in wells], dtype=np.int64)
    return cells, wi, kind


_STATUS_ERRORS = {
    K.NO_WELLS: (SingularSystemError, "no active BHP-controlled well; the pressure system is singular"),
    K.NOT_SPD: (SolverError, "pressure matrix is not positive definite"),
    K.RESIDUAL: (SolverError, f"pressure solve did not reach relative residual {K.RESIDUAL_TOL:g}"),
    K.SATURATION: (SaturationError, "water saturation left its admissible range during transport"),
}


def _raise_for(status, where=""):
    cls, msg = _STATUS_ERRORS[status]
    raise cls(msg + where)


def solve_pressure(rock: RockField, fluid: FluidProps, state: ReservoirState, wells: Sequence[WellSpec],
                   interval: int = 0, prev_flux=None) -> PressureSolution:
    """One incompressible pressure solve at the current saturation.

    ``prev_flux`` is an optional ``(flux_x, flux_y)`` pair from the previous
    solve; face mobilities are taken upwind with respect to it, otherwise as
    the arithmetic mean of the two cells.
    """
    g = rock.grid
    tx, ty, _ = _geometry(rock)
    cells, wi, kind = _well_arrays(rock, wells)
    if len(wells) == 0:
        raise SingularSystemError("no active BHP-controlled well; the pressure system is singular")
    bhp = np.array([w.bhp_by_interval[interval] for w in wells]) * BAR
    s = np.asarray(state.s_w, dtype=float)
    lam = np.empty(g.n_cells)
    fw = np.empty(g.n_cells)
    K.total_mobility(s, lam, fw, *fluid._kernel_args())
    mx = np.zeros((g.ny, g.nx - 1))
    my = np.zeros((g.ny - 1, g.nx))
    if prev_flux is None:
        fpx, fpy, have = mx, my, False
    else:
        fpx, fpy, have = np.asarray(prev_flux[0], float), np.asarray(prev_flux[1], float), True
    K.face_mobility(lam, g.nx, g.ny, fpx, fpy, have, mx, my)
    p = np.array(state.pressure, dtype=float) * BAR
    fx = np.zeros_like(mx)
    fy = np.zeros_like(my)
    q = np.zeros(len(wells))
    active = np.ones(len(wells), dtype=np.bool_)
    status = K.pressure_solve(g.nx, g.ny, tx, ty, mx, my, lam, cells, wi, bhp, kind, active,
                              p, fx, fy, q, *K.pressure_workspace(g.nx, g.ny))
    if status != K.OK:
        _raise_for(status)
    return PressureSolution(p / BAR, fx * DAY, fy * DAY, q * DAY, active)


def cfl_time_step(rock: RockField, fluid: FluidProps, flux_x, flux_y, injection, production) -> float:
    """Largest stable explicit transport step in days (inf when nothing flows)."""
    g = rock.grid
    _, _, pv = _geometry(rock)
    return K.cfl_limit(g.nx, g.ny, np.asarray(flux_x, float), np.asarray(flux_y, float),
                       np.asarray(injection, float), np.asarray(production, float), pv,
                       max_fractional_flow_slope(fluid))


def transport_step(s_w, flux_x, flux_y, injection, production, dt: float, rock: RockField,
                   fluid: FluidProps) -> np.ndarray:
    """One explicit upwind saturation update of length ``dt`` days.

    Injection adds pure water; production removes fluid at the cell's
    fractional flow. Raises ``CflError`` if ``dt`` exceeds the stable step.
    """
    g = rock.grid
    limit = cfl_time_step(rock, fluid, flux_x, flux_y, injection, production)
    if dt > limit:
        raise CflError(f"dt={dt:g} days exceeds the CFL limit {limit:g} days; split into "
                       f"{math.ceil(dt / limit)} sub-steps")
    _, _, pv = _geometry(rock)
    s = np.array(s_w, dtype=float)
    mu_w, mu_o, swr, sor, nw, no = fluid._kernel_args()
    status = K.transport(g.nx, g.ny, s, np.asarray(flux_x, float), np.asarray(flux_y, float),
                         np.asarray(injection, float), np.asarray(production, float), pv, float(dt), 1,
                         swr, sor, mu_w, mu_o, nw, no, np.zeros(g.n_cells))
    if status != K.OK:
        _raise_for(status)
    return s


def simulate(rock: RockField, fluid: FluidProps, wells: Sequence[WellSpec], schedule: ControlSchedule,
             flow_limit: float | None = None, water_cut_threshold: float = 0.78,
             shut_in: str = "well", initial_pressure: float = 260.0):
    """Run the production horizon and return a ``ProductionProfile``.

    Producers whose water cut exceeds ``water_cut_threshold`` at the start of a
    pressure step are shut in for the rest of the run (``shut_in="field"``
    ends the whole run instead). If ``flow_limit`` (m^3/day) is given and any
    well rate exceeds it, a ``FlowLimitViolation`` is returned immediately.
    """
    if shut_in not in ("well", "field"):
        raise ValueError("shut_in must be 'well' or 'field'")
    g = rock.grid
    for w in wells:
        g._check(*w.cell)
        if len(w.bhp_by_interval) != schedule.n_intervals:
            raise ValueError(f"{w.name}: {len(w.bhp_by_interval)} BHP values for "
                             f"{schedule.n_intervals} control intervals")
    tx, ty, pv = _geometry(rock)
    cells, wi, kind = _well_arrays(rock, wells)
    starts, dts, interval = schedule.steps()
    n_steps, n_wells = len(dts), len(wells)
    bhp = np.array([w.bhp_by_interval for w in wells], dtype=float).reshape(n_wells, -1)
    bhp_steps = np.ascontiguousarray(bhp[:, interval].T * BAR)
    s = np.full(g.n_cells, fluid.s_w_init)
    p = np.full(g.n_cells, initial_pressure * BAR)
    q = np.zeros((n_steps, n_wells))
    oil = np.zeros((n_steps, n_wells))
    water = np.zeros((n_steps, n_wells))
    shut = np.zeros((n_steps, n_wells), dtype=np.bool_)
    max_rate = np.zeros(n_steps)
    substeps = np.zeros(n_steps, dtype=np.int64)
    info = np.zeros(4)
    mu_w, mu_o, swr, sor, nw, no = fluid._kernel_args()
    status = K.simulate_kernel(
        g.nx, g.ny, tx, ty, pv, s, cells, wi, kind, bhp_steps, dts,
        mu_w, mu_o, swr, sor, nw, no, max_fractional_flow_slope(fluid), schedule.max_transport_cfl,
        -1.0 if flow_limit is None else float(flow_limit), float(water_cut_threshold), shut_in == "field",
        p, q, oil, water, shut, max_rate, substeps, info)
    if status == K.FLOW_LIMIT:
        k, w = int(info[1]), int(info[2])
        return FlowLimitViolation(k, float(starts[k]), wells[w].name, float(info[3]), float(flow_limit))
    if status != K.OK:
        k = int(info[1])
        _raise_for(status, f" (pressure step {k}, t={starts[k]:g} days)")
    done = int(info[0])
    is_inj = np.array([w.kind == INJECTOR for w in wells], dtype=bool)
    inj = np.where(is_inj & (q > 0), q, 0.0)
    return ProductionProfile(
        well_names=[w.name for w in wells], well_kinds=[w.kind for w in wells],
        times=starts[:done].copy(), dts=dts[:done].copy(), oil=oil[:done], water=water[:done],
        injection=inj[:done], shut_in=shut[:done], max_rate=max_rate[:done], signed_rates=q[:done],
        substeps=substeps[:done], final_state=ReservoirState(p / BAR, s))

