"""Net present value of a production profile."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow_sim import FlowLimitViolation
from .units import BBL_PER_M3, YEAR_DAYS

NEGATIVE_INFINITY = -math.inf


@dataclass(frozen=True)
class EconomicParams:
    """Prices in $/bbl, yearly interest rate and water-cut shut-in threshold."""

    c_o: float = 80.0
    c_w_disp: float = 12.0
    c_w_inj: float = 8.0
    r: float = 0.10
    water_cut_threshold: float = 0.78

    def __post_init__(self):
        if min(self.c_o, self.c_w_disp, self.c_w_inj) < 0:
            raise ValueError("prices and costs must be non-negative")
        if self.r < 0:
            raise ValueError("interest rate must be non-negative")
        if not 0 <= self.water_cut_threshold <= 1:
            raise ValueError("water-cut threshold must lie in [0, 1]")


def water_cut(q_w: float, q_o: float) -> float:
    total = q_w + q_o
    return q_w / total if total > 0 else 0.0


def cash_flow_rates(profile, econ: EconomicParams) -> np.ndarray:
    """Undiscounted cash flow per step in $/day."""
    revenue = econ.c_o * profile.oil.sum(axis=1)
    disposal = econ.c_w_disp * profile.water.sum(axis=1)
    injection = econ.c_w_inj * profile.injection.sum(axis=1)
    return BBL_PER_M3 * (revenue - disposal - injection)


def npv(profile, econ: EconomicParams) -> float:
    """Midpoint-rule NPV in dollars, discounting with (1 + r)^-t, t in years."""
    if profile.n_steps == 0:
        return 0.0
    if np.any(profile.dts <= 0):
        raise ValueError("profile step lengths must be positive")
    t_mid = (profile.times + 0.5 * profile.dts) / YEAR_DAYS
    discount = (1.0 + econ.r) ** (-t_mid)
    return float(np.sum(cash_flow_rates(profile, econ) * profile.dts * discount))


def penalized_npv(outcome, econ: EconomicParams) -> float:
    """NPV, or -inf when the simulation hit the flow limit."""
    if isinstance(outcome, FlowLimitViolation):
        return NEGATIVE_INFINITY
    return npv(outcome, econ)
