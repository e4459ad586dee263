"""Differential evolution for oil-well placement on a two-phase reservoir simulator."""
from .de_core import CaseContext, CaseEvaluator, DEConfig, ProblemBounds, Strategy, run_de
from .economics import EconomicParams, npv
from .flow_sim import ControlSchedule, FluidProps, WellSpec, simulate
from .grid_field import FieldWindow, Grid, RockField, generate_synthetic_field, load_spe10_layer
from .harness import builtin_config, case_by_name, export_results, run_trials, summarize

__version__ = "0.1.0"

__all__ = [
    "CaseContext", "CaseEvaluator", "ControlSchedule", "DEConfig", "EconomicParams", "FieldWindow", "FluidProps",
    "Grid", "ProblemBounds", "RockField", "Strategy", "WellSpec", "builtin_config", "case_by_name", "export_results",
    "generate_synthetic_field", "load_spe10_layer", "npv", "run_de", "run_trials", "simulate", "summarize",
]
