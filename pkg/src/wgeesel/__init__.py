"""Joint selection of mean and working-correlation models for weighted GEE
under monotone missing-at-random dropout, by empirical-likelihood criteria
(JEAIC, JEBIC) with MLIC and QICWr baselines."""

from .baselines import mlic, qicw_r
from .data import LongitudinalDataset, MeanModelSpec, Schema, load_long_csv, validate_monotone, write_long_csv
from .dropout import DropoutFit, DropoutModel, DropoutSpec, fit_dropout, hazard_design, ipw_weights
from .el import ElResult, build_full_ee, el_criteria, jeaic_jebic, solve_lagrange
from .exceptions import (
    ConvergenceError,
    DataValidationError,
    NonMonotoneError,
    NotPositiveDefiniteError,
    ScenarioError,
    SeparationError,
    SingularMatrixError,
    WgeeselError,
)
from .selection import CandidateModel, CriterionTable, JointSelector, enumerate_candidates, select
from .simlab import Scenario, run_monte_carlo, simulate_dataset
from .wgee import WGEE, WgeeFit, WorkingCorrelation, sandwich_variance, wgee_fit

__version__ = "0.1.0"

__all__ = [
    "WGEE", "CandidateModel", "ConvergenceError", "CriterionTable", "DataValidationError", "DropoutFit",
    "DropoutModel", "DropoutSpec", "ElResult", "JointSelector", "LongitudinalDataset", "MeanModelSpec",
    "NonMonotoneError", "NotPositiveDefiniteError", "Scenario", "ScenarioError", "Schema", "SeparationError",
    "SingularMatrixError", "WgeeFit", "WgeeselError", "WorkingCorrelation", "build_full_ee", "el_criteria",
    "enumerate_candidates", "fit_dropout", "hazard_design", "ipw_weights", "jeaic_jebic", "load_long_csv",
    "mlic", "qicw_r", "run_monte_carlo", "sandwich_variance", "select", "simulate_dataset", "solve_lagrange",
    "validate_monotone", "wgee_fit", "write_long_csv",
]
