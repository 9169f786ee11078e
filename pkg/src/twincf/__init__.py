"""Paired potential-outcome simulation, fidelity validation and partial-identification bounds."""

from __future__ import annotations

from .copulas import CopulaSpec, copula_cdf, sample_pair
from .estimands import CATALOG, EstimandResult
from .model import (
    Dataset,
    HiddenTruth,
    Marginal,
    SimulatorSpec,
    SpecError,
    StrataPartition,
    TwinDraws,
    WorldSpec,
)
from .noise import NoiseRecord, uniforms
from .sensitivity import (
    BoundsResult,
    constrained_bounds,
    fh_pbenefit_bounds,
    fh_var_bounds,
    makarov_pbenefit_bounds,
    sensitivity_curve,
)
from .simulation import generate_world, simulate_twins
from .validation import LevelConfig, Scorecard, run_protocol, sample_size

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "BoundsResult",
    "CopulaSpec",
    "Dataset",
    "EstimandResult",
    "HiddenTruth",
    "LevelConfig",
    "Marginal",
    "NoiseRecord",
    "Scorecard",
    "SimulatorSpec",
    "SpecError",
    "StrataPartition",
    "TwinDraws",
    "WorldSpec",
    "constrained_bounds",
    "copula_cdf",
    "fh_pbenefit_bounds",
    "fh_var_bounds",
    "generate_world",
    "makarov_pbenefit_bounds",
    "run_protocol",
    "sample_pair",
    "sample_size",
    "sensitivity_curve",
    "simulate_twins",
    "uniforms",
]
