"""Partitioned linear multistep methods: analysis, integration and error expansions."""

__version__ = "0.1.0"

from .drift import (
    DriftSeries,
    GrowthClassifier,
    GrowthVerdict,
    classify_growth,
    drift_series,
    measured_smooth_drift,
    oscillatory_integral_probe,
    predicted_smooth_drift,
)
from .expansion import (
    ParasiticComponentExtractor,
    StartExpansion,
    extract_parasitic,
    predict_error,
    solve_expansion,
    solve_vandermonde,
    transition_diagnostics,
)
from .integrator import IntegratorConfig, PLMMIntegrator, Trajectory, integrate
from .lmm import MultistepMethod, analyze, get_method
from .plmm import PartitionedMethod, classify_roots, get_pair, growth_parameters
from .problems import double_pendulum, get_problem, harmonic_oscillator

__all__ = [
    "DriftSeries",
    "GrowthClassifier",
    "GrowthVerdict",
    "IntegratorConfig",
    "MultistepMethod",
    "PLMMIntegrator",
    "ParasiticComponentExtractor",
    "PartitionedMethod",
    "StartExpansion",
    "Trajectory",
    "analyze",
    "classify_growth",
    "classify_roots",
    "double_pendulum",
    "drift_series",
    "extract_parasitic",
    "get_method",
    "get_pair",
    "get_problem",
    "growth_parameters",
    "harmonic_oscillator",
    "integrate",
    "measured_smooth_drift",
    "oscillatory_integral_probe",
    "predict_error",
    "predicted_smooth_drift",
    "solve_expansion",
    "solve_vandermonde",
    "transition_diagnostics",
]
