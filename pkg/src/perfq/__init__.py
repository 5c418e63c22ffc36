"""perfq: tracer-kinetic quantification for myocardial perfusion.

Estimates two-compartment exchange model parameters from dynamic
contrast-enhanced concentration curves, either with physics-informed neural
networks (four variants) or per-pixel nonlinear least squares, and ships a
digital phantom plus NMSE/SSIM evaluation for method comparison.
"""

from .errors import FormatError, InvalidInputError, NumericalFailureError, PerfqError
from .kinetics import (
    CompartmentSolution,
    ConcentrationSeries,
    ConversionConstants,
    KineticParams,
    TimeGrid,
    residual_reduced,
    residuals_2cxm,
    solve_2cxm,
    to_blood_units,
)

__version__ = "0.1.0"

__all__ = [
    "PerfqError",
    "InvalidInputError",
    "NumericalFailureError",
    "FormatError",
    "KineticParams",
    "TimeGrid",
    "ConcentrationSeries",
    "CompartmentSolution",
    "ConversionConstants",
    "solve_2cxm",
    "residuals_2cxm",
    "residual_reduced",
    "to_blood_units",
    "__version__",
]
