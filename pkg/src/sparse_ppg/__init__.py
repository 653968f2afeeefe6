"""Sparse-sampling PPG sensor simulator: synthesis, front-end, noise, backend and power."""

from .engine import REFERENCE_SPARSE, PavEvent, SparseConfig, SparseEngine
from .errors import (AccountingError, BoundsError, ConfigError, NumericalError,
                     SingularityError, StateError, TraceFormatError, TraceParseError)
from .frontend import FrontendConfig
from .noise import REFERENCE_NOISE_PARAMS, NoisePsdParams
from .power import REFERENCE_POWER, PowerConfig
from .synth import ArtifactEvent, PpgModelParams, synthesize
from .vitals import CalibrationTable, compute_hr, compute_ros, compute_spo2

__version__ = "0.1.0"

__all__ = [
    "AccountingError", "ArtifactEvent", "BoundsError", "CalibrationTable", "ConfigError",
    "FrontendConfig", "NoisePsdParams", "NumericalError", "REFERENCE_POWER",
    "REFERENCE_SPARSE", "PavEvent", "PowerConfig", "PpgModelParams",
    "REFERENCE_NOISE_PARAMS", "SingularityError", "SparseConfig", "SparseEngine",
    "StateError", "TraceFormatError", "TraceParseError", "compute_hr", "compute_ros",
    "compute_spo2", "synthesize",
]
