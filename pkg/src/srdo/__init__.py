"""Straggler-robust distributed optimization: coded gradients over parameter servers."""

from .coding import CodingScheme, StragglerSet, build_scheme, decode, select_decode_row, verify_scheme
from .config import RunConfig, load_config, parse_config
from .engine import Simulation, StepSchedule
from .errors import (
    ConfigError,
    DecodeError,
    DivergenceError,
    GraphError,
    RankDeficientError,
    SchemeError,
    SrdoError,
)
from .linalg import Rng
from .metrics import Trace, ae, ce
from .problem import Problem, generate

__version__ = "0.1.0"

__all__ = [
    "CodingScheme", "ConfigError", "DecodeError", "DivergenceError", "GraphError",
    "Problem", "RankDeficientError", "Rng", "RunConfig", "SchemeError", "Simulation",
    "SrdoError", "StepSchedule", "StragglerSet", "Trace", "ae", "build_scheme", "ce",
    "decode", "generate", "load_config", "parse_config", "select_decode_row", "verify_scheme",
]
