"""Fit, evaluate and exploit neural scaling laws for code pretraining."""

from .errors import (
    ArgumentError,
    DataError,
    EmptyPlanError,
    EvaluationError,
    FitFailure,
    InfeasibleError,
    RangeError,
    ScalingError,
    UnsupportedLawError,
)
from .laws import (
    CODE_CHINCHILLA,
    CODE_FARSEER,
    ChinchillaLaw,
    FarseerLaw,
    LawHandle,
    LimitResult,
    LogGrid,
    RunRecord,
    asymptotic_limit,
    eval_chinchilla,
    eval_farseer,
    eval_slice,
)

__version__ = "0.1.0"
