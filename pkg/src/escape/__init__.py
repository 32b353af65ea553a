"""Exit probabilities of compound renewal processes with linear drift."""
from .dispatch import EscapeResult, Numerics, escape_probability, solve, sweep
from .errors import EscapeError
from .model import (
    DoubleExponential,
    Erlang,
    EscapeQuery,
    Exponential,
    ExponentialNegative,
    GammaHalfNegative,
    GenericDensity,
    GenericSeverity,
    Hypoexponential,
    JumpSpec,
    Laplace,
    ProcessModel,
    RationalCF,
    RationalLT,
    SolverRoute,
    build_model,
    decompose_jumps,
    net_profit,
    route,
)
from .ratfun import ExpPoly, RationalTransform

__version__ = "0.1.0"
