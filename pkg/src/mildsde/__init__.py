"""Mild solutions of semilinear stochastic evolution equations and
square-mean periodicity diagnostics."""

from .diagnostics import PeriodicityPlan, Verdict, classify_process
from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    HorizonError,
    ShapeError,
)
from .mild_solver import (
    CoefficientFn,
    PicardConfig,
    SolverConfig,
    contraction_constant,
    example_gate,
    gamma_apply,
    integrate,
    picard_solve,
)
from .periodic_limit import PeriodicLimitFn, SpikeFamily, classify_deterministic, eval_spike
from .process import BrownianDriver, PathEnsemble, square_mean_norm
from .semigroup import ExpStableSemigroup, SpectralField, heat_semigroup

__version__ = "0.1.0"
