"""Numerical verification of entropy identities for Langevin diffusions.

Forward SDE ensembles, a conservative Fokker-Planck solver, relative entropy
and Fisher information functionals, time reversal with a pathwise entropy
ledger, dissipation identities and Wasserstein-geometry checks.
"""
from .errors import (BlowUpError, ConfigError, ConvergenceError, InsufficientSampleError,
                     LabError, NumericalError, OffGridError, PositivityError,
                     PreconditionError, StabilityError)
from .fpe import FPESolution, GridDensity, GridSpec, solve_fpe
from .model import PerturbationSpec, PotentialSpec, ReferenceMeasure
from .report import CheckReport
from .simulate import EnsembleState, PathBundle, simulate_forward

__version__ = "0.1.0"
