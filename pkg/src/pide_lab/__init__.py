"""Galerkin theta-scheme solver for parabolic PIDEs driven by time-inhomogeneous Levy processes."""

from .errors import (AdmissibilityError, ConfigError, ConvergenceGateError, NotCoercive, NumericalError,
                     PideLabError, SingularStepError)
from .galerkin_space import (Domain1D, GalerkinSpace, build_space, compute_lambda, dual_norm,
                             estimate_inverse_constant, l2_project, norm_H, norm_V)
from .levy_operator import JumpSpec, LevyModel, OperatorAssembler, assemble_stiffness, estimate_continuity_coercivity
from .theta_stepper import ThetaConfig, TimeGrid, admissible_constants, check_timestep_condition, run

__version__ = "0.1.0"
