"""Exponential shift that turns a Garding-type form into a coercive one.

If a_t(u, u) >= beta ||u||_V^2 - lam ||u||_H^2, then u_lam = exp(-lam t) u
solves the problem with killing rate kappa + lam and source
exp(-lam t) f, whose bilinear form a_t + lam (., .)_H is coercive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError
from .galerkin_space import GalerkinSpace
from .levy_operator import LevyModel, OperatorAssembler, estimate_continuity_coercivity
from .theta_stepper import TimeGrid

__all__ = [
    "GardingProblem",
    "GardingTransform",
    "coercify",
    "map_back",
    "discrete_garding_shift",
    "suggest_lambda",
    "check_garding",
    "shift_source",
]


@dataclass(frozen=True)
class GardingProblem:
    model: LevyModel
    garding_lambda: float
    garding_beta: float = 0.0

    def __post_init__(self):
        if not (self.garding_lambda >= 0 and math.isfinite(self.garding_lambda)):
            raise ConfigError("garding_lambda must be finite and >= 0")


@dataclass(frozen=True)
class GardingTransform:
    lam: float
    T: float

    @property
    def cond_factor(self) -> float:
        """exp(lam T): amplification applied when mapping back."""
        return math.exp(self.lam * self.T)

    def source(self, f):
        return shift_source(f, self.lam)

    def map_back(self, trajectory, grid: TimeGrid):
        return map_back(trajectory, grid, self.lam)


def shift_source(f, lam: float):
    """f_lam(t, x) = exp(-lam t) f(t, x); None stays None."""
    if f is None or lam == 0.0:
        return f
    if hasattr(f, "load"):
        base = f

        class _Shifted:
            def load(self, space, t):
                return math.exp(-lam * t) * np.asarray(base.load(space, t))

        return _Shifted()
    return lambda t, x: math.exp(-lam * t) * f(t, x)


def coercify(problem: GardingProblem, space: GalerkinSpace | None = None, n_samples: int = 16):
    """Shifted model (kappa + lambda) and the transform descriptor.

    With ``space`` given, the shifted form is checked for coercivity on V_h
    and NotCoercive is raised if lambda is too small.
    """
    lam = float(problem.garding_lambda)
    shifted = problem.model.with_kappa_shift(lam)
    if space is not None:
        estimate_continuity_coercivity(space, shifted, n_samples)
    return shifted, GardingTransform(lam, problem.model.T)


def map_back(trajectory, grid: TimeGrid, lam: float) -> np.ndarray:
    """u^m = exp(lam t^m) u_lam^m."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.shape[0] != grid.M + 1:
        raise ConfigError("trajectory length does not match the grid")
    return traj * np.exp(lam * grid.nodes)[:, None]


def discrete_garding_shift(space: GalerkinSpace, model: LevyModel, beta: float, n_samples: int = 16,
                           assembler=None) -> float:
    """Smallest lambda >= 0 with a_t(v,v) >= beta||v||_V^2 - lambda||v||_H^2 on V_h at sampled t."""
    asm = assembler or OperatorAssembler(space, model)
    G = space.gram
    lam = 0.0
    for t in np.linspace(0.0, model.T, n_samples):
        A = asm.matrix(t)
        sym = 0.5 * (A + A.T)
        top = linalg.eigh(beta * G.S - sym, G.M, eigvals_only=True,
                          subset_by_index=[space.dim - 1, space.dim - 1])[0]
        lam = max(lam, float(top))
    return lam


def suggest_lambda(space: GalerkinSpace, model: LevyModel, beta: float | None = None, margin: float = 0.1,
                   n_samples: int = 16) -> float:
    """Shift that makes the form coercive on V_h, plus ``margin``.

    For beta=None the shift is computed for a target coercivity constant of
    zero, i.e. lambda = max(0, -lambda_min) over the pencil (sym A, M).
    """
    if beta is None:
        beta = 0.0
    return discrete_garding_shift(space, model, beta, n_samples) + margin


def check_garding(problem: GardingProblem, space: GalerkinSpace, n_samples: int = 16) -> float:
    """Minimum over sampled t and V_h of a(v,v) - beta||v||_V^2 + lambda||v||_H^2, relative to ||v||_V^2."""
    asm = OperatorAssembler(space, problem.model)
    G = space.gram
    worst = np.inf
    for t in np.linspace(0.0, problem.model.T, n_samples):
        A = asm.matrix(t)
        Q = 0.5 * (A + A.T) - problem.garding_beta * G.S + problem.garding_lambda * G.M
        worst = min(worst, float(linalg.eigh(Q, G.S, eigvals_only=True, subset_by_index=[0, 0])[0]))
    return worst
