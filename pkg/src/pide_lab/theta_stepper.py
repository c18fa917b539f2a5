"""Fully discrete theta-scheme on an equidistant time grid.

Each step solves

    (M + theta dt A(t*)) u^{m+1} = (M - (1-theta) dt A(t*)) u^m + dt F^{m+theta},
    t* = theta t^{m+1} + (1-theta) t^m,
    F^{m+theta} = theta F^{m+1} + (1-theta) F^m,

with F^k_i = <f(t^k), phi_i>.  Explicit and weakly implicit schemes
(theta < 1/2) are only stable under a step-size restriction involving the
mesh constant Lambda and the continuity/coercivity constants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import AdmissibilityError, ConfigError, SingularStepError
from .galerkin_space import GalerkinSpace, _load, compute_lambda, l2_project
from .levy_operator import LevyModel, OperatorAssembler, estimate_continuity_coercivity

__all__ = [
    "TimeGrid",
    "ThetaConfig",
    "ThetaRun",
    "StabilityConstants",
    "check_timestep_condition",
    "timestep_bound",
    "admissible_constants",
    "run",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ConfigError("T must be positive and finite")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError("M must be an integer >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.M + 1)


@dataclass(frozen=True)
class ThetaConfig:
    theta: float = 0.5
    enforce_condition: bool = False
    safety_factor: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 < self.safety_factor <= 1.0:
            raise ConfigError("safety_factor must lie in (0, 1]")


@dataclass(frozen=True)
class StabilityConstants:
    mu: float
    C1: float
    C2: float
    admissible: bool


@dataclass(eq=False)
class ThetaRun:
    space: GalerkinSpace
    model: LevyModel
    grid: TimeGrid
    config: ThetaConfig
    trajectory: np.ndarray  # (M+1, dim)
    stage_times: np.ndarray  # (M,)
    loads: np.ndarray  # (M+1, dim) F^k
    energies: np.ndarray  # (M,) u^{m+theta} . sym(A(t*)) . u^{m+theta}
    assembler: OperatorAssembler = field(repr=False)
    constants: dict = field(default_factory=dict)

    @property
    def theta(self):
        return self.config.theta

    def stage_values(self) -> np.ndarray:
        th = self.theta
        return th * self.trajectory[1:] + (1 - th) * self.trajectory[:-1]

    def stage_loads(self) -> np.ndarray:
        th = self.theta
        return th * self.loads[1:] + (1 - th) * self.loads[:-1]


def timestep_bound(theta, Lambda, alpha, beta) -> float:
    """Largest admissible dt (exclusive); infinite for theta >= 1/2."""
    for name, v in (("Lambda", Lambda), ("alpha", alpha), ("beta", beta)):
        if not v > 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    if theta >= 0.5:
        return math.inf
    return 2.0 * beta / ((1.0 - 2.0 * theta) * Lambda * alpha**2)


def check_timestep_condition(theta, Lambda, alpha, beta, dt) -> float:
    """Margin bound - dt of the step-size condition; positive means admissible."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    return timestep_bound(theta, Lambda, alpha, beta) - dt


def admissible_constants(theta, Lambda, alpha, beta, dt, c1_choice=None) -> StabilityConstants:
    """Constants C1, C2 for which the discrete energy estimate holds."""
    if check_timestep_condition(theta, Lambda, alpha, beta, dt) <= 0:
        raise AdmissibilityError(
            f"dt={dt} violates the step-size condition (bound {timestep_bound(theta, Lambda, alpha, beta)})")
    if theta >= 0.5:
        mu, c1_hi = 0.0, 2.0
    else:
        mu = (1.0 - 2.0 * theta) * Lambda * dt
        c1_hi = 2.0 - mu * alpha**2 / beta
    C1 = 0.5 * c1_hi if c1_choice is None else float(c1_choice)
    if not 0.0 < C1 < c1_hi:
        raise ConfigError(f"C1={C1} outside the admissible interval (0, {c1_hi})")
    if theta >= 0.5:
        C2 = 1.0 / (beta * (2.0 - C1))
    else:
        C2 = max(mu, (1.0 + mu * alpha) ** 2 / ((2.0 - C1) * beta - mu * alpha**2) + mu)
    return StabilityConstants(mu=mu, C1=C1, C2=C2, admissible=True)


def _load_fn(space, f):
    """Map a source description to a function t -> load vector."""
    if f is None:
        zero = np.zeros(space.dim)
        return lambda t: zero
    if hasattr(f, "load"):
        return lambda t: np.asarray(f.load(space, t), dtype=float)
    return lambda t: _load(space, lambda x: f(t, x))


def run(space: GalerkinSpace, model: LevyModel, f, g: Callable | None, grid: TimeGrid,
        config: ThetaConfig = ThetaConfig(), *, u0=None, assembler=None) -> ThetaRun:
    """Run the theta-scheme.

    ``f`` is None, a callable f(t, x), or an object with ``load(space, t)``
    returning the load vector directly.  The initial value is the
    H-projection of ``g`` unless coefficients ``u0`` are given.
    """
    asm = assembler or OperatorAssembler(space, model)
    if grid.T > model.T * (1 + 1e-12):
        raise ConfigError("time grid extends beyond the model horizon")
    th, dt = config.theta, grid.dt
    t = grid.nodes
    stage = th * t[1:] + (1 - th) * t[:-1]
    constants = {}
    if config.enforce_condition and th < 0.5:
        Lam = compute_lambda(space)
        alpha, beta = estimate_continuity_coercivity(space, model, 16, times=stage, assembler=asm)
        bound = config.safety_factor * timestep_bound(th, Lam, alpha, beta)
        constants = dict(Lambda=Lam, alpha_hat=alpha, beta_hat=beta, dt_bound=bound)
        if dt >= bound:
            raise AdmissibilityError(f"dt={dt:.6g} exceeds safety-scaled bound {bound:.6g}")

    M = asm.M
    loads_of = _load_fn(space, f)
    loads = np.empty((grid.M + 1, space.dim))
    loads[0] = loads_of(t[0])
    traj = np.empty((grid.M + 1, space.dim))
    if u0 is not None:
        traj[0] = np.asarray(u0, dtype=float)
    elif g is None:
        traj[0] = 0.0
    else:
        traj[0] = l2_project(space, g)
    energies = np.empty(grid.M)
    prev_A, lu = None, None
    for m in range(grid.M):
        A = asm.matrix(stage[m])
        if lu is None or not (A is prev_A or np.array_equal(A, prev_A)):
            lhs = M + th * dt * A
            lu = linalg.lu_factor(lhs, check_finite=False)
            d = np.abs(np.diag(lu[0]))
            scale = max(np.abs(M).max(), th * dt * np.abs(A).max())
            if not np.all(np.isfinite(d)) or d.min() <= 1e-12 * scale:
                raise SingularStepError(m)
            prev_A = A
        loads[m + 1] = loads_of(t[m + 1])
        rhs = M @ traj[m] - (1 - th) * dt * (A @ traj[m]) + dt * (th * loads[m + 1] + (1 - th) * loads[m])
        traj[m + 1] = linalg.lu_solve(lu, rhs, check_finite=False)
        um = th * traj[m + 1] + (1 - th) * traj[m]
        energies[m] = um @ A @ um
    return ThetaRun(space, model, grid, config, traj, stage, loads, energies, asm, constants)


def write_trajectory_csv(run_: ThetaRun, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "t"] + [f"c{i}" for i in range(run_.space.dim)])
        for m, (tm, c) in enumerate(zip(run_.grid.nodes, run_.trajectory)):
            w.writerow([m, repr(float(tm))] + [repr(float(v)) for v in c])
