"""Manufactured-solution convergence studies for the theta-scheme.

The source is never formed pointwise.  Its load vector is assembled from the
weak form, F_i(t) = (du/dt(t), phi_i)_H + a_t(u(t), phi_i), with the bilinear
form applied to the exact solution by quadrature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceGateError, NumericalError
from .galerkin_space import Domain1D, _load, build_space, function_error_norms, l2_project
from .levy_operator import LevyModel, OperatorAssembler
from .stability_lab import ExactSolution, fit_slope
from .theta_stepper import ThetaConfig, TimeGrid, run

__all__ = [
    "ManufacturedSource",
    "manufacture_source",
    "StudyConfig",
    "LevelResult",
    "ConvergenceReport",
    "projection_rates",
    "run_study",
    "expected_slopes",
    "check_rates",
    "write_convergence_csv",
    "write_rates_csv",
]

COUPLINGS = ("refine_h_only", "refine_dt_only", "joint")


class ManufacturedSource:
    """Weak-form source of an exact solution; pass it as ``f`` to theta_stepper.run."""

    def __init__(self, exact: ExactSolution, model: LevyModel):
        if exact.du_dt is None or exact.du_dx is None:
            raise ConfigError("manufacturing needs du_dt and du_dx")
        self.exact = exact
        self.model = model
        self._asm = {}

    def assembler(self, space):
        key = id(space)
        if key not in self._asm:
            self._asm[key] = (space, OperatorAssembler(space, self.model))
        return self._asm[key][1]

    def load(self, space, t):
        ex = self.exact
        u, du = ex.at(t)
        mass = _load(space, lambda x: ex.du_dt(t, x), npts=8 * (space.degree + 1))
        return mass + self.assembler(space).apply_to_function(t, u, du)


def manufacture_source(exact: ExactSolution, model: LevyModel) -> ManufacturedSource:
    return ManufacturedSource(exact, model)


@dataclass
class StudyConfig:
    domain: Domain1D
    p: int
    model: LevyModel
    exact: ExactSolution
    theta: float
    h_levels: Sequence[float]
    dt_levels: Sequence[float]
    coupling: str = "joint"
    eta: float = 0.0
    rho: float = 1.0
    enforce_condition: bool = True
    safety_factor: float = 0.9
    gate: bool = True
    perturbation: float = 0.0  # test hook: constant offset added to u_h^M

    def __post_init__(self):
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"coupling must be one of {COUPLINGS}")
        self.h_levels = [float(h) for h in self.h_levels]
        self.dt_levels = [float(d) for d in self.dt_levels]
        axes = {"refine_h_only": ("h",), "refine_dt_only": ("dt",), "joint": ("h",)}[self.coupling]
        for ax in axes:
            lv = self.h_levels if ax == "h" else self.dt_levels
            if len(lv) < 3:
                raise ConfigError(f"need at least 3 {ax} levels")
            if any(b >= a for a, b in zip(lv, lv[1:])):
                raise ConfigError(f"{ax} levels must be strictly decreasing")
        if not self.h_levels or not self.dt_levels:
            raise ConfigError("need at least one h and one dt level")
        if self.coupling == "joint" and len(self.dt_levels) not in (1, len(self.h_levels)):
            raise ConfigError("joint coupling needs one dt level (the constant) or one per h level")

    def levels(self):
        """(n_elements, M) per study level."""
        T = self.model.T
        width = self.domain.width
        nel = lambda h: max(2, int(round(width / h)))
        nsteps = lambda dt: max(1, int(round(T / dt)))
        if self.coupling == "refine_dt_only":
            return [(nel(self.h_levels[0]), nsteps(d)) for d in self.dt_levels]
        if self.coupling == "refine_h_only":
            return [(nel(h), nsteps(self.dt_levels[0])) for h in self.h_levels]
        if len(self.dt_levels) == len(self.h_levels) and len(self.h_levels) > 1:
            return [(nel(h), nsteps(d)) for h, d in zip(self.h_levels, self.dt_levels)]
        k = 1.0 if self.theta != 0.5 else self.p + 1 - self.rho
        c = self.dt_levels[0] / self.h_levels[0] ** k
        return [(nel(h), nsteps(c * h**k)) for h in self.h_levels]


@dataclass
class LevelResult:
    h: float
    dt: float
    err_H_final: float
    err_energy_sum: float
    err_V_sum: float
    proj_H_final: float  # ||u(T) - P_h u(T)||_H
    xi_H_final: float  # ||P_h u(T) - u_h^M||_H
    split_ok: bool


@dataclass
class ConvergenceReport:
    coupling: str
    theta: float
    levels: list
    slopes: dict = field(default_factory=dict)  # name -> (slope, fit_residual)

    @property
    def rows(self):
        return [(lv.h, lv.dt, lv.err_H_final, lv.err_energy_sum, lv.err_V_sum) for lv in self.levels]


def projection_rates(domain, p, g, dg, hs, eta=0.0):
    """Slopes of ||g - P_h g|| in L2 and H1 over mesh sizes ``hs``."""
    l2, h1 = [], []
    for h in hs:
        sp = build_space(domain, max(2, int(round(domain.width / h))), p, eta)
        a, b = function_error_norms(sp, g, dg, l2_project(sp, g))
        l2.append(a)
        h1.append(b)
    return np.array(l2), np.array(h1)


def _gate(cfg: StudyConfig, hs):
    ex, T = cfg.exact, cfg.model.T
    g = lambda x: ex.u(T, x)
    dg = lambda x: ex.du_dx(T, x)
    hs = sorted(set(hs), reverse=True)
    if len(hs) < 3:
        h0 = hs[-1]
        hs = [4 * h0, 2 * h0, h0]
    l2, h1 = projection_rates(cfg.domain, cfg.p, g, dg, hs, cfg.eta)
    if max(l2.max(), h1.max()) < 1e-11:
        return  # exact solution lies in V_h
    s2, _, _ = fit_slope(hs, l2)
    s1, _, _ = fit_slope(hs, h1)
    if s2 < cfg.p + 1 - 0.15 or s1 < cfg.p - 0.15:
        raise ConvergenceGateError(
            f"projection rates failed (L2 slope {s2:.3f}, H1 slope {s1:.3f}); "
            "spatial approximation is not in the asymptotic regime")


def _level(cfg: StudyConfig, n_el, n_steps, source):
    sp = build_space(cfg.domain, n_el, cfg.p, cfg.eta, cfg.rho)
    grid = TimeGrid(cfg.model.T, n_steps)
    tc = ThetaConfig(cfg.theta, cfg.enforce_condition, cfg.safety_factor)
    asm = source.assembler(sp)
    ex = cfg.exact
    res = run(sp, cfg.model, source, lambda x: ex.u(0.0, x), grid, tc, assembler=asm)
    traj = res.trajectory
    if cfg.perturbation:
        traj = traj.copy()
        traj[-1] = traj[-1] + cfg.perturbation * np.abs(traj[0]).max() * np.ones(sp.dim)
    T = cfg.model.T
    npts = 8 * (cfg.p + 1)
    g = lambda x: ex.u(T, x)
    dg = lambda x: ex.du_dx(T, x)
    eH, _ = function_error_norms(sp, g, dg, traj[-1], npts)
    pT = l2_project(sp, g)
    proj, _ = function_error_norms(sp, g, dg, pT, npts)
    d = pT - traj[-1]
    xi = float(np.sqrt(max(d @ sp.gram.M @ d, 0.0)))
    th, t = cfg.theta, grid.nodes
    stage = th * traj[1:] + (1 - th) * traj[:-1]
    e_sum, v_sum = 0.0, 0.0
    q = sp.quadrature(npts)
    w = q.weights * sp.weight(q.points)
    B = sp.basis_sparse(q.element, q.local)
    D = sp.basis_sparse(q.element, q.local, deriv=1)
    for m in range(n_steps):
        c = stage[m]
        um = lambda x, m=m: th * ex.u(t[m + 1], x) + (1 - th) * ex.u(t[m], x)
        dum = lambda x, m=m: th * ex.du_dx(t[m + 1], x) + (1 - th) * ex.du_dx(t[m], x)
        e = lambda x, c=c, um=um: um(x) - sp.evaluate(c, x)
        de = lambda x, c=c, dum=dum: dum(x) - sp.evaluate(c, x, 1)
        e_sum += asm.form(res.stage_times[m], e, de, e, de, npts)
        if cfg.rho == 1.0:
            ev = um(q.points) - B.T @ c
            dev = dum(q.points) - D.T @ c
            v_sum += float(np.sum((ev**2 + dev**2) * w))
    dt = grid.dt
    err_energy = float(np.sqrt(max(dt * e_sum, 0.0)))
    err_v = float(np.sqrt(dt * v_sum)) if cfg.rho == 1.0 else float("nan")
    split = eH**2 <= 2 * (proj**2 + xi**2) * (1 + 1e-10) + 1e-300
    return LevelResult(sp.h, dt, eH, err_energy, err_v, proj, xi, bool(split))


def run_study(cfg: StudyConfig) -> ConvergenceReport:
    levels = cfg.levels()
    if cfg.gate:
        _gate(cfg, [cfg.domain.width / n for n, _ in levels])
    source = manufacture_source(cfg.exact, cfg.model)
    results = [_level(cfg, n, m, source) for n, m in levels]
    rep = ConvergenceReport(cfg.coupling, cfg.theta, results)
    if cfg.coupling == "refine_dt_only":
        xs, axis = np.array([r.dt for r in results]), "dt"
    else:
        xs, axis = np.array([r.h for r in results]), "h"
    for name in ("err_H_final", "err_energy_sum", "err_V_sum"):
        ys = np.array([getattr(r, name) for r in results])
        if not np.all(np.isfinite(ys)):
            continue
        if ys.max() < 1e-10:
            rep.slopes[f"{axis}:{name}"] = (float("nan"), float("nan"))
            continue
        if np.allclose(ys, ys[0], rtol=1e-12, atol=0):
            raise NumericalError(f"degenerate fit: identical {name} on every level")
        s, res, _ = fit_slope(xs, ys, drop_tol=0.05)
        rep.slopes[f"{axis}:{name}"] = (s, res)
    return rep


def expected_slopes(cfg: StudyConfig) -> dict:
    """Target slopes and tolerances of the unsquared errors."""
    if cfg.coupling == "refine_dt_only":
        if cfg.theta == 0.5:
            return {"dt:err_H_final": (2.0, 0.2)}
        return {"dt:err_H_final": (1.0, 0.15)}
    return {"h:err_energy_sum": (cfg.p + 1 - cfg.rho, 0.15)}


def check_rates(cfg: StudyConfig, report: ConvergenceReport) -> dict:
    """name -> (observed, expected, tol, passed) for every targeted slope."""
    out = {}
    for name, (target, tol) in expected_slopes(cfg).items():
        obs = report.slopes.get(name, (float("nan"), float("nan")))[0]
        out[name] = (obs, target, tol, bool(np.isfinite(obs) and abs(obs - target) <= tol))
    return out


def write_convergence_csv(report: ConvergenceReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "dt", "err_H_final", "err_energy_sum", "err_V_sum"])
        for row in report.rows:
            w.writerow(row)


def write_rates_csv(report: ConvergenceReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "slope", "fit_residual"])
        for name, (s, r) in report.slopes.items():
            w.writerow([name, s, r])
