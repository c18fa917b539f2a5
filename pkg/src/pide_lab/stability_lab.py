"""Numerical checks of the discrete stability estimate and the residual analysis.

The error xi^m = P_h u(t^m) - u_h^m of the theta-scheme satisfies the same
scheme with right-hand side r^m = r1 + r2 + r3 (+ r0), where

    (r1, v) = ((u^{m+1} - u^m)/dt - udot^{m+theta}, v)_H
    (r2, v) = ((P_h - I)(u^{m+1} - u^m)/dt, v)_H
    (r3, v) = a^{m+theta}(P_h u^{m+theta} - u^{m+theta}, v)
    (r0, v) = (udot^{m+theta}, v)_H + a^{m+theta}(u^{m+theta}, v) - <f^{m+theta}, v>

r0 is a source-averaging consistency term.  It is zero when a_t does not
depend on t; otherwise the averaged source theta f^{m+1} + (1-theta) f^m
does not match the bilinear form frozen at the stage time.  r2 is zero
because P_h is the H-orthogonal projector.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import AdmissibilityError, ConfigError
from .galerkin_space import _load, compute_lambda, dual_norm
from .levy_operator import OperatorAssembler, estimate_continuity_coercivity
from .theta_stepper import (StabilityConstants, ThetaConfig, ThetaRun, TimeGrid, admissible_constants, run,
                            timestep_bound)

__all__ = [
    "ExactSolution",
    "ResidualReport",
    "XiCheck",
    "StabilityTerms",
    "residual_loads",
    "xi_scheme_check",
    "residual_report",
    "residual_bound_check",
    "fit_slope",
    "stability_terms",
    "stability_margin",
    "v_norm_margin",
    "write_residual_csv",
    "write_stability_csv",
    "random_smooth_data",
    "steps_for_condition",
    "SuiteRecord",
    "stability_suite",
]


def _fd_check(name, f, df, ts, xs, order_h=1e-4, tol=1e-5):
    """Compare df with a central difference of f in t."""
    fd = (f(ts + order_h, xs) - f(ts - order_h, xs)) / (2 * order_h)
    ref = np.asarray(df(ts, xs), dtype=float) * np.ones_like(ts)
    scale = max(1.0, float(np.max(np.abs(ref))))
    err = float(np.max(np.abs(fd - ref))) / scale
    if err > tol:
        raise ConfigError(f"{name} inconsistent with finite differences (rel. error {err:.2e})")


@dataclass(frozen=True, eq=False)
class ExactSolution:
    """An exact solution u(t, x) with analytic time derivatives.

    ``du_dx`` is required for weak-form manufacturing (the operator is
    applied to u through the bilinear form).  At construction the time
    derivatives are compared with central differences at random probe
    points inside ``probe_box = (t0, t1, x0, x1)``.
    """

    u: Callable
    du_dt: Callable
    d2u_dt2: Callable | None = None
    d3u_dt3: Callable | None = None
    du_dx: Callable | None = None
    probe_box: tuple = (0.0, 1.0, 0.0, 1.0)
    self_check: bool = True

    def __post_init__(self):
        if self.u is None or self.du_dt is None:
            raise ConfigError("exact solution needs u and du_dt")
        if not self.self_check:
            return
        t0, t1, x0, x1 = self.probe_box
        rng = np.random.default_rng(12345)
        pad = 1e-3 * (t1 - t0)
        ts = rng.uniform(t0 + pad, t1 - pad, 20)
        xs = rng.uniform(x0, x1, 20)
        _fd_check("du_dt", self.u, self.du_dt, ts, xs)
        if self.d2u_dt2 is not None:
            _fd_check("d2u_dt2", self.du_dt, self.d2u_dt2, ts, xs)
        if self.d3u_dt3 is not None:
            if self.d2u_dt2 is None:
                raise ConfigError("d3u_dt3 given without d2u_dt2")
            _fd_check("d3u_dt3", self.d2u_dt2, self.d3u_dt3, ts, xs)
        if self.du_dx is not None:
            h = 1e-5 * max(1.0, x1 - x0)
            xi = np.clip(xs, x0 + h, x1 - h)
            fd = (self.u(ts, xi + h) - self.u(ts, xi - h)) / (2 * h)
            ref = np.asarray(self.du_dx(ts, xi), dtype=float) * np.ones_like(xi)
            err = float(np.max(np.abs(fd - ref))) / max(1.0, float(np.max(np.abs(ref))))
            if err > 1e-5:
                raise ConfigError(f"du_dx inconsistent with finite differences (rel. error {err:.2e})")

    def scaled(self, c: float) -> "ExactSolution":
        s = lambda f: None if f is None else (lambda t, x: c * f(t, x))
        return ExactSolution(s(self.u), s(self.du_dt), s(self.d2u_dt2), s(self.d3u_dt3), s(self.du_dx),
                             self.probe_box, False)

    def at(self, t):
        """u(t, .) and du/dx(t, .) as callables of x."""
        if self.du_dx is None:
            raise ConfigError("exact solution has no du_dx")
        return (lambda x: self.u(t, x)), (lambda x: self.du_dx(t, x))


# --------------------------------------------------------------------------
# residuals


@dataclass
class XiCheck:
    max_violation: float
    violations: np.ndarray  # per step
    xi: np.ndarray  # (M+1, dim)


def _exact_values(run: ThetaRun, exact: ExactSolution):
    sp, asm = run.space, run.assembler
    t = run.grid.nodes
    loads_u = np.array([_load(sp, lambda x, tm=tm: exact.u(tm, x)) for tm in t])
    loads_du = np.array([_load(sp, lambda x, tm=tm: exact.du_dt(tm, x)) for tm in t])
    # projection with the scheme's own mass matrix keeps the identity algebraic
    proj = np.linalg.solve(asm.M, loads_u.T).T
    return t, loads_u, loads_du, proj


def residual_loads(run: ThetaRun, exact: ExactSolution) -> dict:
    """Load vectors of r0..r3 for every step, plus the projected exact values."""
    if exact.du_dx is None:
        raise ConfigError("residuals need du_dx of the exact solution")
    asm, th, dt = run.assembler, run.theta, run.grid.dt
    t, lu, ldu, proj = _exact_values(run, exact)
    Mmat = asm.M
    nsteps = run.grid.M
    dim = run.space.dim
    r = {k: np.zeros((nsteps, dim)) for k in ("r0", "r1", "r2", "r3")}
    F = run.stage_loads()
    for m in range(nsteps):
        ts = run.stage_times[m]
        udot_th = th * ldu[m + 1] + (1 - th) * ldu[m]
        dq = (lu[m + 1] - lu[m]) / dt
        r["r1"][m] = dq - udot_th
        r["r2"][m] = Mmat @ ((proj[m + 1] - proj[m]) / dt) - dq
        u_th = lambda x: th * exact.u(t[m + 1], x) + (1 - th) * exact.u(t[m], x)
        du_th = lambda x: th * exact.du_dx(t[m + 1], x) + (1 - th) * exact.du_dx(t[m], x)
        a_u = asm.apply_to_function(ts, u_th, du_th)
        A = asm.matrix(ts)
        r["r3"][m] = A @ (th * proj[m + 1] + (1 - th) * proj[m]) - a_u
        r["r0"][m] = udot_th + a_u - F[m]
    r["proj"] = proj
    return r


def xi_scheme_check(run: ThetaRun, exact: ExactSolution, residuals: dict | None = None) -> XiCheck:
    """Largest normalized defect of the xi-scheme identity over steps and basis functions."""
    res = residuals or residual_loads(run, exact)
    asm, th, dt = run.assembler, run.theta, run.grid.dt
    xi = res["proj"] - run.trajectory
    viol = np.zeros(run.grid.M)
    F = run.stage_loads()
    for m in range(run.grid.M):
        A = asm.matrix(run.stage_times[m])
        t1 = asm.M @ (xi[m + 1] - xi[m]) / dt
        t2 = A @ (th * xi[m + 1] + (1 - th) * xi[m])
        rhs = res["r0"][m] + res["r1"][m] + res["r2"][m] + res["r3"][m]
        parts = [t1, t2, res["r0"][m], res["r1"][m], res["r2"][m], res["r3"][m],
                 asm.M @ (res["proj"][m + 1] - res["proj"][m]) / dt, F[m]]
        scale = max(float(np.max(np.abs(v))) for v in parts)
        viol[m] = float(np.max(np.abs(t1 + t2 - rhs))) / max(scale, 1e-300)
    return XiCheck(float(viol.max()), viol, xi)


@dataclass
class ResidualReport:
    t: np.ndarray  # stage times
    r0: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    dt: float
    h: float
    sums: dict = field(default_factory=dict)  # dt * sum ||r_i||^2
    bound_r1: np.ndarray | None = None  # sqrt(dt) (int ||u''||_H^2)^{1/2} per step

    def __post_init__(self):
        for k in ("r0", "r1", "r2", "r3"):
            v = getattr(self, k)
            if not (np.all(np.isfinite(v)) and np.all(v >= 0)):
                raise ValueError(f"{k} contains invalid dual norms")
            self.sums[k] = float(self.dt * np.sum(v**2))


def _simpson_h_norm_sq(run: ThetaRun, f, a, b, n=8):
    ts = np.linspace(a, b, 2 * n + 1)
    sp = run.space
    q = sp.quadrature(4 * (sp.degree + 1))
    w = q.weights * sp.weight(q.points)
    vals = np.array([np.sum(np.asarray(f(tk, q.points)) ** 2 * w) for tk in ts])
    return float(integrate.simpson(vals, x=ts))


def residual_report(run: ThetaRun, exact: ExactSolution, residuals: dict | None = None) -> ResidualReport:
    res = residuals or residual_loads(run, exact)
    sp = run.space
    norms = {k: np.array([dual_norm(sp, v) for v in res[k]]) for k in ("r0", "r1", "r2", "r3")}
    bound = None
    if exact.d2u_dt2 is not None:
        t = run.grid.nodes
        bound = np.array([np.sqrt(run.grid.dt * _simpson_h_norm_sq(run, exact.d2u_dt2, t[m], t[m + 1]))
                          for m in range(run.grid.M)])
    return ResidualReport(run.stage_times.copy(), norms["r0"], norms["r1"], norms["r2"], norms["r3"],
                          run.grid.dt, sp.h, bound_r1=bound)


def fit_slope(x, y, drop_tol=None, min_points=3):
    """Least-squares slope of log y against log x.

    Returns (slope, fit_residual, n_used), the residual being the RMS of the
    log-space misfit.  With ``drop_tol`` the coarsest level (largest x) is
    dropped while the residual exceeds it and more than ``min_points`` remain.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise ConfigError("need at least two matching points to fit a slope")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("slope fit requires positive finite data")
    order = np.argsort(x)[::-1]
    lx, ly = np.log(x[order]), np.log(y[order])
    while True:
        coef = np.polyfit(lx, ly, 1)
        resid = float(np.sqrt(np.mean((np.polyval(coef, lx) - ly) ** 2)))
        if drop_tol is None or resid <= drop_tol or lx.size <= min_points:
            return float(coef[0]), resid, int(lx.size)
        lx, ly = lx[1:], ly[1:]


def residual_bound_check(runs: Sequence[ThetaRun], exact: ExactSolution):
    """Residual reports for a refinement family and fitted aggregate rates.

    A family at fixed h with varying dt yields the rate of dt*sum||r1||^2 in
    dt; a family at fixed dt with varying h yields rates of the r2 and r3
    aggregates in h.  Rates are skipped for aggregates at round-off level.
    """
    runs = list(runs)
    if len(runs) < 3:
        raise ConfigError("need at least 3 refinements")
    reports = [residual_report(r, exact) for r in runs]
    hs = np.array([r.space.h for r in runs])
    dts = np.array([r.grid.dt for r in runs])
    rates = {}
    if np.allclose(hs, hs[0]) and len(np.unique(dts)) >= 3:
        axis, xs, keys = "dt", dts, ("r1",)
    elif np.allclose(dts, dts[0]) and len(np.unique(hs)) >= 3:
        axis, xs, keys = "h", hs, ("r2", "r3")
    else:
        raise ConfigError("runs must refine exactly one of h or dt with >= 3 distinct levels")
    for k in keys:
        ys = np.array([rep.sums[k] for rep in reports])
        if np.max(ys) < 1e-24:
            rates[k] = (float("nan"), float("nan"))
            continue
        s, res, _ = fit_slope(xs, ys)
        rates[k] = (s, res)
    return reports, axis, rates


# --------------------------------------------------------------------------
# stability estimate


@dataclass
class StabilityTerms:
    """Cumulative sides of the stability inequality after each step."""

    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def margin(self):
        return self.rhs - self.lhs


def _dual_sq(run: ThetaRun):
    return np.array([dual_norm(run.space, f) ** 2 for f in run.stage_loads()])


def stability_terms(run: ThetaRun, constants: StabilityConstants, energy_weight=None) -> StabilityTerms:
    """LHS/RHS of the estimate truncated after each step m = 1..M.

    LHS_m = ||u^m||_H^2 + dt C1 sum_{k<m} e_k and RHS_m = ||u^0||_H^2 +
    dt C2 sum_{k<m} ||f^{k+theta}||_{V_h*}^2, with e_k the energy norm of
    u^{k+theta} (or ``energy_weight`` * its squared V-norm).
    """
    Mm, dt = run.assembler.M, run.grid.dt
    U = run.trajectory
    h_sq = np.einsum("mi,ij,mj->m", U, Mm, U)
    if energy_weight is None:
        e = run.energies
    else:
        S = run.space.gram.S
        st = run.stage_values()
        e = energy_weight * np.einsum("mi,ij,mj->m", st, S, st)
    lhs = h_sq[1:] + dt * constants.C1 * np.cumsum(e)
    rhs = h_sq[0] + dt * constants.C2 * np.cumsum(_dual_sq(run))
    return StabilityTerms(lhs, rhs)


def stability_margin(run: ThetaRun, constants: StabilityConstants) -> float:
    """RHS - LHS of the stability inequality at the final time."""
    return float(stability_terms(run, constants).margin[-1])


def v_norm_margin(run: ThetaRun, constants: StabilityConstants, beta_hat: float) -> float:
    """Margin of the V-norm form of the estimate (energy replaced by beta_hat ||.||_V^2)."""
    return float(stability_terms(run, constants, energy_weight=beta_hat).margin[-1])


def write_residual_csv(report: ResidualReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "t", "r0", "r1", "r2", "r3", "r_total_bound"])
        for m in range(report.t.size):
            tot = report.r0[m] + report.r1[m] + report.r2[m] + report.r3[m]
            w.writerow([m, report.t[m], report.r0[m], report.r1[m], report.r2[m], report.r3[m], tot])


def write_stability_csv(terms: StabilityTerms, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "lhs", "rhs", "margin"])
        for m, (l, r) in enumerate(zip(terms.lhs, terms.rhs), start=1):
            w.writerow([m, l, r, r - l])


# --------------------------------------------------------------------------
# seeded property suite


def random_smooth_data(rng: np.random.Generator, domain, n_modes: int = 4):
    """Random f(t, x) and g(x) built from sine modes vanishing on the boundary."""
    a, L = domain.x_min, domain.width
    k = np.arange(1, n_modes + 1)
    ga = rng.normal(size=n_modes) / k**2
    fa = rng.normal(size=n_modes) / k
    om = rng.uniform(0.5, 3.0, size=n_modes)
    ph = rng.uniform(0.0, 2 * np.pi, size=n_modes)

    def modes(x):
        x = np.asarray(x, dtype=float)
        return np.sin(np.pi * np.multiply.outer(k, x - a) / L)

    g = lambda x: ga @ modes(x)
    f = lambda t, x: (fa * np.cos(om * t + ph)) @ modes(x)
    return f, g


def steps_for_condition(theta, Lambda, alpha, beta, T, safety_factor=0.9) -> int:
    """Smallest step count with dt strictly inside the safety-scaled bound."""
    bound = timestep_bound(theta, Lambda, alpha, beta)
    if not np.isfinite(bound):
        return 1
    return int(np.floor(T / (safety_factor * bound))) + 1


@dataclass
class SuiteRecord:
    seed: int
    theta: float
    dt: float
    constants: StabilityConstants
    terms: StabilityTerms
    v_margin: float
    finite: bool

    @property
    def margin(self):
        return float(self.terms.margin[-1])

    @property
    def min_margin(self):
        return float(self.terms.margin.min())


def stability_suite(space, model, n_runs: int = 50, thetas=(0.0, 0.25, 0.5, 1.0), seed: int = 0,
                    safety_factor: float = 0.9, steps_implicit: int = 20, dt_scale: float | None = None):
    """Seeded stability runs cycling through ``thetas``.

    For theta < 1/2 the step count follows the step-size condition with the
    given safety factor (``dt_scale`` instead fixes dt as a multiple of the
    bound, without enforcement).  Constants come from admissible_constants.
    """
    asm = OperatorAssembler(space, model)
    Lam = compute_lambda(space)
    alpha, beta = estimate_continuity_coercivity(space, model, 16, assembler=asm)
    out = []
    for i in range(n_runs):
        th = float(thetas[i % len(thetas)])
        rng = np.random.default_rng(seed + i)
        f, g = random_smooth_data(rng, space.domain)
        enforce = dt_scale is None
        if th < 0.5:
            if dt_scale is None:
                nsteps = steps_for_condition(th, Lam, alpha, beta, model.T, safety_factor)
            else:
                nsteps = max(1, int(round(model.T / (dt_scale * timestep_bound(th, Lam, alpha, beta)))))
        else:
            nsteps = steps_implicit
        grid = TimeGrid(model.T, nsteps)
        for attempt in range(5):
            try:
                res = run(space, model, f, g, grid, ThetaConfig(th, enforce, safety_factor), assembler=asm)
                break
            except AdmissibilityError:
                # constants at the stage times can be slightly less favourable
                if attempt == 4:
                    raise
                grid = TimeGrid(model.T, int(grid.M * 1.1) + 1)
        a_run, b_run = alpha, beta
        if res.constants:
            a_run, b_run = res.constants["alpha_hat"], res.constants["beta_hat"]
        finite = bool(np.all(np.isfinite(res.trajectory)))
        try:
            const = admissible_constants(th, Lam, a_run, b_run, grid.dt)
        except AdmissibilityError:
            const = None
        if const is None or not finite:
            out.append(SuiteRecord(seed + i, th, grid.dt, const, None, float("nan"), finite))
            continue
        terms = stability_terms(res, const)
        out.append(SuiteRecord(seed + i, th, grid.dt, const, terms, v_norm_margin(res, const, b_run), finite))
    return out
