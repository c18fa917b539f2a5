"""Command line entry point ``pide-lab``.

    pide-lab <solve|converge|stability|price> --config FILE [--out DIR] [--override section.key=value ...]

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed acceptance check (converge / stability).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import expressions as ex
from .convergence_harness import (StudyConfig, check_rates, manufacture_source, run_study,
                                  write_convergence_csv, write_rates_csv)
from .errors import ConfigError, NotCoercive, NumericalError
from .galerkin_space import Domain1D, build_space, compute_lambda
from .garding_transform import GardingProblem, coercify, suggest_lambda
from .levy_operator import JumpSpec, LevyModel, OperatorAssembler, estimate_continuity_coercivity, risk_neutral_drift
from .pricing import PricingConfig, price_barrier, price_european, write_price_curve_csv
from .stability_lab import residual_report, stability_suite, write_residual_csv, xi_scheme_check
from .theta_stepper import ThetaConfig, TimeGrid, admissible_constants, run, timestep_bound, write_trajectory_csv

log = logging.getLogger("pide_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3
COMMANDS = ("solve", "converge", "stability", "price")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pide-lab", description="theta-scheme Galerkin solver for Levy-driven parabolic PIDEs")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI-style config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# --------------------------------------------------------------------------
# config access


class Config:
    """configparser wrapper with typed getters that raise ConfigError."""

    def __init__(self, parser: configparser.ConfigParser):
        self.cp = parser
        self.used = {}

    @classmethod
    def load(cls, path, overrides=()):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for item in overrides:
            key, sep, value = item.partition("=")
            sec, dot, name = key.strip().partition(".")
            if not sep or not dot or not name:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, name, value.strip())
        return cls(cp)

    def raw(self, sec, key, default=None):
        if self.cp.has_option(sec, key):
            val = self.cp.get(sec, key).strip()
        elif default is None:
            raise ConfigError(f"missing [{sec}] {key}")
        else:
            val = default
        self.used[f"{sec}.{key}"] = val
        return val

    def has(self, sec, key):
        return self.cp.has_option(sec, key)

    def float(self, sec, key, default=None):
        v = self.raw(sec, key, None if default is None else repr(default))
        try:
            out = float(v)
        except ValueError:
            raise ConfigError(f"[{sec}] {key} must be a number, got {v!r}") from None
        if not math.isfinite(out):
            raise ConfigError(f"[{sec}] {key} must be finite")
        return out

    def int(self, sec, key, default=None):
        v = self.float(sec, key, default)
        if v != int(v):
            raise ConfigError(f"[{sec}] {key} must be an integer")
        return int(v)

    def bool(self, sec, key, default=False):
        v = self.raw(sec, key, "true" if default else "false").lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{sec}] {key} must be a boolean")

    def floats(self, sec, key, default=None):
        v = self.raw(sec, key, default)
        try:
            return [float(eval_fraction(s)) for s in v.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"[{sec}] {key} must be a comma-separated list of numbers") from None


def eval_fraction(s):
    s = s.strip()
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    return float(s)


def space_from(cfg: Config, n_default=32, eta_default=0.0):
    dom = Domain1D(cfg.float("space", "x_min", 0.0), cfg.float("space", "x_max", 1.0))
    return build_space(dom, cfg.int("space", "n_elements", n_default), cfg.int("space", "degree", 1),
                       cfg.float("space", "eta", eta_default), cfg.float("space", "rho", 1.0))


def jumps_from(cfg: Config) -> JumpSpec:
    kind = cfg.raw("model", "jump_kind", "none")
    if kind == "none":
        return JumpSpec()
    return JumpSpec(kind, ex.time_function(cfg.raw("model", "jump_intensity")),
                    cfg.float("model", "jump_mean", 0.0), cfg.float("model", "jump_stdev"))


def model_from(cfg: Config, T, risk_neutral=False) -> LevyModel:
    sigma = ex.time_function(cfg.raw("model", "sigma", "1"))
    rate = ex.time_function(cfg.raw("model", "rate", "0"))
    jumps = jumps_from(cfg)
    b_text = cfg.raw("model", "b", "risk_neutral" if risk_neutral else "0")
    b = risk_neutral_drift(sigma, rate, jumps) if b_text == "risk_neutral" else ex.time_function(b_text)
    kappa = None
    if cfg.has("model", "kappa"):
        kappa = ex.space_time_function(cfg.raw("model", "kappa"))
    return LevyModel(sigma=sigma, b=b, rate=rate, kappa=kappa, jumps=jumps, T=T)


def grid_from(cfg: Config):
    grid = TimeGrid(cfg.float("grid", "T", 1.0), cfg.int("grid", "M", 20))
    tc = ThetaConfig(cfg.float("grid", "theta", 0.5), cfg.bool("grid", "enforce_condition", False),
                     cfg.float("grid", "safety_factor", 0.9))
    return grid, tc


def write_manifest(path: Path, cfg: Config, extra: dict):
    with open(path, "w") as fh:
        fh.write("# resolved configuration\n")
        for k in sorted(cfg.used):
            fh.write(f"{k} = {cfg.used[k]}\n")
        fh.write("# derived quantities\n")
        for k, v in extra.items():
            fh.write(f"{k} = {v}\n")


def _constants_report(space, model, tc, grid, asm):
    out = {"Lambda": compute_lambda(space)}
    alpha, beta = estimate_continuity_coercivity(space, model, 16, require_coercive=False, assembler=asm)
    out.update(alpha_hat=alpha, beta_hat=beta)
    if beta > 0:
        out["dt_bound"] = timestep_bound(tc.theta, out["Lambda"], alpha, beta)
        try:
            c = admissible_constants(tc.theta, out["Lambda"], alpha, beta, grid.dt)
            out.update(mu=c.mu, C1=c.C1, C2=c.C2)
        except NumericalError as exc:
            out["admissible"] = f"no ({exc})"
    return out


# --------------------------------------------------------------------------
# commands


def cmd_solve(cfg: Config, out: Path) -> int:
    grid, tc = grid_from(cfg)
    space = space_from(cfg)
    model = model_from(cfg, grid.T)
    exact = None
    box = (0.0, grid.T, space.domain.x_min, space.domain.x_max)
    if cfg.has("problem", "exact"):
        exact = ex.exact_solution(cfg.raw("problem", "exact"), box)
        f = manufacture_source(exact, model)
        g = lambda x: exact.u(0.0, x)
    else:
        f = ex.space_time_function(cfg.raw("problem", "f", "0"))
        g = ex.space_function(cfg.raw("problem", "g", "0"))
    lam_text = cfg.raw("garding", "lambda", "0")
    lam = suggest_lambda(space, model) if lam_text == "auto" else float(lam_text)
    extra = {}
    if lam > 0:
        shifted, tr = coercify(GardingProblem(model, lam), space)
        fs = tr.source(f)
        asm = OperatorAssembler(space, shifted)
        res = run(space, shifted, fs, g, grid, tc, assembler=asm)
        extra.update({"garding.lambda": lam, "garding.cond_factor": tr.cond_factor})
        extra.update(_constants_report(space, shifted, tc, grid, asm))
        res.trajectory = tr.map_back(res.trajectory, grid)
    else:
        asm = OperatorAssembler(space, model)
        res = run(space, model, f, g, grid, tc, assembler=asm)
        extra.update(_constants_report(space, model, tc, grid, asm))
    extra.update(res.constants)
    if not np.all(np.isfinite(res.trajectory)):
        raise NumericalError("solution contains non-finite values")
    write_trajectory_csv(res, out / "trajectory.csv")
    if exact is not None and lam == 0:
        rep = residual_report(res, exact)
        write_residual_csv(rep, out / "residuals.csv")
        extra["xi_identity_violation"] = xi_scheme_check(res, exact).max_violation
    write_manifest(out / "run_manifest.txt", cfg, extra)
    return EXIT_OK


def study_from(cfg: Config) -> StudyConfig:
    grid, tc = grid_from(cfg)
    dom = Domain1D(cfg.float("space", "x_min", 0.0), cfg.float("space", "x_max", 1.0))
    model = model_from(cfg, grid.T)
    box = (0.0, grid.T, dom.x_min, dom.x_max)
    exact = ex.exact_solution(cfg.raw("exact", "u"), box)
    return StudyConfig(
        domain=dom, p=cfg.int("space", "degree", 1), model=model, exact=exact, theta=tc.theta,
        h_levels=cfg.floats("converge", "h_levels"), dt_levels=cfg.floats("converge", "dt_levels"),
        coupling=cfg.raw("converge", "coupling", "joint"), eta=cfg.float("space", "eta", 0.0),
        rho=cfg.float("space", "rho", 1.0), enforce_condition=True, safety_factor=tc.safety_factor,
        gate=cfg.bool("converge", "gate", True), perturbation=cfg.float("converge", "perturb", 0.0))


def cmd_converge(cfg: Config, out: Path) -> int:
    study = study_from(cfg)
    rep = run_study(study)
    write_convergence_csv(rep, out / "convergence.csv")
    write_rates_csv(rep, out / "rates.csv")
    checks = check_rates(study, rep)
    extra = {}
    for name, (obs, target, tol, ok) in checks.items():
        extra[f"rate.{name}"] = f"{obs:.4f} (target {target} +- {tol}) {'PASS' if ok else 'FAIL'}"
        print(f"{name}: slope {obs:.4f}, target {target} +- {tol}: {'PASS' if ok else 'FAIL'}")
    write_manifest(out / "run_manifest.txt", cfg, extra)
    return EXIT_OK if all(c[3] for c in checks.values()) else EXIT_ACCEPTANCE


def cmd_stability(cfg: Config, out: Path) -> int:
    grid, tc = grid_from(cfg)
    space = space_from(cfg, n_default=12)
    model = model_from(cfg, grid.T)
    thetas = cfg.floats("stability", "thetas", "0,0.25,0.5,1")
    dt_scale = cfg.float("stability", "dt_scale") if cfg.has("stability", "dt_scale") else None
    recs = stability_suite(space, model, cfg.int("stability", "n_runs", 50), thetas,
                           cfg.int("stability", "seed", 0), tc.safety_factor, grid.M, dt_scale)
    worst = math.inf
    with open(out / "stability.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "lhs", "rhs", "margin", "run", "theta"])
        for i, r in enumerate(recs):
            if r.terms is None:
                continue
            for m, (l, rr) in enumerate(zip(r.terms.lhs, r.terms.rhs), start=1):
                w.writerow([m, l, rr, rr - l, i, r.theta])
            worst = min(worst, r.min_margin)
    asm = OperatorAssembler(space, model)
    extra = _constants_report(space, model, tc, grid, asm)
    extra.update(n_runs=len(recs), min_margin=worst,
                 nonfinite_runs=sum(not r.finite for r in recs))
    write_manifest(out / "run_manifest.txt", cfg, extra)
    print(f"stability suite: {len(recs)} runs, min margin {worst:.3e}")
    if dt_scale is not None and dt_scale >= 1:
        return EXIT_OK  # beyond the sufficient condition nothing is asserted
    ok = worst >= 0 and all(r.finite and r.terms is not None for r in recs)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def pricing_from(cfg: Config) -> PricingConfig:
    grid, tc = grid_from(cfg)
    kind = cfg.raw("payoff", "kind", "call")
    opt = lambda key: cfg.float("payoff", key) if cfg.has("payoff", key) else None
    payoff = None
    if kind == "custom":
        payoff = ex.space_function(cfg.raw("payoff", "expression"))
    return PricingConfig(
        S0=cfg.float("payoff", "S0", 100.0), K=cfg.float("payoff", "K", 100.0), T=grid.T, kind=kind,
        sigma=ex.time_function(cfg.raw("model", "sigma", "0.2")),
        rate=ex.time_function(cfg.raw("model", "rate", "0")), jumps=jumps_from(cfg),
        kappa=ex.space_time_function(cfg.raw("model", "kappa")) if cfg.has("model", "kappa") else None,
        n_elements=cfg.int("space", "n_elements", 400), M=grid.M if cfg.has("grid", "M") else 200,
        theta=tc.theta, degree=cfg.int("space", "degree", 1), margin=cfg.float("payoff", "margin", 4.0),
        eta=opt("eta"), barrier_lo=opt("barrier_lo"), barrier_hi=opt("barrier_hi"), payoff=payoff)


def cmd_price(cfg: Config, out: Path) -> int:
    pc = pricing_from(cfg)
    barrier = pc.barrier_lo is not None or pc.barrier_hi is not None
    res = price_barrier(pc) if barrier else price_european(pc)
    write_price_curve_csv(res, out / "price_curve.csv")
    extra = {"spot_price": res.spot_price, "domain": pc.domain(), "eta": pc.weight_eta}
    if res.spot_reference is not None:
        extra.update(spot_reference=res.spot_reference, spot_rel_error=res.spot_rel_error)
    write_manifest(out / "run_manifest.txt", cfg, extra)
    ref = "" if res.spot_reference is None else f", reference {res.spot_reference:.6f}"
    print(f"price at S0={pc.S0}: {res.spot_price:.6f}{ref}")
    return EXIT_OK


DISPATCH = {"solve": cmd_solve, "converge": cmd_converge, "stability": cmd_stability, "price": cmd_price}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = Config.load(args.config, args.override)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return DISPATCH[args.command](cfg, out)
    except ConfigError as exc:
        print(f"pide-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NotCoercive) as exc:
        print(f"pide-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"pide-lab: invalid value: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
