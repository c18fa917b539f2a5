"""Acceptance criteria 1-10.  Each test records a pass/fail line shown in the terminal summary."""

import math

import numpy as np
import pytest

from pide_lab.convergence_harness import StudyConfig, check_rates, manufacture_source, projection_rates, run_study
from pide_lab.errors import NotCoercive
from pide_lab.galerkin_space import Domain1D, build_space, compute_lambda
from pide_lab.garding_transform import GardingProblem, coercify, suggest_lambda
from pide_lab.levy_operator import JumpSpec, LevyModel, estimate_continuity_coercivity
from pide_lab.pricing import PricingConfig, price_barrier, price_european
from pide_lab.stability_lab import fit_slope, residual_bound_check, stability_suite, xi_scheme_check
from pide_lab.theta_stepper import ThetaConfig, TimeGrid, run

from conftest import sine_exact

pytestmark = pytest.mark.acceptance

UNIT = Domain1D(0.0, 1.0)
HEAT = LevyModel(sigma=np.sqrt(2), b=0.0, rate=0.0, T=1.0)


def coercive_model(T=0.5):
    return LevyModel(sigma=lambda t: np.sqrt(2 * (1 + 0.5 * np.sin(t))), b=0.5, rate=1.0, T=T)


def report(acceptance, crit, ok, detail):
    acceptance(crit, ok, detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {crit}: {detail}")


def manufactured_run(sp, m, ex, theta, nsteps):
    src = manufacture_source(ex, m)
    return run(sp, m, src, lambda x: ex.u(0, x), TimeGrid(m.T, nsteps), ThetaConfig(theta),
               assembler=src.assembler(sp))


def test_c1_stability_inequality(acceptance):
    sp = build_space(UNIT, 12, 1)
    recs = stability_suite(sp, coercive_model(), n_runs=50, thetas=(0.0, 0.25, 0.5, 1.0), seed=0,
                           safety_factor=0.9)
    ok_runs = [r for r in recs if r.terms is not None and r.finite]
    worst = min(r.min_margin for r in ok_runs) if ok_runs else -np.inf
    ok = len(recs) >= 50 and len(ok_runs) == len(recs) and worst >= 0
    report(acceptance, "C1 stability inequality", ok, f"{len(recs)} runs, min margin {worst:.3e}")
    assert ok


def test_c2_condition_sharpness(acceptance):
    sp = build_space(UNIT, 12, 1)
    m = coercive_model()
    half = stability_suite(sp, m, n_runs=10, thetas=(0.0,), seed=100, dt_scale=0.5)
    ok = all(r.finite and r.terms is not None and r.min_margin >= 0 for r in half)
    worst = min(r.min_margin for r in half if r.terms is not None)
    big = stability_suite(sp, m, n_runs=3, thetas=(0.0,), seed=200, dt_scale=10.0)
    blown = sum(not r.finite or (r.terms is not None and r.min_margin < 0) or r.terms is None for r in big)
    report(acceptance, "C2 condition sharpness", ok,
           f"0.5x bound: 10 runs, min margin {worst:.3e}; 10x bound (reported only): {blown}/3 runs violate or blow up")
    assert ok


def test_c3_xi_identity(acceptance):
    ex = sine_exact()
    sp = build_space(Domain1D(0, 1), 12, 2, eta=0.4)
    m = LevyModel(sigma=lambda t: 1 + 0.3 * t, b=0.2, rate=0.1, T=1.0,
                  jumps=JumpSpec.merton(lambda t: 0.5 + t, 0.0, 0.1), kappa=lambda t, x: 0.3 * x * t)
    worst = 0.0
    for theta, n in ((0.0, 3000), (0.25, 3000), (0.5, 10), (1.0, 10)):
        worst = max(worst, xi_scheme_check(manufactured_run(sp, m, ex, theta, n), ex).max_violation)
    ok = worst <= 1e-8
    report(acceptance, "C3 xi-scheme identity", ok, f"max normalized violation {worst:.2e} (tol 1e-8)")
    assert ok


def test_c4_residual_rates(acceptance):
    ex = sine_exact()
    sp = build_space(UNIT, 16, 1)
    m = coercive_model(T=1.0)
    out = {}
    for theta, target, tol in ((1.0, 2.0, 0.2), (0.5, 4.0, 0.3)):
        runs = [manufactured_run(sp, m, ex, theta, n) for n in (4, 8, 16, 32)]
        _, axis, rates = residual_bound_check(runs, ex)
        assert axis == "dt"
        out[theta] = (rates["r1"][0], target, tol)
    ok = all(abs(s - t) <= tol for s, t, tol in out.values())
    detail = "; ".join(f"theta={th}: slope {s:.3f} (target {t} +- {tol})" for th, (s, t, tol) in out.items())
    report(acceptance, "C4 residual rates", ok, detail)
    assert ok


def test_c5_convergence_rates(acceptance):
    ex = sine_exact()
    base = dict(domain=UNIT, p=1, model=HEAT, exact=ex)
    studies = {
        "joint energy vs h (theta=1)": StudyConfig(**base, theta=1.0, h_levels=[1 / 8, 1 / 16, 1 / 32, 1 / 64],
                                                   dt_levels=[1 / 8]),
        "H-final vs dt (theta=1)": StudyConfig(**base, theta=1.0, coupling="refine_dt_only", h_levels=[1 / 256],
                                               dt_levels=[1 / 8, 1 / 16, 1 / 32, 1 / 64]),
        "H-final vs dt (theta=1/2)": StudyConfig(**base, theta=0.5, coupling="refine_dt_only",
                                                 h_levels=[1 / 1024], dt_levels=[1 / 4, 1 / 8, 1 / 16, 1 / 32]),
    }
    parts, ok = [], True
    for name, cfg in studies.items():
        for key, (obs, target, tol, passed) in check_rates(cfg, run_study(cfg)).items():
            parts.append(f"{name}: {obs:.3f} (target {target} +- {tol})")
            ok &= passed
    report(acceptance, "C5 convergence rates", ok, "; ".join(parts))
    assert ok


def test_c6_lambda_scaling(acceptance):
    ns = [8, 16, 32, 64]
    slopes = {}
    for p in (1, 2):
        lams = [compute_lambda(build_space(UNIT, n, p)) for n in ns]
        slopes[p] = fit_slope([1 / n for n in ns], lams)[0]
    ok = all(abs(s + 2.0) <= 0.2 for s in slopes.values())
    report(acceptance, "C6 Lambda scaling", ok,
           ", ".join(f"p={p}: slope {s:.3f} (target -2 +- 0.2)" for p, s in slopes.items()))
    assert ok


def test_c7_projection_rates(acceptance):
    g = lambda x: np.sin(np.pi * x)
    dg = lambda x: np.pi * np.cos(np.pi * x)
    hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    parts, ok = [], True
    for p in (1, 2, 3):
        l2, h1 = projection_rates(UNIT, p, g, dg, hs)
        s2, s1 = fit_slope(hs, l2)[0], fit_slope(hs, h1)[0]
        ok &= abs(s1 - p) <= 0.15 and abs(s2 - (p + 1)) <= 0.15
        parts.append(f"p={p}: H1 {s1:.3f}, L2 {s2:.3f}")
    report(acceptance, "C7 projection rates", ok, "; ".join(parts))
    assert ok


def test_c8_garding_pipeline(acceptance):
    sp = build_space(UNIT, 32, 1)
    # not coercive on (0, 1) since pi^2 / 2 < 6; lambda dt stays small on these grids
    m = LevyModel(sigma=1.0, b=0.3, rate=0.0, kappa=-6.0, T=1.0)
    with pytest.raises(NotCoercive):
        estimate_continuity_coercivity(sp, m, 16)
    lam = suggest_lambda(sp, m)
    shifted, tr = coercify(GardingProblem(m, lam), sp)
    a0, _ = estimate_continuity_coercivity(sp, m, 16, require_coercive=False)
    a1, b1 = estimate_continuity_coercivity(sp, shifted, 16)
    bound_ok = a1 <= a0 + lam + 1e-10 and b1 > 0
    g = lambda x: np.sin(np.pi * x) + 0.5 * np.sin(3 * np.pi * x)
    f = lambda t, x: x * (1 - x) * np.cos(2 * t)
    slopes, ok = {}, bound_ok
    for theta, order in ((1.0, 1.0), (0.5, 2.0)):
        dts, diffs = [], []
        for n in (40, 80, 160, 320):
            grid = TimeGrid(1.0, n)
            direct = run(sp, m, f, g, grid, ThetaConfig(theta)).trajectory[-1]
            back = tr.map_back(run(sp, shifted, tr.source(f), g, grid, ThetaConfig(theta)).trajectory, grid)[-1]
            d = back - direct
            dts.append(grid.dt)
            diffs.append(math.sqrt(d @ sp.gram.M @ d))
        slopes[theta] = fit_slope(dts, diffs)[0]
        ok &= abs(slopes[theta] - order) <= 0.2
    report(acceptance, "C8 Garding pipeline", ok,
           f"lambda={lam:.3f}, alpha_shift={a1:.3f} <= alpha+lambda={a0 + lam:.3f}; "
           + ", ".join(f"theta={th}: slope {s:.3f}" for th, s in slopes.items()))
    assert ok


def test_c9_pricing_oracles(acceptance):
    common = dict(n_elements=400, M=200, theta=0.5)
    bs = price_european(PricingConfig(sigma=lambda t: 0.15 + 0.1 * t, rate=0.02, **common))
    mer = price_european(PricingConfig(sigma=0.2, rate=0.0, jumps=JumpSpec.merton(lambda t: 0.5 * (1 + t), -0.1, 0.15),
                                       **common))
    do = price_barrier(PricingConfig(sigma=0.25, rate=0.02, barrier_lo=80.0, **common))
    errs = {"time-dependent BS": (bs.spot_rel_error, 5e-3), "Merton": (mer.spot_rel_error, 1e-2),
            "down-and-out": (do.spot_rel_error, 1e-2)}
    ok = all(e <= tol for e, tol in errs.values())
    report(acceptance, "C9 pricing oracles", ok,
           ", ".join(f"{k}: {100 * e:.3f}% (tol {100 * tol:g}%)" for k, (e, tol) in errs.items()))
    assert ok


def test_c10_parity_monotonicity(acceptance):
    strikes = np.linspace(80.0, 120.0, 21)
    r, T, S0 = 0.03, 1.0, 100.0
    calls, puts = [], []
    for K in strikes:
        kw = dict(S0=S0, K=K, T=T, sigma=0.2, rate=r, n_elements=400, M=200, theta=0.5)
        calls.append(price_european(PricingConfig(kind="call", **kw)).spot_price)
        puts.append(price_european(PricingConfig(kind="put", **kw)).spot_price)
    calls, puts = np.array(calls), np.array(puts)
    parity = np.abs(calls - puts - (S0 - strikes * math.exp(-r * T))).max()
    checks = {
        "parity": parity <= 1e-3 * S0,
        "call decreasing": bool(np.all(np.diff(calls) < 0)),
        "put increasing": bool(np.all(np.diff(puts) > 0)),
        "convex in K": bool(np.all(np.diff(calls, 2) >= -1e-8) and np.all(np.diff(puts, 2) >= -1e-8)),
        "nonnegative": bool(np.all(calls >= 0) and np.all(puts >= 0)),
        "slope bound": bool(np.all(-np.diff(calls) / np.diff(strikes) <= math.exp(-r * T) + 1e-8)),
    }
    ok = all(checks.values())
    report(acceptance, "C10 parity/monotonicity", ok,
           f"21 strikes, max parity gap {parity:.2e}; " + ", ".join(f"{k} {'ok' if v else 'FAIL'}"
                                                                  for k, v in checks.items()))
    assert ok
