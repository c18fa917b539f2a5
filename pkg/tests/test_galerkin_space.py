import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pide_lab.errors import ConfigError
from pide_lab.galerkin_space import (
    Domain1D,
    build_space,
    compute_lambda,
    dual_norm,
    estimate_inverse_constant,
    function_error_norms,
    inverse_ratio,
    l2_project,
    norm_H,
    norm_V,
)
from pide_lab.stability_lab import fit_slope


def hat(x, center, h):
    return np.maximum(0.0, 1.0 - np.abs(x - center) / h)


@pytest.mark.parametrize("n,p,dim", [(2, 1, 1), (4, 1, 3), (4, 2, 7), (5, 3, 14)])
def test_dimension(unit, n, p, dim):
    assert build_space(unit, n, p).dim == dim


def test_invalid_inputs(unit):
    with pytest.raises(ConfigError):
        Domain1D(1.0, 1.0)
    with pytest.raises(ConfigError):
        Domain1D(2.0, 1.0)
    with pytest.raises(ConfigError):
        build_space(unit, 1, 1)
    with pytest.raises(ConfigError):
        build_space(unit, 4, 0)
    with pytest.raises(ConfigError):
        build_space(unit, 4, 1, rho=2.5)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_basis_boundary_and_support(unit, p):
    sp = build_space(unit, 6, p)
    ends = sp.evaluate_basis(np.array([0.0, 1.0]))
    assert np.abs(ends).max() < 1e-15
    x = np.linspace(0, 1, 2001)
    vals = sp.evaluate_basis(x)
    for row in vals:
        nz = x[np.abs(row) > 1e-14]
        assert nz.max() - nz.min() <= (p + 1) * sp.h + 1e-12
    # left-to-right ordering of supports
    centers = [x[np.argmax(np.abs(r))] for r in vals]
    assert np.all(np.diff(centers) >= -1e-12)


def test_single_hat_grams(unit):
    sp = build_space(unit, 2, 1)
    G = sp.gram
    assert G.M.shape == (1, 1)
    assert G.M[0, 0] == pytest.approx(1 / 3, abs=1e-14)
    assert G.S[0, 0] == pytest.approx(13 / 3, abs=1e-13)
    c = np.array([1.0])
    assert norm_H(sp, c) == pytest.approx(np.sqrt(1 / 3), abs=1e-14)
    assert norm_V(sp, c) == pytest.approx(np.sqrt(13 / 3), abs=1e-14)
    assert compute_lambda(sp) == pytest.approx(13.0, rel=1e-12)
    assert inverse_ratio(sp) * sp.h == pytest.approx(np.sqrt(13) / 2, rel=1e-12)


def test_hat_mass_entries(unit):
    sp = build_space(unit, 4, 1)
    h = sp.h
    M = sp.gram.M
    assert np.allclose(np.diag(M), 2 * h / 3, atol=1e-15)
    assert np.allclose(np.diag(M, 1), h / 6, atol=1e-15)
    assert np.allclose(np.diag(M, 2), 0.0, atol=1e-15)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_unweighted_mass_matches_quad(unit, p):
    sp = build_space(unit, 4, p)
    M = sp.gram.M
    f = lambda x, i, j: sp.evaluate_basis(np.array([x]))[i, 0] * sp.evaluate_basis(np.array([x]))[j, 0]
    for i, j in [(0, 0), (0, 1), (1, 2), (sp.dim - 1, sp.dim - 1)]:
        ref, _ = integrate.quad(f, 0, 1, args=(i, j), points=sp.nodes[1:-1], epsabs=1e-14)
        assert M[i, j] == pytest.approx(ref, abs=1e-12)


def test_weighted_mass_matches_quad():
    sp = build_space(Domain1D(-1.0, 2.0), 5, 2, eta=-0.7)
    M, K = sp.gram.M, sp.gram.K
    for i, j in [(0, 0), (2, 3), (4, 5)]:
        f = lambda x: float(sp.evaluate_basis(np.array([x]))[i, 0] * sp.evaluate_basis(np.array([x]))[j, 0]
                            * np.exp(-1.4 * x))
        df = lambda x: float(sp.evaluate_basis(np.array([x]), 1)[i, 0] * sp.evaluate_basis(np.array([x]), 1)[j, 0]
                             * np.exp(-1.4 * x))
        ref, _ = integrate.quad(f, -1, 2, points=sp.nodes[1:-1], epsabs=1e-14)
        dref, _ = integrate.quad(df, -1, 2, points=sp.nodes[1:-1], epsabs=1e-14)
        assert M[i, j] == pytest.approx(ref, rel=1e-9, abs=1e-13)
        assert K[i, j] == pytest.approx(dref, rel=1e-9, abs=1e-13)


def test_projection_sine_dense_oracle(unit):
    sp = build_space(unit, 4, 1)
    h = sp.h
    centers = np.arange(1, 4) * h
    Mo = np.diag(np.full(3, 2 * h / 3)) + np.diag(np.full(2, h / 6), 1) + np.diag(np.full(2, h / 6), -1)
    b = np.array([integrate.quad(lambda x: np.sin(np.pi * x) * hat(x, c, h), c - h, c + h, points=[c],
                                 epsabs=1e-15)[0] for c in centers])
    ref = np.linalg.solve(Mo, b)
    assert np.allclose(l2_project(sp, lambda x: np.sin(np.pi * x)), ref, atol=1e-12)


def test_projection_idempotent_and_zero(unit):
    sp = build_space(unit, 7, 2)
    e = np.zeros(sp.dim)
    e[4] = 1.0
    assert np.allclose(l2_project(sp, lambda x: sp.evaluate(e, x)), e, atol=1e-12)
    assert np.all(l2_project(sp, lambda x: 0.0 * x) == 0.0)


def test_projection_rejects_nonfinite(unit):
    sp = build_space(unit, 4, 1)
    with pytest.raises(ValueError), np.errstate(invalid="ignore"):
        l2_project(sp, lambda x: np.log(x - 0.5))


def test_norms_zero_and_riesz(unit):
    sp = build_space(unit, 8, 2)
    z = np.zeros(sp.dim)
    assert norm_H(sp, z) == norm_V(sp, z) == dual_norm(sp, z) == 0.0
    c = np.random.default_rng(1).normal(size=sp.dim)
    assert dual_norm(sp, sp.gram.S @ c) == pytest.approx(norm_V(sp, c), rel=1e-10)
    with pytest.raises(ConfigError):
        dual_norm(sp, np.ones(sp.dim + 1))
    with pytest.raises(ConfigError):
        norm_H(sp, np.ones(3))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 12), p=st.integers(1, 3), eta=st.floats(-2, 2),
       rho=st.sampled_from([1.0, 0.5, 1.5]), seed=st.integers(0, 10**6))
def test_gram_invariants(n, p, eta, rho, seed):
    sp = build_space(Domain1D(-0.5, 1.0), n, p, eta, rho)
    M, S = sp.gram.M, sp.gram.S
    for A in (M, S):
        assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
        assert np.linalg.eigvalsh(A).min() > 0
    c = np.random.default_rng(seed).normal(size=sp.dim)
    nh, nv = norm_H(sp, c), norm_V(sp, c)
    if rho >= 1.0:
        assert nh <= nv * (1 + 1e-10)
    assert dual_norm(sp, M @ c) >= nh**2 / nv * (1 - 1e-10)
    lam = compute_lambda(sp)
    assert lam >= nh**2 / dual_norm(sp, M @ c) ** 2 * (1 - 1e-8)


def test_lambda_equality_on_line(unit):
    sp = build_space(unit, 2, 1, eta=0.8)
    c = np.array([2.5])
    ratio = norm_H(sp, c) ** 2 / dual_norm(sp, sp.gram.M @ c) ** 2
    assert compute_lambda(sp) == pytest.approx(ratio, rel=1e-12)
    assert compute_lambda(sp) == pytest.approx(sp.gram.S[0, 0] / sp.gram.M[0, 0], rel=1e-12)


@pytest.mark.parametrize("p", [1, 2])
def test_lambda_scaling(unit, p):
    ns = [8, 16, 32, 64]
    lams = [compute_lambda(build_space(unit, n, p)) for n in ns]
    slope, _, _ = fit_slope([1 / n for n in ns], lams)
    assert slope == pytest.approx(-2.0, abs=0.2)


def test_lambda_p1_constant(unit):
    # max over the pencil of hats tends to 12/h^2 (+1 from the L2 part)
    sp = build_space(unit, 64, 1)
    assert compute_lambda(sp) * sp.h**2 == pytest.approx(12.0, rel=0.01)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 10), p=st.integers(1, 3))
def test_projection_optimality(seed, n, p):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4)
    g = lambda x: sum(a[k] * np.sin((k + 1) * np.pi * x) for k in range(4)) + np.exp(x) * x * (1 - x)
    dg = lambda x: 0 * x
    sp = build_space(Domain1D(0, 1), n, p)
    c = l2_project(sp, g)
    best, _ = function_error_norms(sp, g, dg, c)
    for _ in range(5):
        v = c + rng.normal(scale=0.1, size=sp.dim)
        other, _ = function_error_norms(sp, g, dg, v)
        assert best <= other + 1e-10


@pytest.mark.parametrize("p", [1, 2, 3])
def test_projection_rates(unit, p):
    g = lambda x: np.sin(np.pi * x)
    dg = lambda x: np.pi * np.cos(np.pi * x)
    ns = [8, 16, 32, 64]
    errs = np.array([function_error_norms(sp, g, dg, l2_project(sp, g))
                     for sp in (build_space(unit, n, p) for n in ns)])
    hs = [1 / n for n in ns]
    assert fit_slope(hs, errs[:, 1])[0] == pytest.approx(p, abs=0.15)
    assert fit_slope(hs, errs[:, 0])[0] == pytest.approx(p + 1, abs=0.15)


def test_inverse_constant(unit):
    with pytest.raises(ConfigError):
        estimate_inverse_constant([build_space(unit, 4, 1)] * 2)
    with pytest.raises(ConfigError):
        estimate_inverse_constant([build_space(unit, 4, 1), build_space(unit, 8, 1), build_space(unit, 8, 2)])
    with pytest.raises(ConfigError):
        estimate_inverse_constant([build_space(unit, n, 1) for n in (8, 4, 16)])
    same = [build_space(unit, 8, 1)] * 3
    assert estimate_inverse_constant(same) == pytest.approx(inverse_ratio(same[0]) * same[0].h, rel=1e-14)
    fam = [build_space(unit, n, 1) for n in (8, 16, 32, 64, 128)]
    c = [estimate_inverse_constant(fam[k - 2:k + 1]) for k in range(2, len(fam))]
    assert abs(c[-1] - c[-2]) / c[-1] < 0.1
    assert c[-1] == pytest.approx(np.sqrt(12), rel=0.02)


def test_fractional_gram():
    sp1 = build_space(Domain1D(0, 1), 8, 1, rho=0.5)
    sp2 = build_space(Domain1D(0, 1), 8, 1, rho=1.5)
    c = np.random.default_rng(3).normal(size=sp1.dim)
    # the symbol (1+|xi|)^{2 rho} increases with rho
    assert norm_V(sp1, c) < norm_V(sp2, c)
    assert norm_H(sp1, c) <= norm_V(sp1, c)
    # Lambda scales like h^{-2 rho}
    ns = [8, 16, 32]
    lams = [compute_lambda(build_space(Domain1D(0, 1), n, 1, rho=0.5)) for n in ns]
    assert fit_slope([1 / n for n in ns], lams)[0] == pytest.approx(-1.0, abs=0.2)
