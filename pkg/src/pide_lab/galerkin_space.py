"""Finite-dimensional Galerkin spaces on a truncated 1D log-price domain.

The space is spanned by C0 B-splines of degree p (interior knots of
multiplicity p, open knot vector at both ends).  On each element these are
the Bernstein polynomials, which is how they are evaluated here.  The two
functions that do not vanish at the domain endpoints are dropped, so every
element of V_h is the restriction of a function that is zero outside the
domain.

The H inner product is the exponentially weighted L2 product
``(u, v)_H = int u v exp(2 eta x) dx``; for rho = 1 the V inner product adds
the weighted gradient term, for fractional rho it is computed from the Fourier
symbol ``(1 + |xi|)^(2 rho)`` of the weighted function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg, sparse

from .errors import ConfigError

__all__ = [
    "Domain1D",
    "Quadrature",
    "GalerkinSpace",
    "GramPair",
    "build_space",
    "gram_pair",
    "l2_project",
    "norm_H",
    "norm_V",
    "dual_norm",
    "compute_lambda",
    "inverse_ratio",
    "estimate_inverse_constant",
    "function_error_norms",
]


@dataclass(frozen=True)
class Domain1D:
    x_min: float
    x_max: float
    boundary: str = "zero_dirichlet"

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise ConfigError("domain endpoints must be finite")
        if self.x_min >= self.x_max:
            raise ConfigError(f"invalid domain: x_min={self.x_min} >= x_max={self.x_max}")
        if self.boundary != "zero_dirichlet":
            raise ConfigError(f"unsupported boundary kind {self.boundary!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min


@dataclass(frozen=True)
class Quadrature:
    """Composite Gauss-Legendre rule; each node remembers its element."""

    points: np.ndarray
    weights: np.ndarray
    element: np.ndarray
    local: np.ndarray  # reference coordinate in [0, 1] within the element


def _gauss_01(npts):
    s, w = leggauss(npts)
    return 0.5 * (s + 1.0), 0.5 * w


def _bernstein(p, s, deriv=0):
    """Bernstein polynomials of degree p on [0, 1]; shape (p+1, len(s))."""
    s = np.asarray(s, dtype=float)
    if deriv == 0:
        return np.array([comb(p, k) * s**k * (1.0 - s) ** (p - k) for k in range(p + 1)])
    if deriv == 1:
        if p == 0:
            return np.zeros((1, s.size))
        low = _bernstein(p - 1, s)
        out = np.zeros((p + 1, s.size))
        out[:-1] -= p * low
        out[1:] += p * low
        return out
    raise ValueError("only deriv in {0, 1} is supported")


@dataclass(frozen=True, eq=False)
class GalerkinSpace:
    domain: Domain1D
    n_elements: int
    degree: int
    eta: float = 0.0
    rho: float = 1.0

    @property
    def h(self) -> float:
        return self.domain.width / self.n_elements

    @property
    def dim(self) -> int:
        return self.n_elements * self.degree - 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.domain.x_min, self.domain.x_max, self.n_elements + 1)

    def weight(self, x):
        return np.exp(2.0 * self.eta * np.asarray(x, dtype=float))

    def quadrature(self, npts: int | None = None, subdivide: int = 1) -> Quadrature:
        """Composite rule with ``npts`` points on each of ``subdivide`` pieces per element."""
        if npts is None:
            npts = 2 * (self.degree + 1)
        s, w = _gauss_01(npts)
        pieces = (np.arange(subdivide)[:, None] + s[None, :]) / subdivide
        pw = np.tile(w / subdivide, subdivide)
        local = pieces.ravel()
        e = np.repeat(np.arange(self.n_elements), local.size)
        loc = np.tile(local, self.n_elements)
        x = self.domain.x_min + (e + loc) * self.h
        return Quadrature(points=x, weights=np.tile(pw, self.n_elements) * self.h, element=e, local=loc)

    def basis_values(self, element, local, deriv=0) -> np.ndarray:
        """Dense (dim, N) matrix of basis values at points given by element index and local coordinate."""
        element = np.asarray(element)
        local = np.asarray(local, dtype=float)
        p = self.degree
        vals = _bernstein(p, local, deriv)
        if deriv == 1:
            vals = vals / self.h
        out = np.zeros((self.n_elements * p + 1, local.size))
        cols = np.arange(local.size)
        for k in range(p + 1):
            out[element * p + k, cols] = vals[k]
        return out[1:-1]

    def basis_sparse(self, element, local, deriv=0) -> sparse.csr_array:
        """Sparse counterpart of :meth:`basis_values` for large point sets."""
        element = np.asarray(element)
        local = np.asarray(local, dtype=float)
        p = self.degree
        vals = _bernstein(p, local, deriv)
        if deriv == 1:
            vals = vals / self.h
        rows = (element[None, :] * p + np.arange(p + 1)[:, None]).ravel()
        cols = np.tile(np.arange(local.size), p + 1)
        out = sparse.coo_array((np.asarray(vals).ravel(), (rows, cols)),
                               shape=(self.n_elements * p + 1, local.size)).tocsr()
        return out[1:-1]

    def locate(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.domain.x_min) & (x <= self.domain.x_max)
        t = (x - self.domain.x_min) / self.h
        e = np.clip(np.floor(t).astype(int), 0, self.n_elements - 1)
        return e, t - e, inside

    def evaluate_basis(self, x, deriv=0) -> np.ndarray:
        """Basis values at arbitrary points; zero outside the domain (zero extension)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e, s, inside = self.locate(x)
        vals = self.basis_values(e, s, deriv)
        vals[:, ~inside] = 0.0
        return vals

    def evaluate(self, coeffs, x, deriv=0) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        return coeffs @ self.evaluate_basis(x, deriv)

    @cached_property
    def gram(self) -> "GramPair":
        return gram_pair(self)


@dataclass(frozen=True, eq=False)
class GramPair:
    M: np.ndarray
    S: np.ndarray
    K: np.ndarray = field(repr=False, default=None)  # weighted gradient Gram, rho = 1 part

    @cached_property
    def chol_M(self):
        return linalg.cho_factor(self.M)

    @cached_property
    def chol_S(self):
        return linalg.cho_factor(self.S)

    def solve_M(self, b):
        return linalg.cho_solve(self.chol_M, b)

    def solve_S(self, b):
        return linalg.cho_solve(self.chol_S, b)


def build_space(domain: Domain1D, n_elements: int, p: int, eta: float = 0.0, rho: float = 1.0) -> GalerkinSpace:
    if not isinstance(domain, Domain1D):
        domain = Domain1D(*domain)
    if int(n_elements) != n_elements or n_elements < 2:
        raise ConfigError(f"need at least 2 elements, got {n_elements}")
    if int(p) != p or p < 1:
        raise ConfigError(f"degree must be an integer >= 1, got {p}")
    if not (0.0 < rho <= 2.0):
        raise ConfigError(f"rho must lie in (0, 2], got {rho}")
    if not np.isfinite(eta):
        raise ConfigError("eta must be finite")
    return GalerkinSpace(domain, int(n_elements), int(p), float(eta), float(rho))


def _spectral_gram(space: GalerkinSpace, symbol: Callable[[np.ndarray], np.ndarray],
                   points_per_element=16, pad_factor=8) -> np.ndarray:
    """Gram matrix (1/2pi) int symbol(xi) F_i(xi) conj F_j(xi) dxi of the weighted basis.

    F_i is the Fourier transform of phi_i(x) exp(eta x); sampled on a uniform
    grid, zero-extended, transformed by FFT and summed (trapezoid on the
    periodic frequency grid).
    """
    npts = space.n_elements * points_per_element + 1
    x = np.linspace(space.domain.x_min, space.domain.x_max, npts)
    dx = x[1] - x[0]
    vals = space.evaluate_basis(x) * np.exp(space.eta * x)
    n_fft = 1 << int(np.ceil(np.log2(pad_factor * npts)))
    F = np.fft.fft(vals, n=n_fft, axis=1) * dx
    xi = 2.0 * np.pi * np.fft.fftfreq(n_fft, d=dx)
    dxi = 2.0 * np.pi / (n_fft * dx)
    Fw = F * symbol(xi)[None, :]
    G = (Fw @ F.conj().T).real * dxi / (2.0 * np.pi)
    return 0.5 * (G + G.T)


def gram_pair(space: GalerkinSpace) -> GramPair:
    # Gauss with p+1 points is exact for the unweighted polynomial products.
    npts = space.degree + 1 if space.eta == 0.0 else 2 * (space.degree + 1)
    q = space.quadrature(npts)
    B = space.basis_values(q.element, q.local)
    D = space.basis_values(q.element, q.local, deriv=1)
    wq = q.weights * space.weight(q.points)
    M = (B * wq) @ B.T
    K = (D * wq) @ D.T
    M = 0.5 * (M + M.T)
    K = 0.5 * (K + K.T)
    if space.rho == 1.0:
        S = M + K
    else:
        S = _spectral_gram(space, lambda xi: (1.0 + np.abs(xi)) ** (2.0 * space.rho))
    return GramPair(M=M, S=S, K=K)


def _load(space: GalerkinSpace, g, npts=None) -> np.ndarray:
    """Vector (g, phi_i)_H for a callable g of x."""
    q = space.quadrature(npts)
    vals = np.asarray(g(q.points), dtype=float) * np.ones_like(q.points)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand produced non-finite values")
    B = space.basis_sparse(q.element, q.local)
    return B @ (vals * q.weights * space.weight(q.points))


def l2_project(space: GalerkinSpace, g: Callable) -> np.ndarray:
    """Coefficients of the H-orthogonal projection of ``g`` onto V_h."""
    return space.gram.solve_M(_load(space, g))


def _check_len(space, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (space.dim,):
        raise ConfigError(f"expected a vector of length {space.dim}, got shape {v.shape}")
    return v


def norm_H(space: GalerkinSpace, c) -> float:
    c = _check_len(space, c)
    return float(np.sqrt(max(c @ space.gram.M @ c, 0.0)))


def norm_V(space: GalerkinSpace, c) -> float:
    c = _check_len(space, c)
    return float(np.sqrt(max(c @ space.gram.S @ c, 0.0)))


def dual_norm(space: GalerkinSpace, b) -> float:
    """sup over V_h of <f, v>/||v||_V for the functional with load vector b."""
    b = _check_len(space, b)
    return float(np.sqrt(max(b @ space.gram.solve_S(b), 0.0)))


def compute_lambda(space: GalerkinSpace) -> float:
    """Largest generalized eigenvalue of the pencil (M, M S^-1 M)."""
    G = space.gram
    B = G.M @ G.solve_S(G.M)
    B = 0.5 * (B + B.T)
    top = linalg.eigh(G.M, B, eigvals_only=True, subset_by_index=[space.dim - 1, space.dim - 1])
    return float(top[0])


def inverse_ratio(space: GalerkinSpace) -> float:
    """sup over V_h of ||v||_V / ||v||_H."""
    G = space.gram
    top = linalg.eigh(G.S, G.M, eigvals_only=True, subset_by_index=[space.dim - 1, space.dim - 1])
    return float(np.sqrt(top[0]))


def estimate_inverse_constant(spaces: Sequence[GalerkinSpace]) -> float:
    """Fit C_IP in ||u_h||_V <= C_IP h^-rho ||u_h||_H over a refinement family."""
    spaces = list(spaces)
    if len(spaces) < 3:
        raise ConfigError("need at least 3 spaces to estimate the inverse constant")
    ref = spaces[0]
    for sp in spaces[1:]:
        if (sp.domain, sp.degree, sp.eta, sp.rho) != (ref.domain, ref.degree, ref.eta, ref.rho):
            raise ConfigError("spaces must share domain, degree, eta and rho")
    hs = [sp.h for sp in spaces]
    if any(b > a for a, b in zip(hs, hs[1:])):
        raise ConfigError("mesh sizes must be non-increasing")
    return max(inverse_ratio(sp) * sp.h**sp.rho for sp in spaces)


def function_error_norms(space: GalerkinSpace, g, dg, c, npts=None):
    """H and weighted H1 norms of g - v_h for callables g, g' and coefficients c.

    Uses a quadrature four times finer than assembly; the H1 value is the
    V-norm only for rho = 1.
    """
    if npts is None:
        npts = 8 * (space.degree + 1)
    q = space.quadrature(npts)
    c = np.asarray(c, dtype=float)
    wq = q.weights * space.weight(q.points)
    one = np.ones_like(q.points)
    e = g(q.points) * one - space.basis_sparse(q.element, q.local).T @ c
    de = dg(q.points) * one - space.basis_sparse(q.element, q.local, deriv=1).T @ c
    l2 = float(np.sqrt(np.sum(e**2 * wq)))
    h1 = float(np.sqrt(np.sum((e**2 + de**2) * wq)))
    return l2, h1
