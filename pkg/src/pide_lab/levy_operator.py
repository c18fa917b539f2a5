"""Time-inhomogeneous Levy characteristics and the Kolmogorov bilinear form.

The operator is ``A_t = -G_t + r_t + kappa_t`` with generator

    G_t phi = sigma_t^2/2 phi'' + b_t phi'
              + int (phi(x+y) - phi(x) - phi'(x) h(y)) F_t(dy),

tested against ``phi_i exp(2 eta x)``.  Integrating the diffusion by parts
against the weighted test function moves ``sigma_t^2 eta`` into the
first-order coefficient, so the local part of the form is

    a_t(u, v) = sigma^2/2 (u', v')_H + (c_t u', v)_H + ((r + kappa) u, v)_H,
    c_t = sigma_t^2 eta - b_t.

Jump measures are compound Poisson with Gaussian jump sizes (Merton), so the
nonlocal part splits into a convolution term, a mass term and a drift term.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, linalg, sparse
from scipy.special import ndtr

from .errors import ConfigError, NotCoercive
from .galerkin_space import GalerkinSpace

__all__ = [
    "Constant",
    "JumpSpec",
    "LevyModel",
    "AssembledOperator",
    "OperatorAssembler",
    "default_truncation",
    "risk_neutral_drift",
    "assemble_stiffness",
    "jump_matrix",
    "estimate_continuity_coercivity",
]

_SQRT2PI = np.sqrt(2.0 * np.pi)
JUMP_WINDOW = 8.0  # Gaussian jump density truncated at mean +- 8 stdev


class Constant:
    """Callable returning a fixed value; lets assembly skip quadrature."""

    def __init__(self, value):
        self.value = float(value)

    def __call__(self, *args):
        if len(args) == 2:
            return np.full(np.shape(args[1]), self.value)
        return self.value

    def __repr__(self):
        return f"Constant({self.value!r})"


def _as_callable(v):
    return v if callable(v) else Constant(v)


def default_truncation(y):
    y = np.asarray(y, dtype=float)
    return np.where(np.abs(y) <= 1.0, y, 0.0)


@dataclass(frozen=True)
class JumpSpec:
    kind: str = "none"
    intensity: Callable = field(default_factory=lambda: Constant(0.0))
    mean: float = 0.0
    stdev: float = 0.0
    truncation: Callable = default_truncation

    def __post_init__(self):
        if self.kind not in ("none", "merton"):
            raise ConfigError(f"unknown jump kind {self.kind!r}")
        object.__setattr__(self, "intensity", _as_callable(self.intensity))
        if self.kind == "merton" and not self.stdev > 0:
            raise ConfigError("Merton jumps need a positive jump stdev")

    @classmethod
    def merton(cls, intensity, mean, stdev, truncation=default_truncation):
        return cls("merton", intensity, float(mean), float(stdev), truncation)

    @property
    def active(self):
        if self.kind == "none":
            return False
        return not (isinstance(self.intensity, Constant) and self.intensity.value == 0.0)

    def density(self, y):
        z = (np.asarray(y, dtype=float) - self.mean) / self.stdev
        return np.exp(-0.5 * z * z) / (self.stdev * _SQRT2PI)

    @cached_property
    def truncation_mean(self) -> float:
        """E[h(Y)] for the normalized jump-size law."""
        if self.kind == "none":
            return 0.0
        if self.truncation is default_truncation:
            a = (-1.0 - self.mean) / self.stdev
            b = (1.0 - self.mean) / self.stdev
            pdf = lambda z: np.exp(-0.5 * z * z) / _SQRT2PI
            return float(self.mean * (ndtr(b) - ndtr(a)) - self.stdev * (pdf(b) - pdf(a)))
        lo = self.mean - JUMP_WINDOW * self.stdev
        hi = self.mean + JUMP_WINDOW * self.stdev
        brk = [p for p in (-1.0, 1.0) if lo < p < hi]
        val, _ = integrate.quad(lambda y: float(self.truncation(y)) * float(self.density(y)), lo, hi,
                                points=brk or None, limit=200)
        return float(val)

    @property
    def exp_moment(self) -> float:
        """E[e^Y] - 1."""
        return float(np.expm1(self.mean + 0.5 * self.stdev**2)) if self.kind == "merton" else 0.0

    def intensity_at(self, t) -> float:
        if self.kind == "none":
            return 0.0
        lam = float(self.intensity(t))
        if lam < 0 or not np.isfinite(lam):
            raise ConfigError(f"jump intensity must be finite and >= 0, got {lam} at t={t}")
        return lam


@dataclass(frozen=True)
class LevyModel:
    """Characteristics (sigma_t, b_t, F_t; h), interest rate and killing rate.

    ``sigma``, ``b``, ``rate`` are callables of t; ``kappa`` is a callable of
    (t, x) vectorized in x, or None for no killing.
    """

    sigma: Callable
    b: Callable
    rate: Callable
    kappa: Callable | None = None
    jumps: JumpSpec = field(default_factory=JumpSpec)
    T: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        object.__setattr__(self, "sigma", _as_callable(self.sigma))
        object.__setattr__(self, "b", _as_callable(self.b))
        object.__setattr__(self, "rate", _as_callable(self.rate))
        if self.kappa is not None and not callable(self.kappa):
            object.__setattr__(self, "kappa", Constant(self.kappa))

    @property
    def is_time_constant(self):
        parts = [self.sigma, self.b, self.rate]
        if self.kappa is not None:
            parts.append(self.kappa)
        if self.jumps.kind != "none":
            parts.append(self.jumps.intensity)
        return all(isinstance(p, Constant) for p in parts)

    def time_reversed(self) -> "LevyModel":
        """Coefficients evaluated at T - t (time-to-maturity convention)."""
        T = self.T

        def rev(f):
            return f if isinstance(f, Constant) else (lambda t: f(T - t))

        kappa = self.kappa
        if kappa is not None and not isinstance(kappa, Constant):
            k0 = kappa
            kappa = lambda t, x: k0(T - t, x)
        jumps = self.jumps
        if jumps.kind != "none":
            jumps = replace(jumps, intensity=rev(jumps.intensity))
        return replace(self, sigma=rev(self.sigma), b=rev(self.b), rate=rev(self.rate), kappa=kappa, jumps=jumps)

    def with_kappa_shift(self, lam: float) -> "LevyModel":
        """Model whose killing rate is kappa + lam."""
        lam = float(lam)
        if lam == 0.0:
            return self
        k = self.kappa
        if k is None:
            new = Constant(lam)
        elif isinstance(k, Constant):
            new = Constant(k.value + lam)
        else:
            new = lambda t, x: k(t, x) + lam
        return replace(self, kappa=new)


def risk_neutral_drift(sigma, rate, jumps: JumpSpec = JumpSpec()):
    """b_t making exp(L_t) a discounted martingale under rate r_t."""
    sigma, rate = _as_callable(sigma), _as_callable(rate)
    comp = jumps.exp_moment - jumps.truncation_mean
    if isinstance(sigma, Constant) and isinstance(rate, Constant) and (
            jumps.kind == "none" or isinstance(jumps.intensity, Constant)):
        lam = jumps.intensity_at(0.0)
        return Constant(rate.value - 0.5 * sigma.value**2 - lam * comp)
    return lambda t: float(rate(t)) - 0.5 * float(sigma(t)) ** 2 - jumps.intensity_at(t) * comp


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    t: float
    A: np.ndarray
    symmetric_part: np.ndarray


class OperatorAssembler:
    """Assembles A(t)_ij = a_t(phi_j, phi_i) for a fixed space and model.

    The t-independent Gram blocks are built once; per time only scalar
    coefficients (and the killing rate, when it depends on x) are evaluated.
    """

    def __init__(self, space: GalerkinSpace, model: LevyModel):
        self.space = space
        self.model = model
        q = space.quadrature(2 * (space.degree + 1))
        self._q = q
        self._B = space.basis_values(q.element, q.local)
        self._D = space.basis_values(q.element, q.local, deriv=1)
        self._wq = q.weights * space.weight(q.points)
        self.M = self._B * self._wq @ self._B.T
        self.K = self._D * self._wq @ self._D.T
        self.C = self._B * self._wq @ self._D.T  # C_ij = (phi_j', phi_i)_H
        self._cache_t = None
        self._cache_A = None

    # coefficients -------------------------------------------------------
    def _coeffs(self, t):
        T = self.model.T
        if not (-1e-12 * T <= t <= T * (1 + 1e-12)):
            raise ConfigError(f"t={t} outside [0, {T}]")
        m = self.model
        sig = float(m.sigma(t))
        b = float(m.b(t))
        r = float(m.rate(t))
        lam = m.jumps.intensity_at(t)
        if not all(np.isfinite([sig, b, r])):
            raise ConfigError(f"non-finite coefficient at t={t}")
        return sig, b, r, lam

    def _kappa_matrix(self, t):
        k = self.model.kappa
        if k is None:
            return 0.0
        if isinstance(k, Constant):
            return k.value * self.M
        vals = np.asarray(k(t, self._q.points), dtype=float) * np.ones_like(self._q.points)
        if not np.all(np.isfinite(vals)):
            raise ConfigError(f"non-finite killing rate at t={t}")
        return self._B * (self._wq * vals) @ self._B.T

    def matrix(self, t: float) -> np.ndarray:
        t = float(t)
        if self._cache_t == t:
            return self._cache_A
        sig, b, r, lam = self._coeffs(t)
        c = sig**2 * self.space.eta - b
        A = 0.5 * sig**2 * self.K + c * self.C + r * self.M
        A = A + self._kappa_matrix(t)
        if lam != 0.0:
            A = A + lam * self.unit_jump_matrix
        self._cache_t, self._cache_A = t, A
        return A

    def assemble(self, t: float) -> AssembledOperator:
        A = self.matrix(t)
        return AssembledOperator(t=float(t), A=A, symmetric_part=0.5 * (A + A.T))

    # jumps ---------------------------------------------------------------
    @cached_property
    def _jump_nodes(self):
        sp, j = self.space, self.model.jumps
        sub = max(1, int(np.ceil(sp.h / j.stdev)))
        q = sp.quadrature(2 * (sp.degree + 1) + 3, subdivide=sub)
        B = sp.basis_values(q.element, q.local)
        D = sp.basis_values(q.element, q.local, deriv=1)
        return q, B, D

    def _convolve(self, vals_z):
        """(int u(x+y) F(dy)) at every jump node x, given u at the jump nodes (unit intensity)."""
        q, _, _ = self._jump_nodes
        j = self.model.jumps
        x = q.points
        vz = np.atleast_2d(vals_z) * q.weights  # (k, N)
        out = np.zeros((vz.shape[0], x.size))
        lo_w, hi_w = j.mean - JUMP_WINDOW * j.stdev, j.mean + JUMP_WINDOW * j.stdev
        chunk = 256
        for s in range(0, x.size, chunk):
            xs = x[s:s + chunk]
            c0 = np.searchsorted(x, xs[0] + lo_w, "left")
            c1 = np.searchsorted(x, xs[-1] + hi_w, "right")
            if c1 <= c0:
                continue
            y = x[None, c0:c1] - xs[:, None]
            P = np.where((y >= lo_w) & (y <= hi_w), j.density(y), 0.0)
            out[:, s:s + chunk] = vz[:, c0:c1] @ P.T
        return out

    @cached_property
    def unit_jump_matrix(self) -> np.ndarray:
        """Jump matrix for intensity 1; J(t) = lambda_J(t) * this."""
        j = self.model.jumps
        if j.kind == "none":
            return np.zeros((self.space.dim, self.space.dim))
        q, B, D = self._jump_nodes
        wx = q.weights * self.space.weight(q.points)
        conv = self._convolve(B)  # (dim_j, N): int phi_j(x+y) nu(dy)
        G = (B * wx) @ conv.T  # G_ij = int phi_i w conv_j
        Mj = (B * wx) @ B.T
        Cj = (B * wx) @ D.T
        return -(G - Mj - j.truncation_mean * Cj)

    # forms on general functions -----------------------------------------
    def _local_form(self, t, u, du, v, dv, npts):
        sp = self.space
        q = sp.quadrature(npts)
        x = q.points
        wq = q.weights * sp.weight(x)
        sig, b, r, _ = self._coeffs(t)
        c = sig**2 * sp.eta - b
        kap = 0.0 if self.model.kappa is None else np.asarray(self.model.kappa(t, x), dtype=float)
        uu, duu = u(x), du(x)
        vv, dvv = v(q), dv(q)
        react = (r + kap) * uu
        return _pair(dvv, 0.5 * sig**2 * duu * wq) + _pair(vv, (c * duu + react) * wq)

    def _jump_form(self, t, u, du, v):
        j = self.model.jumps
        lam = j.intensity_at(t)
        if lam == 0.0:
            return 0.0
        q, _, _ = self._jump_nodes
        wx = q.weights * self.space.weight(q.points)
        uu, duu = u(q.points), du(q.points)
        conv = self._convolve(uu)[0]
        return -lam * _pair(v(q), (conv - uu - j.truncation_mean * duu) * wx)

    def apply_to_function(self, t, u, du, npts=None) -> np.ndarray:
        """Load vector a_t(u, phi_i) for a callable u (zero outside the domain) and its derivative."""
        sp = self.space
        if npts is None:
            npts = 8 * (sp.degree + 1)
        basis = lambda q: sp.basis_sparse(q.element, q.local)
        dbasis = lambda q: sp.basis_sparse(q.element, q.local, deriv=1)
        u, du = _vectorize(u), _vectorize(du)
        out = self._local_form(t, u, du, basis, dbasis, npts).ravel()
        return out + np.ravel(self._jump_form(t, u, du, basis))

    def form(self, t, u, du, v, dv, npts=None) -> float:
        """a_t(u, v) for callables u, v with derivatives du, dv."""
        sp = self.space
        if npts is None:
            npts = 8 * (sp.degree + 1)
        u, du, v, dv = map(_vectorize, (u, du, v, dv))
        vq = lambda q: v(q.points)
        dvq = lambda q: dv(q.points)
        val = self._local_form(t, u, du, vq, dvq, npts)
        return float(np.sum(val) + np.sum(self._jump_form(t, u, du, vq)))


def _pair(V, x):
    """Row-wise quadrature sums V @ x for a (k, N) basis table or a single (N,) row."""
    if sparse.issparse(V):
        return V @ x
    return np.atleast_2d(V) @ x


def _vectorize(f):
    def g(x):
        return np.asarray(f(x), dtype=float) * np.ones_like(x, dtype=float)
    return g


def assemble_stiffness(space: GalerkinSpace, model: LevyModel, t: float) -> AssembledOperator:
    return OperatorAssembler(space, model).assemble(t)


def jump_matrix(space: GalerkinSpace, jumps: JumpSpec, t: float) -> np.ndarray:
    if jumps.kind == "none":
        raise ConfigError("jump_matrix needs an active jump specification")
    model = LevyModel(sigma=0.0, b=0.0, rate=0.0, jumps=jumps, T=max(float(t), 1.0))
    return jumps.intensity_at(t) * OperatorAssembler(space, model).unit_jump_matrix


def _v_geometry(space):
    L = linalg.cholesky(space.gram.S, lower=True)
    return L


def _scaled(L, A):
    X = linalg.solve_triangular(L, A, lower=True)
    return linalg.solve_triangular(L, X.T, lower=True).T


def estimate_continuity_coercivity(space: GalerkinSpace, model: LevyModel, n_samples: int = 16,
                                   times=None, require_coercive=True, assembler=None):
    """Discrete surrogates (alpha_hat, beta_hat) of the continuity and coercivity constants.

    alpha_hat is the largest singular value and beta_hat the smallest
    eigenvalue of the symmetric part of A(t) in the S-geometry, taken over
    uniformly sampled t (plus any extra ``times``).
    """
    if n_samples < 2:
        raise ConfigError("n_samples must be >= 2")
    ts = np.linspace(0.0, model.T, n_samples)
    if times is not None:
        ts = np.union1d(ts, np.asarray(times, dtype=float))
    asm = assembler or OperatorAssembler(space, model)
    L = _v_geometry(space)
    alpha, beta = 0.0, np.inf
    for t in ts:
        At = _scaled(L, asm.matrix(t))
        alpha = max(alpha, float(linalg.svdvals(At)[0]))
        sym = 0.5 * (At + At.T)
        beta = min(beta, float(linalg.eigvalsh(sym, subset_by_index=[0, 0])[0]))
    if require_coercive and beta <= 0:
        raise NotCoercive(alpha, beta)
    return alpha, beta
