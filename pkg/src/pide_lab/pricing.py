"""European and knock-out barrier prices in log-price coordinates, with closed-form oracles.

The price w(tau, x), tau the time to maturity and x = log S, solves
dw/dtau + A_{T-tau} w = 0 with w(0, x) = payoff(e^x).  It is computed with the
theta-scheme on a truncated domain carrying zero Dirichlet conditions, which
for barrier contracts are the knock-out conditions themselves.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gammaln, ndtr
from scipy.stats import poisson

from .errors import ConfigError, NumericalError
from .galerkin_space import Domain1D, build_space
from .levy_operator import Constant, JumpSpec, LevyModel, _as_callable, risk_neutral_drift
from .theta_stepper import ThetaConfig, TimeGrid, run

__all__ = [
    "PricingConfig",
    "PriceResult",
    "bs_price",
    "bs_price_total",
    "merton_reference",
    "down_and_out_call",
    "payoff_function",
    "price_european",
    "price_barrier",
    "write_price_curve_csv",
]


# --------------------------------------------------------------------------
# closed forms


def _integral(f, T):
    f = _as_callable(f)
    if isinstance(f, Constant):
        return f.value * T
    val, _ = integrate.quad(lambda t: float(f(t)), 0.0, T, limit=200)
    return float(val)


def bs_price_total(S, K, total_var, discount_int, kind="call", carry_int=None):
    """Black-Scholes with total variance v = int sigma^2 and integrated rate R = int r.

    ``carry_int`` is the integrated drift of the forward (defaults to R).
    """
    S = np.asarray(S, dtype=float)
    if carry_int is None:
        carry_int = discount_int
    fwd = S * math.exp(carry_int)
    df = math.exp(-discount_int)
    if total_var <= 0:
        intrinsic = np.maximum(fwd - K, 0.0) if kind == "call" else np.maximum(K - fwd, 0.0)
        return df * intrinsic
    sd = math.sqrt(total_var)
    d1 = (np.log(fwd / K) + 0.5 * total_var) / sd
    d2 = d1 - sd
    if kind == "call":
        return df * (fwd * ndtr(d1) - K * ndtr(d2))
    if kind == "put":
        return df * (K * ndtr(-d2) - fwd * ndtr(-d1))
    raise ConfigError(f"unknown option kind {kind!r}")


def bs_price(S, K, T, r, sigma, kind="call"):
    """Black-Scholes price; ``r`` and ``sigma`` may be callables of t."""
    sig = _as_callable(sigma)
    var = _integral(lambda t: float(sig(t)) ** 2, T)
    return bs_price_total(S, K, var, _integral(r, T), kind)


def merton_reference(S0, K, T, r, sigma, lambda_fn, mu_J, delta_J, kind="call", k_max=170, tail_tol=1e-12):
    """Merton series with integrated intensity and variance.

    Conditional on k jumps the log-return is Gaussian with variance
    int sigma^2 + k delta^2 and mean shifted by k mu - Lambda_T (E e^Y - 1).
    """
    sig = _as_callable(sigma)
    var = _integral(lambda t: float(sig(t)) ** 2, T)
    R = _integral(r, T)
    lam_T = _integral(lambda_fn, T)
    if lam_T < 0:
        raise ConfigError("integrated jump intensity must be >= 0")
    kappa = math.expm1(mu_J + 0.5 * delta_J**2)
    if poisson.sf(k_max, lam_T) > tail_tol:
        raise NumericalError(f"Merton series does not converge within {k_max} terms (Lambda_T={lam_T})")
    total = 0.0
    for k in range(k_max + 1):
        logw = -lam_T + k * math.log(lam_T) - gammaln(k + 1) if lam_T > 0 else (0.0 if k == 0 else -np.inf)
        w = math.exp(logw)
        if k > 0 and w == 0.0:
            break
        carry = R + k * (mu_J + 0.5 * delta_J**2) - lam_T * kappa
        total += w * bs_price_total(S0, K, var + k * delta_J**2, R, kind, carry_int=carry)
        if poisson.sf(k, lam_T) < tail_tol:
            break
    return float(total)


def down_and_out_call(S, K, B, T, r, sigma):
    """Continuously monitored down-and-out call for B <= K, constant coefficients.

    For r = 0 this equals C_BS(S, K) - (S/B) C_BS(B^2/S, K).
    """
    S = np.asarray(S, dtype=float)
    if B > K:
        raise ConfigError("closed form implemented for B <= K only")
    sd = sigma * math.sqrt(T)
    lam = (r + 0.5 * sigma**2) / sigma**2
    y = np.log(B**2 / (S * K)) / sd + lam * sd
    c_in = (S * (B / S) ** (2 * lam) * ndtr(y)
            - K * math.exp(-r * T) * (B / S) ** (2 * lam - 2) * ndtr(y - sd))
    c = bs_price_total(S, K, sigma**2 * T, r * T, "call")
    return np.where(S > B, c - c_in, 0.0)


# --------------------------------------------------------------------------
# PIDE pricing


def payoff_function(kind, K) -> Callable:
    """Payoff as a function of x = log S."""
    if kind == "call":
        return lambda x: np.maximum(np.exp(x) - K, 0.0)
    if kind == "put":
        return lambda x: np.maximum(K - np.exp(x), 0.0)
    if kind == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    raise ConfigError(f"unknown payoff kind {kind!r}")


@dataclass
class PricingConfig:
    S0: float = 100.0
    K: float = 100.0
    T: float = 1.0
    kind: str = "call"
    sigma: object = 0.2
    rate: object = 0.0
    jumps: JumpSpec = field(default_factory=JumpSpec)
    kappa: object = None
    n_elements: int = 400
    M: int = 200
    theta: float = 0.5
    degree: int = 1
    margin: float = 4.0
    eta: float | None = None
    barrier_lo: float | None = None
    barrier_hi: float | None = None
    payoff: Callable | None = None  # custom payoff of x = log S

    def __post_init__(self):
        for name in ("S0", "T", "margin"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite")
        if self.kind in ("call", "put") and not (np.isfinite(self.K) and self.K > 0):
            raise ConfigError("strike K must be positive for calls and puts")
        if self.kind not in ("call", "put", "zero", "custom"):
            raise ConfigError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "custom" and self.payoff is None:
            raise ConfigError("custom payoff needs a payoff callable")

    @property
    def weight_eta(self) -> float:
        if self.eta is not None:
            return float(self.eta)
        return -1.5 if self.kind == "call" else 0.0

    def model(self) -> LevyModel:
        b = risk_neutral_drift(self.sigma, self.rate, self.jumps)
        return LevyModel(sigma=self.sigma, b=b, rate=self.rate, kappa=self.kappa, jumps=self.jumps, T=self.T)

    def terminal_stdev(self) -> float:
        sig = _as_callable(self.sigma)
        var = _integral(lambda t: float(sig(t)) ** 2, self.T)
        if self.jumps.active:
            j = self.jumps
            var += _integral(j.intensity_at, self.T) * (j.mean**2 + j.stdev**2)
        return math.sqrt(var)

    def domain(self) -> Domain1D:
        x0 = math.log(self.S0)
        half = self.margin * self.terminal_stdev()
        lo = math.log(self.barrier_lo) if self.barrier_lo is not None else x0 - half
        hi = math.log(self.barrier_hi) if self.barrier_hi is not None else x0 + half
        if not lo < hi:
            raise ConfigError("empty computational domain")
        return Domain1D(lo, hi)


@dataclass
class PriceResult:
    x: np.ndarray
    S: np.ndarray
    price: np.ndarray
    reference: np.ndarray | None
    spot_price: float
    spot_reference: float | None
    theta_run: object = field(default=None, repr=False)

    @property
    def rel_error(self):
        if self.reference is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.abs(self.reference) > 0, np.abs(self.price - self.reference) / np.abs(self.reference),
                            np.nan)

    @property
    def spot_rel_error(self):
        if self.spot_reference is None or self.spot_reference == 0:
            return None
        return abs(self.spot_price - self.spot_reference) / abs(self.spot_reference)


def _check_integrable(cfg: PricingConfig, dom: Domain1D):
    # on a bounded domain every bounded-on-compacts payoff is in L2_eta; the
    # weight matters for the untruncated problem, where calls need eta < -1
    if cfg.kind == "call" and cfg.barrier_hi is None and cfg.weight_eta >= -1.0:
        raise ConfigError("call payoff is not in L2_eta for eta >= -1; choose eta < -1")
    if cfg.kind == "put" and cfg.barrier_lo is None and cfg.weight_eta < 0.0:
        raise ConfigError("put payoff is not in L2_eta for eta < 0; choose eta >= 0")


def _solve(cfg: PricingConfig, dom: Domain1D, n_points=201):
    g = cfg.payoff if cfg.kind == "custom" else payoff_function(cfg.kind, cfg.K)
    sp = build_space(dom, cfg.n_elements, cfg.degree, cfg.weight_eta)
    model = cfg.model().time_reversed()
    res = run(sp, model, None, g, TimeGrid(cfg.T, cfg.M), ThetaConfig(cfg.theta))
    uT = res.trajectory[-1]
    if not np.all(np.isfinite(uT)):
        raise NumericalError("non-finite prices")
    x = np.linspace(dom.x_min, dom.x_max, n_points)
    price = sp.evaluate(uT, x)
    spot = float(sp.evaluate(uT, np.array([math.log(cfg.S0)]))[0])
    return x, price, spot, res


def _reference(cfg: PricingConfig, S):
    """Closed-form oracle where one exists, else None."""
    if cfg.kind not in ("call", "put"):
        return None
    if cfg.kappa is not None:
        return None
    if cfg.jumps.active:
        j = cfg.jumps
        return np.array([merton_reference(s, cfg.K, cfg.T, cfg.rate, cfg.sigma, j.intensity_at, j.mean, j.stdev,
                                          cfg.kind) for s in np.atleast_1d(S)])
    return bs_price(S, cfg.K, cfg.T, cfg.rate, cfg.sigma, cfg.kind)


def price_european(cfg: PricingConfig) -> PriceResult:
    if cfg.kind not in ("call", "put", "zero", "custom"):
        raise ConfigError("European pricing needs a call, put, zero or custom payoff")
    dom = cfg.domain()
    x0 = math.log(cfg.S0)
    if not dom.x_min < x0 < dom.x_max:
        raise ConfigError("spot outside the computational domain")
    _check_integrable(cfg, dom)
    x, price, spot, res = _solve(cfg, dom)
    S = np.exp(x)
    ref = _reference(cfg, S) if cfg.barrier_lo is None and cfg.barrier_hi is None else None
    sref = None if ref is None else float(np.atleast_1d(_reference(cfg, np.array([cfg.S0])))[0])
    return PriceResult(x, S, price, ref, spot, sref, res)


def price_barrier(cfg: PricingConfig) -> PriceResult:
    """Knock-out price with zero Dirichlet conditions at the barriers."""
    if cfg.barrier_lo is None and cfg.barrier_hi is None:
        raise ConfigError("barrier pricing needs at least one barrier level")
    for b in (cfg.barrier_lo, cfg.barrier_hi):
        if b is not None and not (np.isfinite(b) and b > 0):
            raise ConfigError("barrier levels must be positive")
    dom = cfg.domain()
    x0 = math.log(cfg.S0)
    if not dom.x_min <= x0 <= dom.x_max:
        raise ConfigError("spot outside the barrier corridor")
    x, price, spot, res = _solve(cfg, dom)
    S = np.exp(x)
    ref, sref = None, None
    const = all(isinstance(_as_callable(v), Constant) for v in (cfg.sigma, cfg.rate))
    if (cfg.kind == "call" and cfg.barrier_lo is not None and cfg.barrier_hi is None
            and not cfg.jumps.active and cfg.kappa is None and const and cfg.barrier_lo <= cfg.K):
        sig, r = _as_callable(cfg.sigma).value, _as_callable(cfg.rate).value
        ref = down_and_out_call(S, cfg.K, cfg.barrier_lo, cfg.T, r, sig)
        sref = float(down_and_out_call(np.array([cfg.S0]), cfg.K, cfg.barrier_lo, cfg.T, r, sig)[0])
    return PriceResult(x, S, price, ref, spot, sref, res)


def write_price_curve_csv(result: PriceResult, path):
    rel = result.rel_error
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "S", "price", "reference", "rel_error"])
        for i in range(result.x.size):
            ref = "" if result.reference is None else result.reference[i]
            re = "" if rel is None else rel[i]
            w.writerow([result.x[i], result.S[i], result.price[i], ref, re])
