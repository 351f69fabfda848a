"""Uplink success probability under the capture model.

Inter-cell interference is a PPP of power-controlled devices outside the
serving cell; intra-cell interference is the sum of the non-maximum gains in
the tagged cell (every in-cell signal arrives at the same mean power ``rho``).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.special as sc
from scipy import integrate, stats

from .network import NetworkParams
from .special import (QuadratureSpec, gil_pelaez_cdf, harmonic, lower_incomplete_gamma,
                      pathloss_hyp, polygamma)

VORONOI_SHAPE = 3.575
COUNT_TAIL = 1e-8
CONDITIONING_LIMIT = 1e3


class ConditioningError(ArithmeticError):
    """Alternating binomial sum too large to trust in double precision."""


class DegenerateFitError(ValueError):
    pass


class FitConsistencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LoadState:
    """Interference load seen by a generic BS.

    ``delta`` is the probability that a device is backlogged and able to
    pay for a transmission, ``omega`` the probability that it is allowed to
    transmit in a slot and ``mu_prime`` the per-channel device density (m^-2).
    With ``tagged_cell`` the interferer count follows the area-biased cell of
    a transmitting device instead of a typical cell.
    """

    delta: float
    omega: float
    mu_prime: float
    tagged_cell: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if not self.mu_prime > 0:
            raise ValueError("mu_prime must be positive")

    @property
    def active_density(self) -> float:
        return self.delta * self.omega * self.mu_prime

    @classmethod
    def from_params(cls, delta: float, params: NetworkParams) -> "LoadState":
        return cls(delta=delta, omega=params.omega, mu_prime=params.mu_prime)


@dataclass(frozen=True)
class IntraGammaFit:
    n: int
    alpha: float
    beta: float

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0, sc.gammainc(self.alpha, self.beta * np.maximum(x, 0.0)), 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def mean(self) -> float:
        return self.alpha / self.beta


# -- number of intra-cell interferers ----------------------------------------

def _count_dist(load: LoadState, lambda_bs: float):
    a = load.active_density
    p = lambda_bs * VORONOI_SHAPE / (a + lambda_bs * VORONOI_SHAPE)
    return stats.nbinom(VORONOI_SHAPE + load.tagged_cell, p)


def intra_count_pmf(k, load: LoadState, lambda_bs: float):
    """P{N = k}: negative binomial from the gamma fit of the Voronoi cell area."""
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("k must be nonnegative")
    if load.active_density == 0:
        out = (k == 0).astype(float)
    else:
        out = _count_dist(load, lambda_bs).pmf(k)
    return float(out) if out.ndim == 0 else out


def count_truncation(load: LoadState, lambda_bs: float, tail: float = COUNT_TAIL) -> int:
    """Smallest ``n_max`` with ``P{N > n_max} < tail``."""
    if load.active_density == 0:
        return 0
    dist = _count_dist(load, lambda_bs)
    n = int(dist.isf(tail))
    while dist.sf(n) >= tail:
        n += 1
    while n > 0 and dist.sf(n - 1) < tail:
        n -= 1
    return n


# -- inter-cell interference -------------------------------------------------

def _power_factor(params: NetworkParams) -> float:
    """gamma(2, x) / (1 - e^-x) with x = pi lambda (P_max/rho)^(2/eta).

    This is ``pi lambda E[P^(2/eta)] / rho^(2/eta)`` for the truncated
    path-loss-inversion power; it tends to 1 when ``P_max >> rho``.
    """
    x = math.pi * params.lambda_bs * (params.p_max / params.rho) ** (2.0 / params.eta)
    return float(lower_incomplete_gamma(2.0, x) / -math.expm1(-x))


@lru_cache(maxsize=64)
def _ray_constant(tau: float, eta: float) -> float:
    """K = int_0^inf (1 - e^{-tau x}/(1+x)) x^{-1-2/eta} dx."""
    b = 1.0 + 2.0 / eta
    if tau == 0.0:
        return math.pi / math.sin(math.pi * (1.0 - 2.0 / eta))

    def f(x):
        return -math.expm1(-tau * x) / (1.0 + x) * x ** -b + x ** (1.0 - b) / (1.0 + x)

    lo, e1 = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    hi, e2 = integrate.quad(f, 1.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return lo + hi


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)
_ASYM_SWITCH = 40.0
_ASYM_TERMS = 14


def _ray_integral_small(q, tau, eta):
    """(1/eta) int_0^1 (1 - e^{-tau q v})/(1 + q v) v^{-1-2/eta} dv.

    Panels halve towards v = 0 until ``|q v|`` is small, which resolves the
    pole at ``v = -1/q``; the last panel uses ``v = x^{eta/(eta-2)}`` so the
    integrand is smooth at the origin.
    """
    qmax = float(np.max(np.abs(q))) if q.size else 0.0
    n_halve = max(1, int(math.ceil(math.log2(max(10.0 * qmax, 2.0)))))
    edges = 0.5 ** np.arange(n_halve + 1)            # 1, 1/2, ..., v_min
    b = 1.0 + 2.0 / eta
    total = np.zeros(q.shape, dtype=complex)
    qq = q[:, None]
    for hi_e, lo_e in zip(edges[:-1], edges[1:]):
        v = 0.5 * (hi_e + lo_e) + 0.5 * (hi_e - lo_e) * _GL_X
        wv = 0.5 * (hi_e - lo_e) * _GL_W * v ** -b
        z = qq * v[None, :]
        total += (-np.expm1(-tau * z) / (1.0 + z)) @ wv
    # v in [0, v_min] with v = x^p, p = eta/(eta-2)
    p = eta / (eta - 2.0)
    xm = edges[-1] ** (1.0 / p)
    x = 0.5 * xm * (1.0 + _GL_X)
    v = x ** p
    # v^{-b} dv = p x^{-1-2/(eta-2)} dx; (1-e^{-tau z}) / x^{p} is smooth
    wx = 0.5 * xm * _GL_W * p * x ** (-1.0 - 2.0 / (eta - 2.0))
    z = qq * v[None, :]
    total += (-np.expm1(-tau * z) / (1.0 + z)) @ wx
    return total / eta


def _ray_tail_asymptotic(q, tau, eta):
    """int_0^inf e^{-tau(q+x)} / ((1+q+x)(q+x)^{1+2/eta}) dx for large |tau q|.

    Repeated integration by parts: sum_k f^(k)(0) / tau^(k+1).
    """
    beta = 1.0 + 2.0 / eta
    q1 = 1.0 + q
    total = np.zeros(q.shape, dtype=complex)
    poch = np.array([sc.poch(beta, j) for j in range(_ASYM_TERMS)])
    for k in range(_ASYM_TERMS):
        acc = np.zeros(q.shape, dtype=complex)
        for j in range(k + 1):
            acc += (math.comb(k, j) * math.factorial(k - j) * poch[j]
                    * q1 ** (-1.0 - k + j) * q ** (-beta - j))
        total += (-1) ** k * acc / tau ** (k + 1)
    return np.exp(-tau * q) * total


def _radial_integral(q, tau, eta):
    """J(q) = int_1^inf (1 - e^{-tau q u^-eta}/(1 + q u^-eta)) u du.

    ``q`` may be complex with ``Re q >= 0`` and ``Im q <= 0`` (the
    characteristic-function side). The pole-free part is closed form; the
    remainder is integrated on [0, 1] for moderate ``|tau q|`` and, beyond,
    by rotating the integration path onto the positive real axis.
    """
    q = np.atleast_1d(np.asarray(q, dtype=complex))
    if tau == 0.0:
        return q * pathloss_hyp(eta, -q) / (eta - 2.0)
    out = np.empty_like(q)
    big = np.abs(tau * q) >= _ASYM_SWITCH
    small = ~big
    if np.any(small):
        qs = q[small]
        out[small] = qs * pathloss_hyp(eta, -qs) / (eta - 2.0) + _ray_integral_small(qs, tau, eta)
    if np.any(big):
        qb = q[big]
        k = _ray_constant(float(tau), float(eta))
        out[big] = qb ** (2.0 / eta) / eta * (k + _ray_tail_asymptotic(qb, tau, eta)) - 0.5
    return out


def inter_lt(s, load: LoadState, params: NetworkParams):
    """Laplace transform of the aggregate inter-cell interference.

    Interferers form a PPP of density ``delta*Omega*mu'`` outside the
    serving cell; each arrives with mean power below ``rho`` and a gain
    conditioned to exceed the access threshold. ``s`` may be complex.
    """
    s_arr = np.asarray(s)
    if load.active_density == 0:
        out = np.ones(s_arr.shape, dtype=s_arr.dtype if np.iscomplexobj(s_arr) else float)
        return out[()] if out.ndim == 0 else out
    if not np.iscomplexobj(s_arr) and np.any(s_arr < 0):
        raise ValueError("s must be nonnegative")
    q = np.atleast_1d(s_arr) * params.rho
    j = _radial_integral(q, params.gain_threshold, params.eta)
    coef = 2.0 * load.active_density / params.lambda_bs * _power_factor(params)
    val = np.exp(-coef * j)
    if not np.iscomplexobj(s_arr):
        val = val.real
    return val[0] if s_arr.ndim == 0 else val.reshape(s_arr.shape)


def inter_lt_tau0(s, load: LoadState, params: NetworkParams):
    """The ``tau = 0`` closed form with ``2F1(1, 1-2/eta; 2-2/eta; -s rho)``."""
    q = np.asarray(s, dtype=float) * params.rho
    return np.exp(-2.0 * q * load.active_density / params.lambda_bs * _power_factor(params)
                  * pathloss_hyp(params.eta, -q) / (params.eta - 2.0))


def inter_mean(load: LoadState, params: NetworkParams) -> float:
    t = params.gain_threshold
    return (2.0 * load.active_density / params.lambda_bs * _power_factor(params)
            * params.rho * (1.0 + t) / (params.eta - 2.0))


def inter_cdf(x, load: LoadState, params: NetworkParams, spec: QuadratureSpec | None = None):
    """CDF of the inter-cell interference by Gil-Pelaez inversion (0 for x < 0)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    if load.active_density == 0:
        out = np.where(x >= 0, 1.0, 0.0)
        return float(out) if out.ndim == 0 else out
    pos = x >= 0
    if np.any(pos):
        lt = lambda s: inter_lt(s, load, params)
        out[pos] = gil_pelaez_cdf(lt, x[pos], spec, scale=params.rho)
    return float(out) if out.ndim == 0 else out


# -- intra-cell interference -------------------------------------------------

def intra_lt(s, n: int, params: NetworkParams):
    """Transform of the intra-cell interference given ``n`` interferers.

    Each non-maximum gain is a shifted exponential truncated below the
    cell maximum; averaging one such term over the maximum and raising it to
    the ``n``-th power gives the product form used here.
    """
    if n < 0 or int(n) != n:
        raise ValueError("n must be a nonnegative integer")
    s = np.asarray(s, dtype=float)
    if n == 0:
        out = np.ones(s.shape)
        return float(out) if out.ndim == 0 else out
    q = s * params.rho
    t = params.gain_threshold
    one = np.exp(-q * t) * (n + 1) / (1.0 + q) * (1.0 / n - sc.beta(n, 2.0 + q))
    out = one ** n
    return float(out) if out.ndim == 0 else out


_EULER = float(np.euler_gamma)


def intra_gamma_fit(n: int, params: NetworkParams, check: bool = True) -> IntraGammaFit:
    """Moment-matched gamma law for the intra-cell interference with ``n >= 1``."""
    if n < 1 or int(n) != n:
        raise ValueError("gamma fit needs n >= 1")
    t = params.gain_threshold
    m = n * t + n + 1 - harmonic(n + 1)
    den = (-2.0 * _EULER + n + 1 + math.pi ** 2 / 6 - 2.0 * polygamma(0, n + 2)
           - polygamma(1, n + 2))
    if not den > 0:
        raise DegenerateFitError(f"nonpositive variance term {den!r} for n={n}")
    fit = IntraGammaFit(n=int(n), alpha=m * m / den, beta=m / (params.rho * den))
    if check:
        # one-sided difference: the transform is only defined for s > -1/rho
        hs = np.array([1.0, 2.0]) * 1e-5 / params.rho
        lv = intra_lt(hs, n, params)
        deriv = (-3.0 + 4.0 * lv[0] - lv[1]) / (2.0 * hs[0])
        mean_num = -deriv
        if abs(mean_num - fit.mean) > 1e-4 * fit.mean:
            warnings.warn(f"gamma-fit mean {fit.mean:.6g} differs from transform mean "
                          f"{mean_num:.6g} for n={n}", FitConsistencyWarning, stacklevel=2)
    return fit


# -- success probability -----------------------------------------------------

@dataclass(frozen=True)
class SuccessBreakdown:
    p_c: float
    n_max: int
    threshold: float
    inter_cdf: float
    per_n: tuple


def _binomial_terms(n, k):
    return np.array([math.comb(n + 1, int(j)) for j in k], dtype=float) * (-1.0) ** (k + 1)


def success_probability(load: LoadState, params: NetworkParams,
                        spec: QuadratureSpec | None = None, *,
                        count_tail: float = COUNT_TAIL, detail: bool = False):
    """Probability that a transmitting device is captured by its BS.

    Averages over the number of intra-cell interferers. With a zero access
    threshold (or Aloha access) the CDF terms vanish and the noise factor and
    transforms suffice; otherwise the four-term split at the threshold
    ``x* = tau rho / theta - sigma^2`` is used.
    """
    spec = spec or QuadratureSpec()
    if load.delta == 0:
        res = SuccessBreakdown(1.0, 0, 0.0, 1.0, ((0, 1.0, 1.0),))
        return res if detail else 1.0
    rho, theta, sigma2 = params.rho, params.theta, params.sigma2
    t = params.gain_threshold
    x_star = t * rho / theta - sigma2
    n_max = count_truncation(load, params.lambda_bs, count_tail)
    ns = np.arange(n_max + 1)
    pmf = intra_count_pmf(ns, load, params.lambda_bs)
    ks = np.arange(1, n_max + 2)
    s_k = ks * theta / rho
    le = inter_lt(s_k, load, params)
    noise = np.exp(-ks * (theta * sigma2 / rho - t))
    fe = float(inter_cdf(x_star, load, params, spec)) if x_star > 0 else 0.0
    total = 0.0
    rows = []
    for n in ns:
        k = ks[: n + 1]
        la = intra_lt(s_k[: n + 1], int(n), params)
        if x_star > 0 and n > 0:
            fa = float(intra_gamma_fit(int(n), params, check=False).cdf(x_star))
        elif x_star > 0:
            fa = 1.0
        else:
            fa = 0.0
        bracket = (le[: n + 1] * la * (1 - fe) * (1 - fa)
                   + le[: n + 1] * (1 - fe) * fa
                   + la * fe * (1 - fa))
        terms = _binomial_terms(int(n), k) * noise[: n + 1] * bracket
        # running sum of the weighted expectation; its magnitude bounds the
        # absolute rounding error carried into p_c
        partial = total + pmf[n] * (fe * fa + np.cumsum(terms)) / (n + 1)
        peak = float(np.max(np.abs(partial)))
        if peak > CONDITIONING_LIMIT:
            raise ConditioningError(f"binomial expansion at n={n} reaches {peak:.3g}")
        p_n = (fe * fa + terms.sum()) / (n + 1)
        rows.append((int(n), float(pmf[n]), float(p_n)))
        total += pmf[n] * p_n
    p = float(min(max(total / pmf.sum(), 0.0), 1.0))
    if detail:
        return SuccessBreakdown(p, n_max, x_star, fe, tuple(rows))
    return p


def write_pc_csv(path, params: NetworkParams, theta_db, omegas, delta: float,
                 spec: QuadratureSpec | None = None):
    """p_c over a theta (dB) x Omega grid at fixed ``delta``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["omega", "theta_db", "p_c"])
        for om in omegas:
            for tdb in theta_db:
                p = replace(params, theta=10 ** (tdb / 10.0)).with_omega(om)
                load = LoadState.from_params(delta, p)
                wr.writerow([om, tdb, f"{success_probability(load, p, spec):.9f}"])


__all__ = ["LoadState", "IntraGammaFit", "SuccessBreakdown", "ConditioningError",
           "DegenerateFitError", "FitConsistencyWarning", "intra_count_pmf",
           "count_truncation", "inter_lt", "inter_lt_tau0", "inter_mean", "inter_cdf",
           "intra_lt", "intra_gamma_fit", "success_probability", "write_pc_csv",
           "VORONOI_SHAPE"]
