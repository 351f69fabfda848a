"""Per-class harvested energy: Laplace transform, CDF and level pmf."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .network import EHClass, NetworkParams
from .special import QuadratureError, QuadratureSpec, gil_pelaez_cdf, pathloss_hyp


class PmfClampError(RuntimeError):
    pass


def _r(cls_or_r):
    return cls_or_r.r_n if isinstance(cls_or_r, EHClass) else float(cls_or_r)


def harvest_lt(s, cls, params: NetworkParams):
    """Laplace transform of the energy harvested in one slot.

    ``cls`` is an :class:`EHClass` or a plain serving distance in metres.
    ``s`` may be real or complex (the inversion uses ``s = -j t``).
    The serving BS contributes an exponential-gain factor; the remaining BSs,
    all farther than the serving one, enter through the PPP functional.
    """
    r = _r(cls)
    eta = params.eta
    c = params.harvest_gain
    s = np.asarray(s)
    u = s * c * r ** (-eta)
    pgfl = -2.0 * np.pi * params.lambda_bs * s * c * r ** (2.0 - eta) \
        * pathloss_hyp(eta, -u) / (eta - 2.0)
    return np.exp(pgfl) / (1.0 + u)


def harvest_lt_eta4(s, cls, params: NetworkParams):
    """Closed form of :func:`harvest_lt` for ``eta = 4`` (arctan form)."""
    r = _r(cls)
    c = params.harvest_gain
    s = np.asarray(s)
    root = np.sqrt(s * c)
    return np.exp(-np.pi * params.lambda_bs * root * np.arctan(root / r ** 2)) \
        / (1.0 + s * c / r ** 4)


def harvest_mean(cls, params: NetworkParams) -> float:
    r = _r(cls)
    c = params.harvest_gain
    eta = params.eta
    return c * r ** (-eta) + 2.0 * np.pi * params.lambda_bs * c * r ** (2.0 - eta) / (eta - 2.0)


def harvest_cdf(x, cls, params: NetworkParams, spec: QuadratureSpec | None = None):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("energy must be >= 0")
    mean = harvest_mean(cls, params)
    return gil_pelaez_cdf(lambda s: harvest_lt(s, cls, params), x, spec, scale=mean)


def harvest_tail_bound(x, cls, params: NetworkParams) -> float:
    """Chernoff bound on ``P(harvest >= x)`` using the transform at ``s < 0``.

    The moment generating function exists up to the serving-link pole at
    ``s = r^eta / (T_s zeta P)``.
    """
    r = _r(cls)
    s_max = r ** params.eta / params.harvest_gain
    mean = harvest_mean(cls, params)
    if x <= mean:
        return 1.0

    def log_bound(v):
        s = v * s_max
        m = harvest_lt(-s, cls, params)
        return float(-s * x + np.log(m))

    res = minimize_scalar(log_bound, bounds=(0.0, 1.0 - 1e-9), method="bounded",
                          options={"xatol": 1e-10})
    return float(min(1.0, math.exp(min(res.fun, 0.0))))


_TAIL_CUT = 1e-13


def _tail_levels(cls, params: NetworkParams) -> int:
    """Smallest K with ``P(harvest >= K w)`` provably below ``_TAIL_CUT``."""
    w, L = params.w, params.L
    if harvest_tail_bound(L * w, cls, params) >= _TAIL_CUT:
        return L
    lo, hi = 0, L
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if harvest_tail_bound(mid * w, cls, params) < _TAIL_CUT:
            hi = mid
        else:
            lo = mid
    return hi


def harvest_pmf(cls, params: NetworkParams, spec: QuadratureSpec | None = None):
    """Probability of harvesting ``l`` whole energy units in a slot, l = 0..L.

    The level ``L`` collects all mass at or above ``L*w`` (full battery).
    Levels whose exceedance probability is provably below 1e-13 are not
    inverted; their mass is lumped into the last evaluated level.
    """
    spec = spec or QuadratureSpec()
    L = params.L
    w = params.w
    mean = harvest_mean(cls, params)
    K = _tail_levels(cls, params)
    # CDF at levels 1..top; the last returned level takes the remaining mass
    top = K - 1 if K < L else L
    F = np.ones(top + 2)
    F[0] = 0.0
    if top > 0:
        levels = np.arange(1, top + 1)
        lt = lambda s: harvest_lt(s, cls, params)
        F[1:top + 1] = gil_pelaez_cdf(lt, levels * w, spec, scale=max(mean, w))
    F = np.maximum.accumulate(F)
    pmf = np.zeros(L + 1)
    pmf[:top + 1] = np.diff(F)
    neg = pmf < 0
    if np.any(neg):
        if np.min(pmf) < -10 * spec.abs_tol:
            raise PmfClampError(f"pmf entry {np.min(pmf):.3g} below clamp threshold")
        pmf[neg] = 0.0
    return pmf / pmf.sum()


@dataclass
class HarvestModel:
    """Harvest description of one class with a lazily tabulated CDF."""

    cls: EHClass
    params: NetworkParams
    spec: QuadratureSpec = field(default_factory=QuadratureSpec)
    _pmf: np.ndarray | None = field(default=None, repr=False)

    def lt(self, s):
        return harvest_lt(s, self.cls, self.params)

    def cdf(self, x):
        return harvest_cdf(x, self.cls, self.params, self.spec)

    @property
    def pmf(self):
        if self._pmf is None:
            self._pmf = harvest_pmf(self.cls, self.params, self.spec)
        return self._pmf


def attach_pmfs(classes, params: NetworkParams, spec: QuadratureSpec | None = None,
                cache: dict | None = None):
    """Return the classes with ``harvest_pmf`` filled in.

    ``cache`` maps ``(r_n, lambda, harvest_gain, eta, L, B)`` to pmfs so
    sweeps over access or power-control parameters reuse them.
    """
    out = []
    for c in classes:
        key = (round(c.r_n, 12), params.lambda_bs, params.harvest_gain, params.eta,
               params.L, params.B)
        if cache is not None and key in cache:
            pmf = cache[key]
        else:
            pmf = harvest_pmf(c, params, spec)
            if cache is not None:
                cache[key] = pmf
        out.append(c.with_pmf(pmf))
    return out


def write_pmf_csv(path, classes, params: NetworkParams, max_level: int | None = None):
    """Per-class CDF/pmf table: class, level, energy_ws, cdf, pmf."""
    w = params.w
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# wpiot harvest-pmf v1\n")
        wr = csv.writer(fh)
        wr.writerow(["class", "level", "energy_ws", "cdf", "pmf"])
        for c in classes:
            pmf = c.harvest_pmf
            top = len(pmf) if max_level is None else min(len(pmf), max_level + 1)
            cdf = np.cumsum(pmf)
            for l in range(top):
                wr.writerow([c.n, l, f"{(l + 1) * w:.9e}", f"{cdf[l]:.12g}", f"{pmf[l]:.12g}"])


__all__ = ["harvest_lt", "harvest_lt_eta4", "harvest_mean", "harvest_cdf", "harvest_pmf",
           "HarvestModel", "attach_pmfs", "write_pmf_csv", "PmfClampError", "QuadratureError"]
