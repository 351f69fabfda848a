"""Network parameters, unit conversion and the equiprobable EH-class partition."""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def w_to_dbm(w):
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("power must be positive to convert to dBm")
    return 10.0 * np.log10(w) + 30.0


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


PER_KM2 = 1e-6  # km^-2 -> m^-2

SCHEMES = ("opportunistic", "aloha")


@dataclass(frozen=True)
class NetworkParams:
    """Physical, MAC and battery parameters, all in SI units.

    Densities are per m^2, powers in W, energies in W*s, ``t_s`` in s.
    ``theta`` and ``tau`` are linear. ``scheme`` selects the channel-access
    gate: ``"opportunistic"`` transmits only when the uplink gain exceeds
    ``tau`` while ``"aloha"`` transmits with probability ``exp(-tau)``
    regardless of the gain.
    """

    lambda_bs: float = 35.0 * PER_KM2
    mu_dev: float = 175.0 * PER_KM2
    n_c: int = 64
    eta: float = 4.0
    sigma2: float = float(dbm_to_w(-120.0))
    rho: float = float(dbm_to_w(-126.0))
    p_bs: float = float(dbm_to_w(28.0))
    zeta: float = 1.0
    t_s: float = 1e-3
    tau: float = -math.log(0.2)
    theta: float = float(db_to_lin(-7.0))
    a: float = 0.1
    M: int = 5
    B: float = float(dbm_to_w(-10.0))
    L: int = 25_000
    N: int = 50
    scheme: str = "opportunistic"

    def __post_init__(self):
        for name in ("lambda_bs", "mu_dev", "rho", "p_bs", "t_s", "B", "sigma2", "theta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                if name == "sigma2" and v == 0:
                    continue
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")
        if not self.eta > 2:
            raise ValueError("eta must exceed 2")
        if not 0 < self.zeta <= 1:
            raise ValueError("zeta must lie in (0, 1]")
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise ValueError("tau must be finite and >= 0")
        if not 0 <= self.a <= 1:
            raise ValueError("arrival probability a must lie in [0, 1]")
        for name in ("n_c", "M", "L", "N"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def omega(self) -> float:
        """Probability of being Tx-eligible in a slot."""
        return math.exp(-self.tau)

    @property
    def w(self) -> float:
        """Energy per battery level."""
        return self.B / self.L

    @property
    def p_max(self) -> float:
        return self.B / self.t_s

    @property
    def mu_prime(self) -> float:
        return self.mu_dev / self.n_c

    @property
    def harvest_gain(self) -> float:
        """``T_s * zeta * P``: energy per slot per unit received-power factor."""
        return self.t_s * self.zeta * self.p_bs

    @property
    def gain_threshold(self) -> float:
        """Threshold used inside the interference transforms (0 for Aloha)."""
        return self.tau if self.scheme == "opportunistic" else 0.0

    def with_omega(self, omega: float) -> "NetworkParams":
        if not 0 < omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        return replace(self, tau=-math.log(omega))

    def coarsened(self, levels: int) -> "NetworkParams":
        """Same battery capacity split into ``levels`` coarser energy units."""
        return replace(self, L=int(levels))


# -- config file ---------------------------------------------------------

_CONFIG_KEYS = {
    "lambda_per_km2": ("lambda_bs", lambda v: float(v) * PER_KM2),
    "mu_per_km2": ("mu_dev", lambda v: float(v) * PER_KM2),
    "n_c": ("n_c", int),
    "eta": ("eta", float),
    "sigma2_dbm": ("sigma2", lambda v: float(dbm_to_w(float(v)))),
    "rho_dbm": ("rho", lambda v: float(dbm_to_w(float(v)))),
    "p_bs_dbm": ("p_bs", lambda v: float(dbm_to_w(float(v)))),
    "zeta": ("zeta", float),
    "t_s_ms": ("t_s", lambda v: float(v) * 1e-3),
    "tau": ("tau", float),
    "omega": ("tau", lambda v: -math.log(float(v))),
    "theta_db": ("theta", lambda v: float(db_to_lin(float(v)))),
    "a": ("a", float),
    "buffer_packets": ("M", int),
    "battery_dbm_s": ("B", lambda v: float(dbm_to_w(float(v)))),
    "energy_levels": ("L", int),
    "classes": ("N", int),
    "scheme": ("scheme", str.strip),
}


class ConfigError(ValueError):
    pass


def params_from_mapping(values: dict) -> NetworkParams:
    kwargs = {}
    if "tau" in values and "omega" in values:
        raise ConfigError("give either tau or omega, not both")
    for key, raw in values.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        name, conv = _CONFIG_KEYS[key]
        try:
            val = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        if isinstance(val, float) and not math.isfinite(val):
            raise ConfigError(f"non-finite value for {key}")
        kwargs[name] = val
    try:
        return NetworkParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> NetworkParams:
    """Parse an INI file with a single ``[network]`` section.

    Keys carry their units (``rho_dbm``, ``lambda_per_km2`` ...); unknown
    keys or sections are rejected.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    text = Path(path).read_text()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    extra = [s for s in cp.sections() if s != "network"]
    if extra:
        raise ConfigError(f"unknown config sections: {extra}")
    if not cp.has_section("network"):
        raise ConfigError("config needs a [network] section")
    return params_from_mapping(dict(cp.items("network")))


def params_to_mapping(p: NetworkParams) -> dict:
    return {
        "lambda_per_km2": p.lambda_bs / PER_KM2,
        "mu_per_km2": p.mu_dev / PER_KM2,
        "n_c": p.n_c,
        "eta": p.eta,
        "sigma2_dbm": float(w_to_dbm(p.sigma2)) if p.sigma2 > 0 else -math.inf,
        "rho_dbm": float(w_to_dbm(p.rho)),
        "p_bs_dbm": float(w_to_dbm(p.p_bs)),
        "zeta": p.zeta,
        "t_s_ms": p.t_s * 1e3,
        "tau": p.tau,
        "theta_db": float(lin_to_db(p.theta)),
        "a": p.a,
        "buffer_packets": p.M,
        "battery_dbm_s": float(w_to_dbm(p.B)),
        "energy_levels": p.L,
        "classes": p.N,
        "scheme": p.scheme,
    }


# -- EH-classes ------------------------------------------------------------

def serving_distance_cdf(r, lambda_bs):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be >= 0")
    out = -np.expm1(-np.pi * lambda_bs * r * r)
    return float(out) if out.ndim == 0 else out


def serving_distance_quantile(q, lambda_bs):
    q = np.asarray(q, dtype=float)
    out = np.sqrt(-np.log1p(-q) / (np.pi * lambda_bs))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EHClass:
    n: int
    r_lo: float
    r_hi: float
    r_n: float
    p_t_energy: float
    d_n: int
    L: int
    harvest_pmf: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def pt_capable_possible(self) -> bool:
        return self.d_n <= self.L

    def with_pmf(self, pmf) -> "EHClass":
        pmf = np.asarray(pmf, dtype=float)
        if pmf.shape != (self.L + 1,):
            raise ValueError(f"pmf must have length L+1={self.L + 1}")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError("pmf must be nonnegative and sum to 1")
        return replace(self, harvest_pmf=pmf)


def depletion_units(p_t_energy: float, w: float) -> int:
    ratio = p_t_energy / w
    d = math.ceil(ratio * (1.0 - 1e-12))
    return max(d, 1)


def partition_classes(params: NetworkParams) -> list[EHClass]:
    """Split serving distances into ``N`` equiprobable classes.

    Boundaries sit at the ``(n-1)/N`` quantiles of the Rayleigh serving
    distance; each class is represented by its median quantile distance.
    """
    N = params.N
    lam = params.lambda_bs
    q = np.arange(N + 1) / N
    bounds = np.empty(N + 1)
    bounds[:-1] = serving_distance_quantile(q[:-1], lam)
    bounds[-1] = np.inf
    reps = serving_distance_quantile((np.arange(N) + 0.5) / N, lam)
    classes = []
    for i in range(N):
        r_n = float(reps[i])
        e_t = params.t_s * params.rho * r_n ** params.eta
        classes.append(EHClass(
            n=i + 1, r_lo=float(bounds[i]), r_hi=float(bounds[i + 1]), r_n=r_n,
            p_t_energy=e_t, d_n=depletion_units(e_t, params.w), L=params.L))
    return classes


def describe(params: NetworkParams) -> dict:
    out = asdict(params)
    out.update(omega=params.omega, w=params.w, p_max=params.p_max, mu_prime=params.mu_prime)
    return out
