"""Special functions and characteristic-function inversion.

Gamma-family functions wrap :mod:`scipy.special` behind argument checks.
The Gauss hypergeometric function is evaluated here with its own series
and argument transformations because it is needed on the imaginary axis
(``z = j*t*c``) as well as for large negative real arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as sc

EULER_GAMMA = float(np.euler_gamma)


class QuadratureError(RuntimeError):
    """Raised when an inversion integral fails to meet its tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for the Gil-Pelaez integral.

    All lengths are in units of ``1/scale`` where ``scale`` is the magnitude
    hint passed to :func:`gil_pelaez_cdf`.
    """

    upper_truncation: float = 1.0e9
    lower_cutoff: float = 1.0e-3
    node_budget: int = 6_000_000
    abs_tol: float = 1.0e-7
    rel_tol: float = 1.0e-6

    def __post_init__(self):
        if not (0.0 < self.lower_cutoff < self.upper_truncation):
            raise ValueError("need 0 < lower_cutoff < upper_truncation")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.node_budget < 15:
            raise ValueError("node_budget too small")


# -- gamma family ---------------------------------------------------------

def gamma_fn(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("gamma_fn: argument must be > 0")
    out = sc.gamma(x)
    return float(out) if out.ndim == 0 else out


def lower_incomplete_gamma(a, x):
    """Unnormalised lower incomplete gamma ``gamma(a, x)``."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(a <= 0) or np.any(x < 0):
        raise ValueError("lower_incomplete_gamma: need a > 0 and x >= 0")
    out = sc.gammainc(a, x) * sc.gamma(a)
    return float(out) if out.ndim == 0 else out


def regularized_lower_gamma(a, x):
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(a <= 0):
        raise ValueError("regularized_lower_gamma: need a > 0")
    out = sc.gammainc(a, np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out


def polygamma(m, x):
    if int(m) != m or m < 0:
        raise ValueError("polygamma: order must be a nonnegative integer")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("polygamma: argument must be > 0")
    out = sc.polygamma(int(m), x)
    return float(out) if out.ndim == 0 else out


def harmonic(n):
    if int(n) != n or n < 1:
        raise ValueError("harmonic: n must be a positive integer")
    n = int(n)
    if n <= 64:
        return float(sum(1.0 / k for k in range(1, n + 1)))
    return float(sc.digamma(n + 1) + EULER_GAMMA)


# -- Gauss hypergeometric -------------------------------------------------

_SERIES_TOL = 1e-16
_SERIES_MAXTERMS = 4000


def _series(a, b, c, z):
    """Plain Gauss series for |z| < 1, vectorised over complex ``z``."""
    z = np.asarray(z, dtype=complex)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(_SERIES_MAXTERMS):
        term = term * ((a + k) * (b + k) / ((c + k) * (k + 1.0))) * z
        total = total + term
        if np.all(np.abs(term) <= _SERIES_TOL * np.abs(total)):
            return total
    raise QuadratureError("hypergeometric series did not converge")


def _is_nonpositive_int(v):
    return v <= 0 and float(v).is_integer()


def hyp2f1(a, b, c, z):
    """Gauss hypergeometric function 2F1(a, b; c; z).

    Accepts real or complex ``z`` (scalar or array) off the cut ``[1, inf)``.
    Small ``|z|`` uses the series directly, moderate ``|z|`` with
    ``Re z <= 1/2`` goes through the Pfaff map ``z -> z/(z-1)``, real
``1/2 < z < 1`` is delegated to :func:`scipy.special.hyp2f1`, and large
    ``|z|`` uses the ``1/z`` connection formula (requires ``b - a`` not an
    integer, which holds for the path-loss family ``(1, 1-2/eta, 2-2/eta)``).
    """
    if _is_nonpositive_int(c):
        raise ValueError("hyp2f1: c must not be a non-positive integer")
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty_like(z)
    az = np.abs(z)

    small = az <= 0.5
    pfaff = ~small & (az <= 1.5) & (z.real <= 0.5)
    large = az > 1.5
    # real 1/2 < z < 1 (moment generating side): scipy's real implementation
    near_one = ~(small | pfaff | large) & (z.imag == 0) & (z.real < 1.0)
    bad = ~(small | pfaff | large | near_one)
    if np.any(bad) or np.any((z.imag == 0) & (z.real >= 1.0)):
        raise ValueError("hyp2f1: argument outside supported region")

    if np.any(small):
        out[small] = _series(a, b, c, z[small])
    if np.any(near_one):
        out[near_one] = sc.hyp2f1(a, b, c, z[near_one].real)
    if np.any(pfaff):
        zp = z[pfaff]
        out[pfaff] = (1.0 - zp) ** (-a) * _series(a, c - b, c, zp / (zp - 1.0))
    if np.any(large):
        if float(b - a).is_integer():
            raise ValueError("hyp2f1: b - a integer not supported for |z| > 1.5")
        zl = z[large]
        mz = -zl
        w = 1.0 / zl
        g = sc.gamma
        c1 = g(c) * g(b - a) / (g(b) * g(c - a))
        c2 = g(c) * g(a - b) / (g(a) * g(c - b))
        t1 = c1 * mz ** (-a) * _series(a, a - c + 1, a - b + 1, w)
        t2 = c2 * mz ** (-b) * _series(b, b - c + 1, b - a + 1, w)
        out[large] = t1 + t2

    if np.all(np.isreal(z)) and np.all(z.real <= 1.0):
        res = out.real
    else:
        res = out
    return res[0] if scalar else res


def pathloss_hyp(eta, z):
    """``2F1(1, 1-2/eta; 2-2/eta; z)``, the form arising in PPP Laplace transforms."""
    b = 1.0 - 2.0 / eta
    return hyp2f1(1.0, b, b + 1.0, z)


# -- Gil-Pelaez inversion -------------------------------------------------

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                0.381830050505118944950369775488975, 0.417959183673469387755102040816327])

# 15 Kronrod nodes on [-1, 1] and the embedded 7-point Gauss weights
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5]] = _WG[:3]
_WG15[7] = _WG[3]
_WG15[[13, 11, 9]] = _WG[:3]

_PANELS_PER_CHUNK = 512


def _wynn_epsilon(seq):
    """Wynn's epsilon extrapolation; returns (limit, error estimate)."""
    s = np.asarray(seq, dtype=float)
    n = len(s)
    e_prev = np.zeros(n + 1)
    e_cur = s.copy()
    best, err = s[-1], abs(s[-1] - s[-2])
    for k in range(1, n):
        diff = e_cur[1:] - e_cur[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = e_prev[1:len(e_cur)] + 1.0 / diff
        e_prev, e_cur = e_cur, nxt
        if not np.all(np.isfinite(e_cur)) or len(e_cur) < 2:
            break
        if k % 2 == 0:
            if len(e_cur) >= 3:
                cand = e_cur[-1]
                cerr = abs(e_cur[-1] - e_cur[-2]) + abs(e_cur[-2] - e_cur[-3])
                if cerr < err:
                    best, err = cand, cerr
    return float(best), float(err)


def gil_pelaez_cdf(lt, x, spec: QuadratureSpec | None = None, scale: float = 1.0):
    """CDF of a nonnegative random variable from its Laplace transform.

    Evaluates ``F(x) = 1/2 - (1/pi) int_0^inf Im{exp(-j t x) L(-j t)} / t dt``.

    Parameters
    ----------
    lt : callable
        Laplace transform ``L(s)``; called with complex arrays ``s = -j t``.
    x : float or array_like
        Evaluation points (same units as the random variable).
    spec : QuadratureSpec, optional
        Tolerances; ``abs_tol`` is the target absolute CDF error.
    scale : float
        Typical magnitude of the variable (e.g. its mean). The integral is
        carried out in the dimensionless variable ``t * scale``.

    Returns
    -------
    float or ndarray
        CDF values clamped to ``[0, 1]``.

    The integrand is finite at ``t -> 0`` for variables with a finite mean;
    Kronrod nodes never touch ``t = 0``. Panels are added until
    ``|L(-jt)|/t`` drops below ``abs_tol/10``; if that does not happen before
    ``upper_truncation`` the oscillatory tail is extrapolated with Wynn's
    epsilon algorithm over panel partial sums.
    """
    spec = spec or QuadratureSpec()
    if not scale > 0:
        raise ValueError("scale must be positive")
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float)) / scale
    if not np.all(np.isfinite(xs)):
        raise ValueError("x must be finite")
    # panel width follows the largest |x| of a block; blocks of similar
    # magnitude keep the node count down and keep every partial-sum sequence
    # oscillating fast enough for the tail extrapolation
    order = np.argsort(np.abs(xs), kind="stable")
    out = np.empty_like(xs)
    for idx in _blocks(np.abs(xs[order]), order):
        out[idx] = _gil_pelaez_block(lt, xs[idx], spec, scale)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


_GP_BLOCK = 128
_GP_SPREAD = 4.0


def _blocks(ys, order):
    """Split sorted magnitudes into runs with ``max <= _GP_SPREAD * min``."""
    lo = 0
    n = len(ys)
    while lo < n:
        hi = lo + 1
        lim = _GP_SPREAD * ys[lo] if ys[lo] > 0 else 0.0
        while hi < n and hi - lo < _GP_BLOCK and ys[hi] <= lim:
            hi += 1
        yield order[lo:hi]
        lo = hi
_PANEL_CHUNK = 20_000


def _panel_sums(xs, mid, half, ak, ag):
    """Kronrod and Gauss panel sums of Im{exp(-j t x) phi(t)} w(t) for each x.

    Per panel, exp(-j t y) = exp(-j mid y) exp(-j half s y) with s the
    reference nodes, so panels of equal width share one small matrix and the
    sums become matrix products.
    """
    pk = np.empty((len(xs), len(half)))
    pg = np.empty_like(pk)
    keys = np.round(half / half.max(), 12)
    for key in np.unique(keys):
        sel = np.nonzero(keys == key)[0]
        h = half[sel[0]]
        ref = np.exp(-1j * h * np.outer(xs, _NODES))          # (nx, 15)
        for lo in range(0, len(sel), _PANEL_CHUNK):
            part = sel[lo:lo + _PANEL_CHUNK]
            phase = np.exp(-1j * np.outer(xs, mid[part]))
            pk[:, part] = (phase * (ref @ ak[part].T)).imag
            pg[:, part] = (phase * (ref @ ag[part].T)).imag
    return pk, pg


def _disc_error(pk, pg):
    e = np.abs(pk - pg)
    return np.sum(np.minimum(e, (200.0 * e) ** 1.5), axis=1)


_WYNN_WINDOW = 41


def _gil_pelaez_block(lt, xs, spec, scale):
    def phi(u):
        return np.asarray(lt(-1j * u / scale), dtype=complex)

    ymax = float(np.max(np.abs(xs)))
    ymin = float(np.min(np.abs(xs)))
    base = 2.0 * np.pi / (ymax + 1.0)
    # the transform itself may oscillate at unit frequency (mass near the scale)
    cap = np.pi / (ymax + 1.0)
    stop_level = spec.abs_tol / 100.0
    tol = 10.0 * spec.abs_tol * np.pi

    # geometric panels near t = 0; further out, panels span at most half a
    # period of the fastest exp(-j t x) factor and grow with t otherwise
    edges = [0.0]
    edge = min(spec.lower_cutoff, base)
    while edge < base:
        edges.append(edge)
        edge *= 2.0
    edges.append(base)

    pks, pgs = [], []
    n_nodes = 0
    last_amp = 0.0
    truncated = False
    wynn = None          # (value, error) per x from the previous chunk
    chunk_edges = np.asarray(edges)
    while True:
        a = chunk_edges[:-1]
        b = chunk_edges[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        tn = mid[:, None] + half[:, None] * _NODES[None, :]
        ph = phi(tn.ravel()).reshape(tn.shape)
        ak = ph * (half[:, None] * _WK[None, :] / tn)
        ag = ph * (half[:, None] * _WG15[None, :] / tn)
        pk, pg = _panel_sums(xs, mid, half, ak, ag)
        pks.append(pk)
        pgs.append(pg)
        n_nodes += tn.size
        last_amp = float(np.max(np.abs(ph[-1])))
        t_end = float(b[-1])
        # tail beyond t_end ~ |L| / (x t) once oscillating, ~ |L| before
        tail = float(np.max(np.abs(ph[-8:]))) / max(ymin * t_end, 1.0)
        if tail < stop_level * np.pi and last_amp < 1e-3:
            truncated = True
            break
        # oscillatory regime for every x: try extrapolating the tail
        if ymin > 0 and t_end * ymin > 20.0 * np.pi:
            csum = np.cumsum(np.concatenate(pks, axis=1), axis=1)
            if csum.shape[1] >= _WYNN_WINDOW:
                est = [_wynn_epsilon(row[-_WYNN_WINDOW:]) for row in csum]
                if wynn is not None and all(
                        e1 < tol / 100 and abs(v1 - v0) < tol / 100
                        for (v1, e1), (v0, _) in zip(est, wynn)):
                    break
                wynn = est
        if t_end >= spec.upper_truncation or n_nodes >= spec.node_budget:
            break
        new_edges = [t_end]
        for _ in range(_PANELS_PER_CHUNK):
            t = new_edges[-1]
            nxt = t + min(cap, max(base, 0.25 * t))
            if nxt > spec.upper_truncation:
                break
            new_edges.append(nxt)
        if len(new_edges) < 2:
            break
        chunk_edges = np.asarray(new_edges)

    if not truncated and not (ymin > 0 and t_end * ymin > 20.0 * np.pi):
        raise QuadratureError(f"Gil-Pelaez integral stopped at t={t_end / scale:.3g} "
                              "before its tail could be bounded or extrapolated")
    pk = np.concatenate(pks, axis=1)
    pg = np.concatenate(pgs, axis=1)
    disc_err = _disc_error(pk, pg)
    out = np.empty_like(xs)
    for i, y in enumerate(xs):
        if truncated:
            integral = float(pk[i].sum())
            # non-oscillating tail ~ |L|; oscillating tail ~ |L| / (x t)
            tail_err = last_amp / max(abs(y) * t_end, 1.0)
        else:
            # oscillatory tail: extrapolate the panel partial sums
            csum = np.cumsum(pk[i])
            integral, tail_err = _wynn_epsilon(csum[-min(len(csum), _WYNN_WINDOW):])
        err = (disc_err[i] + tail_err) / np.pi
        if err > 10 * spec.abs_tol:
            raise QuadratureError(
                f"Gil-Pelaez inversion at x={y * scale:g}: estimated error {err:.3g}")
        out[i] = 0.5 - integral / np.pi
    return out
