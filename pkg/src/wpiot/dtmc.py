"""Joint buffer/battery Markov chain of one EH-class.

States are ``(m, l)`` with ``m = 0..M`` queued packets and ``l = 0..L``
stored energy units. The transition matrix has the block form

    row 0        [ a'H, aH ]
    row m        [ W a'S, W(aS + a'F) + W'a'H, W aF + W'aH ]
    row M        [ W a'S, W a'F + W a(S + F) + W'H ]

with ``a' = 1 - a``, ``W = Omega``, ``W' = 1 - Omega`` and battery
sub-matrices ``H`` (harvest), ``S`` (transmit and succeed) and ``F``
(eligible but no departure: a failed transmission, or harvesting when the
battery cannot pay for one).
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .network import EHClass

ROW_TOL = 1e-9
RESIDUAL_TOL = 1e-10


class StochasticityError(ValueError):
    pass


class ChainNonConvergence(RuntimeError):
    pass


class ReducibleChainWarning(UserWarning):
    pass


@dataclass
class ChainMatrices:
    class_ref: EHClass
    H: sp.csr_matrix
    F: sp.csr_matrix
    S: sp.csr_matrix
    P: sp.csr_matrix | None = None


@dataclass
class SteadyState:
    """Stationary probabilities ``x[m, l]`` and the residual ``max|xP - x|``."""

    x: np.ndarray
    residual: float
    method: str = "direct"
    iterations: int = 0

    @property
    def buffer_marginal(self):
        return self.x.sum(axis=1)

    @property
    def battery_marginal(self):
        return self.x.sum(axis=0)


# -- battery sub-matrices ----------------------------------------------------

def _check_pmf(pmf, L):
    pmf = np.asarray(pmf, dtype=float)
    if pmf.shape != (L + 1,):
        raise ValueError(f"harvest pmf must have length L+1 = {L + 1}")
    if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
        raise ValueError("harvest pmf must be nonnegative and sum to 1")
    return pmf


def harvest_matrix(pmf) -> sp.csr_matrix:
    """``H[l, min(l + j, L)] += p_j``: harvesting saturates at a full battery."""
    pmf = np.asarray(pmf, dtype=float)
    L = len(pmf) - 1
    rows, cols, vals = [], [], []
    support = np.nonzero(pmf)[0]
    for j in support:
        if j == 0 or j < L:
            r = np.arange(0, L - j)
            rows.append(r)
            cols.append(r + j)
            vals.append(np.full(r.size, pmf[j]))
    # level L collects every jump of at least L - l units
    tail = np.cumsum(pmf[::-1])[::-1]               # tail[k] = sum_{j >= k} p_j
    r = np.arange(L + 1)
    rows.append(r)
    cols.append(np.full(L + 1, L))
    vals.append(tail[L - r])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    keep = vals != 0
    H = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(L + 1, L + 1))
    return H.tocsr()


def build_submatrices(cls: EHClass, p_c: float):
    """Harvest, failure and success matrices ``(H, F, S)`` of one class.

    A class whose cost exceeds the battery (``d_n > L``) can never transmit:
    ``S = 0`` and ``F = H``.
    """
    if not 0.0 <= p_c <= 1.0:
        raise ValueError("p_c must lie in [0, 1]")
    if cls.harvest_pmf is None:
        raise ValueError("class has no harvest pmf attached")
    L, d = cls.L, cls.d_n
    if d < 1:
        raise ValueError("d_n must be >= 1")
    pmf = _check_pmf(cls.harvest_pmf, L)
    H = harvest_matrix(pmf)
    n = L + 1
    if d > L:
        return H, H.copy(), sp.csr_matrix((n, n))
    src = np.arange(d, n)
    shift = sp.coo_matrix((np.ones(src.size), (src, src - d)), shape=(n, n)).tocsr()
    low = sp.diags((np.arange(n) < d).astype(float))
    S = (p_c * shift).tocsr()
    F = ((1.0 - p_c) * shift + low @ H).tocsr()
    return H, F, S


def assemble_p(cls: EHClass, p_c: float, omega: float, a: float, M: int,
               mats=None) -> sp.csr_matrix:
    """Block transition matrix in buffer-major order (index ``m*(L+1) + l``)."""
    if M < 1:
        raise ValueError("buffer size M must be >= 1")
    if not (0.0 <= omega <= 1.0 and 0.0 <= a <= 1.0):
        raise ValueError("omega and a must lie in [0, 1]")
    H, F, S = mats if mats is not None else build_submatrices(cls, p_c)
    ab = 1.0 - a
    wb = 1.0 - omega
    blocks = [[None] * (M + 1) for _ in range(M + 1)]
    blocks[0][0] = ab * H
    blocks[0][1] = a * H
    for m in range(1, M):
        blocks[m][m - 1] = omega * ab * S
        blocks[m][m] = omega * (a * S + ab * F) + wb * ab * H
        blocks[m][m + 1] = omega * a * F + wb * a * H
    blocks[M][M - 1] = omega * ab * S
    blocks[M][M] = omega * ab * F + omega * a * (S + F) + wb * H
    n = H.shape[0]
    for i in range(M + 1):
        for j in range(M + 1):
            if blocks[i][j] is None and abs(i - j) <= 1:
                blocks[i][j] = sp.csr_matrix((n, n))
    P = sp.bmat(blocks, format="csr")
    rs = np.asarray(P.sum(axis=1)).ravel()
    if np.max(np.abs(rs - 1.0)) > ROW_TOL:
        raise StochasticityError(f"row sums deviate from 1 by {np.max(np.abs(rs - 1.0)):.3g}")
    if P.nnz and P.data.min() < 0:
        raise StochasticityError("negative transition probability")
    return P


def build_chain(cls: EHClass, p_c: float, omega: float, a: float, M: int) -> ChainMatrices:
    H, F, S = build_submatrices(cls, p_c)
    return ChainMatrices(cls, H, F, S, assemble_p(cls, p_c, omega, a, M, (H, F, S)))


# -- stationary distribution -------------------------------------------------

def _closed_classes(P):
    n_comp, labels = csgraph.connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[labels[coo.row[leaving]]] = True
    return labels, np.nonzero(~open_comp)[0]


def _solve_closed(P, idx):
    """Stationary vector of the irreducible sub-chain on ``idx``."""
    sub = P[idx][:, idx].tocsc()
    k = len(idx)
    if k == 1:
        return np.ones(1)
    A = (sub.T - sp.identity(k, format="csc")).tocsr()
    A = sp.vstack([A[:-1], sp.csr_matrix(np.ones((1, k)))]).tocsc()
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    # I - P^T is column diagonally dominant, so elimination without pivoting
    # is stable and keeps the fill inside the band
    lu = splu(A, permc_spec="NATURAL", diag_pivot_thresh=0.0)
    return lu.solve(rhs)


def steady_state(P, shape=None, start: int = 0) -> SteadyState:
    """Normalised left fixed vector of a sparse stochastic matrix.

    If several closed classes exist a warning is issued and the limit
    reached from state ``start`` (the empty buffer/empty battery state by
    default) is returned: the mix of the closed classes weighted by their
    absorption probabilities.
    """
    P = sp.csr_matrix(P, dtype=float, copy=True)
    # stored zeros (e.g. a*H with a = 0) would count as graph edges
    P.eliminate_zeros()
    n = P.shape[0]
    labels, closed = _closed_classes(P)
    x = np.zeros(n)
    if len(closed) == 1:
        idx = np.nonzero(labels == closed[0])[0]
        x[idx] = _solve_closed(P, idx)
    else:
        warnings.warn(f"chain has {len(closed)} closed classes; using the limit from "
                      f"state {start}", ReducibleChainWarning, stacklevel=2)
        reach = csgraph.breadth_first_order(P, start, directed=True,
                                            return_predecessors=False)
        in_closed = np.isin(labels, closed)
        trans = np.setdiff1d(reach, np.nonzero(in_closed)[0])
        start_in_closed = in_closed[start]
        for c in closed:
            idx = np.nonzero(labels == c)[0]
            if start_in_closed:
                weight = 1.0 if labels[start] == c else 0.0
            else:
                if not np.isin(idx, reach).any():
                    continue
                Q = P[trans][:, trans]
                R = np.asarray(P[trans][:, idx].sum(axis=1)).ravel()
                A = (sp.identity(len(trans), format="csc") - Q.tocsc())
                b = splu(A).solve(R)
                weight = float(b[np.searchsorted(trans, start)])
            if weight > 0:
                x[idx] = weight * _solve_closed(P, idx)
    x = np.where(np.abs(x) < 1e-15, 0.0, x)
    if x.min() < -1e-12:
        raise ChainNonConvergence(f"negative stationary mass {x.min():.3g}")
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    residual = float(np.max(np.abs(P.T @ x - x)))
    if shape is not None:
        x = x.reshape(shape)
    return SteadyState(x=x, residual=residual, method="direct")


class ChainOperator:
    """Matrix-free ``x -> xP`` for an ``(M+1, L+1)`` array of probabilities.

    Harvesting is a convolution with the harvest pmf (saturating at ``L``)
    and a transmission shifts the battery down by ``d_n`` units.
    """

    def __init__(self, cls: EHClass, p_c: float, omega: float, a: float, M: int):
        self.L = cls.L
        self.d = cls.d_n
        self.M = M
        self.p_c, self.omega, self.a = p_c, omega, a
        pmf = _check_pmf(cls.harvest_pmf, cls.L)
        k = int(np.nonzero(pmf)[0].max())
        self.kernel = pmf[: k + 1]
        self._fft = k > 64

    def _harvest(self, y):
        """Rows of ``y`` times ``H``."""
        L = self.L
        if self._fft:
            c = fftconvolve(y, self.kernel[None, :], axes=1)
        else:
            c = np.stack([np.convolve(row, self.kernel) for row in y])
        out = c[:, : L + 1].copy()
        out[:, L] += c[:, L + 1:].sum(axis=1)
        return out

    def apply(self, x):
        L, d, M = self.L, self.d, self.M
        a, ab, om, wb = self.a, 1.0 - self.a, self.omega, 1.0 - self.omega
        pc = self.p_c
        h_all = self._harvest(x)                 # every row harvesting
        if d <= L:
            low = x.copy()
            low[:, d:] = 0.0
            h_low = self._harvest(low)           # rows that cannot pay
            shifted = np.zeros_like(x)
            shifted[:, : L + 1 - d] = x[:, d:]
            xs = pc * shifted
            xf = (1.0 - pc) * shifted + h_low
        else:
            xs = np.zeros_like(x)
            xf = h_all
        out = np.zeros_like(x)
        out[0] += ab * h_all[0]
        out[1] += a * h_all[0]
        for m in range(1, M + 1):
            out[m - 1] += om * ab * xs[m]
            if m < M:
                out[m] += om * (a * xs[m] + ab * xf[m]) + wb * ab * h_all[m]
                out[m + 1] += om * a * xf[m] + wb * a * h_all[m]
            else:
                out[m] += om * ab * xf[m] + om * a * (xs[m] + xf[m]) + wb * h_all[m]
        return out


def power_steady_state(op: ChainOperator, x0=None, tol: float = 1e-12,
                       max_iter: int = 500_000) -> SteadyState:
    """Power iteration from ``x0`` (default: all mass at ``(0, 0)``)."""
    if x0 is None:
        x = np.zeros((op.M + 1, op.L + 1))
        x[0, 0] = 1.0
    else:
        x = np.array(x0, dtype=float)
        x /= x.sum()
    for it in range(1, max_iter + 1):
        y = op.apply(x)
        y = np.clip(y, 0.0, None)
        y /= y.sum()
        res = float(np.max(np.abs(y - x)))
        x = y
        if res <= tol:
            return SteadyState(x=x, residual=float(np.max(np.abs(op.apply(x) - x))),
                               method="power", iterations=it)
    raise ChainNonConvergence(f"power iteration stalled at residual {res:.3g} after {max_iter}")


DIRECT_FILL_BUDGET = 1.5e8


def _fill_estimate(cls: EHClass, M: int) -> float:
    k = int(np.nonzero(cls.harvest_pmf)[0].max())
    n = (M + 1) * (cls.L + 1)
    return 2.0 * n * (M + 1) * (k + min(cls.d_n, cls.L) + 1)


def _battery_major(M, L):
    """Permutation taking buffer-major indices to battery-major order."""
    m, l = np.meshgrid(np.arange(M + 1), np.arange(L + 1), indexing="ij")
    order = (l * (M + 1) + m).ravel()              # new position of each old index
    perm = np.empty_like(order)
    perm[order] = np.arange(order.size)
    return perm


def solve_class(cls: EHClass, p_c: float, omega: float, a: float, M: int,
                method: str = "auto", x0=None, tol: float = 1e-12) -> SteadyState:
    """Stationary distribution of one class as an ``(M+1, L+1)`` array.

    ``direct`` factorises the sparse system in battery-major order (banded
    with width set by the harvest support); ``power`` iterates the matrix-free
    operator. ``auto`` picks the direct solve when its fill is affordable.
    """
    shape = (M + 1, cls.L + 1)
    if cls.harvest_pmf is not None and cls.harvest_pmf[0] == 1.0:
        # never charges: from the empty start the battery stays at 0 and the
        # buffer fills (or stays empty without arrivals)
        x = np.zeros(shape)
        x[M if a > 0 else 0, 0] = 1.0
        return SteadyState(x=x, residual=0.0, method="exact")
    if method == "auto":
        method = "direct" if _fill_estimate(cls, M) <= DIRECT_FILL_BUDGET else "power"
    if method == "direct":
        P = assemble_p(cls, p_c, omega, a, M)
        perm = _battery_major(M, cls.L)
        Pp = P[perm][:, perm]
        st = steady_state(Pp, start=int(np.nonzero(perm == 0)[0][0]))
        x = np.empty_like(st.x)
        x[perm] = st.x
        return SteadyState(x=x.reshape(shape), residual=st.residual, method="direct")
    if method == "power":
        op = ChainOperator(cls, p_c, omega, a, M)
        return power_steady_state(op, x0=x0, tol=tol)
    raise ValueError(f"unknown method {method!r}")


def class_delta(state: SteadyState, cls: EHClass) -> float:
    """Mass with a non-empty buffer and at least ``d_n`` stored units."""
    if cls.d_n > cls.L:
        return 0.0
    return float(state.x[1:, cls.d_n:].sum())


def delta_from_states(states, classes) -> float:
    if len(states) != len(classes) or not classes:
        raise ValueError("need one state per class")
    return float(np.mean([class_delta(s, c) for s, c in zip(states, classes)]))


def write_marginals_csv(path, states, classes):
    """Per-class buffer and battery marginals: class, kind, level, probability."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# wpiot chain-marginals v1\n")
        wr = csv.writer(fh)
        wr.writerow(["class", "kind", "level", "probability"])
        for s, c in zip(states, classes):
            for m, v in enumerate(s.buffer_marginal):
                wr.writerow([c.n, "buffer", m, f"{v:.12g}"])
            for l, v in enumerate(s.battery_marginal):
                if v > 0:
                    wr.writerow([c.n, "battery", l, f"{v:.12g}"])


__all__ = ["ChainMatrices", "SteadyState", "ChainOperator", "StochasticityError",
           "ChainNonConvergence", "ReducibleChainWarning", "harvest_matrix",
           "build_submatrices", "assemble_p", "build_chain", "steady_state",
           "power_steady_state", "solve_class", "class_delta", "delta_from_states",
           "write_marginals_csv"]
