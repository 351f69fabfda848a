import warnings

import mpmath as mp
import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_class
from wpiot import dtmc
from wpiot.dtmc import (ChainOperator, ReducibleChainWarning, StochasticityError, assemble_p,
                        build_chain, build_submatrices, class_delta, harvest_matrix,
                        power_steady_state, solve_class, steady_state)


def brute_force_p(pmf, d, p_c, omega, a, M):
    """Transition matrix enumerated slot by slot from the device rules."""
    L = len(pmf) - 1
    idx = lambda m, l: m * (L + 1) + l
    P = np.zeros(((M + 1) * (L + 1),) * 2)
    for m in range(M + 1):
        for l in range(L + 1):
            src = idx(m, l)
            outcomes = []                        # (prob, buffer after service, battery)
            if m > 0 and l >= d:
                outcomes += [(omega * p_c, m - 1, l - d), (omega * (1 - p_c), m, l - d)]
                harvest_w = 1 - omega
            else:
                harvest_w = 1.0
            for j, pj in enumerate(pmf):
                if pj:
                    outcomes.append((harvest_w * pj, m, min(l + j, L)))
            for pr, m1, l1 in outcomes:
                P[src, idx(min(m1 + 1, M), l1)] += pr * a
                P[src, idx(m1, l1)] += pr * (1 - a)
    return P


def random_pmf(L, rng, support=None):
    k = L + 1 if support is None else support
    v = rng.random(k) ** 3
    pmf = np.zeros(L + 1)
    pmf[:k] = v / v.sum()
    return pmf


@pytest.mark.parametrize("L,d,M", [(1, 1, 1), (3, 2, 2), (6, 2, 4), (9, 4, 3), (5, 7, 2)])
@pytest.mark.parametrize("p_c", [0.0, 0.5, 1.0])
def test_matches_brute_force(L, d, M, p_c):
    rng = np.random.default_rng(L * 100 + d * 10 + M)
    pmf = random_pmf(L, rng)
    for omega, a in [(0.3, 0.2), (1.0, 0.7), (0.0, 0.4), (0.6, 0.0), (0.8, 1.0)]:
        P = assemble_p(make_class(pmf, d), p_c, omega, a, M).toarray()
        assert np.allclose(P, brute_force_p(pmf, d, p_c, omega, a, M), atol=1e-14, rtol=0)


def four_state_exact(p0, pc, om, a):
    """M = 1, L = 1, d = 1 by exact rational elimination in mpmath."""
    pmf = [mp.mpf(p0), 1 - mp.mpf(p0)]
    P = mp.matrix(brute_force_p([float(v) for v in pmf], 1, pc, om, a, 1).tolist())
    A = P.T - mp.eye(4)
    for j in range(4):
        A[3, j] = 1
    return np.array([float(v) for v in mp.lu_solve(A, mp.matrix([0, 0, 0, 1]))])


@pytest.mark.parametrize("p0,pc,om,a", [(0.4, 0.7, 0.2, 0.1), (0.9, 0.3, 0.8, 0.5),
                                        (0.05, 1.0, 1.0, 0.9)])
def test_four_state_chain(p0, pc, om, a):
    cls = make_class([p0, 1 - p0], 1)
    ref = four_state_exact(p0, pc, om, a)
    for method in ("direct", "power"):
        st = solve_class(cls, pc, om, a, 1, method=method, tol=1e-15)
        assert np.max(np.abs(st.x.ravel() - ref)) <= 1e-10
        # delta is the mass at (m, l) = (1, 1)
        assert class_delta(st, cls) == pytest.approx(ref[3], abs=1e-10)


def test_rows_stochastic_and_residual(small_classes):
    for cls in small_classes:
        for pc in (0.0, 0.5, 1.0):
            P = assemble_p(cls, pc, 0.2, 0.1, 5)
            assert np.max(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1)) <= 1e-9
            st = solve_class(cls, pc, 0.2, 0.1, 5, method="direct")
            assert st.x.min() >= 0
            x = st.x.ravel()
            assert np.max(np.abs(P.T @ x - x)) <= 1e-10


def test_qbd_block_structure(small_classes):
    cls = small_classes[0]
    M, n = 5, cls.L + 1
    P = assemble_p(cls, 0.6, 0.3, 0.2, M).tocoo()
    jump = np.abs(P.row // n - P.col // n)
    assert jump.max() == 1
    assert (jump[P.data > 0] <= 1).all()


def test_battery_moves():
    pmf = random_pmf(8, np.random.default_rng(1))
    H, F, S = build_submatrices(make_class(pmf, 3), 0.4)
    Hc, Sc = H.tocoo(), S.tocoo()
    assert np.all(Hc.col >= Hc.row)
    assert np.all(Sc.row - Sc.col == 3)
    assert np.allclose(np.asarray((H).sum(axis=1)).ravel(), 1)
    assert np.allclose(np.asarray((F + S).sum(axis=1)).ravel(), 1)


def test_harvest_saturates():
    H = harvest_matrix([0.2, 0.3, 0.5]).toarray()
    assert np.allclose(H, [[0.2, 0.3, 0.5], [0, 0.2, 0.8], [0, 0, 1.0]])


def test_cost_above_capacity_never_transmits():
    cls = make_class([0.5, 0.3, 0.2], 3)
    H, F, S = build_submatrices(cls, 0.9)
    assert S.nnz == 0 and (F != H).nnz == 0
    st = solve_class(cls, 0.9, 0.5, 0.3, 2)
    assert class_delta(st, cls) == 0.0
    assert st.buffer_marginal[-1] == pytest.approx(1.0)


def test_cost_near_half_capacity():
    # L = 2d - 1: at most one transmission's worth of energy fits
    rng = np.random.default_rng(4)
    pmf = random_pmf(5, rng)
    cls = make_class(pmf, 3)
    P = assemble_p(cls, 0.7, 0.5, 0.3, 2).toarray()
    assert np.allclose(P, brute_force_p(pmf, 3, 0.7, 0.5, 0.3, 2), atol=1e-14)
    st = solve_class(cls, 0.7, 0.5, 0.3, 2)
    assert 0 < class_delta(st, cls) < 1


def test_point_mass_harvest():
    pmf = np.zeros(5)
    pmf[2] = 1.0
    cls = make_class(pmf, 2)
    st = solve_class(cls, 1.0, 1.0, 0.5, 3, method="direct")
    ref = solve_class(cls, 1.0, 1.0, 0.5, 3, method="power", tol=1e-14)
    assert np.max(np.abs(st.x - ref.x)) <= 1e-10


def test_no_arrivals_empties_buffer(small_classes):
    st = solve_class(small_classes[0], 0.8, 0.4, 0.0, 5)
    assert st.buffer_marginal[0] == pytest.approx(1.0, abs=1e-12)


def test_never_eligible_fills_buffer(small_classes):
    st = solve_class(small_classes[0], 0.8, 0.0, 0.1, 5)
    assert st.buffer_marginal[-1] == pytest.approx(1.0, abs=1e-10)


def test_dead_class_shortcut():
    pmf = np.zeros(6)
    pmf[0] = 1.0
    cls = make_class(pmf, 1)
    st = solve_class(cls, 0.5, 0.5, 0.2, 4)
    assert st.method == "exact" and st.x[4, 0] == 1.0
    st0 = solve_class(cls, 0.5, 0.5, 0.0, 4)
    assert st0.x[0, 0] == 1.0


def test_delta_nonincreasing_in_cost():
    pmf = random_pmf(12, np.random.default_rng(7), support=4)
    deltas = []
    for d in range(1, 14):
        cls = make_class(pmf, d)
        deltas.append(class_delta(solve_class(cls, 0.6, 0.4, 0.3, 3), cls))
    assert all(a >= b - 1e-12 for a, b in zip(deltas, deltas[1:]))
    assert deltas[-1] == 0.0


def test_power_matches_direct(small_classes):
    cls = small_classes[1]
    a = solve_class(cls, 0.9, 0.3, 0.1, 5, method="direct")
    b = solve_class(cls, 0.9, 0.3, 0.1, 5, method="power", tol=1e-14)
    assert np.max(np.abs(a.x - b.x)) <= 1e-9
    assert b.method == "power" and b.iterations > 0


def test_operator_is_p_transpose(small_classes):
    cls = small_classes[0]
    P = assemble_p(cls, 0.55, 0.35, 0.25, 4)
    op = ChainOperator(cls, 0.55, 0.35, 0.25, 4)
    x = np.random.default_rng(0).random((5, cls.L + 1))
    assert np.allclose(op.apply(x).ravel(), P.T @ x.ravel(), atol=1e-14)


def test_fft_operator_path():
    pmf = random_pmf(200, np.random.default_rng(3), support=100)
    cls = make_class(pmf, 5)
    op = ChainOperator(cls, 0.5, 0.5, 0.5, 2)
    assert op._fft
    P = assemble_p(cls, 0.5, 0.5, 0.5, 2)
    x = np.random.default_rng(1).random((3, 201))
    assert np.allclose(op.apply(x).ravel(), P.T @ x.ravel(), atol=1e-12)


def test_small_stationary_vectors():
    st = steady_state(sp.csr_matrix([[1.0]]))
    assert st.x.tolist() == [1.0]
    st = steady_state(sp.csr_matrix([[0.3, 0.7], [0.2, 0.8]]))
    assert np.allclose(st.x, [2 / 9, 7 / 9], atol=1e-14)


def test_reducible_chain_mixes_closed_classes():
    P = sp.csr_matrix([[0.5, 0.2, 0.3], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.warns(ReducibleChainWarning):
        st = steady_state(P, start=0)
    assert np.allclose(st.x, [0, 0.4, 0.6], atol=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReducibleChainWarning)
        assert np.allclose(steady_state(P, start=2).x, [0, 0, 1])


def test_input_validation():
    cls = make_class([0.5, 0.5], 1)
    with pytest.raises(ValueError):
        build_submatrices(cls, 1.5)
    with pytest.raises(ValueError):
        build_submatrices(make_class([0.5, 0.5], 1).__class__(
            n=1, r_lo=0, r_hi=1, r_n=1, p_t_energy=1, d_n=1, L=1), 0.5)
    with pytest.raises(ValueError):
        solve_class(cls, 0.5, 0.5, 0.5, 1, method="magic")


def test_stochasticity_check():
    cls = make_class([0.5, 0.5], 1)
    H, F, S = build_submatrices(cls, 0.5)
    with pytest.raises(StochasticityError):
        assemble_p(cls, 0.5, 0.5, 0.5, 2, mats=(H, F, 2 * S))
    with pytest.raises(ValueError):
        assemble_p(cls, 0.5, 1.3, 0.5, 2)


def test_marginals_csv(tmp_path, small_classes):
    states = [solve_class(c, 0.9, 0.2, 0.1, 5) for c in small_classes[:2]]
    path = tmp_path / "marg.csv"
    dtmc.write_marginals_csv(path, states, small_classes[:2])
    lines = path.read_text().splitlines()
    assert lines[1] == "class,kind,level,probability"
    assert sum(1 for ln in lines if ",buffer," in ln) == 12


def test_build_chain_bundle(small_classes):
    ch = build_chain(small_classes[0], 0.5, 0.5, 0.5, 2)
    assert ch.P.shape == (3 * (small_classes[0].L + 1),) * 2


def test_stored_zeros_do_not_split_classes():
    # without arrivals and with an unaffordable cost every buffer level is
    # closed; the empty-buffer level is the one reached from the start
    cls = make_class([0.5, 0.3, 0.2], 5)
    P = assemble_p(cls, 1.0, 0.5, 0.0, 2)
    with pytest.warns(ReducibleChainWarning):
        st = steady_state(P, start=0)
    assert st.x[2] == pytest.approx(1.0)
