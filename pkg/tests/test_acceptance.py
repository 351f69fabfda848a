"""Acceptance criteria 1-7.

Each criterion prints one PASS/FAIL line (collected in ``LINES`` and echoed in
the pytest terminal summary). Run ``python tests/test_acceptance.py`` to get
the lines without pytest.
"""
from __future__ import annotations

import functools
import math
import sys
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.stats import kstest

from wpiot import dtmc, montecarlo, solver
from wpiot.energy import attach_pmfs, harvest_cdf, harvest_lt, harvest_lt_eta4, harvest_mean
from wpiot.network import NetworkParams, dbm_to_w, partition_classes
from wpiot.sinr import LoadState, inter_lt, inter_lt_tau0, success_probability
from wpiot.special import gil_pelaez_cdf

# tolerances
KS_MAX = 0.02
KS_SAMPLES = 10_000
PC_GAP_MAX = 0.03
PC_MIN_CELLS = 10_000
ARCTAN_REL = 1e-8
TAU0_REL = 1e-3
GP_ABS = 1e-7
ROW_TOL = 1e-9
RESIDUAL_TOL = 1e-10
FOUR_STATE_TOL = 1e-10
FP_EPS = 1e-6
FP_MAX_ITER = 200
THROUGHPUT_REL = 5e-2
THROUGHPUT_FLOOR = 1e-3
CUTOFF_OUTER = 1e-4
CUTOFF_INNER = 1e-2
SCHEME_SLACK = 1e-6
OPTIMUM_OMEGA = (0.1, 0.5)
PLATEAU_REL = 1e-4  # diagnostic only
LITTLE_REL = 3e-2

# simulation and sweep settings
SIM_REGION, SIM_WINDOW, SIM_SLOTS, SIM_WARMUP = 4000.0, 2000.0, 20_000, 2000
SWEEP_LEVELS = 2500
SWEEP_OMEGAS = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.85, 1.0)
SWEEP_RHOS = (-124.0, -126.0, -128.0, -130.0)

LINES: list[str] = []


def _report(tag, passed, text):
    line = f"{tag} {'PASS' if passed else 'FAIL'} {text}"
    LINES.append(line)
    print(line, flush=True)
    return passed, line


# -- shared heavy computations ---------------------------------------------

@functools.lru_cache(maxsize=None)
def reference_solution():
    p = NetworkParams()
    return solver.solve(p, eps=FP_EPS, max_iter=FP_MAX_ITER)


@functools.lru_cache(maxsize=None)
def reference_simulation(quantized=False):
    cfg = montecarlo.SimConfig(NetworkParams(), region_side=SIM_REGION,
                               stats_window_side=SIM_WINDOW, n_slots=SIM_SLOTS,
                               warmup_slots=SIM_WARMUP, quantized_battery=quantized, seed=2024)
    return montecarlo.run(cfg)


# -- criteria ---------------------------------------------------------------------

def criterion_1():
    p = NetworkParams()
    ks = []
    for k, r in enumerate((10.0, 20.0, 30.0)):
        xs = montecarlo.sample_harvest(r, p, KS_SAMPLES, seed=100 + k)
        ks.append(kstest(xs, lambda x: harvest_cdf(np.maximum(x, 0.0), r, p)).statistic)
    ok = max(ks) <= KS_MAX
    return _report("C1", ok, "harvest CDF vs simulated ECDF, KS at r=10/20/30 m: "
                   + "/".join(f"{v:.4f}" for v in ks) + f" (limit {KS_MAX})")


def criterion_2():
    thetas_db = np.arange(-15.0, 1.0)
    thetas = 10 ** (thetas_db / 10)
    worst, worst_at, diag = 0.0, None, []
    for om in (0.2, 0.4, 0.6, 0.8):
        p = NetworkParams(mu_dev=70e-6, n_c=1).with_omega(om)
        load = LoadState.from_params(1.0, p)
        ana = np.array([success_probability(load, replace(p, theta=t)) for t in thetas])
        snap = montecarlo.snapshot_success(p, 1.0, thetas, min_cells=PC_MIN_CELLS,
                                           min_transmitters=PC_MIN_CELLS, seed=7)
        gap = np.abs(ana - snap.p_c_device)
        i = int(np.argmax(gap))
        if gap[i] > worst:
            worst, worst_at = float(gap[i]), (om, thetas_db[i])
        tagged = LoadState(1.0, p.omega, p.mu_prime, tagged_cell=True)
        ana_t = np.array([success_probability(tagged, replace(p, theta=t)) for t in thetas])
        diag.append(float(np.max(np.abs(ana_t - snap.p_c_device))))
    ok = worst <= PC_GAP_MAX
    return _report("C2", ok, f"p_c max |analytic - simulated| = {worst:.4f} at Omega={worst_at[0]}, "
                   f"theta={worst_at[1]:.0f} dB (limit {PC_GAP_MAX}); with the tagged-cell count "
                   "the gaps are " + "/".join(f"{g:.3f}" for g in diag))


def criterion_3():
    p = NetworkParams()
    errs = {}
    s = np.geomspace(1e-3, 1e4, 60)
    rel = []
    for r in (5.0, 10.0, 20.0, 30.0, 100.0):
        sc = s / harvest_mean(r, p)
        a, b = harvest_lt(sc, r, p), harvest_lt_eta4(sc, r, p)
        rel.append(float(np.max(np.abs(a - b) / np.abs(b))))
    errs["arctan"] = max(rel)
    q = NetworkParams(mu_dev=70e-6, n_c=1).with_omega(1.0)
    load = LoadState.from_params(1.0, q)
    sv = np.geomspace(1e-2, 1e2, 40) / q.rho
    gen = inter_lt(sv, load, replace(q, tau=1e-12))
    errs["tau0"] = float(np.max(np.abs(gen - inter_lt_tau0(sv, load, q)) / inter_lt_tau0(sv, load, q)))
    x = np.geomspace(1e-3, 30.0, 50)
    e_exp = np.max(np.abs(gil_pelaez_cdf(lambda z: 1 / (1 + z), x) - (1 - np.exp(-x))))
    e_gam = np.max(np.abs(gil_pelaez_cdf(lambda z: (1 + 2 * z) ** -3, x, scale=6.0)
                          - stats.gamma(3, scale=2).cdf(x)))
    xp = np.array([0.2, 1.0, 1.9, 2.1, 4.0, 15.0])
    e_pt = np.max(np.abs(gil_pelaez_cdf(lambda z: np.exp(-2 * z), xp, scale=2.0) - (xp > 2)))
    errs["gp"] = float(max(e_exp, e_gam, e_pt))
    ok = errs["arctan"] <= ARCTAN_REL and errs["tau0"] <= TAU0_REL and errs["gp"] <= GP_ABS
    return _report("C3", ok, f"arctan rel {errs['arctan']:.1e} (<= {ARCTAN_REL}), tau->0 rel "
                   f"{errs['tau0']:.1e} (<= {TAU0_REL}), Gil-Pelaez abs {errs['gp']:.1e} (<= {GP_ABS})")


def _four_state_reference(p0, pc, om, a):
    import mpmath as mp
    mp.mp.dps = 30
    # states (m, l) in order (0,0), (0,1), (1,0), (1,1); d = 1
    h = [[p0, 1 - p0], [0, 1]]
    P = mp.matrix(4, 4)
    for m in (0, 1):
        for l in (0, 1):
            src = 2 * m + l
            outs = []
            if m == 1 and l == 1:
                outs += [(om * pc, 0, 0), (om * (1 - pc), 1, 0)]
                hw = 1 - om
            else:
                hw = 1
            for l1 in (0, 1):
                outs.append((hw * h[l][l1], m, l1))
            for pr, m1, l1 in outs:
                P[src, 2 * min(m1 + 1, 1) + l1] += mp.mpf(pr) * a
                P[src, 2 * m1 + l1] += mp.mpf(pr) * (1 - a)
    A = P.T - mp.eye(4)
    for j in range(4):
        A[3, j] = 1
    return np.array([float(v) for v in mp.lu_solve(A, mp.matrix([0, 0, 0, 1]))])


def _check_assembled(cls, pc, p):
    P = dtmc.assemble_p(cls, pc, p.omega, p.a, p.M)
    n = cls.L + 1
    rows = np.repeat(np.arange(P.shape[0]) // n, np.diff(P.indptr))
    qbd = bool(np.all(np.abs(rows - P.indices // n) <= 1))
    row = float(np.max(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1)))
    x = dtmc.solve_class(cls, pc, p.omega, p.a, p.M).x.ravel()
    return row, qbd, float(np.max(np.abs(P.T @ x - x)))


def criterion_4():
    # full battery resolution; the innermost class has a harvest support of
    # hundreds of levels, too dense to assemble, so its residual is taken
    # with the matrix-free operator and its structure on a coarser battery
    p = NetworkParams()
    classes = attach_pmfs(partition_classes(p)[:6], p)
    coarse = p.coarsened(SWEEP_LEVELS)
    inner_coarse = attach_pmfs(partition_classes(coarse)[:1], coarse)[0]
    row_err = res_err = 0.0
    qbd_ok = True
    for pc in (0.0, 0.5, 1.0):
        for cls in classes[1:] + [inner_coarse]:
            row, qbd, res = _check_assembled(cls, pc, coarse if cls is inner_coarse else p)
            row_err, res_err, qbd_ok = max(row_err, row), max(res_err, res), qbd_ok and qbd
        op = dtmc.ChainOperator(classes[0], pc, p.omega, p.a, p.M)
        x = dtmc.solve_class(classes[0], pc, p.omega, p.a, p.M).x
        res_err = max(res_err, float(np.max(np.abs(op.apply(x) - x))))
    four = 0.0
    for args in ((0.4, 0.7, 0.2, 0.1), (0.9, 0.3, 0.8, 0.5), (0.05, 1.0, 1.0, 0.9)):
        p0, pc, om, a = args
        cls = partition_classes(NetworkParams(L=1))[0].with_pmf([p0, 1 - p0])
        cls = replace(cls, d_n=1)
        st = dtmc.solve_class(cls, pc, om, a, 1, method="direct")
        four = max(four, float(np.max(np.abs(st.x.ravel() - _four_state_reference(*args)))))
    ok = row_err <= ROW_TOL and qbd_ok and res_err <= RESIDUAL_TOL and four <= FOUR_STATE_TOL
    return _report("C4", ok, f"row sums {row_err:.1e} (<= {ROW_TOL}), block tri-diagonal "
                   f"{'yes' if qbd_ok else 'no'}, residual {res_err:.1e} (<= {RESIDUAL_TOL}), "
                   f"4-state chain {four:.1e} (<= {FOUR_STATE_TOL})")


def criterion_5():
    res = reference_solution()
    sim = reference_simulation()
    conv = res.iterations <= FP_MAX_ITER
    gaps = []
    for m, c in zip(res.per_class, sim.per_class):
        if max(m.throughput, c.throughput) > THROUGHPUT_FLOOR:
            gaps.append((m.class_n, abs(c.throughput - m.throughput) / max(m.throughput, 1e-300)))
    bad = [g for g in gaps if g[1] > THROUGHPUT_REL]
    thr = [m.throughput for m in res.per_class]
    cutoff = max(thr[-5:]) < CUTOFF_OUTER and min(thr[:3]) > CUTOFF_INNER
    sim_thr = [c.throughput for c in sim.per_class]
    q = reference_simulation(True)
    qgap = max(abs(c.throughput - m.throughput) / m.throughput
               for m, c in list(zip(res.per_class, q.per_class))[:3])
    ok = conv and not bad and cutoff
    return _report("C5", ok, f"fixed point in {res.iterations} iterations (delta={res.delta:.5f}, "
                   f"p_c={res.p_c:.5f}); throughput within {THROUGHPUT_REL:.0%} for "
                   f"{len(gaps) - len(bad)}/{len(gaps)} classes (first miss: class "
                   f"{bad[0][0] if bad else '-'}); cut-off analytic {'yes' if cutoff else 'no'}, "
                   f"simulated outer throughput {max(sim_thr[-5:]):.2e}; quantized-battery "
                   f"simulator vs chain on classes 1-3: {qgap:.1%}")


def _sweep():
    base = NetworkParams().coarsened(SWEEP_LEVELS)
    cache = {}
    out = {}
    for rho in SWEEP_RHOS:
        for scheme in ("opportunistic", "aloha"):
            vals = []
            for om in SWEEP_OMEGAS:
                p = replace(base, rho=float(dbm_to_w(rho)), scheme=scheme).with_omega(om)
                vals.append(solver.solve(p, eps=FP_EPS, max_iter=FP_MAX_ITER,
                                         pmf_cache=cache).average_throughput)
            out[rho, scheme] = np.array(vals)
    return out


def criterion_6():
    res = _sweep()
    dominance = min(float(np.min(res[r, "opportunistic"] - res[r, "aloha"])) for r in SWEEP_RHOS)
    equal = max(abs(res[r, "opportunistic"][-1] - res[r, "aloha"][-1]) for r in SWEEP_RHOS)
    interior = [r for r in SWEEP_RHOS
                if 0 < int(np.argmax(res[r, "opportunistic"])) < len(SWEEP_OMEGAS) - 1]
    best = max(SWEEP_RHOS, key=lambda r: res[r, "opportunistic"].max())
    om_best = SWEEP_OMEGAS[int(np.argmax(res[best, "opportunistic"]))]
    top = res[best, "opportunistic"]
    flat = [om for om, v in zip(SWEEP_OMEGAS, top) if v >= top.max() * (1 - PLATEAU_REL)]
    ok = (dominance >= -SCHEME_SLACK and equal == 0.0 and bool(interior)
          and OPTIMUM_OMEGA[0] <= om_best <= OPTIMUM_OMEGA[1])
    return _report("C6", ok, f"opportunistic - Aloha min {dominance:.2e} (>= -{SCHEME_SLACK}), "
                   f"Omega=1 difference {equal:.1e}, interior maximum for rho in "
                   f"{[int(r) for r in interior]}, best (rho, Omega) = ({best:.0f} dBm, {om_best}) "
                   f"[L'={SWEEP_LEVELS}]; Omega within {PLATEAU_REL:.0e} of that maximum: {flat}")


def criterion_7():
    sim = reference_simulation()
    slots = SIM_SLOTS - SIM_WARMUP
    rel = [abs(c.delay - c.little_delay) / c.little_delay for c in sim.per_class
           if c.successes >= 1000 and c.little_delay <= slots / 100]
    ok = bool(rel) and max(rel) <= LITTLE_REL
    worst = max(rel, default=math.nan)
    return _report("C7", ok, f"measured delay vs E[Q]/E[T]: max rel {worst:.3%} over "
                   f"{len(rel)} classes (limit {LITTLE_REL:.0%})")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7]


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 8)])
def test_criterion(crit):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dtmc.ReducibleChainWarning)
        passed, line = crit()
    assert passed, line


if __name__ == "__main__":
    picked = [int(a) for a in sys.argv[1:]] or range(1, len(CRITERIA) + 1)
    failed = 0
    for crit in (CRITERIA[i - 1] for i in picked):
        t0 = time.time()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dtmc.ReducibleChainWarning)
            passed, _ = crit()
        failed += not passed
        print(f"   ({time.time() - t0:.0f} s)", flush=True)
    sys.exit(1 if failed else 0)
