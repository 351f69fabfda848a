"""Capture probability: model against static snapshots.

Shows how the two snapshot estimators (random busy cell, pooled
transmitters) bracket the model, and how much of the gap closes when the
interferer count follows the cell of a transmitting device rather than a
typical cell.  Run with ``python demos/capture_gap.py``; takes under a minute.
"""
from dataclasses import replace

import numpy as np

from wpiot.montecarlo import snapshot_success
from wpiot.network import NetworkParams, db_to_lin
from wpiot.sinr import LoadState, success_probability

THETAS_DB = np.array([-12.0, -9.0, -6.0, -5.0, -3.0, 0.0])

# every device backlogged, 70 devices per km^2 on a single channel
DELTA = 1.0
base = NetworkParams(mu_dev=70e-6, n_c=1)
print("omega theta_db  typical  tagged  sim_cell  sim_device")
for omega in (0.2, 0.4, 0.8):
    p = base.with_omega(omega)
    snap = snapshot_success(p, DELTA, db_to_lin(THETAS_DB), seed=3,
                            min_cells=4000, min_transmitters=4000)
    for k, tdb in enumerate(THETAS_DB):
        q = replace(p, theta=float(db_to_lin(tdb)))
        typ = success_probability(LoadState.from_params(DELTA, q), q)
        tag = success_probability(LoadState(DELTA, q.omega, q.mu_prime, tagged_cell=True), q)
        print(f"{omega:5.1f} {tdb:8.1f}  {typ:7.4f} {tag:7.4f}  {snap.p_c[k]:8.4f}  "
              f"{snap.p_c_device[k]:10.4f}")
