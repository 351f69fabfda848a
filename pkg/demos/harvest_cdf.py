"""Harvested energy per slot: inverted transform against a Monte Carlo ECDF.

Run with ``python demos/harvest_cdf.py``.
"""
import numpy as np
from scipy.stats import kstest

from wpiot.energy import harvest_cdf, harvest_mean
from wpiot.montecarlo import sample_harvest
from wpiot.network import NetworkParams

params = NetworkParams()

for r in (10.0, 20.0, 30.0):
    xs = sample_harvest(r, params, 10_000, seed=1)
    cdf = lambda x: harvest_cdf(np.maximum(x, 0.0), r, params)
    ks = kstest(xs, cdf).statistic
    qs = np.quantile(xs, [0.1, 0.5, 0.9])
    print(f"r={r:4.0f} m  mean {harvest_mean(r, params):.3e} J (sim {xs.mean():.3e})  KS {ks:.4f}")
    for q, x in zip((0.1, 0.5, 0.9), qs):
        print(f"    sim quantile {q:.1f} at {x:.3e} J -> model cdf {float(cdf(x)):.4f}")
