"""Mean throughput against the access probability for both access schemes.

Run with ``python demos/scheme_sweep.py``; a few minutes on one core.
"""
from dataclasses import replace

from wpiot.network import NetworkParams
from wpiot.solver import solve

base = NetworkParams().coarsened(1000)
cache = {}
print("omega   opportunistic    aloha")
for omega in (0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0):
    row = []
    for scheme in ("opportunistic", "aloha"):
        p = replace(base.with_omega(omega), scheme=scheme)
        row.append(solve(p, pmf_cache=cache).average_throughput)
    print(f"{omega:5.2f}  {row[0]:14.4e} {row[1]:10.4e}")
