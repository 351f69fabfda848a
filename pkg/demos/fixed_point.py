"""Coupled fixed point on a coarse battery grid, with per-class metrics.

On a coarse grid one energy unit is large, so only the nearest classes can
ever afford a transmission; the rest show as dead (infinite delay).

Run with ``python demos/fixed_point.py``.
"""
from wpiot.network import NetworkParams
from wpiot.solver import solve

params = NetworkParams().coarsened(1000)


def show(row):
    print(f"  iter {row.iteration:3d}  delta {row.delta:.6f}  p_c {row.p_c:.6f}  "
          f"change {row.max_state_change:.2e}")


res = solve(params, progress=show)
print(f"converged: delta {res.delta:.6f}, p_c {res.p_c:.6f}, "
      f"mean throughput {res.average_throughput:.4e} packets/slot")
print("class    r_n(m)  throughput     delay   buffer    loss")
live = [m for m in res.per_class if m.throughput > 0]
for m in live + res.per_class[len(live):len(live) + 1]:
    print(f"{m.class_n:5d} {m.r_n:9.2f} {m.throughput:11.4e} {m.delay:9.1f} "
          f"{m.mean_buffer:8.3f} {m.loss:7.4f}")
