"""Fixed-point coupling of the network success probability and the class chains."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import dtmc
from .energy import attach_pmfs
from .network import EHClass, NetworkParams, partition_classes
from .sinr import LoadState, success_probability
from .special import QuadratureSpec


class NonConvergenceError(RuntimeError):
    """Raised when the fixed point is not reached; ``trace`` holds the history."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class Metrics:
    class_n: int
    r_n: float
    mean_buffer: float
    throughput: float
    delay: float
    loss: float
    delta_n: float


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    delta: float
    p_c: float
    max_state_change: float
    damping: float


@dataclass
class SolverResult:
    delta: float
    p_c: float
    iterations: int
    trace: list
    per_class: list
    states: list = field(repr=False, default_factory=list)
    classes: list = field(repr=False, default_factory=list)

    @property
    def average_throughput(self) -> float:
        return float(np.mean([m.throughput for m in self.per_class]))


def metrics(state: dtmc.SteadyState, cls: EHClass, p_c: float, omega: float,
            a: float) -> Metrics:
    """Mean buffer, throughput, delay (Little's law) and loss of one class."""
    x = state.x
    mean_q = float(np.arange(x.shape[0]) @ x.sum(axis=1))
    d_n = dtmc.class_delta(state, cls)
    thr = omega * p_c * d_n
    if thr > 0:
        delay = mean_q / thr
    else:
        delay = math.inf if mean_q > 0 else 0.0
    loss = min(max(1.0 - thr / a, 0.0), 1.0) if a > 0 else 0.0
    return Metrics(cls.n, cls.r_n, mean_q, thr, delay, loss, d_n)


def _empty_state(M, L):
    x = np.zeros((M + 1, L + 1))
    x[0, 0] = 1.0
    return dtmc.SteadyState(x=x, residual=math.nan, method="init")


def _oscillating(deltas):
    """Sign-alternating changes over the last four updates."""
    if len(deltas) < 5:
        return False
    d = np.diff(deltas[-5:])
    return bool(np.all(d[1:] * d[:-1] < 0))


def solve(params: NetworkParams, spec: QuadratureSpec | None = None, eps: float = 1e-6,
          max_iter: int = 200, damping: float = 1.0, *, classes=None,
          pmf_cache: dict | None = None, method: str = "auto",
          progress=None) -> SolverResult:
    """Iterate ``delta -> p_c -> chains -> delta`` until the states settle.

    Every class starts with all mass at empty buffer and empty battery, so
    the first success probability is evaluated with no interferers (1).
    ``damping`` mixes the new ``delta`` with the previous one; it is halved
    whenever the ``delta`` updates alternate in sign.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    spec = spec or QuadratureSpec()
    if classes is None:
        classes = attach_pmfs(partition_classes(params), params, spec, pmf_cache)
    M, om, a = params.M, params.omega, params.a
    states = [_empty_state(M, c.L) for c in classes]
    delta = dtmc.delta_from_states(states, classes)
    history = [delta]
    trace = []
    for it in range(1, max_iter + 1):
        load = LoadState.from_params(delta, params)
        p_c = success_probability(load, params, spec)
        new = [dtmc.solve_class(c, p_c, om, a, M, method=method,
                                x0=s.x if s.method != "init" else None)
               for c, s in zip(classes, states)]
        change = max(float(np.max(np.abs(n.x - s.x))) for n, s in zip(new, states))
        delta_new = dtmc.delta_from_states(new, classes)
        history.append(delta_new)
        if damping < 1 or _oscillating(history):
            if _oscillating(history):
                damping = max(damping / 2, 1e-3)
            delta_next = damping * delta_new + (1 - damping) * delta
        else:
            delta_next = delta_new
        trace.append(TraceRow(it, delta_new, p_c, change, damping))
        if progress is not None:
            progress(trace[-1])
        states = new
        if change < eps and abs(delta_next - delta) < eps:
            per = [metrics(s, c, p_c, om, a) for s, c in zip(states, classes)]
            return SolverResult(delta_new, p_c, it, trace, per, states, classes)
        delta = delta_next
    raise NonConvergenceError(f"no fixed point after {max_iter} iterations", trace)


def write_trace_csv(path, result: SolverResult):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# wpiot convergence-trace v1\n")
        wr = csv.writer(fh)
        wr.writerow(["iteration", "delta", "p_c", "max_state_change", "damping"])
        for t in result.trace:
            wr.writerow([t.iteration, f"{t.delta:.12g}", f"{t.p_c:.12g}",
                         f"{t.max_state_change:.6g}", t.damping])


def write_metrics_csv(path, result: SolverResult):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# wpiot class-metrics v1\n")
        wr = csv.writer(fh)
        wr.writerow(["class", "r_n", "throughput", "delay", "mean_buffer", "loss"])
        for m in result.per_class:
            wr.writerow([m.class_n, f"{m.r_n:.6f}", f"{m.throughput:.9g}", f"{m.delay:.9g}",
                         f"{m.mean_buffer:.9g}", f"{m.loss:.9g}"])


__all__ = ["Metrics", "SolverResult", "TraceRow", "NonConvergenceError", "metrics",
           "solve", "write_trace_csv", "write_metrics_csv"]
