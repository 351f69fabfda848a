"""Command-line front end: analytical solves, simulation and validation runs.

Exit codes: 0 success, 1 validation failure, 2 bad configuration or flags,
3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import kstest

from . import dtmc, montecarlo, solver
from .energy import harvest_cdf
from .network import (ConfigError, NetworkParams, PER_KM2, dbm_to_w, db_to_lin, load_config)
from .sinr import ConditioningError
from .special import QuadratureError, QuadratureSpec

log = logging.getLogger("wpiot")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# parameter update for each sweep name
SWEEPS = {
    "omega": lambda p, v: p.with_omega(v),
    "rho": lambda p, v: replace(p, rho=float(dbm_to_w(v))),
    "theta": lambda p, v: replace(p, theta=float(db_to_lin(v))),
    "lambda": lambda p, v: replace(p, lambda_bs=v * PER_KM2),
    "a": lambda p, v: replace(p, a=v),
    "scheme": lambda p, v: replace(p, scheme=v),
}

# acceptance thresholds used by --mode validate
KS_HARVEST = 0.02
PC_GAP = 0.03
THROUGHPUT_REL = 0.05
THROUGHPUT_FLOOR = 1e-3
LITTLE_REL = 0.03
LITTLE_MIN_SUCCESSES = 1000
LITTLE_MAX_FRACTION = 0.01


def _parse_sweep(text):
    if "=" not in text:
        raise ConfigError(f"sweep must look like name=v1,v2,... (got {text!r})")
    name, vals = text.split("=", 1)
    name = name.strip().lower()
    if name not in SWEEPS:
        raise ConfigError(f"unknown sweep parameter {name!r}; choose from {sorted(SWEEPS)}")
    items = [v.strip() for v in vals.split(",") if v.strip()]
    if not items:
        raise ConfigError(f"empty sweep for {name}")
    if name == "scheme":
        return name, items
    try:
        return name, [float(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"non-numeric sweep value in {text!r}") from exc


def _points(base: NetworkParams, sweeps):
    """Cartesian product of the sweeps as ``(labels, params)`` pairs."""
    if not sweeps:
        yield {}, base
        return
    names = [n for n, _ in sweeps]
    for combo in itertools.product(*(v for _, v in sweeps)):
        p = base
        try:
            for n, v in zip(names, combo):
                p = SWEEPS[n](p, v)
        except ValueError as exc:
            raise ConfigError(f"sweep point {dict(zip(names, combo))}: {exc}") from exc
        yield dict(zip(names, combo)), p


def build_parser():
    ap = argparse.ArgumentParser(prog="wpiot", description=__doc__.splitlines()[0])
    ap.add_argument("--mode", choices=("analytical", "simulate", "validate"), default="analytical")
    ap.add_argument("--config", help="INI file with a [network] section (defaults otherwise)")
    ap.add_argument("--sweep", action="append", default=[], metavar="NAME=V1,V2,...",
                    help=f"sweep one parameter ({', '.join(SWEEPS)}); repeat for a grid")
    ap.add_argument("--out", default="wpiot-out", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eps", type=float, default=1e-6)
    ap.add_argument("--max-iter", type=int, default=200)
    ap.add_argument("--damping", type=float, default=1.0)
    ap.add_argument("--battery-levels", type=int, default=None,
                    help="solve with this many coarser battery levels")
    ap.add_argument("--slots", type=int, default=20_000)
    ap.add_argument("--warmup", type=int, default=4_000)
    ap.add_argument("--realizations", type=int, default=1)
    ap.add_argument("--region", type=float, default=4_000.0, help="simulation square side (m)")
    ap.add_argument("--window", type=float, default=2_000.0, help="statistics window side (m)")
    ap.add_argument("--quantized-battery", action="store_true",
                    help="simulate the battery in whole energy units")
    ap.add_argument("--uplink-gain", choices=montecarlo.UPLINK_GAINS, default="per_device",
                    help="whether a device's uplink gain is shared by all BSs in a slot")
    ap.add_argument("--harvest-samples", type=int, default=10_000)
    ap.add_argument("--snapshot-cells", type=int, default=10_000,
                    help="busy cells and transmitters per p_c snapshot estimate")
    ap.add_argument("--quiet", action="store_true")
    return ap


def _write_rows(path, header, rows, tag):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# wpiot {tag} v1\n")
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return v


def run_analytical(points, args, out: Path, spec):
    cache = {}
    summary, class_rows, trace_rows = [], [], []
    names = list(points[0][0].keys()) if points else []
    results = []
    for labels, p in points:
        log.info("analytical point %s", labels or "base")
        res = solver.solve(p, spec, eps=args.eps, max_iter=args.max_iter, damping=args.damping,
                           pmf_cache=cache)
        results.append((labels, p, res))
        lv = [labels[n] for n in names]
        summary.append(lv + [_fmt(res.delta), _fmt(res.p_c), res.iterations,
                             _fmt(res.average_throughput)])
        for m in res.per_class:
            class_rows.append(lv + [m.class_n, f"{m.r_n:.6f}", _fmt(m.throughput), _fmt(m.delay),
                                    _fmt(m.mean_buffer), _fmt(m.loss)])
        for t in res.trace:
            trace_rows.append(lv + [t.iteration, _fmt(t.delta), _fmt(t.p_c),
                                    f"{t.max_state_change:.6g}", t.damping])
    _write_rows(out / "summary.csv", names + ["delta", "p_c", "iterations", "avg_throughput"],
                summary, "analytical-summary")
    _write_rows(out / "metrics.csv", names + ["class", "r_n", "throughput", "delay",
                                              "mean_buffer", "loss"], class_rows, "class-metrics")
    _write_rows(out / "trace.csv", names + ["iteration", "delta", "p_c", "max_state_change",
                                            "damping"], trace_rows, "convergence-trace")
    return results


def _sim_config(p, args):
    return montecarlo.SimConfig(p, region_side=args.region, stats_window_side=args.window,
                                n_slots=args.slots, warmup_slots=args.warmup,
                                n_realizations=args.realizations, seed=args.seed,
                                quantized_battery=args.quantized_battery,
                                uplink_gain=args.uplink_gain)


def run_simulate(points, args, out: Path):
    names = list(points[0][0].keys()) if points else []
    rows, results = [], []
    for i, (labels, p) in enumerate(points):
        log.info("simulation point %s", labels or "base")
        cfg = _sim_config(p, args)
        res = montecarlo.run(cfg)
        results.append((labels, p, res))
        lv = [labels[n] for n in names]
        for c in res.per_class:
            rows.append(lv + [c.class_n, c.devices, c.device_slots, _fmt(c.throughput),
                              _fmt(c.delay), _fmt(c.little_delay), _fmt(c.mean_buffer),
                              _fmt(c.loss), c.transmissions, c.successes])
        montecarlo.write_manifest(out / f"manifest_{i}.json", cfg, {"sweep": labels})
    _write_rows(out / "sim_metrics.csv",
                names + ["class", "devices", "device_slots", "throughput", "delay", "little_delay",
                         "mean_buffer", "loss", "transmissions", "successes"],
                rows, "sim-class-metrics")
    return results


def validate_point(p: NetworkParams, res: solver.SolverResult, sim: montecarlo.SimResult,
                   args, spec):
    """Comparison report of one parameter point against the acceptance thresholds."""
    checks = []
    for k, r in enumerate((10.0, 20.0, 30.0)):
        xs = montecarlo.sample_harvest(r, p, args.harvest_samples, seed=args.seed + k)
        ks = kstest(xs, lambda x: harvest_cdf(np.maximum(x, 0.0), r, p, spec)).statistic
        checks.append(dict(check=f"harvest_ks_r{int(r)}", value=float(ks), limit=KS_HARVEST,
                           passed=bool(ks <= KS_HARVEST)))
    snap = montecarlo.snapshot_success(p, res.delta, seed=args.seed, uplink_gain=args.uplink_gain,
                                       min_cells=args.snapshot_cells,
                                       min_transmitters=args.snapshot_cells)
    sim_pc = float(snap.p_c_device[0])
    gap = abs(sim_pc - res.p_c)
    checks.append(dict(check="p_c_gap", value=gap, limit=PC_GAP, passed=bool(gap <= PC_GAP),
                       analytical=res.p_c, simulated=sim_pc))
    for m, c in zip(res.per_class, sim.per_class):
        if max(m.throughput, c.throughput if c.device_slots else 0.0) <= THROUGHPUT_FLOOR:
            continue
        rel = abs(c.throughput - m.throughput) / max(m.throughput, 1e-300)
        checks.append(dict(check=f"throughput_class{m.class_n}", value=float(rel),
                           limit=THROUGHPUT_REL, passed=bool(rel <= THROUGHPUT_REL),
                           analytical=m.throughput, simulated=c.throughput))
    slots = sim.config.n_slots - sim.config.warmup_slots
    for c in sim.per_class:
        # sojourn times are censored by the run length; skip classes whose
        # delay is not short against the collection window
        if c.successes < LITTLE_MIN_SUCCESSES or c.little_delay > slots * LITTLE_MAX_FRACTION:
            continue
        rel = abs(c.delay - c.little_delay) / c.little_delay
        checks.append(dict(check=f"little_class{c.class_n}", value=float(rel), limit=LITTLE_REL,
                           passed=bool(rel <= LITTLE_REL)))
    return checks


def run_validate(points, args, out: Path, spec):
    ana = run_analytical(points, args, out, spec)
    sims = run_simulate(points, args, out)
    names = list(points[0][0].keys()) if points else []
    rows, failures = [], []
    for (labels, p, res), (_, _, sim) in zip(ana, sims):
        for chk in validate_point(p, res, sim, args, spec):
            rows.append([labels[n] for n in names] + [chk["check"], _fmt(chk["value"]),
                                                      chk["limit"], "pass" if chk["passed"] else "fail"])
            if not chk["passed"]:
                failures.append({**labels, **chk})
    _write_rows(out / "validation.csv", names + ["check", "value", "limit", "result"], rows,
                "validation-report")
    return failures


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        base = load_config(args.config) if args.config else NetworkParams()
        if args.battery_levels is not None:
            if args.battery_levels < 1:
                raise ConfigError("--battery-levels must be positive")
            base = base.coarsened(args.battery_levels)
        if args.eps <= 0 or args.max_iter < 1 or not 0 < args.damping <= 1:
            raise ConfigError("need eps > 0, max-iter >= 1 and damping in (0, 1]")
        if min(args.slots, args.realizations, args.harvest_samples, args.snapshot_cells) < 1:
            raise ConfigError("sample counts must be positive")
        if not 0 <= args.warmup < args.slots or not 0 < args.window < args.region:
            raise ConfigError("need 0 <= warmup < slots and 0 < window < region")
        sweeps = [_parse_sweep(s) for s in args.sweep]
        points = list(_points(base, sweeps))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(json.dumps({"status": "config-error", "error": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    spec = QuadratureSpec()
    try:
        if args.mode == "analytical":
            run_analytical(points, args, out, spec)
        elif args.mode == "simulate":
            run_simulate(points, args, out)
        else:
            failures = run_validate(points, args, out, spec)
            if failures:
                print(json.dumps({"status": "fail", "failures": failures}, default=float),
                      file=sys.stdout)
                return EXIT_VALIDATION
            print(json.dumps({"status": "pass"}))
    except (solver.NonConvergenceError, dtmc.ChainNonConvergence, QuadratureError,
            ConditioningError) as exc:
        doc = {"status": "nonconvergence", "error": str(exc)}
        if isinstance(exc, solver.NonConvergenceError):
            doc["trace"] = [[t.iteration, t.delta, t.p_c, t.max_state_change] for t in exc.trace]
        print(json.dumps(doc), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
