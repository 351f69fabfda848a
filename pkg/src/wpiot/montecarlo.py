"""Spatio-temporal Monte Carlo simulator of the uplink IoT network.

Base stations and devices are drawn as Poisson point processes in a square
region; statistics are collected only inside a smaller central window so the
surrounding ring acts as a guard region. Batteries are continuous.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .network import NetworkParams, params_to_mapping, partition_classes


# "per_device": a device's uplink gain in a slot is the same towards every BS,
# so interferers that passed the gain gate also arrive strong at other BSs;
# "per_link": independent gains towards non-serving BSs
UPLINK_GAINS = ("per_device", "per_link")


@dataclass(frozen=True)
class SimConfig:
    params: NetworkParams
    region_side: float = 10_000.0
    stats_window_side: float = 1_000.0
    n_slots: int = 20_000
    warmup_slots: int = 2_000
    n_realizations: int = 1
    seed: int = 0
    harvest_neighbors: int = 16
    battery_bands: int = 10
    quantized_battery: bool = False
    uplink_gain: str = "per_device"

    def __post_init__(self):
        if not 0 < self.stats_window_side < self.region_side:
            raise ValueError("stats window must be smaller than the region")
        if not 0 <= self.warmup_slots < self.n_slots:
            raise ValueError("warmup_slots must be below n_slots")
        if self.n_realizations < 1 or self.harvest_neighbors < 1 or self.battery_bands < 1:
            raise ValueError("counts must be positive")
        if self.uplink_gain not in UPLINK_GAINS:
            raise ValueError(f"uplink_gain must be one of {UPLINK_GAINS}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class DeviceState:
    """Per-device arrays (one entry per device)."""

    position: np.ndarray
    serving_bs: np.ndarray
    serving_dist: np.ndarray
    tx_power: np.ndarray
    capped: np.ndarray
    buffer: np.ndarray
    battery: np.ndarray
    channel: np.ndarray


@dataclass
class ClassStats:
    class_n: int
    devices: int
    device_slots: int
    throughput: float
    mean_buffer: float
    delay: float
    loss: float
    transmissions: int
    successes: int

    @property
    def little_delay(self) -> float:
        return self.mean_buffer / self.throughput if self.throughput > 0 else math.inf


@dataclass
class SimResult:
    config: SimConfig
    per_class: list
    p_c: float
    transmissions: int
    successes: int
    accepted_rate: float
    success_rate: float
    occupancy: np.ndarray = field(repr=False)

    def class_table(self):
        return {c.class_n: c for c in self.per_class}


def _ppp(rng, density, side):
    n = rng.poisson(density * side * side)
    return rng.uniform(-side / 2, side / 2, size=(n, 2))


def _window_mask(pos, side):
    return np.all(np.abs(pos) <= side / 2, axis=1)


def deploy(params: NetworkParams, region_side: float, rng):
    """BS and device positions plus the nearest-BS association."""
    bs = _ppp(rng, params.lambda_bs, region_side)
    dev = _ppp(rng, params.mu_dev, region_side)
    if len(bs) == 0:
        raise ValueError("realization without base stations")
    dist, idx = cKDTree(bs).query(dev)
    return bs, dev, idx, dist


def _far_field(dev, bs, near_idx, eta, chunk=2048):
    """Sum of ``d^-eta`` over all BSs except the listed nearest ones."""
    out = np.empty(len(dev))
    for s in range(0, len(dev), chunk):
        d2 = ((dev[s:s + chunk, None, :] - bs[None, :, :]) ** 2).sum(axis=2)
        tot = (d2 ** (-eta / 2)).sum(axis=1)
        near = np.take_along_axis(d2, near_idx[s:s + chunk], axis=1) ** (-eta / 2)
        out[s:s + chunk] = tot - near.sum(axis=1)
    return np.maximum(out, 0.0)


def _decode(tx, chan, h, state: DeviceState, bs, params: NetworkParams, rng,
            thetas=None, uplink_gain="per_device"):
    """Capture decoding for the transmitting devices ``tx``.

    Every BS decodes at most the strongest in-cell signal on each channel.
    Returns a boolean success flag per transmitter (for each theta when
    ``thetas`` is given, shape ``(len(thetas), len(tx))``).
    """
    eta, rho = params.eta, params.rho
    thetas = np.atleast_1d(params.theta if thetas is None else thetas)
    n = len(tx)
    if n == 0:
        return np.zeros((len(thetas), 0), dtype=bool)
    c = chan[tx]
    serv = state.serving_bs[tx]
    recv = c.astype(np.int64) * len(bs) + serv            # (channel, BS) receiver key
    keys, r_of_tx = np.unique(recv, return_inverse=True)
    r_chan = keys // len(bs)
    r_bs = keys % len(bs)
    sig = rho * h[tx]
    in_sum = np.bincount(r_of_tx, weights=sig, minlength=len(keys))
    in_max = np.full(len(keys), -np.inf)
    np.maximum.at(in_max, r_of_tx, sig)
    # pairs (transmitter, receiver) on the same channel
    t_order = np.argsort(c, kind="stable")
    t_counts = np.bincount(c, minlength=params.n_c)
    t_start = np.concatenate([[0], np.cumsum(t_counts)[:-1]])
    per_r = t_counts[r_chan]
    total = int(per_r.sum())
    pr = np.repeat(np.arange(len(keys)), per_r)
    offs = np.arange(total) - np.repeat(np.cumsum(per_r) - per_r, per_r)
    pt = t_order[t_start[r_chan[pr]] + offs]
    other = serv[pt] != r_bs[pr]
    pr, pt = pr[other], pt[other]
    d2 = ((state.position[tx[pt]] - bs[r_bs[pr]]) ** 2).sum(axis=1)
    cross = h[tx[pt]] if uplink_gain == "per_device" else rng.exponential(size=pt.size)
    p_int = state.tx_power[tx[pt]] * cross * d2 ** (-eta / 2)
    inter = np.bincount(pr, weights=p_int, minlength=len(keys))
    sinr = in_max / (in_sum - in_max + inter + params.sigma2)
    is_max = sig == in_max[r_of_tx]
    # ties have probability zero; keep the first strongest signal only
    first = np.zeros(n, dtype=bool)
    cand = np.nonzero(is_max)[0]
    _, first_idx = np.unique(r_of_tx[cand], return_index=True)
    first[cand[first_idx]] = True
    return first[None, :] & (sinr[r_of_tx][None, :] > thetas[:, None])


def _eligible(h, params: NetworkParams, rng):
    if params.scheme == "opportunistic":
        return h > params.tau
    return rng.random(h.size) < params.omega


def _run_one(cfg: SimConfig, seed_seq, classes):
    p = cfg.params
    rng = np.random.default_rng(seed_seq)
    bs, dev, serv, dist = deploy(p, cfg.region_side, rng)
    n = len(dev)
    tx_power = p.rho * dist ** p.eta
    capped = tx_power > p.p_max
    state = DeviceState(position=dev, serving_bs=serv, serving_dist=dist, tx_power=tx_power,
                        capped=capped, buffer=np.zeros(n, dtype=np.int64),
                        battery=np.zeros(n), channel=np.zeros(n, dtype=np.int64))
    e_t = p.t_s * tx_power
    if cfg.quantized_battery:
        # battery counted in whole units of w: harvest rounds down, a
        # transmission costs ceil(e_t / w) units
        unit, cap = p.w, float(p.L)
        cost = np.maximum(np.ceil(e_t / p.w * (1.0 - 1e-12)), 1.0)
    else:
        unit, cap = 1.0, p.B
        cost = e_t
    k = min(cfg.harvest_neighbors, len(bs))
    nd, ni = cKDTree(bs).query(dev, k=k)
    nd, ni = nd.reshape(n, k), ni.reshape(n, k)
    near_gain = nd ** (-p.eta)
    far = _far_field(dev, bs, ni, p.eta)
    gain = p.harvest_gain

    win = _window_mask(dev, cfg.stats_window_side)
    bounds = np.array([c.r_lo for c in classes] + [np.inf])
    cls_of = np.clip(np.searchsorted(bounds, dist, side="right") - 1, 0, len(classes) - 1)
    nc = len(classes)
    wcls = cls_of[win]
    win_idx = np.nonzero(win)[0]
    n_win = len(win_idx)
    dep = np.zeros(n_win)
    arr_acc = np.zeros(n_win)
    arr_all = np.zeros(n_win)
    q_sum = np.zeros(n_win)
    txc = np.zeros(n_win)
    delay_sum = np.zeros(n_win)
    delay_n = np.zeros(n_win)
    occ = np.zeros((nc, p.M + 1, cfg.battery_bands))
    # FIFO arrival stamps per window device
    stamps = np.full((n_win, p.M), -1, dtype=np.int64)
    head = np.zeros(n_win, dtype=np.int64)
    pos_in_win = np.full(n, -1)
    pos_in_win[win_idx] = np.arange(n_win)
    band_w = cap / cfg.battery_bands

    for t in range(cfg.n_slots):
        collect = t >= cfg.warmup_slots
        chan = rng.integers(0, p.n_c, size=n)
        h = rng.exponential(size=n)
        elig = _eligible(h, p, rng)
        capable = (state.battery >= cost) & ~capped
        tx_mask = (state.buffer > 0) & elig & capable
        tx = np.nonzero(tx_mask)[0]
        state.battery[tx] -= cost[tx]
        hv = ~tx_mask
        g = rng.exponential(size=(int(hv.sum()), k))
        energy = gain * ((g * near_gain[hv]).sum(axis=1) + far[hv])
        if cfg.quantized_battery:
            energy = np.floor(energy / unit)
        state.battery[hv] = np.minimum(state.battery[hv] + energy, cap)
        np.maximum(state.battery, 0.0, out=state.battery)
        ok = _decode(tx, chan, h, state, bs, p, rng, uplink_gain=cfg.uplink_gain)[0]
        winners = tx[ok]
        state.buffer[winners] -= 1
        arrivals = rng.random(n) < p.a
        accepted = arrivals & (state.buffer < p.M)
        # window bookkeeping (FIFO delays measured from the arrival slot)
        w_dep = pos_in_win[winners]
        w_dep = w_dep[w_dep >= 0]
        if collect:
            w_tx = pos_in_win[tx]
            w_tx = w_tx[w_tx >= 0]
            txc[w_tx] += 1
            dep[w_dep] += 1
            arr_all += arrivals[win_idx]
            arr_acc += accepted[win_idx]
        if w_dep.size:
            hs = stamps[w_dep, head[w_dep] % p.M]
            if collect:
                valid = hs >= cfg.warmup_slots
                delay_sum[w_dep[valid]] += t - hs[valid]
                delay_n[w_dep[valid]] += 1
            head[w_dep] += 1
        state.buffer[accepted] += 1
        w_acc = pos_in_win[np.nonzero(accepted)[0]]
        w_acc = w_acc[w_acc >= 0]
        if w_acc.size:
            tail = head[w_acc] + state.buffer[win_idx[w_acc]] - 1
            stamps[w_acc, tail % p.M] = t
        if collect:
            bq = state.buffer[win_idx]
            q_sum += bq
            band = np.minimum((state.battery[win_idx] / band_w).astype(int), cfg.battery_bands - 1)
            np.add.at(occ, (wcls, bq, band), 1)

    slots = cfg.n_slots - cfg.warmup_slots
    return dict(wcls=wcls, dep=dep, arr_acc=arr_acc, arr_all=arr_all, q_sum=q_sum, txc=txc,
                delay_sum=delay_sum, delay_n=delay_n, occ=occ, slots=slots)


def run(config: SimConfig) -> SimResult:
    """Run all realizations and pool the window statistics per class."""
    p = config.params
    classes = partition_classes(p)
    nc = len(classes)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_realizations)
    agg = dict(dev=np.zeros(nc), dep=np.zeros(nc), arr_acc=np.zeros(nc), arr_all=np.zeros(nc),
               q=np.zeros(nc), tx=np.zeros(nc), dsum=np.zeros(nc), dn=np.zeros(nc),
               ds=np.zeros(nc))
    occ = np.zeros((nc, p.M + 1, config.battery_bands))
    for ss in seeds:
        r = _run_one(config, ss, classes)
        w = r["wcls"]
        dn = r["delay_n"]
        for key, vals in (("dep", r["dep"]), ("arr_acc", r["arr_acc"]), ("arr_all", r["arr_all"]),
                          ("q", r["q_sum"]), ("tx", r["txc"]), ("dsum", r["delay_sum"]),
                          ("dn", dn)):
            agg[key] += np.bincount(w, weights=vals, minlength=nc)
        agg["dev"] += np.bincount(w, minlength=nc)
        agg["ds"] += np.bincount(w, minlength=nc) * r["slots"]
        occ += r["occ"]
    per = []
    for i, c in enumerate(classes):
        ds = agg["ds"][i]
        thr = agg["dep"][i] / ds if ds else math.nan
        per.append(ClassStats(
            class_n=c.n, devices=int(agg["dev"][i]), device_slots=int(ds), throughput=thr,
            mean_buffer=agg["q"][i] / ds if ds else math.nan,
            delay=agg["dsum"][i] / agg["dn"][i] if agg["dn"][i] else math.inf,
            loss=(1.0 - thr / p.a) if (ds and p.a > 0) else 0.0,
            transmissions=int(agg["tx"][i]), successes=int(agg["dep"][i])))
    tx_tot = int(agg["tx"].sum())
    succ = int(agg["dep"].sum())
    ds_tot = agg["ds"].sum()
    return SimResult(config=config, per_class=per,
                     p_c=succ / tx_tot if tx_tot else math.nan,
                     transmissions=tx_tot, successes=succ,
                     accepted_rate=agg["arr_acc"].sum() / ds_tot if ds_tot else math.nan,
                     success_rate=succ / ds_tot if ds_tot else math.nan,
                     occupancy=occ)


# -- single-purpose oracles -------------------------------------------------

def sample_harvest(r: float, params: NetworkParams, n_samples: int, seed: int = 0,
                   region_side: float = 10_000.0, batch: int = 256):
    """Energy harvested in one slot by a device served from distance ``r``.

    Each sample is a fresh BS realization: the serving BS at distance ``r``
    and a PPP of the others restricted to distances beyond ``r``, all with
    unit-mean exponential power gains.
    """
    rng = np.random.default_rng(seed)
    c = params.harvest_gain
    eta = params.eta
    out = np.empty(n_samples)
    area = region_side ** 2 - math.pi * r * r
    for s in range(0, n_samples, batch):
        m = min(batch, n_samples - s)
        counts = rng.poisson(params.lambda_bs * area, size=m)
        tot = counts.sum()
        pts = np.empty((0, 2))
        while len(pts) < tot:
            cand = rng.uniform(-region_side / 2, region_side / 2, size=(int(1.1 * (tot - len(pts))) + 16, 2))
            cand = cand[(cand ** 2).sum(axis=1) > r * r]
            pts = np.vstack([pts, cand])
        pts = pts[:tot]
        contrib = rng.exponential(size=tot) * ((pts ** 2).sum(axis=1)) ** (-eta / 2)
        owner = np.repeat(np.arange(m), counts)
        others = np.bincount(owner, weights=contrib, minlength=m)
        out[s:s + m] = c * (rng.exponential(size=m) * r ** (-eta) + others)
    return out


@dataclass
class SuccessSnapshot:
    """``p_c`` averages over busy cells (a random transmitter of a random
    busy cell); ``p_c_device`` pools all transmitters, which weights crowded
    cells more."""

    thetas: np.ndarray
    p_c: np.ndarray
    p_c_device: np.ndarray
    cells: int
    busy_cells: int
    transmitters: int
    inter_samples: np.ndarray = field(repr=False)


def snapshot_success(params: NetworkParams, delta: float, thetas=None, *,
                     min_cells: int = 10_000, min_transmitters: int = 10_000, seed: int = 0,
                     region_side: float = 4_000.0, window_side: float = 1_000.0,
                     max_snapshots: int = 100_000,
                     uplink_gain: str = "per_device") -> SuccessSnapshot:
    """Capture probability on one channel from static snapshots.

    Backlogged, capable devices form a PPP of density ``delta * mu / n_c``;
    each passes the access gate, transmits with channel-inverted power and is
    decoded by its nearest BS under the capture rule. Inter-cell
    interference at every window BS is returned as well.
    """
    if uplink_gain not in UPLINK_GAINS:
        raise ValueError(f"uplink_gain must be one of {UPLINK_GAINS}")
    rng = np.random.default_rng(seed)
    thetas = np.atleast_1d(params.theta if thetas is None else np.asarray(thetas, dtype=float))
    dens = delta * params.mu_prime
    one = NetworkParams(**{**asdict(params), "n_c": 1, "mu_dev": max(dens, 1e-30)})
    succ = np.zeros(len(thetas))
    cell_sum = np.zeros(len(thetas))
    n_tx = cells = busy = 0
    inter = []
    for _ in range(max_snapshots):
        bs = _ppp(rng, one.lambda_bs, region_side)
        dev = _ppp(rng, dens, region_side)
        if len(bs) == 0:
            continue
        wbs = _window_mask(bs, window_side)
        cells += int(wbs.sum())
        if len(dev):
            dist, serv = cKDTree(bs).query(dev)
        else:
            dist, serv = np.zeros(0), np.zeros(0, dtype=np.int64)
        tx_power = one.rho * dist ** one.eta
        h = rng.exponential(size=len(dev))
        ok = _eligible(h, one, rng) & (tx_power <= one.p_max)
        tx = np.nonzero(ok)[0]
        state = DeviceState(position=dev, serving_bs=serv, serving_dist=dist, tx_power=tx_power,
                            capped=tx_power > one.p_max, buffer=np.ones(len(dev), dtype=np.int64),
                            battery=np.full(len(dev), np.inf),
                            channel=np.zeros(len(dev), dtype=np.int64))
        win_tx = wbs[serv[tx]] if len(tx) else np.zeros(0, dtype=bool)
        if len(tx):
            res = _decode(tx, np.zeros(len(dev), dtype=np.int64), h, state, bs, one, rng, thetas,
                          uplink_gain)
            rw = res[:, win_tx]
            succ += rw.sum(axis=1)
            n_tx += int(win_tx.sum())
            _, cell_of, k = np.unique(serv[tx][win_tx], return_inverse=True, return_counts=True)
            busy += len(k)
            if len(k):
                per_cell = np.stack([np.bincount(cell_of, weights=row, minlength=len(k))
                                     for row in rw])
                cell_sum += (per_cell / k).sum(axis=1)
        # inter-cell interference at window BSs
        wb = np.nonzero(wbs)[0]
        if len(tx) and len(wb):
            d2 = ((dev[tx][None, :, :] - bs[wb][:, None, :]) ** 2).sum(axis=2)
            g = (np.broadcast_to(h[tx], d2.shape) if uplink_gain == "per_device"
                 else rng.exponential(size=d2.shape))
            pw = tx_power[tx][None, :] * g * d2 ** (-one.eta / 2)
            pw[serv[tx][None, :] == wb[:, None]] = 0.0
            inter.append(pw.sum(axis=1))
        elif len(wb):
            inter.append(np.zeros(len(wb)))
        if busy >= min_cells and n_tx >= min_transmitters:
            break
    nan = np.full(len(thetas), np.nan)
    return SuccessSnapshot(thetas, cell_sum / busy if busy else nan,
                           succ / n_tx if n_tx else nan, cells, busy, n_tx,
                           np.concatenate(inter) if inter else np.zeros(0))


# -- output -----------------------------------------------------------------

def write_result_csv(path, result: SimResult):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# wpiot sim-class-metrics v1\n")
        wr = csv.writer(fh)
        wr.writerow(["class", "devices", "device_slots", "throughput", "delay", "little_delay",
                     "mean_buffer", "loss", "transmissions", "successes"])
        for c in result.per_class:
            wr.writerow([c.class_n, c.devices, c.device_slots, f"{c.throughput:.9g}",
                         f"{c.delay:.9g}", f"{c.little_delay:.9g}", f"{c.mean_buffer:.9g}",
                         f"{c.loss:.9g}", c.transmissions, c.successes])


def write_ecdf_csv(path, samples):
    xs = np.sort(np.asarray(samples, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# wpiot ecdf v1\n")
        wr = csv.writer(fh)
        wr.writerow(["value", "ecdf"])
        for i, v in enumerate(xs, 1):
            wr.writerow([f"{v:.9e}", f"{i / len(xs):.9g}"])


def write_manifest(path, config: SimConfig, extra: dict | None = None):
    from . import __version__
    doc = {
        "version": __version__,
        "seed": config.seed,
        "region_side_m": config.region_side,
        "stats_window_side_m": config.stats_window_side,
        "n_slots": config.n_slots,
        "warmup_slots": config.warmup_slots,
        "n_realizations": config.n_realizations,
        "harvest_neighbors": config.harvest_neighbors,
        "battery_bands": config.battery_bands,
        "quantized_battery": config.quantized_battery,
        "uplink_gain": config.uplink_gain,
        "network": params_to_mapping(config.params),
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


__all__ = ["SimConfig", "DeviceState", "ClassStats", "SimResult", "SuccessSnapshot", "deploy",
           "run", "sample_harvest", "snapshot_success", "write_result_csv", "write_ecdf_csv",
           "write_manifest", "UPLINK_GAINS"]
