"""Mini-slot simulation engine: one policy, one trace, one traffic source."""
from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .mac import (POLICY_ORDER, Observation, PolicyParams, SimContext, handcraft_interval,
                  make_policy, prefix_sum)
from .phy import (SINR_TOL_DB, LinkBudget, McsTable, duration_table, mtxop_slots,
                  transmission_outcome)


@dataclass
class SimConfig:
    policy: str = "dlmac"
    params: PolicyParams = field(default_factory=PolicyParams)
    budget: LinkBudget = field(default_factory=LinkBudget)
    table: McsTable = field(default_factory=McsTable.default)
    mtxop_slots: int | None = None
    #: expected packet arrivals per MTXOP interval
    lambda_arrivals: float = 0.18
    #: infinite backlog instead of Poisson arrivals
    saturated: bool = False
    seed: int = 0
    measure_window_s: float = 2.0
    #: first simulated slot; default leaves room for a full history window
    start_slot: int | None = None
    duration_slots: int | None = None
    trace_path: str | None = None
    model_path: str | None = None

    def __post_init__(self):
        if self.lambda_arrivals < 0:
            raise ValueError("lambda_arrivals must be >= 0")
        if not self.measure_window_s > 0:
            raise ValueError("measure_window_s must be positive")

    @property
    def mtxop(self) -> int:
        return self.mtxop_slots or mtxop_slots(self.table, self.budget)

    def replace(self, **kw) -> "SimConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return SimConfig(**vals)


@dataclass
class Event:
    slot: int
    mcs: int
    success: bool
    completion: int


@dataclass
class SimResult:
    policy: str
    seed: int
    run_index: int
    start_slot: int
    end_slot: int
    slot_us: float
    payload_bits: int
    throughput_series: np.ndarray
    mean_throughput: float
    offered: int
    delivered: int
    failed: int
    buffered: int
    in_flight: int
    mcs_usage: np.ndarray
    events: list[Event]
    partial: bool = False
    halfduplex_reads: int = 0
    halfduplex_violations: int = 0
    handcrafted: list = field(default_factory=list)

    @property
    def duration_s(self) -> float:
        return (self.end_slot - self.start_slot) * self.slot_us * 1e-6

    @property
    def delivered_bits(self) -> int:
        return self.delivered * self.payload_bits

    def summary(self) -> dict:
        return {
            "policy": self.policy, "seed": self.seed, "run_index": self.run_index,
            "duration_s": self.duration_s, "mean_throughput_bps": self.mean_throughput,
            "offered": self.offered, "delivered": self.delivered, "failed": self.failed,
            "buffered": self.buffered, "partial": self.partial,
            "mcs_usage": [int(c) for c in self.mcs_usage],
        }


def measure_throughput(events, window_s: float, slot_us: float, start_slot: int,
                       end_slot: int, payload_bits: int) -> np.ndarray:
    """Delivered bits per second in consecutive left-closed windows.

    A packet counts at the end of its last airtime slot; the final boundary of
    the run belongs to the last window.
    """
    duration_us = (end_slot - start_slot) * slot_us
    window_us = window_s * 1e6
    n_windows = max(1, math.ceil(duration_us / window_us - 1e-12))
    bits = np.zeros(n_windows)
    for ev in events:
        if not ev.success:
            continue
        t_us = (ev.completion - start_slot + 1) * slot_us
        bits[min(int(t_us // window_us), n_windows - 1)] += payload_bits
    return bits / window_s


def _arrival_slots(cfg: SimConfig, rng: np.random.Generator, start: int, end: int) -> np.ndarray:
    if cfg.saturated or cfg.lambda_arrivals == 0:
        return np.zeros(0, dtype=np.int64)
    p = cfg.lambda_arrivals / cfg.mtxop
    if p > 1:
        raise ValueError(f"arrival probability per slot {p:.3f} > 1; use saturated=True")
    hits = rng.random(end - start) < p
    return start + np.flatnonzero(hits)


def run_simulation(cfg: SimConfig, trace=None, model=None, *, run_index: int = 0,
                   instrument: bool = False) -> SimResult:
    """Simulate one policy over a trace.

    Per slot: arrivals join an unbounded FIFO; while it is non-empty and the
    device is not on the air the policy is consulted. A transmission is scored
    against the real trace over its airtime; learned policies then receive
    handcrafted readings for those slots.
    """
    if trace is None:
        if cfg.trace_path is None:
            raise ValueError("no trace given")
        from .trace import load_slot_trace
        trace = load_slot_trace(cfg.trace_path)
    if model is None and cfg.model_path is not None:
        from .nn import load_model
        model = load_model(cfg.model_path)
    rssi_full = np.asarray(getattr(trace, "rssi", trace), dtype=np.float64)
    slot_us = getattr(trace, "slot_us", cfg.budget.slot_us)

    budget, table = cfg.budget, cfg.table
    durations = duration_table(table, budget)
    start = (3 * cfg.mtxop - 1) if cfg.start_slot is None else cfg.start_slot
    end = len(rssi_full) if cfg.duration_slots is None else start + cfg.duration_slots
    partial = end > len(rssi_full)
    end = min(end, len(rssi_full))
    if end <= start:
        raise ValueError(f"trace of {len(rssi_full)} slots does not reach past start {start}")
    rssi = rssi_full[:end]

    arr_seq, pol_seq = np.random.SeedSequence([cfg.seed, run_index]).spawn(2)
    arrivals = _arrival_slots(cfg, np.random.default_rng(arr_seq), start, end)
    obs = Observation(rssi, instrument)
    ctx = SimContext(rssi, obs, budget, table, np.random.default_rng(pol_seq), cfg.params, model)
    policy = make_policy(cfg.policy)
    policy.bind(ctx)
    if policy.warmup_slots > start:
        raise ValueError(f"policy {cfg.policy} needs {policy.warmup_slots} history slots, "
                         f"run starts at {start}")
    csum = prefix_sum(rssi)

    events: list[Event] = []
    usage = np.zeros(table.n_mcs, dtype=np.int64)
    delivered = failed = 0
    ai = 0  # arrivals absorbed so far
    pending = 0
    t = start
    while t < end:
        j = int(np.searchsorted(arrivals, t, side="right"))
        pending += j - ai
        ai = j
        if not cfg.saturated and pending == 0:
            if ai >= len(arrivals):
                break
            t = int(arrivals[ai])
            continue
        hit = policy.next_transmission(t, end)
        if hit is None:
            break
        s, mcs = hit
        d = int(durations[mcs])
        if s + d > end - 1:
            break
        mean = (csum[s + d + 1] - csum[s + 1]) / d
        success = bool(budget.p_r_dbm - mean >= table.sinr_min_db[mcs] - SINR_TOL_DB)
        if instrument:
            ok, _ = transmission_outcome(rssi[s + 1:s + d + 1], table.entry(mcs), budget)
            assert ok == success, f"outcome mismatch at slot {s}"
        obs.mark_transmission(s, d)
        events.append(Event(int(s), int(mcs), success, int(s + d)))
        usage[mcs] += 1
        if success:
            delivered += 1
        else:
            failed += 1
        if not cfg.saturated:
            pending -= 1
        policy.on_result(s, mcs, success)
        if instrument and not cfg.saturated:
            k = int(np.searchsorted(arrivals, s, side="right"))
            assert delivered + failed + (pending + k - ai) == k, "packet conservation violated"
        t = s + d + policy.resume_offset

    total_arrivals = len(arrivals)
    if cfg.saturated:
        offered, buffered = delivered + failed, 0
    else:
        offered = total_arrivals
        buffered = total_arrivals - delivered - failed
    series = measure_throughput(events, cfg.measure_window_s, slot_us, start, end,
                                budget.payload_bits)
    duration_s = (end - start) * slot_us * 1e-6
    return SimResult(
        policy=cfg.policy, seed=cfg.seed, run_index=run_index, start_slot=start, end_slot=end,
        slot_us=slot_us, payload_bits=budget.payload_bits, throughput_series=series,
        mean_throughput=delivered * budget.payload_bits / duration_s, offered=offered,
        delivered=delivered, failed=failed, buffered=buffered, in_flight=0, mcs_usage=usage,
        events=events, partial=partial, halfduplex_reads=obs.reads,
        halfduplex_violations=obs.violations, handcrafted=obs.handcrafted,
    )


@dataclass
class RunStats:
    policy: str
    results: list[SimResult]

    @property
    def means(self) -> np.ndarray:
        return np.array([r.mean_throughput for r in self.results])

    @property
    def mean(self) -> float:
        return float(self.means.mean())

    @property
    def std(self) -> float:
        return float(self.means.std())

    @property
    def mean_series(self) -> np.ndarray:
        return np.mean([r.throughput_series for r in self.results], axis=0)


def multi_run(cfg: SimConfig, n_runs: int, trace=None, model=None,
              instrument: bool = False) -> RunStats:
    """Independent runs that differ only in their derived seeds."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    return RunStats(cfg.policy, [run_simulation(cfg, trace, model, run_index=k,
                                                instrument=instrument)
                                 for k in range(n_runs)])


@dataclass
class Comparison:
    stats: dict[str, RunStats]
    #: requested policy order, duplicates kept
    order: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.order:
            self.order = list(self.stats)

    def rows(self) -> list[dict]:
        return [{"policy": name, "mean_bps": self.stats[name].mean,
                 "std_bps": self.stats[name].std, "runs": len(self.stats[name].results)}
                for name in self.order]

    def mean(self, policy: str) -> float:
        return self.stats[policy].mean

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "mean_mbps", "std_mbps", "runs"])
            for r in self.rows():
                w.writerow([r["policy"], f"{r['mean_bps'] / 1e6:.6f}",
                            f"{r['std_bps'] / 1e6:.6f}", r["runs"]])

    def write_series_csv(self, path, window_s: float) -> None:
        names = list(self.stats)
        series = [self.stats[n].mean_series for n in names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window", "t_start_s"] + [f"{n}_mbps" for n in names])
            for k in range(len(series[0])):
                w.writerow([k, f"{k * window_s:g}"] + [f"{s[k] / 1e6:.6f}" for s in series])


def compare_policies(trace, policies, cfg: SimConfig, n_runs: int = 1, model=None) -> Comparison:
    """Run every policy on the same trace with identical arrival sequences.

    A policy listed twice is simulated once and reported twice.
    """
    stats = {}
    for name in policies:
        if name not in stats:
            stats[name] = multi_run(cfg.replace(policy=name), n_runs, trace, model)
    return Comparison(stats, list(policies))


# ---------------------------------------------------------------- config / output files

def load_config(path) -> SimConfig:
    """Read an INI file with optional ``[sim]``, ``[link]`` and ``[policy]`` sections."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    sim = cp["sim"] if cp.has_section("sim") else {}
    link = cp["link"] if cp.has_section("link") else {}
    pol = cp["policy"] if cp.has_section("policy") else {}

    def opt(sec, key, conv, default=None):
        return conv(sec[key]) if key in sec and sec[key] != "" else default

    params = PolicyParams()
    for f in fields(PolicyParams):
        if f.name in pol:
            cur = getattr(params, f.name)
            raw = pol[f.name]
            if isinstance(cur, bool):
                val = raw.strip().lower() in ("1", "true", "yes", "on")
            elif f.name == "gopt_horizon":
                val = int(raw) if raw else None
            else:
                val = type(cur)(raw)
            setattr(params, f.name, val)
    table_path = opt(sim, "mcs_table", str)
    return SimConfig(
        policy=opt(sim, "policy", str, "dlmac"),
        params=params,
        budget=LinkBudget(opt(link, "p_r_dbm", float, -60.0), opt(link, "slot_us", float, 9.0),
                          opt(link, "payload_bytes", int, 1500)),
        table=McsTable.from_config(table_path) if table_path else McsTable.default(),
        mtxop_slots=opt(sim, "mtxop_slots", int),
        lambda_arrivals=opt(sim, "lambda", float, 0.18),
        saturated=opt(sim, "saturated", lambda v: v.strip().lower() in ("1", "true", "yes"),
                      False),
        seed=opt(sim, "seed", int, 0),
        measure_window_s=opt(sim, "measure_window_s", float, 2.0),
        start_slot=opt(sim, "start_slot", int),
        duration_slots=opt(sim, "duration_slots", int),
        trace_path=opt(sim, "trace", str),
        model_path=opt(sim, "model", str),
    )


def write_event_log(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "action", "mcs", "outcome", "completion"])
        for ev in result.events:
            w.writerow([ev.slot, "transmit", ev.mcs, "success" if ev.success else "failure",
                        ev.completion])


def write_series(result: SimResult, path, window_s: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "t_start_s", "throughput_bps"])
        for k, v in enumerate(result.throughput_series):
            w.writerow([k, f"{k * window_s:g}", f"{v:.3f}"])


def write_summary(result: SimResult, path) -> None:
    Path(path).write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")


def handcrafted_within_bounds(result: SimResult, budget: LinkBudget, table: McsTable,
                              sinr_floor_db: float = 0.0) -> bool:
    for mcs, success, vals in result.handcrafted:
        lo, hi = handcraft_interval(mcs, success, budget, table, sinr_floor_db)
        if len(vals) and (vals.min() < lo or vals.max() > hi):
            return False
    return True


DEFAULT_POLICIES = POLICY_ORDER
