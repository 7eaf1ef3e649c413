"""MAC policies as mini-slot state machines.

Every policy answers the same question each slot: stay idle, or transmit the
head-of-line packet now with some MCS. A decision at slot ``t`` puts the packet
on the air over slots ``t+1 .. t+D``.

Policies:

* ``csma-arf``, ``csma-iwl``: carrier sense with binary exponential backoff,
  rate from ARF or a Minstrel-style sampler (stand-in for IWL).
* ``csma-dlmcs``: carrier sense for access, network picks the MCS.
* ``dlca-iwl``: network decides access only, sampler picks the MCS.
* ``dlmac``: network decides access and MCS jointly.
* ``gopt``: oracle with the whole future trace; finishes each packet at the
  earliest possible slot.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .nn import PolicyModel, predict_proba
from .phy import (SINR_TOL_DB, LinkBudget, McsTable, duration_table, rssi_from_sinr)


@dataclass(frozen=True)
class PolicyDecision:
    action: str = "idle"
    mcs_index: int | None = None

    def __post_init__(self):
        if self.action == "idle":
            if self.mcs_index is not None:
                raise ValueError("idle decision carries no MCS")
        elif self.action == "transmit":
            if self.mcs_index is None or self.mcs_index < 0:
                raise ValueError("transmit decision needs an MCS index >= 0")
        else:
            raise ValueError(f"unknown action {self.action!r}")

    @property
    def transmit(self) -> bool:
        return self.action == "transmit"

    @classmethod
    def from_index(cls, index: int) -> "PolicyDecision":
        return IDLE if index < 0 else cls("transmit", int(index))


IDLE = PolicyDecision()


# ---------------------------------------------------------------- CSMA/CA

SENSING, BACKOFF, READY = "sensing", "backoff", "ready"
_PHASE_CODE = {SENSING: 0, BACKOFF: 1}


@dataclass
class CsmaState:
    cw_min: int = 16
    cw_max: int = 1024
    difs_slots: int = 4
    busy_threshold_dbm: float = -75.0
    cw: int = 0
    backoff: int = 0
    difs_remaining: int = 0
    phase: str = SENSING

    def __post_init__(self):
        if self.cw == 0:
            self.cw = self.cw_min
        if not self.cw_min <= self.cw <= self.cw_max:
            raise ValueError("need cw_min <= cw <= cw_max")
        if self.phase == SENSING and self.difs_remaining == 0:
            self.difs_remaining = self.difs_slots
            if self.difs_slots == 0:
                self.phase = BACKOFF


def new_csma_state(rng: np.random.Generator, **params) -> CsmaState:
    st = CsmaState(**params)
    st.backoff = int(rng.integers(st.cw))
    return st


def csma_step(state: CsmaState, current_rssi_dbm: float) -> bool:
    """Advance one slot; True when access is granted in this slot."""
    if current_rssi_dbm >= state.busy_threshold_dbm:
        state.phase = SENSING if state.difs_slots else BACKOFF
        state.difs_remaining = state.difs_slots
        return False
    if state.phase == SENSING:
        state.difs_remaining -= 1
        if state.difs_remaining <= 0:
            state.phase = BACKOFF
        return False
    if state.phase == READY or state.backoff == 0:
        state.phase = READY
        return True
    state.backoff -= 1
    return False


def csma_on_result(state: CsmaState, success: bool, rng: np.random.Generator) -> None:
    """Binary exponential backoff bookkeeping after a transmission."""
    state.cw = state.cw_min if success else min(2 * state.cw, state.cw_max)
    state.backoff = int(rng.integers(state.cw))
    state.difs_remaining = state.difs_slots
    state.phase = SENSING if state.difs_slots else BACKOFF


# ---------------------------------------------------------------- rate adaptation

@dataclass
class ArfState:
    current_mcs: int = 0
    consecutive_successes: int = 0
    consecutive_failures: int = 0
    up_threshold: int = 10
    down_threshold: int = 2
    max_mcs: int = 8


def arf_update(state: ArfState, success: bool) -> None:
    if success:
        state.consecutive_failures = 0
        state.consecutive_successes += 1
        if state.consecutive_successes >= state.up_threshold:
            state.current_mcs = min(state.current_mcs + 1, state.max_mcs)
            state.consecutive_successes = 0
    else:
        state.consecutive_successes = 0
        state.consecutive_failures += 1
        if state.consecutive_failures >= state.down_threshold:
            state.current_mcs = max(state.current_mcs - 1, 0)
            state.consecutive_failures = 0


@dataclass
class IwlState:
    """Minstrel-style sampler: EWMA success per MCS, periodic random probes."""
    rates_mbps: np.ndarray
    alpha: float = 0.25
    probe_interval: int = 10
    ewma: np.ndarray = None
    attempts: np.ndarray = None
    packets_since_probe: int = 0

    def __post_init__(self):
        self.rates_mbps = np.asarray(self.rates_mbps, dtype=np.float64)
        k = len(self.rates_mbps)
        if self.ewma is None:
            self.ewma = np.ones(k)
        if self.attempts is None:
            self.attempts = np.zeros(k, dtype=np.int64)

    def best(self) -> int:
        return int(np.argmax(self.ewma * self.rates_mbps))


def iwl_select(state: IwlState, rng: np.random.Generator) -> int:
    state.packets_since_probe += 1
    best = state.best()
    if state.probe_interval and state.packets_since_probe >= state.probe_interval:
        state.packets_since_probe = 0
        others = [m for m in range(len(state.rates_mbps)) if m != best]
        return int(rng.choice(others))
    return best


def iwl_update(state: IwlState, mcs: int, success: bool) -> None:
    state.ewma[mcs] = (1 - state.alpha) * state.ewma[mcs] + state.alpha * float(success)
    state.attempts[mcs] += 1


# ---------------------------------------------------------------- learned policy

@dataclass
class DlMacState:
    model: PolicyModel
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    rssi_queue: deque = None

    def __post_init__(self):
        if self.rssi_queue is None:
            self.rssi_queue = deque(maxlen=self.model.spec.input_dim)

    @property
    def warm(self) -> bool:
        return len(self.rssi_queue) == self.rssi_queue.maxlen


def dlmac_decide(state: DlMacState, current_rssi: float) -> PolicyDecision:
    """Append the new reading and act on the network's arg-max class.

    Stays idle while the queue is still filling up.
    """
    state.rssi_queue.append(float(current_rssi))
    if not state.warm:
        return IDLE
    probs = predict_proba(state.model, np.asarray(state.rssi_queue)[None, :])
    return PolicyDecision.from_index(int(np.argmax(probs[0])) - 1)


def handcraft_rssi(mcs_used: int, success: bool, budget: LinkBudget, table: McsTable,
                   n_slots: int, rng: np.random.Generator,
                   sinr_floor_db: float = 0.0) -> np.ndarray:
    """Stand-in readings for slots the device spent transmitting.

    Success: uniform between the RSSI at the top MCS threshold and the RSSI at
    the used MCS threshold. Failure: uniform between the RSSI at the next lower
    MCS threshold (the floor for MCS 0) and the RSSI at the SINR floor.
    """
    lo, hi = handcraft_interval(mcs_used, success, budget, table, sinr_floor_db)
    return rng.uniform(lo, hi, n_slots)


def handcraft_interval(mcs_used: int, success: bool, budget: LinkBudget, table: McsTable,
                       sinr_floor_db: float = 0.0) -> tuple[float, float]:
    if not 0 <= mcs_used < table.n_mcs:
        raise ValueError(f"MCS {mcs_used} out of range")
    smin = table.sinr_min_db
    if success:
        return float(rssi_from_sinr(smin[-1], budget)), float(rssi_from_sinr(smin[mcs_used], budget))
    lower = smin[mcs_used - 1] if mcs_used > 0 else sinr_floor_db
    return float(rssi_from_sinr(lower, budget)), float(rssi_from_sinr(sinr_floor_db, budget))


# ---------------------------------------------------------------- oracle

def prefix_sum(rssi) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(np.asarray(rssi, dtype=np.float64))))


def gopt_decide(trace, t: int, budget: LinkBudget, table: McsTable, horizon: int | None = None,
                csum: np.ndarray | None = None):
    """Earliest-completing feasible ``(start, mcs)`` with start in ``[t, t+horizon]``.

    Ties go to the higher MCS, then the earlier start. Returns None when no
    pair succeeds (the caller waits one slot and asks again).
    """
    rssi = np.asarray(getattr(trace, "rssi", trace), dtype=np.float64)
    durations = duration_table(table, budget)
    if horizon is None:
        horizon = int(durations[0])
    if t < 0 or t + durations.min() > len(rssi) - 1:
        raise ValueError(f"slot {t}: not enough trace left for any transmission")
    if csum is None:
        csum = prefix_sum(rssi)
    s, i = kernels.gopt_decide(csum, int(t), int(horizon), durations, float(budget.p_r_dbm),
                               table.sinr_min_db, SINR_TOL_DB)
    return None if s < 0 else (int(s), int(i))


# ---------------------------------------------------------------- simulation policies

class Observation:
    """The device's own view of the channel.

    Starts as the real trace; slots the device spent transmitting are
    overwritten by handcrafted values once the transmission ends. With
    ``instrument=True`` every consumed read is checked against the device's
    transmission slots and real-value reads there are counted as violations.
    """

    def __init__(self, rssi, instrument: bool = False):
        self.values = np.array(rssi, dtype=np.float64)
        self.instrument = instrument
        self.real = np.ones(len(self.values), dtype=bool)
        self.tx = np.zeros(len(self.values), dtype=bool) if instrument else None
        self.reads = 0
        self.violations = 0
        self.handcrafted: list[tuple[int, bool, np.ndarray]] = []

    def log_read(self, lo: int, hi: int) -> None:
        if self.instrument:
            lo = max(lo, 0)
            self.reads += 1
            self.violations += int(np.count_nonzero(self.real[lo:hi] & self.tx[lo:hi]))

    def value(self, k: int) -> float:
        self.log_read(k, k + 1)
        return float(self.values[k])

    def window(self, end: int, width: int) -> np.ndarray:
        self.log_read(end - width + 1, end + 1)
        return self.values[end - width + 1:end + 1]

    def mark_transmission(self, s: int, d: int) -> None:
        if self.instrument:
            self.tx[s + 1:s + 1 + d] = True

    def backfill(self, s: int, values: np.ndarray, mcs: int, success: bool) -> None:
        self.values[s + 1:s + 1 + len(values)] = values
        self.real[s + 1:s + 1 + len(values)] = False
        if self.instrument:
            self.handcrafted.append((mcs, success, np.array(values)))


@dataclass
class PolicyParams:
    cw_min: int = 16
    cw_max: int = 1024
    difs_slots: int = 4
    busy_threshold_dbm: float = -75.0
    arf_up: int = 10
    arf_down: int = 2
    arf_initial_mcs: int = 0
    iwl_alpha: float = 0.25
    iwl_probe_interval: int = 10
    sinr_floor_db: float = 0.0
    gopt_horizon: int | None = None
    backfill: bool = True


@dataclass
class SimContext:
    """Everything a policy may touch during one run."""
    rssi: np.ndarray
    obs: Observation
    budget: LinkBudget
    table: McsTable
    rng: np.random.Generator
    params: PolicyParams
    model: PolicyModel | None = None

    def __post_init__(self):
        self.durations = duration_table(self.table, self.budget)
        self._csum = None

    @property
    def csum(self) -> np.ndarray:
        if self._csum is None:
            self._csum = prefix_sum(self.rssi)
        return self._csum


class Policy:
    name = "policy"
    uses_model = False
    #: offset from the last airtime slot at which the policy is consulted again
    resume_offset = 0
    backfills = False

    def bind(self, ctx: SimContext) -> None:
        self.ctx = ctx

    @property
    def warmup_slots(self) -> int:
        return 0

    def decide(self, t: int) -> PolicyDecision:
        raise NotImplementedError

    def next_transmission(self, t: int, end: int):
        """First ``(slot, mcs)`` at or after ``t`` where the policy transmits."""
        for k in range(t, end):
            d = self.decide(k)
            if d.transmit:
                return k, d.mcs_index
        return None

    def on_result(self, s: int, mcs: int, success: bool) -> None:
        ctx = self.ctx
        if self.backfills and ctx.params.backfill:
            d = int(ctx.durations[mcs])
            vals = handcraft_rssi(mcs, success, ctx.budget, ctx.table, d, ctx.rng,
                                  ctx.params.sinr_floor_db)
            ctx.obs.backfill(s, vals, mcs, success)


class _ModelMixin:
    uses_model = True
    backfills = True

    def bind(self, ctx):
        super().bind(ctx)
        if ctx.model is None:
            raise ValueError(f"policy {self.name} needs a trained model")
        self.width = ctx.model.spec.input_dim

    @property
    def warmup_slots(self) -> int:
        return self.ctx.model.spec.input_dim - 1

    def class_probs(self, ends) -> np.ndarray:
        values = self.ctx.obs.values
        view = np.lib.stride_tricks.sliding_window_view(values, self.width)
        return predict_proba(self.ctx.model, view[np.asarray(ends) - self.width + 1])

    def first_access(self, t: int, end: int):
        """Scan forward in growing batches for the first non-idle arg-max."""
        k, chunk = t, 8
        while k < end:
            hi = min(k + chunk, end)
            cls = self.class_probs(np.arange(k, hi)).argmax(axis=1)
            nz = np.flatnonzero(cls)
            if len(nz):
                s = k + int(nz[0])
                self.ctx.obs.log_read(t - self.width + 1, s + 1)
                return s, int(cls[nz[0]])
            k = hi
            chunk = min(2 * chunk, 1024)
        self.ctx.obs.log_read(t - self.width + 1, end)
        return None


class _CsmaMixin:
    resume_offset = 1

    def bind(self, ctx):
        super().bind(ctx)
        p = ctx.params
        self.csma = new_csma_state(ctx.rng, cw_min=p.cw_min, cw_max=p.cw_max,
                                   difs_slots=p.difs_slots,
                                   busy_threshold_dbm=p.busy_threshold_dbm)

    def select_mcs(self, t: int) -> int:
        raise NotImplementedError

    def decide(self, t):
        if csma_step(self.csma, self.ctx.obs.value(t)):
            return PolicyDecision("transmit", self.select_mcs(t))
        return IDLE

    def next_transmission(self, t, end):
        st = self.csma
        phase = _PHASE_CODE.get(st.phase, 1)
        grant, phase, difs, backoff = kernels.csma_scan(
            self.ctx.obs.values, t, end, st.busy_threshold_dbm, st.difs_slots, phase,
            st.difs_remaining, st.backoff)
        st.difs_remaining, st.backoff = int(difs), int(backoff)
        st.phase = SENSING if phase == 0 else BACKOFF
        if grant < 0:
            self.ctx.obs.log_read(t, end)
            return None
        st.phase = READY
        self.ctx.obs.log_read(t, grant + 1)
        return grant, self.select_mcs(grant)

    def on_result(self, s, mcs, success):
        csma_on_result(self.csma, success, self.ctx.rng)
        super().on_result(s, mcs, success)


class _IwlMixin:
    def bind(self, ctx):
        super().bind(ctx)
        self.iwl = IwlState(ctx.table.rates_mbps, ctx.params.iwl_alpha,
                            ctx.params.iwl_probe_interval)

    def pick_rate(self) -> int:
        return iwl_select(self.iwl, self.ctx.rng)

    def on_result(self, s, mcs, success):
        iwl_update(self.iwl, mcs, success)
        super().on_result(s, mcs, success)


class CsmaArf(_CsmaMixin, Policy):
    name = "csma-arf"

    def bind(self, ctx):
        super().bind(ctx)
        p = ctx.params
        self.arf = ArfState(p.arf_initial_mcs, up_threshold=p.arf_up, down_threshold=p.arf_down,
                            max_mcs=ctx.table.n_mcs - 1)

    def select_mcs(self, t):
        return self.arf.current_mcs

    def on_result(self, s, mcs, success):
        arf_update(self.arf, success)
        super().on_result(s, mcs, success)


class CsmaIwl(_IwlMixin, _CsmaMixin, Policy):
    name = "csma-iwl"

    def select_mcs(self, t):
        return self.pick_rate()


class CsmaDlMcs(_ModelMixin, _CsmaMixin, Policy):
    name = "csma-dlmcs"

    def select_mcs(self, t):
        self.ctx.obs.log_read(t - self.width + 1, t + 1)
        probs = self.class_probs([t])[0]
        return int(np.argmax(probs[1:]))


class DlCaIwl(_IwlMixin, _ModelMixin, Policy):
    name = "dlca-iwl"

    def decide(self, t):
        self.ctx.obs.log_read(t - self.width + 1, t + 1)
        if self.class_probs([t])[0].argmax() == 0:
            return IDLE
        return PolicyDecision("transmit", self.pick_rate())

    def next_transmission(self, t, end):
        hit = self.first_access(t, end)
        return None if hit is None else (hit[0], self.pick_rate())


class DlMac(_ModelMixin, Policy):
    name = "dlmac"

    def decide(self, t):
        self.ctx.obs.log_read(t - self.width + 1, t + 1)
        return PolicyDecision.from_index(int(self.class_probs([t])[0].argmax()) - 1)

    def next_transmission(self, t, end):
        hit = self.first_access(t, end)
        return None if hit is None else (hit[0], hit[1] - 1)


class Gopt(Policy):
    name = "gopt"

    def bind(self, ctx):
        super().bind(ctx)
        h = ctx.params.gopt_horizon
        self.horizon = int(ctx.durations[0]) if h is None else int(h)

    def _args(self):
        ctx = self.ctx
        return (ctx.durations, float(ctx.budget.p_r_dbm), ctx.table.sinr_min_db, SINR_TOL_DB)

    def decide(self, t):
        if t + self.ctx.durations.min() > len(self.ctx.rssi) - 1:
            return IDLE
        s, i = kernels.gopt_decide(self.ctx.csum, t, self.horizon, *self._args())
        return PolicyDecision("transmit", int(i)) if s == t else IDLE

    def next_transmission(self, t, end):
        s, i = kernels.gopt_next(self.ctx.csum, t, self.horizon, *self._args())
        if s < 0 or s >= end:
            return None
        return int(s), int(i)


POLICIES = {cls.name: cls for cls in (CsmaArf, CsmaIwl, CsmaDlMcs, DlCaIwl, DlMac, Gopt)}
POLICY_ORDER = ["gopt", "dlmac", "dlca-iwl", "csma-dlmcs", "csma-iwl", "csma-arf"]


def make_policy(name: str) -> Policy:
    try:
        return POLICIES[name]()
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
