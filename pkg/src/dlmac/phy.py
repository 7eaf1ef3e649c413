"""MCS table, RSSI/SINR conversion, airtime and the threshold success model."""
from __future__ import annotations

import configparser
import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

# Comparisons against an MCS threshold accept this much rounding slack (dB).
# Window means are computed both directly and from prefix sums; the slack keeps
# the two routes in agreement at exact boundaries.
SINR_TOL_DB = 1e-6

IDLE_INDEX = -1


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation: str
    coding_rate: Fraction | None
    rate_mbps: float
    sinr_min_db: float
    sinr_max_db: float

    @property
    def is_idle(self) -> bool:
        return self.index == IDLE_INDEX


_DEFAULT_ROWS = [
    # index, modulation, coding rate, Mbps, min SINR (dB)
    (0, "BPSK", "1/2", 6.5, 9.0),
    (1, "QPSK", "1/2", 13.0, 10.0),
    (2, "QPSK", "3/4", 19.5, 12.0),
    (3, "16-QAM", "1/2", 26.0, 15.0),
    (4, "16-QAM", "3/4", 39.0, 18.0),
    (5, "64-QAM", "2/3", 52.0, 21.0),
    (6, "64-QAM", "3/4", 58.5, 23.0),
    (7, "64-QAM", "5/6", 65.0, 24.0),
    (8, "256-QAM", "3/4", 78.0, 28.0),
]


class McsTable:
    """Ordered MCS entries, idle row first.

    Rows are built from ``(index, modulation, coding, rate, sinr_min)`` tuples;
    each row's upper SINR bound is the next row's lower bound.
    """

    def __init__(self, rows):
        rows = sorted(rows, key=lambda r: r[0])
        if [r[0] for r in rows] != list(range(len(rows))):
            raise ValueError("MCS indices must be 0..K-1 without gaps")
        mins = [float(r[4]) for r in rows]
        rates = [float(r[3]) for r in rows]
        if any(b <= a for a, b in zip(mins, mins[1:])):
            raise ValueError("MCS SINR thresholds must be strictly increasing")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("MCS rates must be strictly increasing")
        if rates[0] <= 0:
            raise ValueError("MCS rates must be positive")
        idle = McsEntry(IDLE_INDEX, "IDLE", None, 0.0, -math.inf, mins[0])
        entries = [idle]
        for k, (idx, mod, coding, rate, smin) in enumerate(rows):
            smax = mins[k + 1] if k + 1 < len(rows) else math.inf
            cr = Fraction(coding) if coding not in (None, "", "/") else None
            entries.append(McsEntry(idx, mod, cr, float(rate), float(smin), smax))
        self.entries: tuple[McsEntry, ...] = tuple(entries)
        self.rates_mbps = np.array(rates)
        self.sinr_min_db = np.array(mins)

    @classmethod
    def default(cls) -> "McsTable":
        return cls(_DEFAULT_ROWS)

    @classmethod
    def from_config(cls, path) -> "McsTable":
        """Read an INI file with one ``[mcs.K]`` section per row.

        Keys: ``modulation``, ``coding_rate`` (e.g. ``3/4``), ``rate_mbps``,
        ``sinr_min_db``.
        """
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        rows = []
        for section in cp.sections():
            if not section.startswith("mcs."):
                continue
            sec = cp[section]
            rows.append((
                int(section.split(".", 1)[1]),
                sec.get("modulation", ""),
                sec.get("coding_rate", ""),
                sec.getfloat("rate_mbps"),
                sec.getfloat("sinr_min_db"),
            ))
        if not rows:
            raise ValueError(f"{path}: no [mcs.K] sections")
        return cls(rows)

    def to_config(self, path) -> None:
        cp = configparser.ConfigParser()
        for e in self.data_entries:
            cp[f"mcs.{e.index}"] = {
                "modulation": e.modulation,
                "coding_rate": str(e.coding_rate) if e.coding_rate else "",
                "rate_mbps": repr(e.rate_mbps),
                "sinr_min_db": repr(e.sinr_min_db),
            }
        with open(path, "w") as fh:
            cp.write(fh)

    @property
    def data_entries(self) -> tuple[McsEntry, ...]:
        return self.entries[1:]

    @property
    def n_mcs(self) -> int:
        return len(self.entries) - 1

    @property
    def n_classes(self) -> int:
        return len(self.entries)

    def entry(self, index: int) -> McsEntry:
        if not IDLE_INDEX <= index < self.n_mcs:
            raise IndexError(f"MCS index {index} out of range")
        return self.entries[index + 1]


@dataclass(frozen=True)
class LinkBudget:
    p_r_dbm: float = -60.0
    slot_us: float = 9.0
    payload_bytes: int = 1500

    def __post_init__(self):
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")
        if not self.slot_us > 0:
            raise ValueError("slot_us must be positive")

    @property
    def payload_bits(self) -> int:
        return self.payload_bytes * 8


def sinr_from_rssi(avg_rssi_dbm, budget: LinkBudget):
    return budget.p_r_dbm - avg_rssi_dbm


def rssi_from_sinr(sinr_db, budget: LinkBudget):
    return budget.p_r_dbm - sinr_db


def mcs_for_sinr(sinr_db: float, table: McsTable) -> McsEntry:
    """Entry whose ``[sinr_min, sinr_max)`` range holds ``sinr_db``."""
    k = bisect_right(table.sinr_min_db.tolist(), sinr_db + SINR_TOL_DB)
    return table.entries[k]


def mcs_indices_for_sinr(sinr_db, table: McsTable) -> np.ndarray:
    """Vectorised :func:`mcs_for_sinr`, returning indices (-1 for idle)."""
    s = np.asarray(sinr_db, dtype=np.float64)
    return np.searchsorted(table.sinr_min_db, s + SINR_TOL_DB, side="right") - 1


def packet_duration_slots(mcs: McsEntry, budget: LinkBudget) -> int:
    if mcs.is_idle:
        raise ValueError("idle entry has no airtime")
    bits = Fraction(budget.payload_bits)
    per_slot = Fraction(str(mcs.rate_mbps)) * Fraction(str(budget.slot_us))
    return math.ceil(bits / per_slot)


def duration_table(table: McsTable, budget: LinkBudget) -> np.ndarray:
    """Airtime in slots for MCS 0..K-1."""
    return np.array([packet_duration_slots(e, budget) for e in table.data_entries],
                    dtype=np.int64)


def mtxop_slots(table: McsTable, budget: LinkBudget) -> int:
    """Airtime of the slowest MCS."""
    return packet_duration_slots(table.entry(0), budget)


def rssi_limits(table: McsTable, budget: LinkBudget) -> np.ndarray:
    """Largest mean window RSSI (dBm) at which each MCS still succeeds."""
    return rssi_from_sinr(table.sinr_min_db, budget)


def transmission_outcome(window, mcs: McsEntry, budget: LinkBudget,
                         table: McsTable | None = None) -> tuple[bool, float]:
    """Score one transmission against the RSSI it overlapped.

    Returns ``(success, realized_sinr_db)``; success iff the realized SINR of
    the dBm-averaged window reaches the entry's lower threshold.
    """
    window = np.asarray(window, dtype=np.float64)
    expected = packet_duration_slots(mcs, budget)
    if window.ndim != 1 or len(window) != expected:
        raise ValueError(f"window has {window.size} slots, MCS {mcs.index} needs {expected}")
    sinr = float(sinr_from_rssi(window.mean(), budget))
    return sinr >= mcs.sinr_min_db - SINR_TOL_DB, sinr


def load_budget(path) -> LinkBudget:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    sec = cp["link"] if cp.has_section("link") else cp[cp.default_section]
    return LinkBudget(
        p_r_dbm=sec.getfloat("p_r_dbm", -60.0),
        slot_us=sec.getfloat("slot_us", 9.0),
        payload_bytes=sec.getint("payload_bytes", 1500),
    )


def default_table_path() -> Path:
    return Path(__file__).with_name("mcs_table.ini")
