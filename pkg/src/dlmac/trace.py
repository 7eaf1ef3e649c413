"""Spectrum trace ingestion, per-channel preprocessing and synthetic traces."""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RSSI_MIN_DBM = -120.0
RSSI_MAX_DBM = 0.0
SUBBANDS_PER_CHANNEL = 20

_SLOT_MAGIC = b"DLMACST\x00"
_SLOT_VERSION = 1


class TraceFormatError(ValueError):
    """A trace file does not follow the expected layout."""


@dataclass
class RawTrace:
    samples: np.ndarray  # (L, n_subbands) dBm
    sample_interval_us: float = 100.0
    band_start_mhz: int = 2400
    n_subbands: int = 83

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError("samples must be a non-empty 2-D matrix")
        if self.samples.shape[1] != self.n_subbands:
            raise ValueError(f"expected {self.n_subbands} sub-band columns, "
                             f"got {self.samples.shape[1]}")
        _check_range(self.samples)
        if not self.sample_interval_us > 0:
            raise ValueError("sample_interval_us must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def header(self) -> list[str]:
        return ["t_us"] + [f"f{self.band_start_mhz + k}" for k in range(self.n_subbands)]


@dataclass
class SlotTrace:
    rssi: np.ndarray
    slot_us: float = 9.0
    channel_id: int = 6
    origin: str = ""

    def __post_init__(self):
        self.rssi = np.asarray(self.rssi, dtype=np.float64)
        if self.rssi.ndim != 1:
            raise ValueError("rssi must be a vector")
        _check_range(self.rssi)
        if not self.slot_us > 0:
            raise ValueError("slot_us must be positive")
        if not 1 <= self.channel_id <= 13:
            raise ValueError(f"channel_id {self.channel_id} outside 1..13")

    def __len__(self) -> int:
        return len(self.rssi)

    @property
    def duration_s(self) -> float:
        return len(self) * self.slot_us * 1e-6


@dataclass
class Interferer:
    period_slots: int
    duty_cycle: float
    power_dbm: float
    jitter_slots: int = 0

    def __post_init__(self):
        if self.period_slots < 1:
            raise ValueError("period_slots must be >= 1")
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must lie in [0, 1]")
        if self.jitter_slots < 0:
            raise ValueError("jitter_slots must be >= 0")


@dataclass
class SyntheticScenario:
    noise_floor_dbm: float
    duration_slots: int
    interferers: list[Interferer] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.duration_slots < 1:
            raise ValueError("duration_slots must be >= 1")
        self.interferers = [i if isinstance(i, Interferer) else Interferer(*i)
                            for i in self.interferers]


def _check_range(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError("RSSI values must be finite")
    if a.size and (a.min() < RSSI_MIN_DBM or a.max() > RSSI_MAX_DBM):
        raise ValueError(f"RSSI values must lie in [{RSSI_MIN_DBM}, {RSSI_MAX_DBM}] dBm")


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=np.float64) / 10.0)


def mw_to_dbm(p):
    return 10.0 * np.log10(p)


def power_sum_dbm(values_dbm, axis=-1):
    return mw_to_dbm(dbm_to_mw(values_dbm).sum(axis=axis))


# ---------------------------------------------------------------- raw CSV

def _fmt(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def load_raw(path, sample_interval_us: float = 100.0, band_start_mhz: int = 2400,
             n_subbands: int = 83) -> RawTrace:
    """Read a raw capture CSV (``t_us,f2400,...,f2482``)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    expected = ["t_us"] + [f"f{band_start_mhz + k}" for k in range(n_subbands)]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            got = "empty file" if header is None else f"{len(header) - 1} RSSI columns"
            raise TraceFormatError(f"{path}: header mismatch ({got}, expected "
                                   f"t_us + {n_subbands} columns f{band_start_mhz}..)")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise TraceFormatError(f"{path}:{lineno}: {len(row)} cells, expected {len(expected)}")
            vals = []
            for col, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise TraceFormatError(f"{path}:{lineno}: column {expected[col]} "
                                           f"non-numeric {cell!r}") from None
                if not (RSSI_MIN_DBM <= v <= RSSI_MAX_DBM):
                    raise TraceFormatError(f"{path}:{lineno}: column {expected[col]} "
                                           f"out of range {v}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise TraceFormatError(f"{path}: no data rows")
    return RawTrace(np.array(rows), sample_interval_us, band_start_mhz, n_subbands)


def write_raw(raw: RawTrace, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(raw.header())
    for i, row in enumerate(raw.samples):
        w.writerow([_fmt(i * raw.sample_interval_us)] + [_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------- preprocessing

def channel_subbands(channel_id: int, band_start_mhz: int, n_subbands: int) -> slice:
    if not 1 <= channel_id <= 13:
        raise ValueError(f"channel_id {channel_id} outside 1..13")
    center = 2407 + 5 * channel_id
    lo = center - SUBBANDS_PER_CHANNEL // 2 - band_start_mhz
    hi = lo + SUBBANDS_PER_CHANNEL
    if lo < 0 or hi > n_subbands:
        raise ValueError(f"channel {channel_id} ({center - 10}-{center + 10} MHz) extends "
                         f"beyond captured band")
    return slice(lo, hi)


def aggregate_channel(raw: RawTrace, channel_id: int) -> np.ndarray:
    """Per-sample channel RSSI: linear power sum over the channel's sub-bands."""
    cols = channel_subbands(channel_id, raw.band_start_mhz, raw.n_subbands)
    return power_sum_dbm(raw.samples[:, cols], axis=1)


def interpolate_to_slots(channel_seq, sample_interval_us: float = 100.0,
                         slot_us: float = 9.0, channel_id: int = 6,
                         origin: str = "") -> SlotTrace:
    """Zero-order hold resampling onto the mini-slot grid."""
    seq = np.asarray(channel_seq, dtype=np.float64)
    if seq.size == 0:
        raise ValueError("empty input sequence")
    if not (sample_interval_us >= slot_us > 0):
        raise ValueError("need sample_interval_us >= slot_us > 0")
    n_slots = math.floor(len(seq) * sample_interval_us / slot_us)
    k = np.arange(n_slots, dtype=np.float64)
    idx = np.floor_divide(k * slot_us, sample_interval_us).astype(np.int64)
    rssi = np.clip(seq[idx], RSSI_MIN_DBM, RSSI_MAX_DBM)
    return SlotTrace(rssi, slot_us, channel_id, origin)


def preprocess(raw: RawTrace, channel_id: int, slot_us: float = 9.0,
               origin: str = "") -> SlotTrace:
    seq = aggregate_channel(raw, channel_id)
    return interpolate_to_slots(seq, raw.sample_interval_us, slot_us, channel_id, origin)


def generate_synthetic(scenario: SyntheticScenario, slot_us: float = 9.0,
                       channel_id: int = 6) -> SlotTrace:
    """Noise floor plus periodic on/off interferers, power-summed per slot.

    Each interferer switches on for ``round(duty * period)`` slots at the start
    of every period, delayed by a uniform integer jitter in ``[0, jitter]``.
    """
    n = scenario.duration_slots
    rng = np.random.default_rng(scenario.seed)
    power = np.full(n, dbm_to_mw(scenario.noise_floor_dbm))
    for itf in scenario.interferers:
        on_len = int(round(itf.duty_cycle * itf.period_slots))
        if on_len == 0:
            continue
        starts = np.arange(0, n, itf.period_slots)
        if itf.jitter_slots:
            starts = starts + rng.integers(0, itf.jitter_slots + 1, size=len(starts))
        active = np.zeros(n + 1, dtype=np.int64)
        np.add.at(active, np.minimum(starts, n), 1)
        np.add.at(active, np.minimum(starts + on_len, n), -1)
        mask = np.cumsum(active[:n]) > 0
        power[mask] += dbm_to_mw(itf.power_dbm)
    rssi = np.clip(mw_to_dbm(power), RSSI_MIN_DBM, RSSI_MAX_DBM)
    return SlotTrace(rssi, slot_us, channel_id, origin=f"synthetic:seed={scenario.seed}")


def seconds_to_slots(seconds: float, slot_us: float) -> int:
    return math.floor(seconds * 1e6 / slot_us + 1e-9)


def split_train_eval(trace: SlotTrace, train_seconds: float,
                     eval_seconds: float) -> tuple[SlotTrace, SlotTrace]:
    if not train_seconds > 0:
        raise ValueError("train segment must be longer than 0 s")
    if eval_seconds < 0:
        raise ValueError("eval_seconds must be >= 0")
    n_train = seconds_to_slots(train_seconds, trace.slot_us)
    n_eval = seconds_to_slots(eval_seconds, trace.slot_us)
    if n_train + n_eval > len(trace):
        raise ValueError(f"trace has {len(trace)} slots ({trace.duration_s:.3f} s), "
                         f"split needs {n_train + n_eval}")
    train = SlotTrace(trace.rssi[:n_train], trace.slot_us, trace.channel_id,
                      trace.origin + "[train]")
    ev = SlotTrace(trace.rssi[n_train:n_train + n_eval], trace.slot_us, trace.channel_id,
                   trace.origin + "[eval]")
    return train, ev


# ---------------------------------------------------------------- slot trace files

def save_slot_trace(trace: SlotTrace, path) -> None:
    """``.bin`` gets the binary container, anything else CSV ``slot,rssi_dbm``."""
    path = Path(path)
    if path.suffix == ".bin":
        origin = trace.origin.encode()
        with open(path, "wb") as fh:
            fh.write(_SLOT_MAGIC)
            fh.write(struct.pack("<IdiQI", _SLOT_VERSION, trace.slot_us, trace.channel_id,
                                 len(trace), len(origin)))
            fh.write(origin)
            fh.write(trace.rssi.astype("<f4").tobytes())
        return
    with open(path, "w", newline="") as fh:
        fh.write(f"# slot_us={_fmt(trace.slot_us)} channel={trace.channel_id} "
                 f"origin={trace.origin}\n")
        fh.write("slot,rssi_dbm\n")
        fh.writelines(f"{i},{v:.4f}\n" for i, v in enumerate(trace.rssi))


def load_slot_trace(path) -> SlotTrace:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".bin":
        data = path.read_bytes()
        if data[:8] != _SLOT_MAGIC:
            raise TraceFormatError(f"{path}: bad magic")
        hdr = struct.calcsize("<IdiQI")
        if len(data) < 8 + hdr:
            raise TraceFormatError(f"{path}: truncated header")
        version, slot_us, ch, n, olen = struct.unpack_from("<IdiQI", data, 8)
        if version != _SLOT_VERSION:
            raise TraceFormatError(f"{path}: unsupported version {version}")
        off = 8 + hdr
        origin = data[off:off + olen].decode()
        off += olen
        body = data[off:]
        if len(body) != 4 * n:
            raise TraceFormatError(f"{path}: truncated body")
        return SlotTrace(np.frombuffer(body, "<f4").astype(np.float64), slot_us, ch, origin)

    meta = {"slot_us": "9", "channel": "6", "origin": ""}
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#"):
            for tok in first[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
            header = fh.readline()
        else:
            header = first
        if header.strip() != "slot,rssi_dbm":
            raise TraceFormatError(f"{path}: expected header 'slot,rssi_dbm'")
        rssi = np.loadtxt(fh, delimiter=",", usecols=1, ndmin=1)
    return SlotTrace(rssi, float(meta["slot_us"]), int(meta["channel"]), meta["origin"])
