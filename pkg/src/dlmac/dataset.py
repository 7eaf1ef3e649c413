"""Supervised examples: past RSSI window -> MCS label of the next airtime."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .phy import (IDLE_INDEX, LinkBudget, McsTable, mcs_for_sinr, mcs_indices_for_sinr,
                  sinr_from_rssi)

HISTORY_FACTOR = 3
_DS_MAGIC = b"DLMACDS\x00"
_DS_VERSION = 1
_DS_HEADER = "<IQIIdd"


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    window: np.ndarray
    label: int
    t: int


def _rssi(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "rssi", trace), dtype=np.float64)


def valid_range(n_slots: int, mtxop: int) -> range:
    """Slots t that have a full history window and a full future window."""
    return range(HISTORY_FACTOR * mtxop - 1, n_slots - mtxop)


def label_at(trace, t: int, budget: LinkBudget, table: McsTable, mtxop: int) -> int:
    rssi = _rssi(trace)
    if t not in valid_range(len(rssi), mtxop):
        raise IndexError(f"t={t} outside valid range for {len(rssi)} slots, mtxop={mtxop}")
    avg = rssi[t + 1:t + 1 + mtxop].mean()
    return mcs_for_sinr(sinr_from_rssi(avg, budget), table).index


def labels_for(rssi: np.ndarray, ts: np.ndarray, budget: LinkBudget, table: McsTable,
               mtxop: int) -> np.ndarray:
    """Vectorised :func:`label_at` over many slots (prefix-sum window means)."""
    csum = np.concatenate(([0.0], np.cumsum(rssi, dtype=np.float64)))
    avg = (csum[ts + 1 + mtxop] - csum[ts + 1]) / mtxop
    return mcs_indices_for_sinr(sinr_from_rssi(avg, budget), table).astype(np.int8)


class _SlidingSource:
    def __init__(self, rssi: np.ndarray, width: int):
        self.values = np.ascontiguousarray(rssi, dtype=np.float32)
        self.view = np.lib.stride_tricks.sliding_window_view(self.values, width)
        self.width = width

    def gather(self, keys):
        return self.view[np.asarray(keys) - self.width + 1]

    def element_stats(self, keys):
        # every slot weighted by how many windows contain it
        n = len(self.values)
        diff = np.zeros(n + 1, dtype=np.int64)
        np.add.at(diff, np.asarray(keys) - self.width + 1, 1)
        np.add.at(diff, np.asarray(keys) + 1, -1)
        w = np.cumsum(diff[:n]).astype(np.float64)
        x = self.values.astype(np.float64)
        return w.sum(), (w * x).sum(), (w * x * x).sum()


class _MatrixSource:
    def __init__(self, windows: np.ndarray):
        self.values = np.ascontiguousarray(windows, dtype=np.float32)
        self.width = self.values.shape[1]

    def gather(self, keys):
        return self.values[np.asarray(keys)]

    def element_stats(self, keys):
        x = self.values[np.asarray(keys)].astype(np.float64)
        return float(x.size), x.sum(), (x * x).sum()


class Dataset:
    """Labeled windows referenced into one or more sources.

    Each example is ``(source id, key, label, t)``; for trace sources the key is
    the slot ``t`` the window ends at, so windows are gathered lazily.
    """

    def __init__(self, sources, src, keys, labels, ts, mtxop_slots: int,
                 normalization: tuple[float, float] | None = None):
        self.sources = list(sources)
        self.src = np.asarray(src, dtype=np.int32)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int8)
        self.ts = np.asarray(ts, dtype=np.int64)
        self.mtxop_slots = int(mtxop_slots)
        if not (len(self.src) == len(self.keys) == len(self.labels) == len(self.ts)):
            raise ValueError("example arrays must have equal length")
        for s in self.sources:
            if s.width != self.window_len:
                raise ValueError("all windows must have length 3 * mtxop")
        self.normalization = normalization if normalization else self.compute_normalization()

    @property
    def window_len(self) -> int:
        return HISTORY_FACTOR * self.mtxop_slots

    def __len__(self) -> int:
        return len(self.labels)

    def compute_normalization(self) -> tuple[float, float]:
        if len(self) == 0:
            return 0.0, 1.0
        n = s1 = s2 = 0.0
        for k, source in enumerate(self.sources):
            sel = self.src == k
            if sel.any():
                a, b, c = source.element_stats(self.keys[sel])
                n, s1, s2 = n + a, s1 + b, s2 + c
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0)
        std = float(np.sqrt(var))
        # constant windows: normalization disabled (centering only)
        return float(mean), (std if std > 1e-6 else 1.0)

    def windows(self, idx=None) -> np.ndarray:
        """Raw dBm windows (float32) for the selected examples."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        out = np.empty((len(idx), self.window_len), dtype=np.float32)
        srcs = self.src[idx]
        for k, source in enumerate(self.sources):
            sel = np.nonzero(srcs == k)[0]
            if len(sel):
                out[sel] = source.gather(self.keys[idx[sel]])
        return out

    def normalized(self, idx=None) -> np.ndarray:
        mean, std = self.normalization
        return (self.windows(idx) - np.float32(mean)) / np.float32(std)

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.windows([i])[0], int(self.labels[i]), int(self.ts[i]))

    @property
    def examples(self) -> list[LabeledExample]:
        return [self.example(i) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.sources, self.src[idx], self.keys[idx], self.labels[idx],
                       self.ts[idx], self.mtxop_slots, self.normalization)

    def split(self, fraction: float) -> tuple["Dataset", "Dataset"]:
        """Contiguous head/tail split (no shuffling, avoids window leakage)."""
        cut = int(round(len(self) * fraction))
        idx = np.arange(len(self))
        return self.subset(idx[:cut]), self.subset(idx[cut:])


def build_dataset(trace, budget: LinkBudget, table: McsTable, mtxop: int,
                  stride: int = 1) -> Dataset:
    rssi = _rssi(trace)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(rssi) < (HISTORY_FACTOR + 1) * mtxop:
        raise ValueError(f"trace of {len(rssi)} slots too short for mtxop={mtxop} "
                         f"(need {(HISTORY_FACTOR + 1) * mtxop})")
    r = valid_range(len(rssi), mtxop)
    ts = np.arange(r.start, r.stop, stride, dtype=np.int64)
    labels = labels_for(rssi, ts, budget, table, mtxop)
    source = _SlidingSource(rssi, HISTORY_FACTOR * mtxop)
    return Dataset([source], np.zeros(len(ts)), ts, labels, ts, mtxop)


def concat_datasets(datasets) -> Dataset:
    """Fuse datasets example-wise; normalization is recomputed jointly."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to concatenate")
    mtxop = datasets[0].mtxop_slots
    if any(d.mtxop_slots != mtxop for d in datasets):
        raise ValueError("datasets disagree on mtxop")
    sources, src, keys, labels, ts = [], [], [], [], []
    for d in datasets:
        src.append(d.src + len(sources))
        sources.extend(d.sources)
        keys.append(d.keys)
        labels.append(d.labels)
        ts.append(d.ts)
    return Dataset(sources, np.concatenate(src), np.concatenate(keys),
                   np.concatenate(labels), np.concatenate(ts), mtxop)


def class_histogram(ds: Dataset, table: McsTable | None = None) -> dict[int, int]:
    n_mcs = table.n_mcs if table is not None else 9
    counts = np.bincount(ds.labels.astype(np.int64) - IDLE_INDEX, minlength=n_mcs + 1)
    return {k + IDLE_INDEX: int(c) for k, c in enumerate(counts)}


def class_weights(ds: Dataset, n_classes: int = 10) -> np.ndarray:
    """Inverse-frequency class weights (mean 1 over present classes)."""
    counts = np.bincount(ds.labels.astype(np.int64) - IDLE_INDEX, minlength=n_classes)
    w = np.zeros(n_classes)
    present = counts > 0
    w[present] = counts.sum() / (present.sum() * counts[present])
    return w


# ---------------------------------------------------------------- persistence

def save_dataset(ds: Dataset, path, chunk: int = 65536) -> None:
    """Flat binary: header, float32 windows, int8 labels, int64 slot indices."""
    mean, std = ds.normalization
    with open(path, "wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack(_DS_HEADER, _DS_VERSION, len(ds), ds.window_len,
                             ds.mtxop_slots, mean, std))
        for lo in range(0, len(ds), chunk):
            fh.write(ds.windows(np.arange(lo, min(lo + chunk, len(ds)))).astype("<f4").tobytes())
        fh.write(ds.labels.astype(np.int8).tobytes())
        fh.write(ds.ts.astype("<i8").tobytes())


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != _DS_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic")
    hsize = struct.calcsize(_DS_HEADER)
    if len(data) < 8 + hsize:
        raise DatasetFormatError(f"{path}: truncated header")
    version, count, wlen, mtxop, mean, std = struct.unpack_from(_DS_HEADER, data, 8)
    if version != _DS_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    off = 8 + hsize
    need = off + count * wlen * 4 + count + count * 8
    if len(data) != need:
        raise DatasetFormatError(f"{path}: expected {need} bytes, found {len(data)}")
    windows = np.frombuffer(data, "<f4", count * wlen, off).reshape(count, wlen)
    off += count * wlen * 4
    labels = np.frombuffer(data, np.int8, count, off)
    ts = np.frombuffer(data, "<i8", count, off + count)
    return Dataset([_MatrixSource(windows)], np.zeros(count), np.arange(count), labels, ts,
                   mtxop, (mean, std))


def export_csv(ds: Dataset, path) -> None:
    """Debug view: one row per example with window summary statistics."""
    with open(path, "w") as fh:
        fh.write("t,label,mean_dbm,min_dbm,max_dbm\n")
        for lo in range(0, len(ds), 65536):
            idx = np.arange(lo, min(lo + 65536, len(ds)))
            w = ds.windows(idx)
            for i, row in zip(idx, w):
                fh.write(f"{ds.ts[i]},{ds.labels[i]},{row.mean():.4f},{row.min():.4f},"
                         f"{row.max():.4f}\n")
