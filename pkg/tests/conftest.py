import numpy as np
import pytest

from dlmac.dataset import Dataset, _MatrixSource
from dlmac.phy import LinkBudget, McsTable, duration_table, transmission_outcome
from dlmac.trace import Interferer, SyntheticScenario, generate_synthetic


@pytest.fixture
def budget():
    return LinkBudget()


@pytest.fixture
def table():
    return McsTable.default()


def periodic_trace(n_slots, period=400, duty=0.5, power=-60.0, floor=-95.0, jitter=0, seed=1):
    scen = SyntheticScenario(floor, n_slots, [Interferer(period, duty, power, jitter)], seed)
    return generate_synthetic(scen)


def random_walk_trace(n_slots, seed, lo=-100.0, hi=-50.0):
    """Piecewise-constant trace with random levels and random run lengths."""
    rng = np.random.default_rng(seed)
    out = np.empty(n_slots)
    k = 0
    while k < n_slots:
        run = int(rng.integers(1, 120))
        out[k:k + run] = rng.uniform(lo, hi)
        k += run
    return out


def separable(n_per_class=200, width=24, seed=0):
    """Two classes of noisy constant windows: quiet (MCS 8) and loud (idle)."""
    rng = np.random.default_rng(seed)
    quiet = -95 + rng.normal(0, 1, (n_per_class, width))
    loud = -60 + rng.normal(0, 1, (n_per_class, width))
    w = np.concatenate([quiet, loud]).astype(np.float32)
    labels = np.array([8] * n_per_class + [-1] * n_per_class, dtype=np.int8)
    order = rng.permutation(len(w))
    w, labels = w[order], labels[order]
    n = len(w)
    ds = Dataset([_MatrixSource(w)], np.zeros(n), np.arange(n), labels, np.arange(n), width // 3)
    return ds


def exhaustive_gopt(rssi, t, budget, table, horizon):
    """Every (start, MCS) scored with the reference outcome function."""
    dur = duration_table(table, budget)
    best = None
    for s in range(t, t + horizon + 1):
        for i, e in enumerate(table.data_entries):
            d = int(dur[i])
            if s + d > len(rssi) - 1:
                continue
            ok, _ = transmission_outcome(rssi[s + 1:s + d + 1], e, budget)
            if ok:
                key = (s + d, -i, s)
                if best is None or key < best:
                    best = key
    return None if best is None else (best[2], -best[1])


#: (criterion number, passed, detail) recorded by the acceptance tests
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
