import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlmac import kernels
from dlmac.kernels import python_impl
from dlmac.mac import prefix_sum
from dlmac.phy import SINR_TOL_DB, LinkBudget, McsTable, duration_table

compiled = kernels.compiled_impl
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")

TABLE = McsTable.default()
BUDGET = LinkBudget()
DUR = duration_table(TABLE, BUDGET)
GOPT_ARGS = (DUR, BUDGET.p_r_dbm, TABLE.sinr_min_db, SINR_TOL_DB)


def blocky(seed, n):
    rng = np.random.default_rng(seed)
    levels = rng.choice([-95.0, -90.0, -85.0, -80.0, -70.0, -60.0], size=n // 10 + 1)
    return np.repeat(levels, 10)[:n] + rng.normal(0, 0.5, n)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(60, 700), horizon=st.integers(0, 250),
       frac=st.floats(0, 1))
def test_gopt_decide_backends_agree(seed, n, horizon, frac):
    csum = prefix_sum(blocky(seed, n))
    t = int(frac * (n - 1))
    assert compiled.gopt_decide(csum, t, horizon, *GOPT_ARGS) == \
        python_impl.gopt_decide(csum, t, horizon, *GOPT_ARGS)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(60, 900), horizon=st.integers(0, 250),
       frac=st.floats(0, 1))
def test_gopt_next_backends_agree(seed, n, horizon, frac):
    csum = prefix_sum(blocky(seed, n))
    t = int(frac * (n - 1))
    assert compiled.gopt_next(csum, t, horizon, *GOPT_ARGS) == \
        python_impl.gopt_next(csum, t, horizon, *GOPT_ARGS)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(60, 600), frac=st.floats(0, 1))
def test_gopt_next_is_repeated_decide(seed, n, frac):
    """Sliding search equals asking the single-step search slot after slot."""
    csum = prefix_sum(blocky(seed, n))
    t0 = int(frac * (n - 1))
    expected = (-1, -1)
    for t in range(t0, n):
        s, i = python_impl.gopt_decide(csum, t, 206, *GOPT_ARGS)
        if s == t:
            expected = (s, i)
            break
    assert python_impl.gopt_next(csum, t0, 206, *GOPT_ARGS) == expected


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 400), difs=st.integers(0, 6),
       phase=st.integers(0, 1), difs_rem=st.integers(0, 6), backoff=st.integers(0, 40))
def test_csma_scan_backends_agree(seed, n, difs, phase, difs_rem, backoff):
    rssi = np.random.default_rng(seed).choice([-90.0, -80.0, -75.0, -60.0], n, p=[.5, .2, .1, .2])
    args = (rssi, 0, n, -75.0, difs, phase, difs_rem, backoff)
    assert tuple(compiled.csma_scan(*args)) == tuple(python_impl.csma_scan(*args))


def test_pure_python_override():
    code = "import dlmac.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, DLMAC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "python"


def test_dispatch_matches_backend():
    expected = kernels.compiled_impl if kernels.BACKEND == "compiled" else python_impl
    assert kernels.impl is expected
    assert kernels.gopt_decide is expected.gopt_decide
