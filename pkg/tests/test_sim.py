import csv
import json

import numpy as np
import pytest

from conftest import periodic_trace
from dlmac.mac import POLICY_ORDER, PolicyParams
from dlmac.nn import ModelSpec, init_model
from dlmac.phy import LinkBudget
from dlmac.sim import (Event, SimConfig, compare_policies, handcrafted_within_bounds,
                       load_config, measure_throughput, multi_run, run_simulation,
                       write_event_log, write_series, write_summary)

DL_POLICIES = ["dlmac", "dlca-iwl", "csma-dlmcs"]


@pytest.fixture(scope="module")
def trace():
    return periodic_trace(250_000, period=400, duty=0.5, jitter=40, seed=3)


@pytest.fixture(scope="module")
def model():
    m = init_model(ModelSpec(618).reduced(8), 0)
    m.normalization = (-77.5, 17.5)
    return m


def identity_holds(res, window_s):
    return np.isclose((res.throughput_series * window_s).sum(), res.delivered_bits, rtol=1e-12)


def test_zero_lambda(trace, model):
    for name in POLICY_ORDER:
        res = run_simulation(SimConfig(name, lambda_arrivals=0.0), trace, model)
        assert res.events == [] and res.offered == 0 and res.mean_throughput == 0
        assert np.all(res.throughput_series == 0)


def test_single_packet_window():
    ev = [Event(100, 8, True, 118)]
    s = measure_throughput(ev, 2.0, 9.0, 0, 300_000, 12_000)
    assert s[0] == 6000.0 and s[1:].sum() == 0


def test_measure_throughput_empty_and_additive():
    assert np.all(measure_throughput([], 2.0, 9.0, 0, 500_000, 12_000) == 0)
    ev = [Event(10, 8, True, 28), Event(40, 8, True, 58), Event(70, 8, False, 88)]
    s = measure_throughput(ev, 2.0, 9.0, 0, 500_000, 12_000)
    assert s[0] == 12_000.0 and len(s) == 3


def test_window_boundary_is_left_closed():
    # with 10 us slots, completing slot 199_999 ends at exactly 2.000000 s
    at = measure_throughput([Event(0, 8, True, 199_999)], 2.0, 10.0, 0, 600_000, 12_000)
    before = measure_throughput([Event(0, 8, True, 199_998)], 2.0, 10.0, 0, 600_000, 12_000)
    assert at[1] == 6000.0 and at[0] == 0
    assert before[0] == 6000.0
    # the last boundary of the run stays in the last window
    end = measure_throughput([Event(0, 8, True, 599_999)], 2.0, 10.0, 0, 600_000, 12_000)
    assert len(end) == 3 and end[2] == 6000.0


def test_gopt_idle_saturated_rate():
    idle = np.full(400_000, -95.0)
    res = run_simulation(SimConfig("gopt", saturated=True, start_slot=0), idle)
    assert res.failed == 0 and set(res.mcs_usage.nonzero()[0]) == {8}
    assert res.mean_throughput == pytest.approx(12_000 / (18 * 9e-6), rel=1e-3)
    assert identity_holds(res, 2.0)


@pytest.mark.parametrize("name", POLICY_ORDER)
def test_invariants_per_policy(trace, model, name):
    cfg = SimConfig(name, lambda_arrivals=2.0, seed=4)
    res = run_simulation(cfg, trace, model, instrument=True)
    assert res.delivered + res.failed <= res.offered
    assert res.delivered + res.failed + res.buffered + res.in_flight == res.offered
    assert np.all(res.throughput_series >= 0)
    assert identity_holds(res, cfg.measure_window_s)
    assert res.mcs_usage.sum() == len(res.events)
    slots = [e.slot for e in res.events]
    assert slots == sorted(slots)
    for a, b in zip(res.events, res.events[1:]):
        assert b.slot >= a.completion
    if name in DL_POLICIES:
        assert res.halfduplex_reads > 0 and res.halfduplex_violations == 0
        assert handcrafted_within_bounds(res, cfg.budget, cfg.table)
        assert len(res.handcrafted) == len(res.events)


def test_deterministic(trace, model):
    for name in ("dlmac", "csma-iwl", "gopt"):
        cfg = SimConfig(name, seed=9, lambda_arrivals=1.0)
        a, b = run_simulation(cfg, trace, model), run_simulation(cfg, trace, model)
        assert a.events == b.events
        assert np.array_equal(a.throughput_series, b.throughput_series)


def test_seeds_change_arrivals(trace):
    a = run_simulation(SimConfig("gopt", seed=1, lambda_arrivals=1.0), trace)
    b = run_simulation(SimConfig("gopt", seed=2, lambda_arrivals=1.0), trace)
    assert a.events != b.events


def test_shared_arrivals_and_gopt_dominance(trace, model):
    base = SimConfig(lambda_arrivals=1.0)
    for seed in range(3):
        cfg = base.replace(seed=seed)
        cmp = compare_policies(trace, POLICY_ORDER, cfg, n_runs=1, model=model)
        offered = {st.results[0].offered for st in cmp.stats.values()}
        assert len(offered) == 1
        g = cmp.mean("gopt")
        for name in POLICY_ORDER:
            assert g >= cmp.mean(name)
            assert identity_holds(cmp.stats[name].results[0], cfg.measure_window_s)


def test_gopt_dominance_saturated(trace, model):
    cfg = SimConfig(saturated=True, duration_slots=60_000)
    cmp = compare_policies(trace, POLICY_ORDER, cfg, model=model)
    assert all(cmp.mean("gopt") >= cmp.mean(n) for n in POLICY_ORDER)


def test_partial_flag(trace):
    res = run_simulation(SimConfig("gopt", duration_slots=10**7), trace)
    assert res.partial and res.end_slot == len(trace)
    res = run_simulation(SimConfig("gopt", duration_slots=50_000), trace)
    assert not res.partial and res.end_slot == res.start_slot + 50_000


def test_errors(trace):
    with pytest.raises(ValueError):
        SimConfig(lambda_arrivals=-1)
    with pytest.raises(ValueError):
        SimConfig(measure_window_s=0)
    with pytest.raises(ValueError, match="trained model"):
        run_simulation(SimConfig("dlmac"), trace)
    with pytest.raises(ValueError):
        run_simulation(SimConfig("gopt", start_slot=len(trace)), trace)
    with pytest.raises(ValueError):
        run_simulation(SimConfig("gopt"))


def test_warmup_must_fit(trace, model):
    with pytest.raises(ValueError, match="history"):
        run_simulation(SimConfig("dlmac", start_slot=100), trace, model)


def test_multi_run_stats(trace):
    one = multi_run(SimConfig("gopt", lambda_arrivals=1.0), 1, trace)
    assert one.std == 0 and one.mean == one.results[0].mean_throughput
    four = multi_run(SimConfig("gopt", lambda_arrivals=1.0), 4, trace)
    assert four.mean == pytest.approx(np.mean([r.mean_throughput for r in four.results]))
    assert len({r.offered for r in four.results}) > 1
    again = multi_run(SimConfig("gopt", lambda_arrivals=1.0), 4, trace)
    assert np.array_equal(four.means, again.means)
    with pytest.raises(ValueError):
        multi_run(SimConfig("gopt"), 0, trace)


def test_duplicate_policies_identical_rows(trace, tmp_path):
    cmp = compare_policies(trace, ["csma-arf", "csma-arf", "gopt"], SimConfig(), n_runs=2)
    assert [r["policy"] for r in cmp.rows()] == ["csma-arf", "csma-arf", "gopt"]
    cmp.write_summary_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert rows[0].keys() == {"policy", "mean_mbps", "std_mbps", "runs"}
    assert rows[0] == rows[1] and rows[2]["runs"] == "2"
    cmp.write_series_csv(tmp_path / "series.csv", 2.0)
    head = (tmp_path / "series.csv").read_text().splitlines()[0]
    assert head == "window,t_start_s,csma-arf_mbps,gopt_mbps"


def test_output_files(trace, tmp_path):
    res = run_simulation(SimConfig("csma-arf", lambda_arrivals=1.0), trace)
    write_event_log(res, tmp_path / "ev.csv")
    rows = list(csv.DictReader(open(tmp_path / "ev.csv")))
    assert len(rows) == len(res.events)
    assert set(rows[0]) == {"slot", "action", "mcs", "outcome", "completion"}
    write_series(res, tmp_path / "series.csv", 2.0)
    assert len((tmp_path / "series.csv").read_text().splitlines()) == len(res.throughput_series) + 1
    write_summary(res, tmp_path / "sum.json")
    summary = json.loads((tmp_path / "sum.json").read_text())
    assert summary["delivered"] == res.delivered and summary["policy"] == "csma-arf"


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[sim]\npolicy = csma-iwl\nlambda = 0.5\nseed = 7\nmeasure_window_s = 1\n"
        "saturated = no\nduration_slots = 1000\n"
        "[link]\np_r_dbm = -55\npayload_bytes = 876\n"
        "[policy]\ncw_min = 8\nbusy_threshold_dbm = -70\nbackfill = false\ngopt_horizon = 50\n")
    cfg = load_config(path)
    assert cfg.policy == "csma-iwl" and cfg.lambda_arrivals == 0.5 and cfg.seed == 7
    assert cfg.measure_window_s == 1.0 and cfg.duration_slots == 1000 and not cfg.saturated
    assert cfg.budget == LinkBudget(-55.0, 9.0, 876)
    assert cfg.mtxop == 120
    assert cfg.params == PolicyParams(cw_min=8, busy_threshold_dbm=-70.0, backfill=False,
                                      gopt_horizon=50)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


def test_bare_array_accepted(trace):
    a = run_simulation(SimConfig("gopt"), np.array(trace.rssi))
    b = run_simulation(SimConfig("gopt"), trace)
    assert a.events == b.events
