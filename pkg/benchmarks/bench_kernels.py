"""Time the compiled slot-loop kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--slots N] [--repeat R]
"""
import argparse
import time

import numpy as np

from dlmac import kernels
from dlmac.mac import prefix_sum
from dlmac.phy import SINR_TOL_DB, LinkBudget, McsTable, duration_table
from dlmac.trace import Interferer, SyntheticScenario, generate_synthetic


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    budget, table = LinkBudget(), McsTable.default()
    dur = duration_table(table, budget)
    tr = generate_synthetic(SyntheticScenario(-95.0, args.slots,
                                              [Interferer(400, 0.5, -60.0, 20)], seed=1))
    rssi = tr.rssi.astype(np.float64)
    csum = prefix_sum(rssi)
    gopt_args = (int(dur[0]), dur, budget.p_r_dbm, table.sinr_min_db, SINR_TOL_DB)

    def gopt_run(impl):
        t, n = 0, 0
        while True:
            s, i = impl.gopt_next(csum, t, *gopt_args)
            if s < 0:
                return n
            t, n = s + int(dur[i]), n + 1

    def csma_run(impl):
        # repeated scans with a fixed backoff, mimicking a saturated sender
        t, n = 0, 0
        while True:
            g = impl.csma_scan(rssi, t, len(rssi), -75.0, 4, 0, 4, 7)[0]
            if g < 0:
                return n
            t, n = g + 19, n + 1

    impls = [("python", kernels.python_impl)]
    if kernels.compiled_impl is not None:
        impls.append(("compiled", kernels.compiled_impl))
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{args.slots} slots, best of {args.repeat}")
    results = {}
    for kname, fn in [("gopt", gopt_run), ("csma", csma_run)]:
        for iname, impl in impls:
            sec, n = best_of(lambda: fn(impl), args.repeat)
            results[kname, iname] = (sec, n)
            print(f"  {kname:5s} {iname:9s} {sec * 1e3:9.1f} ms  ({n} transmissions)")
        if len(impls) == 2:
            (a, na), (b, nb) = results[kname, "python"], results[kname, "compiled"]
            assert na == nb, "backends disagree"
            print(f"  {kname:5s} speedup   {a / b:9.1f}x")


if __name__ == "__main__":
    main()
