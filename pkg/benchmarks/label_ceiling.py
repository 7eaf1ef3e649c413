"""Throughput of a policy that knows every training label exactly.

Replaces the network with the true label of each slot (computed from the real
future trace) and runs it next to GOPT and CSMA/CA+ARF on the periodic
interferer fixture. Two label rules are compared:

* ``mtxop``: highest MCS whose threshold the mean RSSI over the next MTXOP
  slots meets (the rule the network is trained on);
* ``airtime``: highest MCS whose own airtime window succeeds.

    python3 benchmarks/label_ceiling.py [--runs 10] [--saturated]
"""
import argparse

import numpy as np

from dlmac.dataset import labels_for
from dlmac.mac import POLICIES, Policy
from dlmac.phy import SINR_TOL_DB, LinkBudget, McsTable, duration_table, mtxop_slots
from dlmac.sim import SimConfig, compare_policies
from dlmac.trace import (Interferer, SyntheticScenario, generate_synthetic, seconds_to_slots,
                         split_train_eval)


def mtxop_labels(rssi, budget, table):
    m = mtxop_slots(table, budget)
    ts = np.arange(len(rssi) - m)
    return np.concatenate([labels_for(rssi, ts, budget, table, m), np.full(m, -1)])


def airtime_labels(rssi, budget, table):
    csum = np.concatenate(([0.0], np.cumsum(rssi)))
    out = np.full(len(rssi), -1, dtype=np.int64)
    ts = np.arange(len(rssi))
    for i, d in enumerate(duration_table(table, budget)):
        ok = ts + d <= len(rssi) - 1
        mean = np.full(len(rssi), np.inf)
        mean[ok] = (csum[ts[ok] + d + 1] - csum[ts[ok] + 1]) / d
        out[budget.p_r_dbm - mean >= table.sinr_min_db[i] - SINR_TOL_DB] = i
    return out


def label_policy(name, rule):
    class LabelFollower(Policy):
        def bind(self, ctx):
            super().bind(ctx)
            self.labels = rule(ctx.rssi, ctx.budget, ctx.table)
            self.access = np.flatnonzero(self.labels >= 0)

        def next_transmission(self, t, end):
            k = int(np.searchsorted(self.access, t))
            if k == len(self.access) or self.access[k] >= end:
                return None
            s = int(self.access[k])
            return s, int(self.labels[s])

    LabelFollower.name = name
    return LabelFollower


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--saturated", action="store_true")
    ap.add_argument("--eval-seconds", type=float, default=12.0)
    args = ap.parse_args()

    budget, table = LinkBudget(), McsTable.default()
    POLICIES["labels-mtxop"] = label_policy("labels-mtxop", mtxop_labels)
    POLICIES["labels-airtime"] = label_policy("labels-airtime", airtime_labels)

    n = seconds_to_slots(1.0 + args.eval_seconds, budget.slot_us)
    full = generate_synthetic(SyntheticScenario(-95.0, n, [Interferer(400, 0.5, -60.0)], 1))
    ev = split_train_eval(full, 1.0, args.eval_seconds)
    rssi = np.concatenate([ev[0].rssi[-3 * mtxop_slots(table, budget):], ev[1].rssi])
    cfg = SimConfig(saturated=args.saturated)
    names = ["gopt", "labels-mtxop", "labels-airtime", "csma-arf"]
    cmp = compare_policies(rssi, names, cfg, n_runs=args.runs)
    g, arf = cmp.mean("gopt"), cmp.mean("csma-arf")
    print(f"{'policy':16s} {'Mbps':>8s} {'of GOPT':>8s} {'x ARF':>6s} {'failed':>7s}")
    for name in names:
        st = cmp.stats[name]
        failed = sum(r.failed for r in st.results)
        print(f"{name:16s} {st.mean / 1e6:8.3f} {st.mean / g:8.1%} {st.mean / arf:6.2f} "
              f"{failed:7d}")


if __name__ == "__main__":
    main()
