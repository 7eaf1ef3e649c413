"""Command-line entry point: ``dlmac <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path


from . import dataset as dsmod
from . import nn, sim, trace
from .mac import POLICIES, POLICY_ORDER
from .phy import LinkBudget, McsTable, mtxop_slots

log = logging.getLogger("dlmac")


def _budget(args) -> LinkBudget:
    return LinkBudget(payload_bytes=args.payload)


def _table(args) -> McsTable:
    return McsTable.from_config(args.mcs_table) if args.mcs_table else McsTable.default()


def _mtxop(args) -> int:
    return args.mtxop or mtxop_slots(_table(args), _budget(args))


def _parse_split(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}; use TRAIN_S or TRAIN_S:EVAL_S")
    if len(vals) == 1:
        vals.append(0.0)
    if len(vals) != 2 or vals[0] <= 0 or vals[1] < 0:
        raise argparse.ArgumentTypeError(f"bad split {text!r}; use TRAIN_S or TRAIN_S:EVAL_S")
    return vals[0], vals[1]


def _parse_interferer(text: str) -> trace.Interferer:
    try:
        parts = [float(p) for p in text.split(":")]
        if len(parts) not in (3, 4):
            raise ValueError
        jitter = int(parts[3]) if len(parts) == 4 else 0
        return trace.Interferer(int(parts[0]), parts[1], parts[2], jitter)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad interferer {text!r}; use PERIOD:DUTY:POWER_DBM[:JITTER]") from None


def _channel(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"channel must be an integer, got {text!r}") from None
    if not 1 <= k <= 13:
        raise argparse.ArgumentTypeError(f"channel must be in 1..13, got {k}")
    return k


def _train_part(tr: trace.SlotTrace, split) -> trace.SlotTrace:
    return tr if split is None else trace.split_train_eval(tr, *split)[0]


def _eval_part(tr: trace.SlotTrace, split) -> trace.SlotTrace:
    """Eval segment; with ``TRAIN_S`` only, everything after the training part."""
    if split is None:
        return tr
    train_s, eval_s = split
    if eval_s == 0:
        n = trace.seconds_to_slots(train_s, tr.slot_us)
        return trace.SlotTrace(tr.rssi[n:], tr.slot_us, tr.channel_id, tr.origin + "[eval]")
    return trace.split_train_eval(tr, train_s, eval_s)[1]


def _rssi_summary(tr: trace.SlotTrace) -> str:
    r = tr.rssi
    return (f"{len(tr)} slots ({tr.duration_s:.3f} s), rssi mean {r.mean():.2f} dBm, "
            f"min {r.min():.2f}, max {r.max():.2f}")


# ---------------------------------------------------------------- commands

def cmd_preprocess(args) -> int:
    raw = trace.load_raw(args.raw, args.sample_interval_us)
    tr = trace.preprocess(raw, args.channel, args.slot_us)
    trace.save_slot_trace(tr, args.out)
    print(_rssi_summary(tr))
    return 0


def cmd_generate(args) -> int:
    n = trace.seconds_to_slots(args.seconds, args.slot_us)
    scen = trace.SyntheticScenario(args.noise_floor, n, args.interferer or [], args.seed)
    tr = trace.generate_synthetic(scen, args.slot_us, args.channel)
    trace.save_slot_trace(tr, args.out)
    print(_rssi_summary(tr))
    return 0


def _build(args, paths, split):
    budget, table, mtxop = _budget(args), _table(args), _mtxop(args)
    parts = []
    for p in paths:
        tr = _train_part(trace.load_slot_trace(p), split)
        parts.append(dsmod.build_dataset(tr, budget, table, mtxop, args.stride))
    return parts[0] if len(parts) == 1 else dsmod.concat_datasets(parts)


def cmd_label(args) -> int:
    ds = _build(args, args.trace, args.split)
    dsmod.save_dataset(ds, args.out)
    if args.csv:
        dsmod.export_csv(ds, args.csv)
    hist = dsmod.class_histogram(ds, _table(args))
    print(f"{len(ds)} examples, window {ds.window_len}")
    print(" ".join(f"{k}:{v}" for k, v in hist.items()))
    return 0


def cmd_train(args) -> int:
    ds = _build(args, args.trace, args.split)
    train_ds, val_ds = ds.split(1.0 - args.val_fraction)
    train_ds.normalization = train_ds.compute_normalization()
    spec = nn.ModelSpec(ds.window_len)
    if args.reduce > 1:
        spec = spec.reduced(args.reduce)
    model = nn.init_model(spec, args.seed)
    cfg = nn.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         seed=args.seed,
                         class_weights=dsmod.class_weights(train_ds) if args.class_weights
                         else None)
    model, history = nn.train(model, train_ds, val_ds, cfg)
    nn.save_model(model, args.out)
    hist_path = args.history or str(Path(args.out).with_suffix(".history.csv"))
    nn.write_history(history, hist_path)
    acc = max((h["val_acc"] for h in history), default=float("nan"))
    print(f"{len(train_ds)} train / {len(val_ds)} val examples; best val accuracy {acc:.4f}")
    return 0


def _sim_config(args, policy: str) -> sim.SimConfig:
    cfg = sim.load_config(args.config) if args.config else sim.SimConfig()
    kw = {"policy": policy, "budget": _budget(args), "table": _table(args), "seed": args.seed}
    if args.mtxop:
        kw["mtxop_slots"] = args.mtxop
    if args.lambda_ is not None:
        kw["lambda_arrivals"] = args.lambda_
    if args.saturated:
        kw["saturated"] = True
    if args.duration is not None:
        kw["duration_slots"] = trace.seconds_to_slots(args.duration, kw["budget"].slot_us)
    return cfg.replace(**kw)


def _load_model(args, policies):
    if any(POLICIES[p].uses_model for p in policies):
        if not args.model:
            raise ValueError(f"policies {policies} need --model")
        return nn.load_model(args.model)
    return nn.load_model(args.model) if args.model else None


def cmd_simulate(args) -> int:
    policy = args.policy[0] if args.policy else "dlmac"
    model = _load_model(args, [policy])
    tr = _eval_part(trace.load_slot_trace(args.trace[0]), args.split)
    cfg = _sim_config(args, policy)
    stats = sim.multi_run(cfg, args.runs, tr, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in stats.results:
        sim.write_series(r, out / f"series_{policy}_run{r.run_index}.csv", cfg.measure_window_s)
        sim.write_summary(r, out / f"summary_{policy}_run{r.run_index}.json")
    if args.event_log:
        sim.write_event_log(stats.results[0], args.event_log)
    print(f"{policy}: mean {stats.mean / 1e6:.3f} Mbps, std {stats.std / 1e6:.3f} Mbps "
          f"over {args.runs} run(s)")
    return 0


def cmd_compare(args) -> int:
    policies = args.policy or list(POLICY_ORDER)
    model = _load_model(args, policies)
    cfg = _sim_config(args, policies[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.trace:
        tr = _eval_part(trace.load_slot_trace(path), args.split)
        comp = sim.compare_policies(tr, policies, cfg, args.runs, model)
        tag = Path(path).stem if len(args.trace) > 1 else ""
        suffix = f"_{tag}" if tag else ""
        comp.write_summary_csv(out / f"summary{suffix}.csv")
        comp.write_series_csv(out / f"series{suffix}.csv", cfg.measure_window_s)
        rows.append((tr.channel_id, Path(path).stem, comp))
        for r in comp.rows():
            print(f"{Path(path).stem} {r['policy']}: {r['mean_bps'] / 1e6:.3f} "
                  f"± {r['std_bps'] / 1e6:.3f} Mbps")
    if len(rows) > 1:
        # one row per evaluated trace (channel), one column pair per policy
        with open(out / "generalization.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "trace"] + [f"{p}_{s}" for p in dict.fromkeys(policies)
                                               for s in ("mean_mbps", "std_mbps")])
            for ch, name, comp in rows:
                vals = []
                for p in dict.fromkeys(policies):
                    vals += [f"{comp.stats[p].mean / 1e6:.6f}", f"{comp.stats[p].std / 1e6:.6f}"]
                w.writerow([ch, name] + vals)
    return 0


# ---------------------------------------------------------------- parser

def _add_link(p):
    p.add_argument("--payload", type=int, default=1500, help="payload bytes (default 1500)")
    p.add_argument("--mtxop", type=int, default=None,
                   help="override MTXOP in slots (default: airtime at the lowest MCS)")
    p.add_argument("--mcs-table", default=None, help="INI file with [mcs.K] sections")


def _add_data(p):
    p.add_argument("--trace", action="append", required=True,
                   help="slot trace file; repeat to fuse several traces")
    p.add_argument("--split", type=_parse_split, default=None,
                   help="TRAIN_S[:EVAL_S]; use the first TRAIN_S seconds")
    p.add_argument("--stride", type=int, default=1, help="slot stride between examples")


def _add_sim(p):
    p.add_argument("--trace", action="append", required=True,
                   help="slot trace file; repeat to evaluate several channels")
    p.add_argument("--policy", action="append", choices=sorted(POLICIES), default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="packets per MTXOP (default 0.18)")
    p.add_argument("--saturated", action="store_true", help="always have a packet queued")
    p.add_argument("--split", type=_parse_split, default=None,
                   help="TRAIN_S[:EVAL_S]; simulate the segment after TRAIN_S seconds")
    p.add_argument("--duration", type=float, default=None, help="simulated seconds")
    p.add_argument("--config", default=None, help="INI file with [sim]/[link]/[policy]")
    p.add_argument("--out", required=True, help="output directory")
    _add_link(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlmac", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw spectrum CSV -> slot trace")
    p.add_argument("--raw", required=True)
    p.add_argument("--channel", type=_channel, required=True)
    p.add_argument("--out", required=True, help=".bin for binary, anything else for CSV")
    p.add_argument("--sample-interval-us", type=float, default=100.0)
    p.add_argument("--slot-us", type=float, default=9.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("generate", help="synthetic slot trace")
    p.add_argument("--out", required=True)
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--noise-floor", type=float, default=-95.0)
    p.add_argument("--interferer", type=_parse_interferer, action="append",
                   help="PERIOD:DUTY:POWER_DBM[:JITTER]; repeatable")
    p.add_argument("--channel", type=_channel, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slot-us", type=float, default=9.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="slot trace(s) -> labeled dataset")
    _add_data(p)
    _add_link(p)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="also write a per-example CSV view")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the policy network; several --trace fuse data")
    _add_data(p)
    _add_link(p)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--history", default=None, help="history CSV (default next to model)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--reduce", type=int, default=1, help="divide all layer widths by this")
    p.add_argument("--class-weights", action="store_true",
                   help="inverse-frequency class weights in the loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run one policy")
    _add_sim(p)
    p.add_argument("--event-log", default=None, help="CSV of transmissions (first run)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several policies on the same traffic")
    _add_sim(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "runs", 1) < 1:
        ap.error("--runs must be >= 1")
    if getattr(args, "stride", 1) < 1:
        ap.error("--stride must be >= 1")
    try:
        return args.func(args)
    except (ValueError, OSError, IndexError) as exc:
        print(f"dlmac {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
