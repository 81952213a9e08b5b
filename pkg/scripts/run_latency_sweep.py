#!/usr/bin/env python3
"""Input-output latency versus widget count for the three update policies.

Writes results/latency_sweep.{json,csv} and prints a small table. The default
sweep takes a few minutes; most of it is the 100/200-widget realtime points,
where every tick rebuilds a deep tree.

    python scripts/run_latency_sweep.py --counts 1,2,4,8,12,25,50,100
"""

import argparse
import sys
from pathlib import Path

from gazetd.bench import DEFAULT_COUNTS, DEFAULT_DURATIONS, SweepSpec, run_sweep, write_report
from gazetd.depth_model import init_params, load_weights


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counts", default=",".join(map(str, DEFAULT_COUNTS)))
    ap.add_argument("--scenarios", default="static,event,realtime")
    ap.add_argument("--static-s", type=float, default=DEFAULT_DURATIONS["static"])
    ap.add_argument("--event-s", type=float, default=DEFAULT_DURATIONS["event"])
    ap.add_argument("--realtime-s", type=float, default=DEFAULT_DURATIONS["realtime"])
    ap.add_argument("--weights", default=None, help="weight file (random init if omitted)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/latency_sweep")
    args = ap.parse_args(argv)

    sweep = SweepSpec(scenarios=tuple(args.scenarios.split(",")),
                      counts=tuple(int(c) for c in args.counts.split(",")),
                      durations={"static": args.static_s, "event": args.event_s,
                                 "realtime": args.realtime_s},
                      seed=args.seed)
    weights = load_weights(args.weights) if args.weights else init_params(args.seed)

    print(f"{'policy':>8} {'n':>4} {'gaze us':>16} {'incl. update us':>16} {'missed':>7}")

    def progress(r):
        print(f"{r['scenario']:>8} {r['n_widgets']:>4} {r['mean_us']:8.1f} ±{r['std_us']:6.1f} "
              f"{r['io_mean_us']:16.1f} {r['missed_ticks']:>3}/{r['ticks']:<3}", flush=True)

    report = run_sweep(sweep, weights, progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out.with_suffix(".json"), out.with_suffix(".csv"))
    for kind, s in report["scaling"].items():
        print(f"{kind}: log-log slope gaze={s['latency_slope']} incl. update={s['io_latency_slope']}")
    bad = sum(r["oracle_mismatches"] for r in report["rows"])
    print(f"oracle mismatches: {bad}; wrote {out.with_suffix('.json')}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
