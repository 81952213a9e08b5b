"""Command-line entry point: ``gazetd <simulate|bench|datagen|train|eval|infer>``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import tomli

from . import bench as bench_mod
from .depth_model import (TrainConfig, evaluate, forward, init_params, load_weights,
                          save_weights, summarize_trials, train_trials, write_history)
from .gaze_geometry import GeneratorConfig, generate_dataset, read_csv, write_csv
from .pipeline import (GazeEvent, UpdatePolicy, read_events, records_digest, run,
                       write_events, write_records)
from .scenarios import ScenarioSpec, compare, read_expected, simulate, write_expected

REFERENCE_FULL_ACCURACY = 0.971
REFERENCE_ABLATED_ACCURACY = 0.65


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _apply(obj, section: dict | None):
    if not section:
        return obj
    known = {f.name for f in fields(obj)}
    bad = sorted(set(section) - known)
    if bad:
        raise UsageError(f"unknown config keys for {type(obj).__name__}: {bad}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    return replace(obj, **vals)


def _emit(obj, args, csv_rows=None):
    """Print a report to stdout in the requested format."""
    if args.format == "csv" and csv_rows:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(csv_rows[0]))
        w.writeheader()
        w.writerows(csv_rows)
        sys.stdout.write(buf.getvalue())
    else:
        print(json.dumps(obj, indent=2))


def _need_file(path, what):
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _weights_or_default(path, seed):
    if path is None:
        return init_params(seed)
    return load_weights(_need_file(path, "weight file"))


def _dataset(args, cfg):
    if getattr(args, "data", None):
        return read_csv(_need_file(args.data, "dataset"))
    gen = _apply(GeneratorConfig(), cfg.get("generator"))
    return generate_dataset(args.n, args.data_seed, gen)


# ---- subcommands --------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    spec = ScenarioSpec(policy=args.policy, n_widgets=args.widgets, motion=args.motion,
                        duration_s=args.duration, rate_hz=args.rate, gaze_path=args.gaze_path,
                        seed=args.seed, event_every=args.event_every, deltas=args.deltas)
    spec = _apply(spec, cfg.get("scenario"))
    try:
        events, expected = simulate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out or "scenario")
    out.mkdir(parents=True, exist_ok=True)
    write_events(events, out / "events.jsonl")
    write_expected(expected, out / "expected.jsonl")
    report = {"scenario": asdict(spec), "events": len(events), "gaze_events": len(expected),
              "widget_events": len(events) - len(expected), "config": cfg,
              "files": {"events": str(out / "events.jsonl"),
                        "expected": str(out / "expected.jsonl")}}
    status = 0
    if args.check:
        weights = _weights_or_default(args.weights, args.seed)
        replayed = read_events(out / "events.jsonl")
        policy = UpdatePolicy.parse(spec.policy, spec.rate_hz)
        records, summary = run(replayed, policy, weights)
        problems = compare(records, read_expected(out / "expected.jsonl"))
        write_records(records, summary, out / "output.jsonl")
        report["check"] = {"matched": not problems, "mismatches": problems[:20],
                           "accuracy": 1.0 - len(problems) / max(1, len(records)),
                           "digest": records_digest(records), "summary": summary}
        status = 0 if not problems else 1
    (out / "scenario.json").write_text(json.dumps(report, indent=2))
    _emit(report, args)
    return status


def _parse_counts(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad widget count list {text!r}") from None


def _parse_durations(text):
    out = dict(bench_mod.DEFAULT_DURATIONS)
    if not text:
        return out
    for part in text.split(","):
        try:
            k, v = part.split("=")
            out[UpdatePolicy.parse(k.strip()).kind] = float(v)
        except ValueError:
            raise UsageError(f"bad duration spec {part!r}; use name=seconds") from None
    return out


def cmd_bench(args, cfg) -> int:
    sweep = bench_mod.SweepSpec(
        scenarios=tuple(UpdatePolicy.parse(s).kind for s in args.scenarios.split(",")),
        counts=_parse_counts(args.counts) if args.counts else bench_mod.DEFAULT_COUNTS,
        durations=_parse_durations(args.durations), rate_hz=args.rate, motion=args.motion,
        seed=args.seed)
    sweep = _apply(sweep, cfg.get("bench"))
    weights = _weights_or_default(args.weights, args.seed)

    def progress(row):
        print(f"{row['scenario']:>8} n={row['n_widgets']:<4} mean={row['mean_us']:9.1f}us "
              f"io={row['io_mean_us']:10.1f}us missed={row['missed_ticks']}", file=sys.stderr)

    try:
        report = bench_mod.run_sweep(sweep, weights, progress)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report["config"]["file"] = cfg
    prefix = Path(args.out or "bench")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    bench_mod.write_report(report, prefix.with_suffix(".json"), prefix.with_suffix(".csv"))
    _emit(report, args, report["rows"])
    return 0


def cmd_datagen(args, cfg) -> int:
    gen = _apply(GeneratorConfig(), cfg.get("generator"))
    try:
        ds = generate_dataset(args.n, args.seed, gen)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or "gaze_depth.csv"
    write_csv(ds, out)
    report = {"path": str(out), "n": len(ds), "class_counts": ds.class_counts().tolist(),
              "seed": args.seed, "generator": asdict(gen), "config": cfg}
    _emit(report, args)
    return 0


def cmd_train(args, cfg) -> int:
    tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       seed=args.seed, embed_dim=args.embed_dim)
    tcfg = _apply(tcfg, cfg.get("train"))
    try:
        tcfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = _dataset(args, cfg)
    out = Path(args.out or "train_out")
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(tcfg.seed, tcfg.seed + args.trials))

    def log(row):
        print(f"seed={row['seed']} test_acc={row['test_accuracy']:.4f} "
              f"best_epoch={row['best_epoch']}", file=sys.stderr)

    variants = [("full", False)] + ([("ablated", True)] if args.ablate_intra else [])
    report = {"n_samples": len(ds), "train_config": asdict(tcfg), "config": cfg,
              "reference_accuracy": {"full": REFERENCE_FULL_ACCURACY,
                                     "ablated": REFERENCE_ABLATED_ACCURACY}}
    for name, ablate in variants:
        trials = train_trials(ds, replace(tcfg, ablate_intra=ablate), seeds, log)
        first = trials[0]["result"]
        suffix = "" if name == "full" else "_ablated"
        save_weights(first.params, out / f"weights{suffix}.gzdm")
        write_history(first.history, out / f"history{suffix}.csv")
        report[name] = summarize_trials(trials)
    if args.ablate_intra:
        report["accuracy_drop"] = report["full"]["mean"] - report["ablated"]["mean"]
    (out / "summary.json").write_text(json.dumps(report, indent=2))
    rows = [{"variant": n, "mean": report[n]["mean"], "std": report[n]["std"]}
            for n, _ in variants]
    _emit(report, args, rows)
    return 0


def cmd_eval(args, cfg) -> int:
    params = load_weights(_need_file(args.weights, "weight file"))
    ds = read_csv(_need_file(args.data, "dataset"))
    metrics = evaluate(params, ds, args.ablate_intra)
    metrics["n_samples"] = len(ds)
    metrics["config"] = cfg
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2))
    _emit(metrics, args, [{"accuracy": metrics["accuracy"], "loss": metrics["loss"]}])
    return 0


def cmd_infer(args, cfg) -> int:
    t_start = time.perf_counter()
    params = load_weights(_need_file(args.weights, "weight file"))
    load_s = time.perf_counter() - t_start
    labels = None
    if args.events:
        events = read_events(_need_file(args.events, "event file"))
        feats = np.array([e.features for e in events if isinstance(e, GazeEvent)])
    elif args.data:
        ds = read_csv(_need_file(args.data, "dataset"))
        feats, labels = ds.features, ds.labels
    else:
        raise UsageError("infer needs --events or --data")
    if len(feats) == 0:
        raise UsageError("no gaze samples to run")
    n = max(args.min_samples, len(feats))
    per = np.empty(n)
    preds = np.empty(n, dtype=np.int64)
    for i in range(n):
        x = feats[i % len(feats)]
        t0 = time.perf_counter()
        p = forward(params, x, args.ablate_intra)
        per[i] = time.perf_counter() - t0
        preds[i] = int(np.argmax(p))
    report = {"samples": int(n), "load_time_s": load_s,
              "inference_time_s": float(per.mean()), "inference_std_s": float(per.std()),
              "total_time_s": time.perf_counter() - t_start,
              "budget_s": 1 / 60, "within_budget": bool(per.mean() < 1 / 60),
              "machine": bench_mod.machine_descriptor(), "config": cfg}
    if labels is not None:
        report["accuracy"] = float(np.mean(preds[:len(labels)] == labels))
    if args.events:
        policy = UpdatePolicy.parse(args.policy, args.rate)
        records, summary = run(read_events(args.events), policy, params,
                               ablate_intra=args.ablate_intra)
        if args.records:
            write_records(records, summary, args.records, args.summary_only)
        report["pipeline"] = summary
        report["digest"] = records_digest(records)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    _emit(report, args, [{k: report[k] for k in
                          ("samples", "load_time_s", "inference_time_s", "total_time_s")}])
    return 0


# ---- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gazetd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=0):
        sp.add_argument("--seed", type=int, default=seed)
        sp.add_argument("--out", default=None)
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--config", default=None, help="TOML file echoed into reports")
        return sp

    s = common(sub.add_parser("simulate", help="write a seeded scenario and its oracle"))
    s.add_argument("--policy", default="realtime")
    s.add_argument("--widgets", type=int, default=12)
    s.add_argument("--motion", default="drift+resize")
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("--rate", type=float, default=60.0)
    s.add_argument("--gaze-path", default="seek", choices=("seek", "sweep"))
    s.add_argument("--event-every", type=int, default=30)
    s.add_argument("--deltas", action="store_true")
    s.add_argument("--check", action="store_true", help="replay through the pipeline")
    s.add_argument("--weights", default=None)
    s.set_defaults(func=cmd_simulate)

    b = common(sub.add_parser("bench", help="latency sweep over widget counts"))
    b.add_argument("--scenarios", default="static,event,realtime")
    b.add_argument("--counts", default=None, help="comma-separated widget counts")
    b.add_argument("--durations", default=None, help="e.g. static=30,event=30,realtime=1")
    b.add_argument("--rate", type=float, default=60.0)
    b.add_argument("--motion", default="drift+resize")
    b.add_argument("--weights", default=None)
    b.set_defaults(func=cmd_bench)

    d = common(sub.add_parser("datagen", help="write a synthetic gaze-depth CSV"), seed=7)
    d.add_argument("-n", type=int, default=11000)
    d.set_defaults(func=cmd_datagen)

    t = common(sub.add_parser("train", help="train the depth model over several seeds"))
    t.add_argument("--data", default=None, help="CSV dataset (generated if omitted)")
    t.add_argument("-n", type=int, default=11000)
    t.add_argument("--data-seed", type=int, default=7)
    t.add_argument("--trials", type=int, default=5)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--embed-dim", type=int, default=32)
    t.add_argument("--ablate-intra", action="store_true",
                   help="also train without intra-stream attention and compare")
    t.set_defaults(func=cmd_train)

    e = common(sub.add_parser("eval", help="score a weight file on a dataset"))
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ablate-intra", action="store_true")
    e.set_defaults(func=cmd_eval)

    i = common(sub.add_parser("infer", help="time model loading and inference"))
    i.add_argument("--weights", required=True)
    i.add_argument("--data", default=None)
    i.add_argument("--events", default=None)
    i.add_argument("--policy", default="realtime")
    i.add_argument("--rate", type=float, default=60.0)
    i.add_argument("--records", default=None, help="write pipeline output JSONL here")
    i.add_argument("--summary-only", action="store_true")
    i.add_argument("--min-samples", type=int, default=1000)
    i.add_argument("--ablate-intra", action="store_true")
    i.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"gazetd {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"gazetd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
