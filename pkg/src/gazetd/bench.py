"""Latency sweep over widget counts and update policies."""

from __future__ import annotations

import csv
import json
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from .depth_model import DepthModelParams
from .pipeline import GazeEvent, GazePipeline, UpdatePolicy, iter_run
from .scenarios import ScenarioSpec, compare, simulate

DEFAULT_COUNTS = tuple(range(1, 13)) + (25, 50, 100, 200)
# seconds of operation per point, as in the original latency protocol
DEFAULT_DURATIONS = {"static": 30.0, "event": 30.0, "realtime": 1.0}
WARMUP_EVENTS = 100

ROW_FIELDS = ("scenario", "n_widgets", "samples", "mean_us", "std_us", "max_us",
              "io_mean_us", "io_std_us", "update_mean_us", "rebuilds", "ticks",
              "missed_ticks", "oracle_mismatches")


@dataclass
class SweepSpec:
    scenarios: tuple = ("static", "event", "realtime")
    counts: tuple = DEFAULT_COUNTS
    durations: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    rate_hz: float = 60.0
    motion: str = "drift+resize"
    seed: int = 0

    def validate(self):
        for s in self.scenarios:
            UpdatePolicy.parse(s)
        if not self.counts or min(self.counts) < 1:
            raise ValueError("widget counts must be positive")
        if any(d <= 0 for d in self.durations.values()):
            raise ValueError("durations must be positive")


def machine_descriptor() -> dict:
    return {"platform": platform.platform(), "machine": platform.machine(),
            "processor": platform.processor() or "unknown", "python": platform.python_version(),
            "cpus": os.cpu_count()}


def _warm_up(events, policy, weights):
    pipe = GazePipeline(policy, weights)
    seen = 0
    for ev in events:
        pipe.process(ev)
        seen += isinstance(ev, GazeEvent)
        if seen >= WARMUP_EVENTS:
            break


def measure(spec: ScenarioSpec, weights: DepthModelParams) -> dict:
    """Run one scenario end to end and return its report row."""
    events, expected = simulate(spec)
    policy = UpdatePolicy.parse(spec.policy, spec.rate_hz)
    _warm_up(events, policy, weights)
    pipe = GazePipeline(policy, weights)
    records = list(iter_run(events, pipe))
    summ = pipe.finish()
    lat, io, upd = summ["latency_us"], summ["io_latency_us"], summ["tree_update_us"]
    return {
        "scenario": policy.kind, "n_widgets": spec.n_widgets, "samples": len(records),
        "mean_us": lat["mean"], "std_us": lat["std"], "max_us": lat["max"],
        "io_mean_us": io["mean"], "io_std_us": io["std"], "update_mean_us": upd["mean"],
        "rebuilds": summ["rebuilds"], "ticks": summ["ticks"],
        "missed_ticks": summ["missed_ticks"],
        "oracle_mismatches": len(compare(records, expected)),
    }


def loglog_slope(counts, values) -> float | None:
    c = np.asarray(counts, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = (c > 0) & (v > 0)
    if ok.sum() < 2 or len(np.unique(c[ok])) < 2:
        return None
    return float(np.polyfit(np.log(c[ok]), np.log(v[ok]), 1)[0])


def run_sweep(sweep: SweepSpec, weights: DepthModelParams, progress=None) -> dict:
    sweep.validate()
    rows = []
    for scenario in sweep.scenarios:
        kind = UpdatePolicy.parse(scenario).kind
        for n in sweep.counts:
            spec = ScenarioSpec(policy=kind, n_widgets=n, motion=sweep.motion,
                                duration_s=sweep.durations[kind], rate_hz=sweep.rate_hz,
                                seed=sweep.seed)
            row = measure(spec, weights)
            rows.append(row)
            if progress is not None:
                progress(row)
    scaling = {}
    for scenario in sweep.scenarios:
        kind = UpdatePolicy.parse(scenario).kind
        sub = [r for r in rows if r["scenario"] == kind]
        counts = [r["n_widgets"] for r in sub]
        slope = loglog_slope(counts, [r["mean_us"] for r in sub])
        io_slope = loglog_slope(counts, [r["io_mean_us"] for r in sub])
        scaling[kind] = {
            "latency_slope": slope, "io_latency_slope": io_slope,
            "latency_super_linear": slope is not None and slope > 1.0,
            "io_latency_super_linear": io_slope is not None and io_slope > 1.0,
        }
    return {"rows": rows, "scaling": scaling, "machine": machine_descriptor(),
            "config": {"scenarios": list(sweep.scenarios), "counts": list(sweep.counts),
                       "durations": sweep.durations, "rate_hz": sweep.rate_hz,
                       "motion": sweep.motion, "seed": sweep.seed,
                       "warmup_events": WARMUP_EVENTS}}


def write_report(report: dict, json_path=None, csv_path=None):
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(report, fh, indent=2)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
            w.writeheader()
            for row in report["rows"]:
                w.writerow(row)
