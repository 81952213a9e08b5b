"""Streaming runtime: gaze target resolution and depth classification per event.

Events are consumed in order. Widget updates change the current widget set;
when the quadtree sees that set depends on the update policy:

* static    -- the tree is built once, from the set current at the first gaze
* event     -- every widget update is applied to the tree immediately
* realtime  -- the tree is rebuilt from the current set on a fixed tick

A realtime tick at time ``T`` sees every update with timestamp < ``T`` plus
those at ``T`` that precede the gaze event which triggered it.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .depth_model import DepthModelParams, forward
from .gaze_geometry import N_FEATURES
from .spatial_index import Quadtree, QuadtreeConfig, Widget, WidgetError, resolve_target


class PipelineError(ValueError):
    pass


class EventParseError(PipelineError):
    pass


@dataclass(frozen=True)
class GazeEvent:
    t: int
    features: tuple
    gx: float
    gy: float


@dataclass(frozen=True)
class WidgetSetEvent:
    t: int
    widgets: tuple


@dataclass(frozen=True)
class WidgetDeltaEvent:
    t: int
    op: str
    widget: Widget | None = None
    id: int | None = None

    def __post_init__(self):
        if self.op not in ("add", "remove", "move"):
            raise PipelineError(f"unknown delta op {self.op!r}")
        if self.op == "remove" and self.id is None:
            raise PipelineError("remove delta needs an id")
        if self.op != "remove" and self.widget is None:
            raise PipelineError(f"{self.op} delta needs a widget")

    @property
    def wid(self) -> int:
        return self.id if self.op == "remove" else self.widget.id


@dataclass(frozen=True)
class UpdatePolicy:
    kind: str
    tick_hz: float = 60.0

    def __post_init__(self):
        if self.kind not in ("static", "event", "realtime"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "realtime" and not self.tick_hz > 0:
            raise ValueError("tick_hz must be positive")

    @classmethod
    def parse(cls, text: str, tick_hz: float = 60.0) -> "UpdatePolicy":
        aliases = {"static": "static", "event": "event", "event-based": "event",
                   "eventbased": "event", "realtime": "realtime"}
        try:
            return cls(aliases[text.lower()], tick_hz)
        except KeyError:
            raise ValueError(f"unknown policy {text!r}") from None

    @property
    def tick_period_ms(self) -> float:
        return 1000.0 / self.tick_hz


def tick_time(t0: int, k: int, hz: float) -> int:
    """Integer-millisecond timestamp of tick ``k`` for a clock started at ``t0``."""
    return t0 + math.floor(k * 1000.0 / hz + 1e-9)


@dataclass
class OutputRecord:
    t: int
    target: int | None
    hits: list
    probs: list
    label: int
    latency_us: float
    tree_update_us: float = 0.0

    def to_dict(self, timing: bool = True) -> dict:
        d = {"t": self.t, "target": self.target, "hits": self.hits,
             "probs": self.probs, "label": self.label}
        if timing:
            d["latency_us"] = self.latency_us
            d["tree_update_us"] = self.tree_update_us
        return d


def _stats(xs):
    if not xs:
        return {"mean": 0.0, "std": 0.0, "max": 0.0}
    return {"mean": statistics.fmean(xs), "std": statistics.pstdev(xs), "max": max(xs)}


class GazePipeline:
    """Single-consumer event processor. Feed events with ``process``."""

    def __init__(self, policy: UpdatePolicy, weights: DepthModelParams,
                 qt_config: QuadtreeConfig | None = None, ablate_intra: bool = False,
                 clock=time.perf_counter_ns):
        self.policy = policy
        self.weights = weights
        self.qt_config = qt_config or QuadtreeConfig()
        self.ablate_intra = ablate_intra
        self.clock = clock
        self.current: dict[int, Widget] = {}
        self.tree = Quadtree(self.qt_config)
        self._frozen = False
        self._last_t = None
        self._t0 = None
        self._next_tick = 0
        self._pending_update_ns = 0
        self._tick_busy_ns = 0
        self.n_events = 0
        self.rebuilds = 0
        self.incremental_updates = 0
        self.ticks = 0
        self.missed_ticks = 0
        self.latencies: list[float] = []
        self.io_latencies: list[float] = []
        self.update_latencies: list[float] = []

    # -- widget set bookkeeping --

    def _apply_to_set(self, ev):
        if isinstance(ev, WidgetSetEvent):
            table = {}
            for w in ev.widgets:
                w.validate()
                if w.id in table:
                    raise WidgetError(f"duplicate widget id {w.id}")
                table[w.id] = w
            self.current = table
            return
        wid = ev.wid
        if ev.op == "add":
            if wid in self.current:
                raise WidgetError(f"duplicate widget id {wid}")
            ev.widget.validate()
            self.current[wid] = ev.widget
        elif ev.op == "remove":
            if wid not in self.current:
                raise WidgetError(f"unknown widget id {wid}")
            del self.current[wid]
        else:
            if wid not in self.current:
                raise WidgetError(f"unknown widget id {wid}")
            ev.widget.validate()
            self.current[wid] = ev.widget

    def _rebuild(self):
        start = self.clock()
        tree = Quadtree.build(self.current.values(), self.qt_config)
        self.tree = tree  # single reference swap
        self.rebuilds += 1
        return self.clock() - start

    def _fire_ticks(self, upto: int) -> int:
        """Run all ticks due at or before ``upto``; returns ns spent rebuilding."""
        hz = self.policy.tick_hz
        due = 0
        while tick_time(self._t0, self._next_tick, hz) <= upto:
            due += 1
            self._next_tick += 1
        if not due:
            return 0
        period_ns = self.policy.tick_period_ms * 1e6
        if self.ticks > 0 and self._tick_busy_ns > period_ns:
            self.missed_ticks += 1
        # the set cannot change between ticks that fall due together
        spent = self._rebuild()
        self.ticks += due
        self._tick_busy_ns = spent
        self.update_latencies.append(spent / 1e3)
        return spent

    # -- main entry --

    def process(self, ev) -> OutputRecord | None:
        if self._last_t is not None and ev.t < self._last_t:
            raise PipelineError(f"event {self.n_events}: timestamp {ev.t} precedes {self._last_t}")
        if self._t0 is None:
            self._t0 = ev.t
        self._last_t = ev.t
        self.n_events += 1
        kind = self.policy.kind

        if not isinstance(ev, GazeEvent):
            if kind == "realtime":
                # ticks strictly before this update must not see it
                self._pending_update_ns += self._fire_ticks(ev.t - 1)
                self._apply_to_set(ev)
                return None
            if kind == "static":
                if not self._frozen:
                    self._apply_to_set(ev)
                return None
            start = self.clock()
            if isinstance(ev, WidgetSetEvent):
                self._apply_to_set(ev)
                self.tree = Quadtree.build(self.current.values(), self.qt_config)
                self.rebuilds += 1
            else:
                self._apply_to_set(ev)
                if ev.op == "add":
                    self.tree.insert(ev.widget)
                elif ev.op == "remove":
                    self.tree.remove(ev.id)
                else:
                    self.tree.move(ev.widget)
                self.incremental_updates += 1
            spent = self.clock() - start
            self._pending_update_ns += spent
            self.update_latencies.append(spent / 1e3)
            return None

        if kind == "static" and not self._frozen:
            spent = self._rebuild()
            self._pending_update_ns += spent
            self.update_latencies.append(spent / 1e3)
            self._frozen = True
        elif kind == "realtime":
            self._pending_update_ns += self._fire_ticks(ev.t)

        start = self.clock()
        hits = self.tree.query_point(ev.gx, ev.gy)
        top = resolve_target(hits)
        probs = forward(self.weights, np.asarray(ev.features, dtype=float), self.ablate_intra)
        label = int(np.argmax(probs))
        end = self.clock()

        latency = (end - start) / 1e3
        update = self._pending_update_ns / 1e3
        self._pending_update_ns = 0
        self._tick_busy_ns += end - start
        self.latencies.append(latency)
        self.io_latencies.append(latency + update)
        return OutputRecord(ev.t, None if top is None else top.id, [w.id for w in hits],
                            [float(p) for p in probs], label, latency, update)

    def finish(self) -> dict:
        """Close the run and return summary statistics."""
        if self.policy.kind == "realtime" and self.ticks > 0 \
                and self._tick_busy_ns > self.policy.tick_period_ms * 1e6:
            self.missed_ticks += 1
            self._tick_busy_ns = 0
        return self.summary()

    def summary(self) -> dict:
        return {
            "policy": self.policy.kind,
            "tick_hz": self.policy.tick_hz if self.policy.kind == "realtime" else None,
            "events": self.n_events,
            "gaze_events": len(self.latencies),
            "rebuilds": self.rebuilds,
            "incremental_updates": self.incremental_updates,
            "ticks": self.ticks,
            "missed_ticks": self.missed_ticks,
            "latency_us": _stats(self.latencies),
            "io_latency_us": _stats(self.io_latencies),
            "tree_update_us": _stats(self.update_latencies),
        }


def iter_run(events: Iterable, pipeline: GazePipeline) -> Iterator[OutputRecord]:
    for ev in events:
        rec = pipeline.process(ev)
        if rec is not None:
            yield rec


def run(events: Iterable, policy: UpdatePolicy, weights: DepthModelParams,
        qt_config: QuadtreeConfig | None = None, ablate_intra: bool = False):
    """Process a whole stream; returns (records, summary)."""
    pipe = GazePipeline(policy, weights, qt_config, ablate_intra)
    records = list(iter_run(events, pipe))
    return records, pipe.finish()


def records_digest(records: Iterable[OutputRecord]) -> str:
    """SHA-256 over the timing-free part of the records."""
    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps(r.to_dict(timing=False), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


# ---- JSON Lines event format ----------------------------------------------

def event_to_dict(ev) -> dict:
    if isinstance(ev, GazeEvent):
        return {"t": ev.t, "gaze": {"features": list(ev.features), "gx": ev.gx, "gy": ev.gy}}
    if isinstance(ev, WidgetSetEvent):
        return {"t": ev.t, "widgets": [w.to_dict() for w in ev.widgets]}
    d = {"op": ev.op}
    if ev.op == "remove":
        d["id"] = ev.id
    else:
        d["widget"] = ev.widget.to_dict()
    return {"t": ev.t, "delta": d}


def event_from_dict(d: dict):
    if not isinstance(d, dict) or "t" not in d:
        raise ValueError("event needs a timestamp 't'")
    t = d["t"]
    if isinstance(t, bool) or not isinstance(t, int) or t < 0:
        raise ValueError(f"timestamp must be a non-negative integer, got {t!r}")
    kinds = [k for k in ("gaze", "widgets", "delta") if k in d]
    if len(kinds) != 1:
        raise ValueError("event must have exactly one of 'gaze', 'widgets', 'delta'")
    kind = kinds[0]
    if kind == "gaze":
        g = d["gaze"]
        feats = g.get("features")
        if not isinstance(feats, list) or len(feats) != N_FEATURES:
            raise ValueError(f"gaze needs a list of {N_FEATURES} features")
        gx, gy = float(g["gx"]), float(g["gy"])
        if not (0.0 <= gx <= 1.0 and 0.0 <= gy <= 1.0):
            raise ValueError(f"gaze point ({gx}, {gy}) outside the unit square")
        return GazeEvent(t, tuple(float(v) for v in feats), gx, gy)
    if kind == "widgets":
        ws = tuple(Widget.from_dict(w) for w in d["widgets"])
        ids = [w.id for w in ws]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate widget id in widget set")
        return WidgetSetEvent(t, ws)
    delta = d["delta"]
    op = delta.get("op")
    if op == "remove":
        return WidgetDeltaEvent(t, "remove", id=int(delta["id"]))
    if op in ("add", "move"):
        return WidgetDeltaEvent(t, op, widget=Widget.from_dict(delta["widget"]))
    raise ValueError(f"unknown delta op {op!r}")


def read_events(path) -> list:
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(event_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError, WidgetError, PipelineError) as exc:
                raise EventParseError(f"{path}:{lineno}: {exc}") from None
    return events


def write_events(events: Iterable, path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(event_to_dict(ev)) + "\n")


def replay_from_file(path, policy: UpdatePolicy, weights: DepthModelParams,
                     qt_config: QuadtreeConfig | None = None, ablate_intra: bool = False):
    return run(read_events(path), policy, weights, qt_config, ablate_intra)


def write_records(records: Iterable[OutputRecord], summary: dict, path,
                  summary_only: bool = False) -> None:
    with open(path, "w") as fh:
        if not summary_only:
            for r in records:
                fh.write(json.dumps(r.to_dict()) + "\n")
        fh.write(json.dumps({"summary": summary}) + "\n")
