"""Seeded widget/gaze scenarios with brute-force ground truth.

Motion models: ``drift`` (constant velocity, bouncing off the display edges),
``resize`` (sinusoidal width/height), ``churn`` (random despawn + respawn under
a fresh id). They can be combined with ``+``, e.g. ``drift+resize``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .gaze_geometry import GeneratorConfig, generate_dataset
from .pipeline import (GazeEvent, UpdatePolicy, WidgetDeltaEvent, WidgetSetEvent,
                       tick_time)
from .spatial_index import Widget, brute_force_hits

MOTIONS = ("drift", "resize", "churn")
GAZE_PATHS = ("sweep", "seek")


@dataclass
class ScenarioSpec:
    policy: str = "realtime"
    n_widgets: int = 12
    motion: str = "drift+resize"
    duration_s: float = 1.0
    rate_hz: float = 60.0
    gaze_path: str = "seek"
    seed: int = 0
    min_extent: float = 0.03
    max_extent: float = 0.12
    speed: float = 0.3
    resize_amplitude: float = 0.3
    resize_hz: float = 0.5
    churn_prob: float = 0.05
    event_every: int = 30
    deltas: bool = False

    def validate(self):
        UpdatePolicy.parse(self.policy, self.rate_hz)
        if self.n_widgets < 0:
            raise ValueError("n_widgets must be non-negative")
        for m in self.motions:
            if m not in MOTIONS:
                raise ValueError(f"unknown motion model {m!r}; choose from {MOTIONS}")
        if self.gaze_path not in GAZE_PATHS:
            raise ValueError(f"unknown gaze path {self.gaze_path!r}")
        if not (self.duration_s > 0 and self.rate_hz > 0):
            raise ValueError("duration and rate must be positive")
        if not 0 < self.min_extent <= self.max_extent < 1:
            raise ValueError("widget extents must satisfy 0 < min <= max < 1")
        if self.max_extent * (1 + self.resize_amplitude) >= 1:
            raise ValueError("resized widgets would not fit on the display")
        if self.event_every < 1:
            raise ValueError("event_every must be >= 1")

    @property
    def motions(self) -> tuple:
        if self.motion in ("", "none"):
            return ()
        return tuple(self.motion.split("+"))

    @property
    def n_ticks(self) -> int:
        return max(1, round(self.duration_s * self.rate_hz))


@dataclass
class _Mover:
    id: int
    x: float
    y: float
    base_dx: float
    base_dy: float
    vx: float
    vy: float
    phase: float
    z: int
    dx: float = 0.0
    dy: float = 0.0

    def widget(self) -> Widget:
        return Widget(self.id, self.x, self.y, self.dx, self.dy, self.z)


class _World:
    def __init__(self, spec: ScenarioSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.next_id = 0
        self.movers = [self._spawn() for _ in range(spec.n_widgets)]

    def _spawn(self) -> _Mover:
        s, rng = self.spec, self.rng
        dx, dy = rng.uniform(s.min_extent, s.max_extent, 2)
        ang = rng.uniform(0, 2 * math.pi)
        m = _Mover(self.next_id, 0.0, 0.0, float(dx), float(dy),
                   s.speed * math.cos(ang), s.speed * math.sin(ang),
                   float(rng.uniform(0, 2 * math.pi)), int(rng.integers(0, 4)), float(dx), float(dy))
        m.x = float(rng.uniform(0, 1 - dx))
        m.y = float(rng.uniform(0, 1 - dy))
        self.next_id += 1
        return m

    def widgets(self) -> tuple:
        return tuple(m.widget() for m in self.movers)

    def step(self, t_s: float, dt: float):
        s = self.spec
        motions = s.motions
        for m in self.movers:
            if "resize" in motions:
                k = 1 + s.resize_amplitude * math.sin(2 * math.pi * s.resize_hz * t_s + m.phase)
                m.dx, m.dy = m.base_dx * k, m.base_dy * k
            if "drift" in motions:
                m.x += m.vx * dt
                m.y += m.vy * dt
                if m.x < 0:
                    m.x, m.vx = -m.x, -m.vx
                if m.y < 0:
                    m.y, m.vy = -m.y, -m.vy
                if m.x + m.dx > 1:
                    m.x, m.vx = 2 * (1 - m.dx) - m.x, -m.vx
                if m.y + m.dy > 1:
                    m.y, m.vy = 2 * (1 - m.dy) - m.y, -m.vy
            # keep inside after a resize or an extreme bounce
            m.x = min(max(m.x, 0.0), 1.0 - m.dx)
            m.y = min(max(m.y, 0.0), 1.0 - m.dy)
        if "churn" in motions and self.movers:
            for i in range(len(self.movers)):
                if self.rng.random() < s.churn_prob:
                    self.movers[i] = self._spawn()


def _sweep_point(k: int, n: int):
    # boustrophedon raster over 8 rows, slightly inset from the edges
    rows = 8
    per_row = max(1, math.ceil(n / rows))
    r, c = divmod(k % (rows * per_row), per_row)
    u = (c + 0.5) / per_row
    if r % 2:
        u = 1 - u
    return 0.02 + 0.96 * u, 0.02 + 0.96 * (r + 0.5) / rows


def _seek_point(k: int, widgets, rng):
    if k % 2 == 0 and widgets:
        w = widgets[int(rng.integers(len(widgets)))]
        return w.x + w.dx / 2, w.y + w.dy / 2
    for _ in range(20):
        gx, gy = rng.uniform(0, 1, 2)
        if not any(w.contains(gx, gy) for w in widgets):
            break
    return float(gx), float(gy)


def _deltas(t, before: dict, after: dict):
    out = []
    for wid in sorted(before):
        if wid not in after:
            out.append(WidgetDeltaEvent(t, "remove", id=wid))
    for wid in sorted(after):
        if wid not in before:
            out.append(WidgetDeltaEvent(t, "add", widget=after[wid]))
        elif after[wid] != before[wid]:
            out.append(WidgetDeltaEvent(t, "move", widget=after[wid]))
    return out


def simulate(spec: ScenarioSpec, gen_cfg: GeneratorConfig | None = None):
    """Build the event stream and the expected (target, hits) per gaze event."""
    spec.validate()
    policy = UpdatePolicy.parse(spec.policy, spec.rate_hz)
    rng = np.random.default_rng(spec.seed)
    world = _World(spec, rng)
    n = spec.n_ticks
    samples = generate_dataset(n, spec.seed, gen_cfg)
    gaze_rng = np.random.default_rng(spec.seed + 7919)

    events, expected = [], []
    emitted = world.widgets()
    events.append(WidgetSetEvent(0, emitted))
    frozen = emitted
    for k in range(n):
        t = tick_time(0, k, spec.rate_hz)
        if k > 0 and policy.kind != "static":
            world.step(k / spec.rate_hz, 1.0 / spec.rate_hz)
            if policy.kind == "realtime" or k % spec.event_every == 0:
                current = world.widgets()
                if spec.deltas and policy.kind == "event":
                    events.extend(_deltas(t, {w.id: w for w in emitted},
                                          {w.id: w for w in current}))
                else:
                    events.append(WidgetSetEvent(t, current))
                emitted = current
        visible = frozen if policy.kind == "static" else emitted
        if spec.gaze_path == "sweep":
            gx, gy = _sweep_point(k, n)
        else:
            gx, gy = _seek_point(k, visible, gaze_rng)
        events.append(GazeEvent(t, tuple(float(v) for v in samples.features[k]), gx, gy))
        hits = brute_force_hits(visible, gx, gy)
        expected.append({"t": t, "target": hits[0].id if hits else None,
                         "hits": [w.id for w in hits]})
    return events, expected


def write_expected(expected, path):
    with open(path, "w") as fh:
        for row in expected:
            fh.write(json.dumps(row) + "\n")


def read_expected(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def compare(records, expected) -> list:
    """Mismatches between pipeline records and the oracle, as readable strings."""
    out = []
    if len(records) != len(expected):
        out.append(f"record count {len(records)} != expected {len(expected)}")
    for i, (r, e) in enumerate(zip(records, expected)):
        if r.t != e["t"] or r.target != e["target"] or r.hits != e["hits"]:
            out.append(f"#{i} t={e['t']}: got target={r.target} hits={r.hits}, "
                       f"expected target={e['target']} hits={e['hits']}")
    return out


def spec_dict(spec: ScenarioSpec) -> dict:
    return asdict(spec)
