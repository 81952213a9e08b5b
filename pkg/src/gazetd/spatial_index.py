"""Dynamic quadtree over the normalised display [0,1]^2.

Widgets are axis-aligned rectangles. A leaf splits into four equal quadrants
when it holds more than ``capacity`` widgets, unless its edge has reached
``min_size``. A widget is referenced by id in every leaf whose (closed) region
its (closed) rectangle touches; the records themselves live in one side table.

After every insert/remove the tree is in canonical form: a node is internal
exactly when more than ``capacity`` widgets touch it and it is larger than
``min_size``. The structure therefore depends only on the widget set, never
on the order of mutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable


class WidgetError(ValueError):
    pass


@dataclass(frozen=True)
class Widget:
    id: int
    x: float
    y: float
    dx: float
    dy: float
    z: int = 0

    @property
    def x1(self) -> float:
        return self.x + self.dx

    @property
    def y1(self) -> float:
        return self.y + self.dy

    @property
    def area(self) -> float:
        return self.dx * self.dy

    def contains(self, gx: float, gy: float) -> bool:
        return self.x <= gx <= self.x + self.dx and self.y <= gy <= self.y + self.dy

    def validate(self) -> None:
        if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 0:
            raise WidgetError(f"widget id must be a non-negative integer, got {self.id!r}")
        vals = (self.x, self.y, self.dx, self.dy)
        if not all(math.isfinite(v) for v in vals):
            raise WidgetError(f"widget {self.id}: non-finite geometry")
        if not (self.dx > 0 and self.dy > 0):
            raise WidgetError(f"widget {self.id}: extent must be positive")
        if not (0 <= self.x and self.x + self.dx <= 1 and 0 <= self.y and self.y + self.dy <= 1):
            raise WidgetError(f"widget {self.id}: rectangle leaves the display")

    def to_dict(self) -> dict:
        return {"id": self.id, "x": self.x, "y": self.y, "dx": self.dx, "dy": self.dy, "z": self.z}

    @classmethod
    def from_dict(cls, d: dict) -> "Widget":
        try:
            w = cls(int(d["id"]), float(d["x"]), float(d["y"]),
                    float(d["dx"]), float(d["dy"]), int(d.get("z", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise WidgetError(f"malformed widget record {d!r}: {exc}") from None
        w.validate()
        return w


@dataclass(frozen=True)
class GazePoint:
    gx: float
    gy: float
    t: float = 0.0


@dataclass(frozen=True)
class QuadtreeConfig:
    capacity: int = 1
    min_size: float = 1 / 256

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ValueError(f"capacity must be a positive integer, got {self.capacity!r}")
        if not 0 < self.min_size <= 1:
            raise ValueError(f"min_size must be in (0, 1], got {self.min_size!r}")
        m, e = math.frexp(self.min_size)
        if m != 0.5:
            raise ValueError(f"min_size must be a power of 1/2, got {self.min_size!r}")

    @property
    def max_depth(self) -> int:
        return round(-math.log2(self.min_size))


def tie_break_key(w: Widget):
    """Sort key: topmost first (higher z, then smaller area, then smaller id)."""
    return (-w.z, w.area, w.id)


def resolve_target(hits: Iterable[Widget]) -> Widget | None:
    best = None
    for w in hits:
        if best is None or tie_break_key(w) < tie_break_key(best):
            best = w
    return best


class _Node:
    __slots__ = ("x0", "y0", "size", "ids", "children")

    def __init__(self, x0, y0, size):
        self.x0 = x0
        self.y0 = y0
        self.size = size
        self.ids = []
        self.children = None

    def touches(self, w: Widget) -> bool:
        return (w.x <= self.x0 + self.size and w.x + w.dx >= self.x0
                and w.y <= self.y0 + self.size and w.y + w.dy >= self.y0)

    def quadrants(self):
        h = self.size / 2
        x, y = self.x0, self.y0
        # NW, NE, SW, SE with y growing downward from the top-left origin
        return [_Node(x, y, h), _Node(x + h, y, h), _Node(x, y + h, h), _Node(x + h, y + h, h)]


class Quadtree:
    """Point-query index over widgets on the unit square.

    Single writer, many readers: ``build`` returns a fresh tree, so swapping a
    reference to it is atomic for readers. ``insert`` and ``remove`` mutate in
    place and must not overlap with queries.
    """

    def __init__(self, config: QuadtreeConfig | None = None):
        self.config = config or QuadtreeConfig()
        self.root = _Node(0.0, 0.0, 1.0)
        self.widgets: dict[int, Widget] = {}

    @classmethod
    def build(cls, widgets: Iterable[Widget], config: QuadtreeConfig | None = None) -> "Quadtree":
        tree = cls(config)
        table = {}
        for w in widgets:
            w.validate()
            if w.id in table:
                raise WidgetError(f"duplicate widget id {w.id}")
            table[w.id] = w
        tree.widgets = table
        tree._fill(tree.root, list(table))
        return tree

    def _split_allowed(self, node: _Node, count: int) -> bool:
        return count > self.config.capacity and node.size > self.config.min_size

    def _fill(self, node: _Node, ids: list[int]) -> None:
        rects = {i: (w.x, w.y, w.x + w.dx, w.y + w.dy) for i, w in
                 ((i, self.widgets[i]) for i in ids)}
        self._fill_rects(node, ids, rects, self.config.capacity, self.config.min_size)

    @staticmethod
    def _fill_rects(node, ids, rects, cap, min_size):
        if len(ids) <= cap or node.size <= min_size:
            node.ids = ids
            return
        node.children = node.quadrants()
        for child in node.children:
            cx0, cy0 = child.x0, child.y0
            cx1, cy1 = cx0 + child.size, cy0 + child.size
            sub = []
            for i in ids:
                r = rects[i]
                if r[0] <= cx1 and r[2] >= cx0 and r[1] <= cy1 and r[3] >= cy0:
                    sub.append(i)
            Quadtree._fill_rects(child, sub, rects, cap, min_size)

    def __len__(self):
        return len(self.widgets)

    def __contains__(self, wid):
        return wid in self.widgets

    def insert(self, w: Widget) -> "Quadtree":
        w.validate()
        if w.id in self.widgets:
            raise WidgetError(f"duplicate widget id {w.id}")
        self.widgets[w.id] = w
        self._insert(self.root, w)
        return self

    def _insert(self, node: _Node, w: Widget) -> None:
        if node.children is not None:
            for child in node.children:
                if child.touches(w):
                    self._insert(child, w)
            return
        node.ids.append(w.id)
        if self._split_allowed(node, len(node.ids)):
            ids, node.ids = node.ids, []
            self._fill(node, ids)

    def remove(self, wid: int) -> "Quadtree":
        if wid not in self.widgets:
            raise WidgetError(f"unknown widget id {wid}")
        w = self.widgets.pop(wid)
        self._remove(self.root, w)
        return self

    def _remove(self, node: _Node, w: Widget) -> set:
        """Drop ``w`` below ``node``; return the distinct ids left in the subtree,
        collapsing it into a leaf once it no longer needs to be split."""
        if node.children is None:
            if w.id in node.ids:
                node.ids.remove(w.id)
            return set(node.ids)
        remaining = set()
        for child in node.children:
            if child.touches(w):
                remaining |= self._remove(child, w)
            else:
                remaining |= self._subtree_ids(child)
        if not self._split_allowed(node, len(remaining)):
            node.children = None
            node.ids = sorted(remaining)
        return remaining

    def _subtree_ids(self, node: _Node) -> set:
        if node.children is None:
            return set(node.ids)
        out = set()
        for c in node.children:
            out |= self._subtree_ids(c)
        return out

    def move(self, w: Widget) -> "Quadtree":
        self.remove(w.id)
        return self.insert(w)

    def query_point(self, gx: float, gy: float) -> list[Widget]:
        """All widgets whose closed rectangle contains the point, topmost first."""
        if not (0.0 <= gx <= 1.0 and 0.0 <= gy <= 1.0):
            raise ValueError(f"gaze point ({gx!r}, {gy!r}) outside the unit square")
        found = {}
        table = self.widgets
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.children is None:
                for i in node.ids:
                    if i not in found and table[i].contains(gx, gy):
                        found[i] = table[i]
                continue
            h = node.size / 2
            mx, my = node.x0 + h, node.y0 + h
            # both sides are descended when the point sits on a shared edge
            west, east = gx <= mx, gx >= mx
            north, south = gy <= my, gy >= my
            c = node.children
            if north and west:
                stack.append(c[0])
            if north and east:
                stack.append(c[1])
            if south and west:
                stack.append(c[2])
            if south and east:
                stack.append(c[3])
        return sorted(found.values(), key=tie_break_key)

    def target(self, gx: float, gy: float) -> Widget | None:
        return resolve_target(self.query_point(gx, gy))

    # -- introspection, mostly for tests and reports --

    def nodes(self):
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            yield node, depth
            if node.children is not None:
                stack.extend((c, depth + 1) for c in node.children)

    def depth(self) -> int:
        return max(d for _, d in self.nodes())

    def n_nodes(self) -> int:
        return sum(1 for _ in self.nodes())

    def signature(self):
        """Hashable structural fingerprint: (x0, y0, size, sorted leaf ids)."""
        out = []
        for node, _ in self.nodes():
            leaf = node.children is None
            out.append((node.x0, node.y0, node.size, tuple(sorted(node.ids)) if leaf else None))
        return tuple(sorted(out, key=lambda r: (r[2], r[0], r[1])))


def build(widgets, config: QuadtreeConfig | None = None) -> Quadtree:
    return Quadtree.build(widgets, config)


def brute_force_hits(widgets: Iterable[Widget], gx: float, gy: float) -> list[Widget]:
    """Linear scan reference; independent of the tree."""
    hits = [w for w in widgets if w.x <= gx <= w.x + w.dx and w.y <= gy <= w.y + w.dy]
    hits.sort(key=lambda w: (-w.z, w.dx * w.dy, w.id))
    return hits


def read_widgets_jsonl(path) -> list[Widget]:
    import json
    out, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                w = Widget.from_dict(json.loads(line))
            except (ValueError, WidgetError) as exc:
                raise WidgetError(f"{path}:{lineno}: {exc}") from None
            if w.id in seen:
                raise WidgetError(f"{path}:{lineno}: duplicate widget id {w.id}")
            seen.add(w.id)
            out.append(w)
    return out


def write_widgets_jsonl(widgets: Iterable[Widget], path) -> None:
    import json
    with open(path, "w") as fh:
        for w in widgets:
            fh.write(json.dumps(w.to_dict()) + "\n")
