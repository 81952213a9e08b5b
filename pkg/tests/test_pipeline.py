import json
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazetd.depth_model import forward, init_params
from gazetd.gaze_geometry import generate_dataset
from gazetd.pipeline import (EventParseError, GazeEvent, GazePipeline, PipelineError,
                             UpdatePolicy, WidgetDeltaEvent, WidgetSetEvent, read_events,
                             records_digest, replay_from_file, run, tick_time, write_events,
                             write_records)
from gazetd.scenarios import ScenarioSpec, compare, simulate
from gazetd.spatial_index import (QuadtreeConfig, Widget, WidgetError, brute_force_hits,
                                  resolve_target)
from strategies import points, widget_sets

WEIGHTS = init_params(0)
FEATS = generate_dataset(64, 5).features
POLICIES = [UpdatePolicy("static"), UpdatePolicy("event"), UpdatePolicy("realtime", 60.0)]


def gaze(t, gx, gy, i=0):
    return GazeEvent(t, tuple(FEATS[i % len(FEATS)]), gx, gy)


class TestPolicy:
    def test_parse(self):
        assert UpdatePolicy.parse("Event-Based").kind == "event"
        assert UpdatePolicy.parse("realtime", 30).tick_period_ms == pytest.approx(1000 / 30)
        with pytest.raises(ValueError):
            UpdatePolicy.parse("sometimes")
        with pytest.raises(ValueError):
            UpdatePolicy("realtime", 0.0)

    def test_tick_times(self):
        assert [tick_time(0, k, 60) for k in range(4)] == [0, 16, 33, 50]
        assert tick_time(5, 60, 60) == 1005
        assert tick_time(0, 3, 1000) == 3


class TestRun:
    @pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.kind)
    def test_single_widget_hit(self, policy):
        w = Widget(1, 0.2, 0.2, 0.3, 0.3)
        recs, _ = run([WidgetSetEvent(0, (w,)), gaze(0, 0.3, 0.3)], policy, WEIGHTS)
        assert len(recs) == 1
        r = recs[0]
        assert r.target == 1 and r.hits == [1]
        np.testing.assert_array_equal(r.probs, forward(WEIGHTS, FEATS[0]))
        assert r.label == int(np.argmax(r.probs))
        assert abs(sum(r.probs) - 1) <= 1e-9
        assert r.latency_us >= 0 and r.tree_update_us >= 0

    @pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.kind)
    def test_miss(self, policy):
        w = Widget(1, 0.2, 0.2, 0.1, 0.1)
        recs, _ = run([WidgetSetEvent(0, (w,)), gaze(1, 0.9, 0.9)], policy, WEIGHTS)
        assert recs[0].target is None and recs[0].hits == []

    def test_no_widgets_at_all(self):
        recs, summary = run([gaze(0, 0.5, 0.5)], UpdatePolicy("event"), WEIGHTS)
        assert recs[0].target is None
        assert summary["rebuilds"] == 0

    def widget_moves_away(self):
        w = Widget(1, 0.4, 0.4, 0.2, 0.2)
        moved = Widget(1, 0.0, 0.0, 0.1, 0.1)
        return [WidgetSetEvent(0, (w,)), gaze(10, 0.5, 0.5), WidgetSetEvent(20, (moved,)),
                gaze(30, 0.5, 0.5), gaze(40, 0.5, 0.5)]

    def test_moving_widget_event_policy(self):
        recs, s = run(self.widget_moves_away(), UpdatePolicy("event"), WEIGHTS)
        assert [r.target for r in recs] == [1, None, None]
        assert s["rebuilds"] == 2

    def test_moving_widget_static_policy(self):
        recs, s = run(self.widget_moves_away(), UpdatePolicy("static"), WEIGHTS)
        assert [r.target for r in recs] == [1, 1, 1]
        assert s["rebuilds"] == 1

    def test_moving_widget_realtime_policy(self):
        # ticks at 0, 16, 33 ms: the t=16 tick precedes the move, so t=30 is still stale
        recs, s = run(self.widget_moves_away(), UpdatePolicy("realtime", 60), WEIGHTS)
        assert [r.target for r in recs] == [1, 1, None]
        assert s["ticks"] == 3

    def test_update_at_same_timestamp_is_visible(self):
        w = Widget(1, 0.4, 0.4, 0.2, 0.2)
        evs = [WidgetSetEvent(0, ()), WidgetSetEvent(16, (w,)), gaze(16, 0.5, 0.5)]
        for policy in POLICIES[1:]:
            recs, _ = run(evs, policy, WEIGHTS)
            assert recs[0].target == 1, policy.kind

    def test_overlap_resolution(self):
        low = Widget(1, 0.1, 0.1, 0.5, 0.5, z=0)
        high = Widget(2, 0.3, 0.3, 0.5, 0.5, z=3)
        recs, _ = run([WidgetSetEvent(0, (low, high)), gaze(0, 0.4, 0.4)],
                      UpdatePolicy("event"), WEIGHTS)
        assert recs[0].target == 2 and recs[0].hits == [2, 1]

    def test_deltas(self):
        a, b = Widget(1, 0.1, 0.1, 0.2, 0.2), Widget(2, 0.6, 0.6, 0.2, 0.2)
        evs = [WidgetSetEvent(0, (a,)), WidgetDeltaEvent(1, "add", widget=b), gaze(2, 0.7, 0.7),
               WidgetDeltaEvent(3, "move", widget=Widget(2, 0.0, 0.5, 0.1, 0.1)),
               gaze(4, 0.7, 0.7), gaze(4, 0.05, 0.55), WidgetDeltaEvent(5, "remove", id=1),
               gaze(6, 0.15, 0.15)]
        recs, s = run(evs, UpdatePolicy("event"), WEIGHTS)
        assert [r.target for r in recs] == [2, None, 2, None]
        assert s["incremental_updates"] == 3 and s["rebuilds"] == 1

    @pytest.mark.parametrize("bad", [
        WidgetDeltaEvent(1, "remove", id=9),
        WidgetDeltaEvent(1, "move", widget=Widget(9, 0, 0, 0.1, 0.1)),
        WidgetDeltaEvent(1, "add", widget=Widget(1, 0, 0, 0.1, 0.1)),
        WidgetSetEvent(1, (Widget(3, 0, 0, 0.1, 0.1), Widget(3, 0.5, 0.5, 0.1, 0.1))),
    ])
    def test_invalid_updates(self, bad):
        evs = [WidgetSetEvent(0, (Widget(1, 0.5, 0.5, 0.1, 0.1),)), bad]
        with pytest.raises(WidgetError):
            run(evs, UpdatePolicy("event"), WEIGHTS)

    def test_bad_delta_shape(self):
        with pytest.raises(PipelineError):
            WidgetDeltaEvent(0, "remove")
        with pytest.raises(PipelineError):
            WidgetDeltaEvent(0, "warp", widget=Widget(1, 0, 0, 0.1, 0.1))

    @pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.kind)
    def test_out_of_order(self, policy):
        with pytest.raises(PipelineError, match="precedes"):
            run([gaze(5, 0.1, 0.1), gaze(4, 0.1, 0.1)], policy, WEIGHTS)

    def test_multiple_gaze_events_per_timestamp(self):
        w = Widget(1, 0.0, 0.0, 0.5, 0.5)
        evs = [WidgetSetEvent(0, (w,)), gaze(3, 0.1, 0.1, 0), gaze(3, 0.9, 0.9, 1)]
        recs, _ = run(evs, UpdatePolicy("realtime"), WEIGHTS)
        assert [(r.t, r.target) for r in recs] == [(3, 1), (3, None)]


class TestRealtimeAccounting:
    def fake_clock(self, step_ns):
        counter = itertools.count(0, step_ns)
        return lambda: next(counter)

    def test_missed_ticks_when_busy(self):
        # every clock read advances 20 ms, longer than a 60 Hz period
        pipe = GazePipeline(UpdatePolicy("realtime", 60), WEIGHTS, clock=self.fake_clock(20_000_000))
        evs = [WidgetSetEvent(0, ())] + [gaze(tick_time(0, k, 60), 0.5, 0.5) for k in range(5)]
        for ev in evs:
            pipe.process(ev)
        s = pipe.finish()
        assert s["ticks"] == 5
        assert s["missed_ticks"] == 5

    def test_no_missed_ticks_when_fast(self):
        pipe = GazePipeline(UpdatePolicy("realtime", 60), WEIGHTS, clock=self.fake_clock(1000))
        evs = [WidgetSetEvent(0, ())] + [gaze(tick_time(0, k, 60), 0.5, 0.5) for k in range(5)]
        for ev in evs:
            pipe.process(ev)
        s = pipe.finish()
        assert s["ticks"] == 5 and s["missed_ticks"] == 0
        assert s["latency_us"]["mean"] == pytest.approx(1.0)

    def test_skipped_ticks_counted_once_rebuilt_once(self):
        evs = [WidgetSetEvent(0, ()), gaze(0, 0.5, 0.5), gaze(100, 0.5, 0.5)]
        _, s = run(evs, UpdatePolicy("realtime", 60), WEIGHTS)
        # ticks at 0, 16, 33, 50, 66, 83, 100
        assert s["ticks"] == 7 and s["rebuilds"] == 2


class TestScenarios:
    @pytest.mark.parametrize("policy", ["static", "event", "realtime"])
    @pytest.mark.parametrize("motion", ["drift", "drift+resize", "churn", "drift+resize+churn"])
    def test_pipeline_matches_oracle(self, policy, motion):
        spec = ScenarioSpec(policy=policy, motion=motion, n_widgets=15, duration_s=2.0,
                            seed=3, event_every=7)
        events, expected = simulate(spec)
        recs, _ = run(events, UpdatePolicy.parse(policy), WEIGHTS)
        assert compare(recs, expected) == []

    def test_one_second_counts(self):
        events, expected = simulate(ScenarioSpec(policy="realtime", n_widgets=12))
        gazes = [e for e in events if isinstance(e, GazeEvent)]
        updates = [e for e in events if isinstance(e, WidgetSetEvent)]
        assert len(gazes) == 60 and len(expected) == 60
        assert len(updates) == 60  # initial set + 59 per-tick updates

    def test_zero_widgets(self):
        _, expected = simulate(ScenarioSpec(n_widgets=0))
        assert all(e["target"] is None for e in expected)

    def test_seek_path_hits_and_misses(self):
        _, expected = simulate(ScenarioSpec(n_widgets=12, duration_s=2.0))
        targets = [e["target"] for e in expected]
        assert any(t is None for t in targets) and any(t is not None for t in targets)

    def test_delta_stream_equals_full_stream(self):
        base = dict(policy="event", motion="drift+resize+churn", n_widgets=20,
                    duration_s=2.0, event_every=3, seed=11)
        full, exp_full = simulate(ScenarioSpec(**base))
        delta, exp_delta = simulate(ScenarioSpec(**base, deltas=True))
        assert exp_full == exp_delta
        assert any(isinstance(e, WidgetDeltaEvent) for e in delta)
        r_full, _ = run(full, UpdatePolicy("event"), WEIGHTS)
        r_delta, _ = run(delta, UpdatePolicy("event"), WEIGHTS)
        assert records_digest(r_full) == records_digest(r_delta)

    def test_depth_independent_of_policy(self):
        events, _ = simulate(ScenarioSpec(policy="realtime", n_widgets=8, seed=4))
        probs = [[r.probs for r in run(events, p, WEIGHTS)[0]] for p in POLICIES]
        assert probs[0] == probs[1] == probs[2]

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            simulate(ScenarioSpec(motion="teleport"))
        with pytest.raises(ValueError):
            simulate(ScenarioSpec(policy="never"))


@settings(max_examples=40)
@given(widget_sets(max_size=15), st.lists(points, min_size=1, max_size=10))
def test_static_scene_policies_agree(ws, pts):
    evs = [WidgetSetEvent(0, tuple(ws))] + [gaze(5 * i, x, y, i) for i, (x, y) in enumerate(pts)]
    outs = []
    for p in POLICIES:
        recs, _ = run(evs, p, WEIGHTS, QuadtreeConfig(1, 1 / 32))
        outs.append([(r.target, r.hits) for r in recs])
    assert outs[0] == outs[1] == outs[2]
    want = []
    for x, y in pts:
        hits = brute_force_hits(ws, x, y)
        top = resolve_target(hits)
        want.append((None if top is None else top.id, [w.id for w in hits]))
    assert outs[0] == want


class TestFiles:
    def scenario_file(self, tmp_path, **kw):
        events, expected = simulate(ScenarioSpec(**kw))
        path = tmp_path / "events.jsonl"
        write_events(events, path)
        return events, expected, path

    def test_round_trip(self, tmp_path):
        events, _, path = self.scenario_file(tmp_path, policy="event", deltas=True,
                                             motion="churn", event_every=2, seed=2)
        assert read_events(path) == events

    def test_double_replay_identical(self, tmp_path):
        events, _, path = self.scenario_file(tmp_path, policy="realtime", seed=9)
        policy = UpdatePolicy("realtime")
        a, _ = replay_from_file(path, policy, WEIGHTS)
        b, _ = replay_from_file(path, policy, WEIGHTS)
        c, _ = run(events, policy, WEIGHTS)
        assert records_digest(a) == records_digest(b) == records_digest(c)

    @pytest.mark.parametrize("line,msg", [
        ('{"gaze": {}}', "timestamp"),
        ('{"t": -1, "widgets": []}', "non-negative"),
        ('{"t": 1}', "exactly one"),
        ('{"t": 1, "gaze": {"features": [0, 1], "gx": 0.1, "gy": 0.1}}', "15 features"),
        ('{"t": 1, "gaze": {"features": ' + json.dumps([0.0] * 15) + ', "gx": 2, "gy": 0}}', "outside"),
        ('{"t": 1, "delta": {"op": "warp"}}', "warp"),
        ('{"t": 1, "widgets": [{"id": 1, "x": 0.9, "y": 0, "dx": 0.5, "dy": 0.1}]}', "1"),
        ("not json", ""),
    ])
    def test_parse_errors_have_line_numbers(self, tmp_path, line, msg):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"t": 0, "widgets": []}\n\n' + line + "\n")
        with pytest.raises(EventParseError, match=r"bad\.jsonl:3:.*" + msg):
            read_events(path)

    def test_write_records(self, tmp_path):
        events, _, path = self.scenario_file(tmp_path, n_widgets=3, duration_s=0.2)
        recs, summary = replay_from_file(path, UpdatePolicy("realtime"), WEIGHTS)
        out = tmp_path / "out.jsonl"
        write_records(recs, summary, out)
        lines = [json.loads(x) for x in out.read_text().splitlines()]
        assert len(lines) == len(recs) + 1
        assert lines[-1]["summary"]["gaze_events"] == len(recs)
        write_records(recs, summary, out, summary_only=True)
        assert len(out.read_text().splitlines()) == 1

    def test_summary_fields(self):
        events, _ = simulate(ScenarioSpec(policy="realtime", n_widgets=4, duration_s=0.5))
        _, s = run(events, UpdatePolicy("realtime"), WEIGHTS)
        assert s["gaze_events"] == 30 and s["events"] == len(events)
        for key in ("latency_us", "io_latency_us", "tree_update_us"):
            assert set(s[key]) == {"mean", "std", "max"}
            assert s[key]["max"] >= s[key]["mean"] >= 0
