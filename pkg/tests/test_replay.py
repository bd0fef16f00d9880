import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from petridecay.errors import ReplayError
from petridecay.event_log import EventInstance, EventLog, Trace
from petridecay.petri_net import build_net
from petridecay.replay import (ReplayPolicy, ReplayStats, aggregate, debug_csv, fitness, log_fitness,
                               replay_log, replay_trace, select_model)
from petridecay.simulate import random_block_net, simulate_log


def trace(*events, start=0.0, step=10.0, case="c"):
    return Trace(case, tuple(EventInstance(e, start + i * step) for i, e in enumerate(events)))


def test_fitting_trace(linear_abc):
    r = replay_trace(linear_abc, trace("A", "B", "C"))
    assert (r.stats.missing, r.stats.remaining) == (0, 0)
    assert r.stats.consumed == r.stats.produced == 4
    assert fitness(r.stats) == 1.0


def test_skipped_activity_costs_one_missing_token(linear_abc):
    # hand-run token game: A moves p0->p1, C finds p2 empty (missing 1), p1 keeps its token
    r = replay_trace(linear_abc, trace("A", "C"))
    assert r.stats == ReplayStats(missing=1, consumed=3, remaining=1, produced=3)
    assert fitness(r.stats) == pytest.approx(2 / 3)
    assert [f.kind for f in r.firings] == ["observable", "forced"]


def test_hidden_transition_bridges_gap():
    net = build_net(["p0", "p1", "p2", "p3"], [("tA", "A"), ("h", None), ("tC", "C")],
                    [("p0", "tA"), ("tA", "p1"), ("p1", "h"), ("h", "p2"), ("p2", "tC"), ("tC", "p3")])
    r = replay_trace(net, trace("A", "C"))
    assert r.stats.missing == 0 and r.stats.remaining == 0
    assert [f.kind for f in r.firings] == ["observable", "hidden", "observable"]
    # the hidden firing inherits the timestamp of the instance that needed it
    assert r.firings[1].time == 10.0
    assert [(e.place_index, e.time) for e in r.entries] == [(1, 0.0), (2, 10.0), (3, 10.0)]


def test_hidden_depth_zero_disables_search():
    net = build_net(["p0", "p1", "p2", "p3"], [("tA", "A"), ("h", None), ("tC", "C")],
                    [("p0", "tA"), ("tA", "p1"), ("p1", "h"), ("h", "p2"), ("p2", "tC"), ("tC", "p3")])
    r = replay_trace(net, trace("A", "C"), ReplayPolicy(hidden_depth=0))
    assert r.stats.missing == 1


def test_closing_hidden_firings_reach_sink():
    net = build_net(["p0", "p1", "p2"], [("tA", "A"), ("h", None)],
                    [("p0", "tA"), ("tA", "p1"), ("p1", "h"), ("h", "p2")])
    r = replay_trace(net, trace("A"))
    assert r.stats.remaining == 0 and r.stats.missing == 0
    assert r.firings[-1].closing


@pytest.mark.parametrize("stats,expected", [
    (ReplayStats(0, 10, 0, 10), 1.0),
    (ReplayStats(2, 10, 2, 10), 0.8),
])
def test_fitness_arithmetic(stats, expected):
    assert fitness(stats) == expected


def test_fitness_of_empty_replay_is_an_error():
    with pytest.raises(ReplayError):
        fitness(ReplayStats())


def test_unknown_event_policies(linear_abc):
    good = replay_trace(linear_abc, trace("A", "B", "C"))
    bad = replay_trace(linear_abc, trace("A", "X", "B", "C"))
    assert bad.skipped == [1] and bad.stats.skipped_events == 1
    assert fitness(bad.stats) < fitness(good.stats)
    with pytest.raises(ReplayError, match="X"):
        replay_trace(linear_abc, trace("A", "X"), ReplayPolicy(unknown_events="error"))


def test_select_model_examples(linear_abc):
    lg = EventLog((trace("A", "B", "C"),))
    assert select_model([linear_abc], lg)[0] is linear_abc
    worse = build_net(["p0", "p1", "p2"], [("tA", "A"), ("tB", "B")],
                      [("p0", "tA"), ("tA", "p1"), ("p1", "tB"), ("tB", "p2")])
    best, scores = select_model([worse, linear_abc], lg)
    assert best is linear_abc and scores[0] < scores[1]


def test_select_model_tie_prefers_fewer_nodes():
    big = build_net(["p0", "p1", "p2", "p3"], [("tA", "A"), ("h", None), ("tB", "B")],
                    [("p0", "tA"), ("tA", "p1"), ("p1", "h"), ("h", "p2"), ("p2", "tB"), ("tB", "p3")])
    small = build_net(["p0", "p1", "p2"], [("tA", "A"), ("tB", "B")],
                      [("p0", "tA"), ("tA", "p1"), ("p1", "tB"), ("tB", "p2")])
    lg = EventLog((trace("A", "B"),))
    best, scores = select_model([big, small], lg)
    assert scores == [1.0, 1.0] and best is small


def test_debug_csv(linear_abc):
    lg = EventLog((trace("A", "C", case="k1"),))
    rows = list(csv.DictReader(io.StringIO(debug_csv(linear_abc, lg, replay_log(linear_abc, lg)))))
    assert [r["fired_transition"] for r in rows] == ["tA", "tC"]
    assert rows[1]["kind"] == "forced" and rows[0]["trace_id"] == "k1"
    assert rows[1]["marking_after"] == "0 1 0 1"


@st.composite
def net_and_log(draw):
    net = random_block_net(np.random.default_rng(draw(st.integers(0, 10_000))), draw(st.integers(1, 5)))
    labels = sorted(net.labels) + ["Z"]
    traces = []
    for i in range(draw(st.integers(1, 4))):
        evs = draw(st.lists(st.sampled_from(labels), min_size=1, max_size=8))
        traces.append(trace(*evs, case=f"c{i}"))
    return net, EventLog(tuple(traces))


@given(net_and_log())
def test_replay_invariants(nl):
    net, lg = nl
    reps = replay_log(net, lg)
    again = replay_log(net, lg)
    for r, r2, tr in zip(reps, again, lg):
        st_ = r.stats
        assert min(st_.missing, st_.consumed, st_.remaining, st_.produced) >= 0
        assert st_.consumed <= st_.produced + st_.missing
        times = [e.time for e in r.entries]
        assert times == sorted(times)
        assert set(times) <= {e.timestamp for e in tr}
        assert r.entries == r2.entries and r.stats == r2.stats
        assert len(r.markings) == len(tr)
    assert 0.0 <= log_fitness(net, lg) <= 1.0


@given(st.lists(st.tuples(*[st.integers(0, 50)] * 5), min_size=1, max_size=6))
def test_stats_aggregation_is_order_free(rows):
    parts = [ReplayStats(*r) for r in rows]
    total = ReplayStats()
    for p in reversed(parts):
        total = p + total
    fwd = ReplayStats()
    for p in parts:
        fwd = fwd + p
    assert total == fwd


@given(st.integers(0, 5_000), st.integers(1, 6))
def test_self_generated_logs_fit_perfectly(seed, n):
    net = random_block_net(np.random.default_rng(seed), n)
    lg = simulate_log(net, 5, seed=seed)
    assert log_fitness(net, lg) == 1.0
    assert aggregate(replay_log(net, lg)).missing == 0
