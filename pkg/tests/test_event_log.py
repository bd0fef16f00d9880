import warnings

import pytest
from hypothesis import given, strategies as st

from petridecay.errors import ConfigError, LogParseError, ValidationError
from petridecay.event_log import (CsvMapping, EventInstance, EventLog, LogWarning, Trace, concat,
                                  format_timestamp, parse_csv, parse_timestamp, parse_xes,
                                  serialize_csv, serialize_xes, split_folds, split_traces)

XES_HEAD = '<?xml version="1.0" encoding="UTF-8"?>\n<log xmlns="http://www.xes-standard.org/">\n'


def xes(*traces):
    body = []
    for cid, events in traces:
        body.append(f'<trace><string key="concept:name" value="{cid}"/>')
        for ev in events:
            attrs = "".join(f'<{kind} key="{k}" value="{v}"/>' for kind, k, v in ev[2:])
            body.append(f'<event><string key="concept:name" value="{ev[0]}"/>'
                        f'<date key="time:timestamp" value="{ev[1]}"/>{attrs}</event>')
        body.append("</trace>")
    return (XES_HEAD + "\n".join(body) + "\n</log>\n").encode()


def test_minimal_xes():
    lg = parse_xes(xes(("c1", [("A", "2020-01-01T00:00:00Z"), ("B", "2020-01-01T00:01:00Z")])))
    assert len(lg) == 1
    assert lg.alphabet == {"A", "B"}
    assert lg[0].duration == 60.0
    assert lg.instance(0, 1).event_name == "B"


def test_xes_keeps_attributes_and_kinds():
    lg = parse_xes(xes(("c1", [("A", "2020-01-01T00:00:00Z", ("string", "org:resource", "R1"),
                                ("int", "cost", "35"))])))
    e = lg.instance(0, 0)
    assert e.attributes == {"org:resource": "R1", "cost": "35"}
    assert lg.attribute_schema == {"org:resource": "categorical", "cost": "continuous"}


def test_xes_resorts_out_of_order_events_with_warning():
    data = xes(("c1", [("A", "2020-01-01T00:02:00Z"), ("B", "2020-01-01T00:01:00Z"),
                       ("C", "2020-01-01T00:03:00Z")]))
    with pytest.warns(LogWarning):
        lg = parse_xes(data)
    assert lg[0].events == ["B", "A", "C"]


def test_xes_drops_empty_trace_with_warning():
    data = (XES_HEAD + '<trace><string key="concept:name" value="e"/></trace>'
            '<trace><string key="concept:name" value="c"/><event>'
            '<string key="concept:name" value="A"/><date key="time:timestamp" value="2020-01-01T00:00:00Z"/>'
            '</event></trace></log>').encode()
    with pytest.warns(LogWarning):
        lg = parse_xes(data)
    assert [t.case_id for t in lg] == ["c"]


def test_xes_malformed_reports_line():
    data = (XES_HEAD + "<trace>\n<event>\n</trace></log>").encode()
    with pytest.raises(LogParseError) as err:
        parse_xes(data)
    assert err.value.line is not None


def test_xes_event_without_timestamp_names_trace():
    data = (XES_HEAD + '<trace><string key="concept:name" value="case-7"/><event>'
            '<string key="concept:name" value="A"/></event></trace></log>').encode()
    with pytest.raises(ValidationError, match="case-7"):
        parse_xes(data)


def test_timestamps_are_utc_seconds():
    assert parse_timestamp("1970-01-01T00:00:01Z") == 1.0
    assert parse_timestamp("1970-01-01T01:00:01+01:00") == 1.0
    assert parse_timestamp("1970-01-01 00:00:01.250") == 1.25
    assert parse_timestamp(format_timestamp(1577836800.123)) == pytest.approx(1577836800.123, abs=1e-6)


def test_csv_groups_cases():
    text = b"case_id,event,timestamp\n1,A,2020-01-01 00:00:00\n2,A,2020-01-01 00:00:05\n1,B,2020-01-01 00:01:00\n"
    lg = parse_csv(text)
    assert len(lg) == 2
    assert lg[0].events == ["A", "B"]


def test_csv_ties_keep_file_order():
    text = b"case_id,event,timestamp\n1,B,2020-01-01 00:00:00\n1,A,2020-01-01 00:00:00\n"
    assert parse_csv(text)[0].events == ["B", "A"]


def test_csv_continuous_declared_categorical_stays_raw():
    text = b"case_id,event,timestamp,cost\n1,A,2020-01-01 00:00:00,35.50\n"
    lg = parse_csv(text, CsvMapping(attributes={"cost": "categorical"}))
    assert lg.instance(0, 0).attributes["cost"] == "35.50"


def test_csv_missing_column():
    with pytest.raises(ConfigError, match="timestamp"):
        parse_csv(b"case_id,event\n1,A\n")


def test_csv_bad_timestamp_names_row():
    with pytest.raises(LogParseError) as err:
        parse_csv(b"case_id,event,timestamp\n1,A,2020-01-01 00:00:00\n1,B,yesterday\n")
    assert err.value.line == 3


def _log(n):
    return EventLog(tuple(Trace(f"c{i}", (EventInstance("A", float(i)),)) for i in range(n)))


def test_folds_ten_of_ten():
    folds = split_folds(_log(10), 10, seed=0)
    assert all(len(te) == 1 and len(tr) == 9 for tr, te in folds)


def test_folds_sizes_differ_by_at_most_one():
    sizes = [len(te) for _, te in split_folds(_log(13), 10, seed=3)]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 13


def test_folds_reject_k_above_traces():
    with pytest.raises(ConfigError):
        split_folds(_log(3), 4, seed=0)


@given(st.integers(2, 40), st.integers(2, 10), st.integers(0, 2**31))
def test_folds_partition(n, k, seed):
    if k > n:
        k = n
    lg = _log(n)
    folds = split_folds(lg, k, seed)
    again = split_folds(lg, k, seed)
    assert [[t.case_id for t in te] for _, te in folds] == [[t.case_id for t in te] for _, te in again]
    seen = []
    for train, test in folds:
        tr, te = {t.case_id for t in train}, {t.case_id for t in test}
        assert not tr & te
        assert tr | te == {t.case_id for t in lg}
        seen.extend(te)
    assert sorted(seen) == sorted(t.case_id for t in lg)


def test_split_traces_holdout():
    fit, hold = split_traces(_log(20), 0.1, seed=1)
    assert len(hold) == 2 and len(fit) == 18
    assert not {t.case_id for t in fit} & {t.case_id for t in hold}


names = st.sampled_from(["A", "B", "C", "a b", 'q"x'])
resources = st.sampled_from(["", "R1", "R,2"])


@st.composite
def logs(draw):
    traces = []
    for i in range(draw(st.integers(1, 5))):
        n = draw(st.integers(1, 6))
        steps = draw(st.lists(st.integers(0, 10_000), min_size=n, max_size=n))
        t, insts = 1_500_000_000.0, []
        for s, name, res in zip(steps, draw(st.lists(names, min_size=n, max_size=n)),
                                draw(st.lists(resources, min_size=n, max_size=n))):
            t += s / 1000
            insts.append(EventInstance(name, round(t, 3), {"org:resource": res} if res else {}))
        traces.append(Trace(f"case{i}", tuple(insts)))
    return EventLog(tuple(traces), {"org:resource": "categorical"})


def _same(a: EventLog, b: EventLog):
    assert [t.case_id for t in a] == [t.case_id for t in b]
    for ta, tb in zip(a, b):
        assert ta.events == tb.events
        assert [e.timestamp for e in ta] == pytest.approx([e.timestamp for e in tb], abs=1e-6)
        assert [dict(e.attributes) for e in ta] == [dict(e.attributes) for e in tb]


@given(logs())
def test_csv_round_trip(lg):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _same(lg, parse_csv(serialize_csv(lg), CsvMapping(attributes=dict(lg.attribute_schema))))


@given(logs())
def test_xes_round_trip(lg):
    _same(lg, parse_xes(serialize_xes(lg)))


@given(logs())
def test_alphabet_is_union_of_names(lg):
    assert lg.alphabet == {e.event_name for t in lg for e in t}
    assert lg.n_instances == sum(len(t) for t in lg)


def test_filter_events():
    lg = EventLog((Trace("c", (EventInstance("A", 0.0, {"lifecycle:transition": "start"}),
                               EventInstance("A", 1.0, {"lifecycle:transition": "complete"}))),))
    out = lg.filter_events("lifecycle:transition", "complete")
    assert [e.timestamp for e in out[0]] == [1.0]


def test_concat_keeps_order():
    assert [t.case_id for t in concat([_log(2), _log(1)])] == ["c0", "c1", "c0"]
