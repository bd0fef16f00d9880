"""Event logs: traces of timestamped event instances, XES/CSV I/O, fold splits.

Times are stored as float seconds since the Unix epoch (UTC). Naive
timestamps in the input are taken to be UTC already.
"""

from __future__ import annotations

import csv
import io
import os
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from dateutil.parser import isoparse

from .errors import ConfigError, LogParseError, ValidationError

CONCEPT_NAME = "concept:name"
TIMESTAMP = "time:timestamp"

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
_KINDS = (CATEGORICAL, CONTINUOUS)


class LogWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EventInstance:
    event_name: str
    timestamp: float
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.event_name:
            raise ValidationError("event instance with empty event name")
        if not np.isfinite(self.timestamp):
            raise ValidationError(f"event {self.event_name!r} has invalid timestamp {self.timestamp!r}")


@dataclass(frozen=True)
class Trace:
    case_id: str
    instances: tuple[EventInstance, ...]

    def __post_init__(self):
        if not self.instances:
            raise ValidationError(f"trace {self.case_id!r} is empty")
        ts = [e.timestamp for e in self.instances]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"trace {self.case_id!r} is not sorted by timestamp")

    def __len__(self):
        return len(self.instances)

    def __iter__(self) -> Iterator[EventInstance]:
        return iter(self.instances)

    def __getitem__(self, j):
        return self.instances[j]

    @property
    def events(self) -> list[str]:
        return [e.event_name for e in self.instances]

    @property
    def duration(self) -> float:
        return self.instances[-1].timestamp - self.instances[0].timestamp


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    attribute_schema: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, kind in self.attribute_schema.items():
            if kind not in _KINDS:
                raise ConfigError(f"attribute {name!r}: unknown kind {kind!r}")

    def __len__(self):
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.traces)

    def __getitem__(self, i) -> Trace:
        return self.traces[i]

    def instance(self, i: int, j: int) -> EventInstance:
        return self.traces[i].instances[j]

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(e.event_name for t in self.traces for e in t)

    @property
    def n_instances(self) -> int:
        return sum(len(t) for t in self.traces)

    @property
    def max_duration(self) -> float:
        return max((t.duration for t in self.traces), default=0.0)

    def subset(self, indices: Iterable[int]) -> "EventLog":
        return EventLog(tuple(self.traces[i] for i in indices), dict(self.attribute_schema))

    def filter_events(self, key: str, value: str) -> "EventLog":
        """Keep only instances whose attribute ``key`` equals ``value``.

        ``key`` may be ``concept:name`` to filter on the event itself. Traces
        left empty are dropped.
        """
        traces = []
        for t in self.traces:
            kept = tuple(
                e for e in t
                if (e.event_name if key == CONCEPT_NAME else e.attributes.get(key)) == value
            )
            if kept:
                traces.append(Trace(t.case_id, kept))
        return EventLog(tuple(traces), dict(self.attribute_schema))


# --------------------------------------------------------------------- time


def parse_timestamp(text: str) -> float:
    """Parse ISO-8601 (or ``YYYY-MM-DD HH:MM:SS(.fff)``) into UTC epoch seconds."""
    dt = isoparse(text.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat(timespec="milliseconds")


# ---------------------------------------------------------------- assembly


def _read(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    data = source.read()
    return data.encode("utf-8") if isinstance(data, str) else data


def _build_trace(case_id: str, instances: list[EventInstance]) -> Trace | None:
    if not instances:
        return None
    order = sorted(range(len(instances)), key=lambda k: instances[k].timestamp)
    if order != list(range(len(instances))):
        warnings.warn(f"trace {case_id!r}: events re-sorted by timestamp", LogWarning, stacklevel=3)
        instances = [instances[k] for k in order]
    return Trace(case_id, tuple(instances))


def _assemble(raw: list[tuple[str, list[EventInstance]]], schema) -> EventLog:
    traces, empty = [], 0
    for case_id, instances in raw:
        trace = _build_trace(case_id, instances)
        if trace is None:
            empty += 1
        else:
            traces.append(trace)
    if empty:
        warnings.warn(f"dropped {empty} empty trace(s)", LogWarning, stacklevel=3)
    return EventLog(tuple(traces), schema)


# ---------------------------------------------------------------------- XES

_XES_CONTINUOUS = {"int", "float"}
_XES_SCALAR = {"string", "date", "int", "float", "boolean", "id"}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_xes(source) -> EventLog:
    """Parse the XES core subset: ``log/trace/event`` with scalar attributes."""
    data = _read(source)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise LogParseError(f"malformed XML: {exc.msg}", line=exc.position[0]) from None
    if _local(root.tag) != "log":
        raise LogParseError(f"root element is <{_local(root.tag)}>, expected <log>")

    schema: dict[str, str] = {}
    raw = []
    for i, tr in enumerate(c for c in root if _local(c.tag) == "trace"):
        case_id = str(i)
        instances = []
        for child in tr:
            tag = _local(child.tag)
            if tag == "string" and child.get("key") == CONCEPT_NAME:
                case_id = child.get("value", case_id)
            elif tag == "event":
                instances.append(_xes_event(child, case_id, schema))
        raw.append((case_id, instances))
    return _assemble(raw, schema)


def _xes_event(node, case_id: str, schema: dict) -> EventInstance:
    name = ts = None
    attrs = {}
    for a in node:
        kind, key, value = _local(a.tag), a.get("key"), a.get("value")
        if kind not in _XES_SCALAR or key is None or value is None:
            continue
        if key == CONCEPT_NAME:
            name = value
        elif key == TIMESTAMP:
            ts = value
        else:
            attrs[key] = value
            schema.setdefault(key, CONTINUOUS if kind in _XES_CONTINUOUS else CATEGORICAL)
    if not name:
        raise ValidationError(f"trace {case_id!r}: event without {CONCEPT_NAME}")
    if ts is None:
        raise ValidationError(f"trace {case_id!r}: event {name!r} without {TIMESTAMP}")
    try:
        t = parse_timestamp(ts)
    except (ValueError, OverflowError):
        raise ValidationError(f"trace {case_id!r}: bad timestamp {ts!r}") from None
    return EventInstance(name, t, attrs)


def serialize_xes(log: EventLog, sink=None) -> bytes:
    root = ET.Element("log", {"xes.version": "1.0", "xmlns": "http://www.xes-standard.org/"})
    for trace in log:
        tr = ET.SubElement(root, "trace")
        ET.SubElement(tr, "string", key=CONCEPT_NAME, value=trace.case_id)
        for e in trace:
            ev = ET.SubElement(tr, "event")
            ET.SubElement(ev, "string", key=CONCEPT_NAME, value=e.event_name)
            ET.SubElement(ev, "date", key=TIMESTAMP, value=format_timestamp(e.timestamp))
            for k in sorted(e.attributes):
                tag = "float" if log.attribute_schema.get(k) == CONTINUOUS else "string"
                ET.SubElement(ev, tag, key=k, value=e.attributes[k])
    ET.indent(root)
    data = ET.tostring(root, encoding="utf-8", xml_declaration=True)
    return _emit(data, sink)


def _emit(data: bytes, sink):
    if sink is None:
        return data
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return data


# ---------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class CsvMapping:
    case: str = "case_id"
    event: str = "event"
    timestamp: str = "timestamp"
    attributes: Mapping[str, str] = field(default_factory=dict)


def parse_csv(source, mapping: CsvMapping | None = None) -> EventLog:
    mapping = mapping or CsvMapping()
    text = _read(source).decode("utf-8-sig")
    reader = csv.DictReader(io.StringIO(text, newline=""))
    header = reader.fieldnames or []
    needed = [mapping.case, mapping.event, mapping.timestamp, *mapping.attributes]
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigError(f"CSV is missing mapped column(s): {', '.join(missing)}")
    for name, kind in mapping.attributes.items():
        if kind not in _KINDS:
            raise ConfigError(f"attribute {name!r}: unknown kind {kind!r}")

    cases: dict[str, list[EventInstance]] = {}
    for row in reader:
        line = reader.line_num
        event = row[mapping.event]
        if not event:
            raise LogParseError("empty event name", line=line)
        try:
            ts = parse_timestamp(row[mapping.timestamp])
        except (ValueError, OverflowError, AttributeError):
            raise LogParseError(f"unparseable timestamp {row[mapping.timestamp]!r}", line=line) from None
        attrs = {k: row[k] for k in mapping.attributes if row[k] not in (None, "")}
        cases.setdefault(row[mapping.case], []).append(EventInstance(event, ts, attrs))
    return _assemble(list(cases.items()), dict(mapping.attributes))


def serialize_csv(log: EventLog, sink=None, mapping: CsvMapping | None = None) -> bytes:
    mapping = mapping or CsvMapping(attributes=dict(log.attribute_schema))
    attrs = list(mapping.attributes)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([mapping.case, mapping.event, mapping.timestamp, *attrs])
    for trace in log:
        for e in trace:
            w.writerow([trace.case_id, e.event_name, format_timestamp(e.timestamp),
                        *(e.attributes.get(a, "") for a in attrs)])
    return _emit(buf.getvalue().encode("utf-8"), sink)


def load_log(path, mapping: CsvMapping | None = None) -> EventLog:
    """Dispatch on file extension (``.csv`` vs XES)."""
    if str(path).lower().endswith(".csv"):
        return parse_csv(path, mapping)
    return parse_xes(path)


# -------------------------------------------------------------------- folds


def split_folds(log: EventLog, k: int, seed: int) -> list[tuple[EventLog, EventLog]]:
    """Deterministic trace-level k-fold split; fold ``i`` is ``(train, test)``."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > len(log):
        raise ConfigError(f"cannot split {len(log)} traces into {k} folds")
    perm = np.random.default_rng(seed).permutation(len(log))
    folds = []
    for chunk in np.array_split(perm, k):
        test = sorted(int(i) for i in chunk)
        held = set(test)
        train = [i for i in range(len(log)) if i not in held]
        folds.append((log.subset(train), log.subset(test)))
    return folds


def split_traces(log: EventLog, fraction: float, seed: int) -> tuple[EventLog, EventLog]:
    """Shuffle traces and cut off ``fraction`` of them (at least one) as a holdout."""
    n = len(log)
    n_hold = min(max(1, int(round(n * fraction))), n - 1) if n > 1 else 0
    perm = np.random.default_rng(seed).permutation(n)
    hold = sorted(int(i) for i in perm[:n_hold])
    held = set(hold)
    return log.subset(i for i in range(n) if i not in held), log.subset(hold)


def concat(logs: Sequence[EventLog]) -> EventLog:
    schema: dict[str, str] = {}
    for lg in logs:
        schema.update(lg.attribute_schema)
    return EventLog(tuple(t for lg in logs for t in lg), schema)
