"""Token-based replay of traces with hidden-transition search and fitness scoring.

Accounting follows the usual convention: the environment produces the
initial marking and consumes the final marking, so a perfectly fitting trace
scores ``missing == remaining == 0``. Disabled observable transitions are
force-fired and the absent tokens are counted as ``missing``.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ReplayError, ValidationError
from .event_log import EventLog, Trace
from .petri_net import PetriNet, enabled, fire, shortfall

OBSERVABLE = "observable"
HIDDEN_KIND = "hidden"
FORCED = "forced"


@dataclass(frozen=True)
class ReplayPolicy:
    hidden_depth: int = 10
    unknown_events: str = "skip"  # or "error"
    max_search_states: int = 20_000

    def __post_init__(self):
        if self.unknown_events not in ("skip", "error"):
            raise ValidationError(f"unknown_events must be 'skip' or 'error', not {self.unknown_events!r}")
        if self.hidden_depth < 0:
            raise ValidationError("hidden_depth must be >= 0")


@dataclass
class ReplayStats:
    missing: int = 0
    consumed: int = 0
    remaining: int = 0
    produced: int = 0
    skipped_events: int = 0

    def __add__(self, other: "ReplayStats") -> "ReplayStats":
        return ReplayStats(self.missing + other.missing, self.consumed + other.consumed,
                           self.remaining + other.remaining, self.produced + other.produced,
                           self.skipped_events + other.skipped_events)


@dataclass(frozen=True)
class TokenEntry:
    place_index: int
    time: float
    trace_index: int
    instance_index: int


@dataclass(frozen=True)
class Firing:
    transition: int
    kind: str
    instance_index: int
    time: float
    missing: int
    marking_after: tuple[int, ...]
    closing: bool = False  # fired while completing the trace towards the final marking


@dataclass
class TraceReplay:
    firings: list[Firing]
    entries: list[TokenEntry]
    markings: list[np.ndarray]  # after each instance
    stats: ReplayStats
    skipped: list[int] = field(default_factory=list)


def _hidden_path(net: PetriNet, m: np.ndarray, goal, policy: ReplayPolicy) -> list[int] | None:
    """Shortest sequence of hidden firings from ``m`` to a marking satisfying ``goal``."""
    if goal(m):
        return []
    hidden = net.hidden_transitions
    if not hidden or policy.hidden_depth == 0:
        return None
    start = tuple(int(x) for x in m)
    parents = {start: None}
    frontier = deque([(start, 0)])
    while frontier:
        key, depth = frontier.popleft()
        if depth >= policy.hidden_depth:
            continue
        cur = np.array(key, dtype=np.int64)
        for t in hidden:
            if not enabled(net, cur, t):
                continue
            nxt = fire(net, cur, t)
            nkey = tuple(int(x) for x in nxt)
            if nkey in parents:
                continue
            parents[nkey] = (key, t)
            if goal(nxt):
                path = []
                while parents[nkey] is not None:
                    nkey, tt = parents[nkey]
                    path.append(tt)
                return path[::-1]
            if len(parents) >= policy.max_search_states:
                return None
            frontier.append((nkey, depth + 1))
    return None


class _Replayer:
    def __init__(self, net: PetriNet, trace_index: int):
        self.net = net
        self.trace_index = trace_index
        self.m = net.initial()
        self.stats = ReplayStats(produced=int(self.m.sum()))
        self.firings: list[Firing] = []
        self.entries: list[TokenEntry] = []

    def fire(self, t: int, kind: str, j: int, time: float, closing=False):
        net = self.net
        miss = shortfall(net, self.m, t)
        self.m = fire(net, self.m, t, force=miss > 0)
        self.stats.missing += miss
        self.stats.consumed += len(net.preset(t))
        self.stats.produced += len(net.postset(t))
        for p in net.postset(t):
            self.entries.append(TokenEntry(p, time, self.trace_index, j))
        self.firings.append(Firing(t, FORCED if miss else kind, j, time, miss,
                                   tuple(int(x) for x in self.m), closing))


def replay_trace(net: PetriNet, trace: Trace, policy: ReplayPolicy | None = None,
                 trace_index: int = 0) -> TraceReplay:
    policy = policy or ReplayPolicy()
    r = _Replayer(net, trace_index)
    markings, skipped = [], []
    for j, inst in enumerate(trace):
        t = net.transition_for(inst.event_name)
        if t is None:
            if policy.unknown_events == "error":
                raise ReplayError(f"trace {trace.case_id!r}: event {inst.event_name!r} is not in the model")
            # an unreplayable event costs one missing token
            r.stats.skipped_events += 1
            r.stats.missing += 1
            r.stats.consumed += 1
            skipped.append(j)
        else:
            if not enabled(net, r.m, t):
                path = _hidden_path(net, r.m, lambda mk: enabled(net, mk, t), policy)
                for h in path or ():
                    r.fire(h, HIDDEN_KIND, j, inst.timestamp)
            r.fire(t, OBSERVABLE, j, inst.timestamp)
        markings.append(r.m.copy())

    final = net.final()
    last_j, last_t = len(trace) - 1, trace[-1].timestamp
    if final is not None:
        sink = net.place_index(net.sink_place)
        path = _hidden_path(net, r.m, lambda mk: np.array_equal(mk, final), policy)
        if path is None:
            path = _hidden_path(net, r.m, lambda mk: mk[sink] >= 1, policy)
        for h in path or ():
            r.fire(h, HIDDEN_KIND, last_j, last_t, closing=True)
        m = r.m.copy()
        r.stats.consumed += int(final.sum())
        r.stats.missing += int(np.maximum(final - m, 0).sum())
        r.stats.remaining = int(np.maximum(m - final, 0).sum())
    else:
        r.stats.remaining = int(r.m.sum())
    return TraceReplay(r.firings, r.entries, markings, r.stats, skipped)


def replay_log(net: PetriNet, log: EventLog, policy: ReplayPolicy | None = None) -> list[TraceReplay]:
    return [replay_trace(net, tr, policy, i) for i, tr in enumerate(log)]


def aggregate(replays: Sequence[TraceReplay]) -> ReplayStats:
    total = ReplayStats()
    for r in replays:
        total = total + r.stats
    return total


def fitness(stats: ReplayStats) -> float:
    if stats.consumed <= 0 or stats.produced <= 0:
        raise ReplayError("fitness undefined: nothing consumed or produced (empty replay)")
    f = 0.5 * (1 - stats.missing / stats.consumed) + 0.5 * (1 - stats.remaining / stats.produced)
    return min(1.0, max(0.0, f))


def log_fitness(net: PetriNet, log: EventLog, policy: ReplayPolicy | None = None) -> float:
    return fitness(aggregate(replay_log(net, log, policy)))


def select_model(candidates: Sequence[PetriNet], train_log: EventLog,
                 policy: ReplayPolicy | None = None) -> tuple[PetriNet, list[float]]:
    """Highest-fitness candidate; ties go to the smaller net, then the earlier one."""
    if not candidates:
        raise ValidationError("no candidate models")
    scores = [log_fitness(net, train_log, policy) for net in candidates]
    best = min(range(len(candidates)), key=lambda i: (-scores[i], candidates[i].n_nodes, i))
    return candidates[best], scores


def debug_csv(net: PetriNet, log: EventLog, replays: Sequence[TraceReplay]) -> str:
    """One row per firing: trace_id, step, fired_transition, kind, marking_after."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace_id", "step", "fired_transition", "kind", "marking_after"])
    for trace, rep in zip(log, replays):
        for step, f in enumerate(rep.firings):
            w.writerow([trace.case_id, step, net.transitions[f.transition].id, f.kind,
                        " ".join(map(str, f.marking_after))])
    return buf.getvalue()
