"""Labeled Petri nets, markings, firing rules and PNML import/export.

Markings are plain ``numpy`` int64 vectors indexed like ``PetriNet.places``.
Transitions whose ``label`` is ``None`` are hidden (silent).
"""

from __future__ import annotations

import json
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PnmlError, ValidationError

HIDDEN = None
_HIDDEN_PREFIXES = ("tau", "inv_")


@dataclass(frozen=True)
class Transition:
    id: str
    label: str | None
    name: str = ""

    @property
    def hidden(self) -> bool:
        return self.label is None


@dataclass(frozen=True, eq=False)
class PetriNet:
    places: tuple[str, ...]
    transitions: tuple[Transition, ...]
    arcs: frozenset[tuple[str, str]]
    initial_marking: tuple[int, ...] | None = None
    source_place: str | None = None
    sink_place: str | None = None
    place_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        pids, tids = list(self.places), [t.id for t in self.transitions]
        if len(set(pids)) != len(pids) or len(set(tids)) != len(tids):
            raise ValidationError("duplicate place or transition id")
        if set(pids) & set(tids):
            raise ValidationError("place and transition ids overlap")
        p_index = {p: i for i, p in enumerate(pids)}
        t_index = {t: i for i, t in enumerate(tids)}
        pre = [[] for _ in tids]
        post = [[] for _ in tids]
        for src, dst in sorted(self.arcs):
            if src in p_index and dst in t_index:
                pre[t_index[dst]].append(p_index[src])
            elif src in t_index and dst in p_index:
                post[t_index[src]].append(p_index[dst])
            else:
                raise ValidationError(f"arc {src}->{dst} must join a place and a transition")
        seen = {}
        for t in self.transitions:
            if t.label is not None:
                if t.label in seen:
                    raise ValidationError(
                        f"label {t.label!r} on transitions {seen[t.label]!r} and {t.id!r}; "
                        "each observable event must map to exactly one transition")
                seen[t.label] = t.id
        for p in (self.source_place, self.sink_place):
            if p is not None and p not in p_index:
                raise ValidationError(f"unknown designated place {p!r}")
        if self.initial_marking is not None and len(self.initial_marking) != len(pids):
            raise ValidationError("initial marking length differs from |P|")
        set_ = object.__setattr__
        set_(self, "_p_index", p_index)
        set_(self, "_t_index", t_index)
        set_(self, "_pre", tuple(tuple(x) for x in pre))
        set_(self, "_post", tuple(tuple(x) for x in post))
        set_(self, "_by_label", {t.label: i for i, t in enumerate(self.transitions) if t.label is not None})

    # ------------------------------------------------------------ lookup
    @property
    def n_places(self) -> int:
        return len(self.places)

    @property
    def n_nodes(self) -> int:
        return len(self.places) + len(self.transitions)

    def place_index(self, pid: str) -> int:
        return self._p_index[pid]

    def transition_index(self, t) -> int:
        if isinstance(t, (int, np.integer)):
            if not 0 <= t < len(self.transitions):
                raise KeyError(t)
            return int(t)
        return self._t_index[t]

    def transition_for(self, label: str) -> int | None:
        """Index of the unique transition carrying ``label``, if any."""
        return self._by_label.get(label)

    def preset(self, t) -> tuple[int, ...]:
        return self._pre[self.transition_index(t)]

    def postset(self, t) -> tuple[int, ...]:
        return self._post[self.transition_index(t)]

    @property
    def hidden_transitions(self) -> list[int]:
        return [i for i, t in enumerate(self.transitions) if t.hidden]

    @property
    def labels(self) -> list[str]:
        return sorted(self._by_label)

    def initial(self) -> np.ndarray:
        if self.initial_marking is not None:
            return np.array(self.initial_marking, dtype=np.int64)
        m = np.zeros(len(self.places), dtype=np.int64)
        if self.source_place is None:
            raise ValidationError("net has neither an initial marking nor a source place")
        m[self._p_index[self.source_place]] = 1
        return m

    def final(self) -> np.ndarray | None:
        if self.sink_place is None:
            return None
        m = np.zeros(len(self.places), dtype=np.int64)
        m[self._p_index[self.sink_place]] = 1
        return m

    def to_json(self) -> str:
        """Compact debug dump (ids, labels, arcs)."""
        return json.dumps({
            "places": list(self.places),
            "transitions": [[t.id, t.label] for t in self.transitions],
            "arcs": sorted(list(a) for a in self.arcs),
            "initial_marking": list(self.initial()),
            "sink": self.sink_place,
        }, separators=(",", ":"), default=int)


def build_net(places: Sequence[str], transitions: Sequence[tuple[str, str | None]],
              arcs: Sequence[tuple[str, str]], source: str | None = None,
              sink: str | None = None, initial: Sequence[int] | None = None) -> PetriNet:
    """Convenience constructor; source/sink default to the structural ones when unique."""
    net = PetriNet(tuple(places), tuple(Transition(i, lab, lab or "") for i, lab in transitions),
                   frozenset(map(tuple, arcs)))
    report = structural_check(net)
    if source is None and len(report.sources) == 1:
        source = report.sources[0]
    if sink is None and len(report.sinks) == 1:
        sink = report.sinks[0]
    return PetriNet(net.places, net.transitions, net.arcs,
                    tuple(initial) if initial is not None else None, source, sink)


# ----------------------------------------------------------- firing rules


def enabled(net: PetriNet, m: np.ndarray, t) -> bool:
    return all(m[p] >= 1 for p in net.preset(t))


def shortfall(net: PetriNet, m: np.ndarray, t) -> int:
    """Number of input places of ``t`` that hold no token."""
    return sum(1 for p in net.preset(t) if m[p] < 1)


def fire(net: PetriNet, m: np.ndarray, t, force: bool = False) -> np.ndarray:
    """Fire ``t`` and return the successor marking.

    With ``force=True`` a disabled transition fires anyway: empty input
    places stay at zero (use :func:`shortfall` beforehand to learn how many
    tokens were missing).
    """
    idx = net.transition_index(t)
    if not force and not enabled(net, m, idx):
        raise ValidationError(f"transition {net.transitions[idx].id!r} is not enabled")
    out = np.array(m, dtype=np.int64, copy=True)
    for p in net._pre[idx]:
        if out[p] > 0:
            out[p] -= 1
    for p in net._post[idx]:
        out[p] += 1
    return out


# ----------------------------------------------------- structural checks


@dataclass
class StructuralReport:
    sources: list[str]
    sinks: list[str]
    off_path: list[str]
    dead_transitions: list[str]
    issues: list[str]

    @property
    def ok(self) -> bool:
        return not self.issues


def structural_check(net: PetriNet) -> StructuralReport:
    """Advisory workflow-net checks: unique source/sink, every node on a source-sink path."""
    nodes = list(net.places) + [t.id for t in net.transitions]
    succ = {n: [] for n in nodes}
    pred = {n: [] for n in nodes}
    for a, b in net.arcs:
        succ[a].append(b)
        pred[b].append(a)
    # an isolated place is neither a usable source nor a sink
    sources = [p for p in net.places if not pred[p] and succ[p]]
    sinks = [p for p in net.places if not succ[p] and pred[p]]
    issues = []
    if len(sources) != 1:
        issues.append("ambiguous source" if sources else "no source place")
    if len(sinks) != 1:
        issues.append("ambiguous sink" if sinks else "no sink place")

    def reach(starts, edges):
        seen, stack = set(starts), list(starts)
        while stack:
            for nxt in edges[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    fwd = reach(sources, succ)
    bwd = reach(sinks, pred)
    off_path = [n for n in nodes if n not in fwd or n not in bwd]
    if off_path:
        issues.append(f"not on source-sink path: {', '.join(off_path)}")
    dead = [t.id for t in net.transitions if t.id not in fwd]
    return StructuralReport(sources, sinks, off_path, dead, issues)


# ---------------------------------------------------------------- PNML


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _text(node, child: str) -> str | None:
    for c in node:
        if _local(c.tag) == child:
            for t in c.iter():
                if _local(t.tag) == "text":
                    return (t.text or "").strip()
            return (c.text or "").strip()
    return None


def _is_hidden(node, name: str | None) -> bool:
    if not name:
        return True
    if name.lower().startswith(_HIDDEN_PREFIXES):
        return True
    for c in node:
        if _local(c.tag) == "toolspecific":
            if c.get("activity") == "$invisible$" or c.get("invisible", "").lower() == "true":
                return True
    return False


def parse_pnml(source) -> PetriNet:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise PnmlError(f"malformed PNML at line {exc.position[0]}: {exc.msg}") from None
    nets = [n for n in root.iter() if _local(n.tag) == "net"]
    if not nets:
        raise PnmlError("no <net> element")
    netnode = nets[0]

    places, place_names, marking = [], [], []
    transitions, arcs = [], []
    final_place = None
    for node in netnode.iter():
        tag = _local(node.tag)
        if tag == "place" and node.get("id") is not None:
            places.append(node.get("id"))
            place_names.append(_text(node, "name") or "")
            init = _text(node, "initialMarking")
            try:
                marking.append(int(init) if init else 0)
            except ValueError:
                raise PnmlError(f"place {node.get('id')!r}: bad initial marking {init!r}") from None
        elif tag == "transition":
            name = _text(node, "name")
            label = None if _is_hidden(node, name) else name
            transitions.append(Transition(node.get("id"), label, name or ""))
        elif tag == "arc":
            ins = _text(node, "inscription")
            if ins and ins != "1":
                raise PnmlError(f"arc {node.get('id')!r}: weighted arcs are not supported")
            arcs.append((node.get("source"), node.get("target")))
        elif tag == "finalmarkings":
            for pl in node.iter():
                if _local(pl.tag) == "place" and pl.get("idref"):
                    final_place = pl.get("idref")

    known = set(places) | {t.id for t in transitions}
    for s, t in arcs:
        if s not in known or t not in known:
            raise PnmlError(f"arc {s}->{t} references an unknown node")
    try:
        net = PetriNet(tuple(places), tuple(transitions), frozenset(arcs))
    except ValidationError as exc:
        raise PnmlError(str(exc)) from None
    rep = structural_check(net)
    source = rep.sources[0] if len(rep.sources) == 1 else None
    sink = final_place or (rep.sinks[0] if len(rep.sinks) == 1 else None)
    initial = tuple(marking) if any(marking) else None
    if initial is None and source is None:
        raise PnmlError("no initial marking given and no unique source place")
    return PetriNet(net.places, net.transitions, net.arcs, initial, source, sink, tuple(place_names))


def serialize_pnml(net: PetriNet, sink=None) -> bytes:
    root = ET.Element("pnml")
    netnode = ET.SubElement(root, "net", id="net1",
                            type="http://www.pnml.org/version-2009/grammar/pnmlcoremodel")
    page = ET.SubElement(netnode, "page", id="n0")
    m0 = net.initial_marking
    for i, pid in enumerate(net.places):
        pl = ET.SubElement(page, "place", id=pid)
        nm = ET.SubElement(ET.SubElement(pl, "name"), "text")
        nm.text = (net.place_names[i] if net.place_names else "") or pid
        if m0 is not None and m0[i]:
            im = ET.SubElement(ET.SubElement(pl, "initialMarking"), "text")
            im.text = str(m0[i])
    for t in net.transitions:
        tr = ET.SubElement(page, "transition", id=t.id)
        nm = ET.SubElement(ET.SubElement(tr, "name"), "text")
        nm.text = t.label if t.label is not None else (t.name or "tau")
        if t.hidden:
            ET.SubElement(tr, "toolspecific", tool="ProM", version="6.4", activity="$invisible$")
    for k, (s, d) in enumerate(sorted(net.arcs)):
        ET.SubElement(page, "arc", id=f"a{k}", source=s, target=d)
    if net.sink_place is not None:
        fm = ET.SubElement(ET.SubElement(netnode, "finalmarkings"), "marking")
        ET.SubElement(ET.SubElement(fm, "place", idref=net.sink_place), "text").text = "1"
    ET.indent(root)
    data = ET.tostring(root, encoding="utf-8", xml_declaration=True)
    if sink is not None:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "wb") as fh:
                fh.write(data)
        else:
            sink.write(data)
    return data
