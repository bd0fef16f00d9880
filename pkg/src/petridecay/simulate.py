"""Synthetic event logs from Petri nets with timing and branching annotations.

The simulator plays the token game: at each step it collects the enabled
transitions, narrows them down with the configured rules and picks one
uniformly at random. Hidden transitions fire instantly and leave no event.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .event_log import EventInstance, EventLog, Trace
from .petri_net import PetriNet, build_net, enabled, fire

EPOCH_2020 = 1577836800.0


@dataclass(frozen=True)
class Delay:
    kind: str = "uniform"  # uniform | bimodal | const | exp
    a: float = 1.0
    b: float = 60.0

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            return float(rng.uniform(self.a, self.b))
        if self.kind == "bimodal":
            # uniform on the outer quarters of [a, b]
            q = (self.b - self.a) / 4
            lo = self.a if rng.random() < 0.5 else self.b - q
            return float(rng.uniform(lo, lo + q))
        if self.kind == "const":
            return float(self.a)
        if self.kind == "exp":
            return float(rng.exponential(self.a))
        raise ValidationError(f"unknown delay kind {self.kind!r}")


@dataclass(frozen=True)
class TimedChoice:
    """Pick ``below`` if the elapsed time is under ``threshold``, else ``above``.

    Elapsed time runs from the last occurrence of ``since`` (or, when unset,
    from the second most recent event) to the moment of choice. With
    ``include_delay`` the moment of choice is the firing time of the chosen
    transition, i.e. the upcoming delay counts too.
    """
    below: str
    above: str
    threshold: float
    since: str | None = None
    include_delay: bool = False


@dataclass(frozen=True)
class RepeatLimit:
    """Fire ``exit`` exactly once the ``counters`` events occurred ``times`` times."""
    exit: str
    counters: tuple[str, ...]
    times: int


@dataclass
class SimulationConfig:
    delays: dict[str, Delay] = field(default_factory=dict)
    default_delay: Delay = field(default_factory=Delay)
    choices: list[TimedChoice] = field(default_factory=list)
    limits: list[RepeatLimit] = field(default_factory=list)
    resources: dict[str, list[str]] = field(default_factory=dict)
    start_gap: Delay = field(default_factory=lambda: Delay("exp", 3600.0))
    max_steps: int = 10_000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimulationConfig":
        return cls(
            delays={k: Delay(**v) for k, v in d.get("delays", {}).items()},
            default_delay=Delay(**d.get("default_delay", {})),
            choices=[TimedChoice(**c) for c in d.get("choices", [])],
            limits=[RepeatLimit(r["exit"], tuple(r["counters"]), r["times"]) for r in d.get("limits", [])],
            resources={k: list(v) for k, v in d.get("resources", {}).items()},
            start_gap=Delay(**d["start_gap"]) if "start_gap" in d else Delay("exp", 3600.0),
            max_steps=d.get("max_steps", 10_000),
        )


def _ms(x: float) -> float:
    return round(x * 1000.0) / 1000.0


def _simulate_trace(net: PetriNet, cfg: SimulationConfig, rng, start: float, case_id: str) -> Trace:
    m = net.initial()
    final = net.final()
    now = start
    events: list[tuple[str, float]] = []
    insts = []
    labels = [t.label for t in net.transitions]
    for _ in range(cfg.max_steps):
        if final is not None and np.array_equal(m, final):
            break
        cand = [i for i in range(len(labels)) if enabled(net, m, i)]
        if not cand:
            if final is None:
                break
            raise ValidationError(f"dead net: no enabled transition in marking {m.tolist()}")
        pre_delay = None

        for rule in cfg.limits:
            ex = net.transition_for(rule.exit)
            if ex in cand:
                done = sum(1 for lab, _ in events if lab in rule.counters)
                if done >= rule.times:
                    cand = [ex]
                elif len(cand) > 1:
                    cand = [c for c in cand if c != ex]
        for rule in cfg.choices:
            lo, hi = net.transition_for(rule.below), net.transition_for(rule.above)
            if lo not in cand or hi not in cand:
                continue
            if rule.since is None:
                if len(events) < 2:
                    continue
                ref = events[-2][1]
            else:
                past = [t for lab, t in events if lab == rule.since]
                if not past:
                    continue
                ref = past[-1]
            moment = now
            if rule.include_delay:
                pre_delay = _ms(cfg.delays.get(rule.below, cfg.default_delay).sample(rng))
                moment = now + pre_delay
            cand = [lo if moment - ref < rule.threshold else hi]

        t = cand[int(rng.integers(len(cand)))] if len(cand) > 1 else cand[0]
        m = fire(net, m, t)
        label = labels[t]
        if label is None:
            continue
        if events or pre_delay is not None:
            now = _ms(now + (pre_delay if pre_delay is not None
                             else cfg.delays.get(label, cfg.default_delay).sample(rng)))
        attrs = {}
        pool = cfg.resources.get(label)
        if pool:
            attrs["org:resource"] = pool[int(rng.integers(len(pool)))]
        events.append((label, now))
        insts.append(EventInstance(label, now, attrs))
    else:
        raise ValidationError(f"trace {case_id} did not terminate within {cfg.max_steps} steps")
    if not insts:
        raise ValidationError(f"trace {case_id} produced no observable event")
    return Trace(case_id, tuple(insts))


def simulate_log(net: PetriNet, n_traces: int, seed: int = 0,
                 config: SimulationConfig | None = None) -> EventLog:
    """Sample ``n_traces`` traces; deterministic for a given seed.

    The first event of a trace happens at the trace's start time; every later
    observable event adds its delay. Timestamps are rounded to milliseconds.
    """
    cfg = config or SimulationConfig()
    rng = np.random.default_rng(seed)
    start = EPOCH_2020
    traces = []
    for i in range(n_traces):
        start = _ms(start + cfg.start_gap.sample(rng))
        traces.append(_simulate_trace(net, cfg, rng, start, f"case_{i}"))
    schema = {"org:resource": "categorical"} if cfg.resources else {}
    return EventLog(tuple(traces), schema)


# ------------------------------------------------------------ stock nets


def linear_net(labels: Sequence[str]) -> PetriNet:
    places = [f"p{i}" for i in range(len(labels) + 1)]
    trans = [(f"t_{a}", a) for a in labels]
    arcs = []
    for i, a in enumerate(labels):
        arcs += [(places[i], f"t_{a}"), (f"t_{a}", places[i + 1])]
    return build_net(places, trans, arcs)


def timing_loop_net(rounds: int = 6, holds: int = 12, threshold: float = 60.0, low: float = 30.0,
                    high: float = 90.0, delay: str = "bimodal") -> tuple[PetriNet, SimulationConfig]:
    """``S``, ``T``, then ``rounds`` of (B|C)(D|G) on a two-place cycle, then ``E``.

    Each B/C and D/G choice is decided by whether the gap between the two
    most recent events is under ``threshold``; all delays are drawn from
    ``[low, high]``, straddling it (by default from its outer quarters, which
    leaves a margin on both sides of the threshold). ``S`` also marks ``holds`` places that
    stay put until ``E`` collects them (a case-wide AND split and join); they
    widen the marking without adding events.
    """
    if rounds < 1 or holds < 0:
        raise ValidationError("rounds must be >= 1 and holds >= 0")
    hold = [f"h{i}" for i in range(holds)]
    places = ["start", "ps", "pa", "pb", *hold, "end"]
    trans = [(f"t_{a}", a) for a in "STBCDGE"]
    arcs = [("start", "t_S"), ("t_S", "ps"), ("ps", "t_T"), ("t_T", "pa"),
            ("pa", "t_B"), ("t_B", "pb"), ("pa", "t_C"), ("t_C", "pb"),
            ("pb", "t_D"), ("t_D", "pa"), ("pb", "t_G"), ("t_G", "pa"),
            ("pa", "t_E"), ("t_E", "end")]
    arcs += [("t_S", h) for h in hold] + [(h, "t_E") for h in hold]
    net = build_net(places, trans, arcs)
    d = Delay(delay, low, high)
    cfg = SimulationConfig(
        delays={a: d for a in "STBCDGE"},
        choices=[TimedChoice("B", "C", threshold), TimedChoice("D", "G", threshold)],
        limits=[RepeatLimit("E", ("D", "G"), rounds)],
    )
    return net, cfg


class _Builder:
    def __init__(self):
        self.places: list[str] = []
        self.trans: list[tuple[str, str | None]] = []
        self.arcs: list[tuple[str, str]] = []

    def place(self) -> str:
        p = f"p{len(self.places)}"
        self.places.append(p)
        return p

    def transition(self, label, ins, outs) -> str:
        t = f"t{len(self.trans)}"
        self.trans.append((t, label))
        self.arcs += [(p, t) for p in ins] + [(t, p) for p in outs]
        return t

    def build(self, node, src: str, dst: str):
        op = node[0]
        if op == "act":
            self.transition(node[1], [src], [dst])
        elif op == "seq":
            mid = self.place()
            self.build(node[1], src, mid)
            self.build(node[2], mid, dst)
        elif op == "xor":
            self.build(node[1], src, dst)
            self.build(node[2], src, dst)
        elif op == "opt":
            self.build(node[1], src, dst)
            self.transition(None, [src], [dst])
        elif op == "and":
            a1, a2, b1, b2 = (self.place() for _ in range(4))
            self.transition(None, [src], [a1, b1])
            self.build(node[1], a1, a2)
            self.build(node[2], b1, b2)
            self.transition(None, [a2, b2], [dst])
        elif op == "loop":
            li, lo = self.place(), self.place()
            self.transition(None, [src], [li])
            self.build(node[1], li, lo)
            self.transition(None, [lo], [li])
            self.transition(None, [lo], [dst])
        else:
            raise ValueError(op)


def _random_tree(rng, labels: list[str], ops: Sequence[str]):
    if len(labels) == 1:
        node = ("act", labels[0])
        if "loop" in ops and rng.random() < 0.15:
            node = ("loop", node)
        elif "opt" in ops and rng.random() < 0.15:
            node = ("opt", node)
        return node
    cut = int(rng.integers(1, len(labels)))
    op = ops[int(rng.integers(len(ops)))]
    if op in ("loop", "opt"):
        op = "seq"
    return (op, _random_tree(rng, labels[:cut], ops), _random_tree(rng, labels[cut:], ops))


def random_block_net(rng: np.random.Generator, n_activities: int = 5,
                     ops: Sequence[str] = ("seq", "xor", "and", "loop", "opt")) -> PetriNet:
    """Random block-structured (sound) workflow net over activities A, B, C, ...

    The first activity always starts the process so no trace is empty.
    """
    labels = [chr(ord("A") + i) for i in range(n_activities)]
    tree = ("act", labels[0])
    if n_activities > 1:
        tree = ("seq", tree, _random_tree(rng, labels[1:], ops))
    b = _Builder()
    src, dst = b.place(), b.place()
    b.build(tree, src, dst)
    return build_net(b.places, b.trans, b.arcs, source=src, sink=dst)
