"""Per-place linear decay functions and timed state samples.

Each place p carries ``f_p(now) = beta - alpha_p * (now - tau_p)`` clipped to
zero once ``now - tau_p >= beta / alpha_p``, where ``tau_p`` is the last time
a token entered p. A timed state sample is the concatenation of decay values
F, token-entry counts C, the marking M and attribute-value counts R.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import SampleFormatError, ValidationError
from .event_log import EventLog
from .petri_net import PetriNet
from .replay import ReplayPolicy, TraceReplay, replay_log, replay_trace

log = logging.getLogger(__name__)

BLOCKS = ("F", "C", "M", "R")


def decay_values(beta: float, alpha, delta) -> np.ndarray:
    """Vectorised linear decay; ``delta = inf`` (never activated) gives 0."""
    alpha = np.asarray(alpha, dtype=float)
    delta = np.asarray(delta, dtype=float)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        live = delta < beta / alpha
        val = np.where(live, beta - alpha * np.where(live, delta, 0.0), 0.0)
    return np.maximum(val, 0.0)


@dataclass
class DecayModel:
    net: PetriNet
    beta: float
    alpha: np.ndarray
    trained_on: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if not self.beta > 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        if self.alpha.shape != (self.net.n_places,):
            raise ValidationError("alpha must have one entry per place")
        if not (np.all(np.isfinite(self.alpha)) and np.all(self.alpha > 0)):
            raise ValidationError("decay rates must be finite and positive")

    def sidecar(self) -> dict:
        return {"beta": self.beta, "alpha": [float(a) for a in self.alpha],
                "places": list(self.net.places), "trained_on": self.trained_on}

    @classmethod
    def from_sidecar(cls, net: PetriNet, data: Mapping) -> "DecayModel":
        if list(data["places"]) != list(net.places):
            raise ValidationError("decay sidecar was estimated for a different net")
        return cls(net, float(data["beta"]), np.array(data["alpha"], dtype=float),
                   dict(data.get("trained_on", {})))


@dataclass
class DecayState:
    last_entry: np.ndarray
    token_counts: np.ndarray
    attribute_counts: np.ndarray
    marking: np.ndarray

    @classmethod
    def reset(cls, net: PetriNet, vocab_size: int) -> "DecayState":
        n = net.n_places
        return cls(np.full(n, np.nan), np.zeros(n, np.int64), np.zeros(vocab_size, np.int64), net.initial())

    def enter(self, place: int, time: float):
        self.last_entry[place] = time
        self.token_counts[place] += 1


def decay_response(model: DecayModel, state: DecayState, now: float) -> np.ndarray:
    delta = np.where(np.isnan(state.last_entry), np.inf, now - state.last_entry)
    if np.any(delta < 0):
        raise ValidationError("decay evaluated before a recorded token entry")
    return decay_values(model.beta, model.alpha, delta)


# ------------------------------------------------------------- estimation


def token_flow(net: PetriNet, rep: TraceReplay) -> list[tuple[str, int, float]]:
    """Ordered (kind, place, time) token movements; a firing consumes before it produces."""
    flow = []
    for f in rep.firings:
        flow.extend(("out", p, f.time) for p in net.preset(f.transition))
        flow.extend(("in", p, f.time) for p in net.postset(f.transition))
    return flow


def reactivation_gaps(net: PetriNet, rep: TraceReplay) -> list[list[float]]:
    """Per place, the gaps from each token departure to the next token arrival."""
    gaps = [[] for _ in net.places]
    pending = [[] for _ in net.places]
    for kind, p, t in token_flow(net, rep):
        if kind == "out":
            pending[p].append(t)
        else:
            gaps[p].extend(t - s for s in pending[p])
            pending[p].clear()
    return gaps


def estimate_alphas(net: PetriNet, log_: EventLog, beta: float = 1.0,
                    policy: ReplayPolicy | None = None, replays: Sequence[TraceReplay] | None = None,
                    trained_on: dict | None = None) -> DecayModel:
    if not beta > 0:
        raise ValidationError(f"beta must be > 0, got {beta}")
    if replays is None:
        replays = replay_log(net, log_, policy)
    dmax = log_.max_duration
    if not dmax > 0:
        raise ValidationError("all traces have zero duration; decay rates are undefined")

    n = net.n_places
    max_entries = np.zeros(n, dtype=np.int64)
    per_trace_means: list[list[float]] = [[] for _ in range(n)]
    for rep in replays:
        entries = np.bincount([e.place_index for e in rep.entries], minlength=n)
        max_entries = np.maximum(max_entries, entries)
        for p, g in enumerate(reactivation_gaps(net, rep)):
            if g:
                per_trace_means[p].append(sum(g) / len(g))

    alpha = np.empty(n)
    for p in range(n):
        single = beta / dmax
        if max_entries[p] <= 1 or not per_trace_means[p]:
            alpha[p] = single
            continue
        mean = sum(per_trace_means[p]) / len(per_trace_means[p])
        if mean <= 0:
            log.warning("place %s: zero mean reactivation time, using trace-duration rate",
                        net.places[p])
            alpha[p] = single
        else:
            alpha[p] = beta / mean
    return DecayModel(net, beta, alpha, dict(trained_on or {}))


# ---------------------------------------------------------------- samples


def build_vocabulary(log_: EventLog, attributes: Sequence[str] | None = None) -> list[str]:
    """Sorted ``key=value`` strings over the chosen attributes (default: all)."""
    keys = set(attributes) if attributes is not None else None
    vocab = {f"{k}={v}" for t in log_ for e in t for k, v in e.attributes.items()
             if keys is None or k in keys}
    return sorted(vocab)


@dataclass(frozen=True)
class TimedStateSample:
    features: np.ndarray
    label: str
    trace_id: str
    instance_index: int
    tau: float


@dataclass
class SampleSet:
    features: np.ndarray
    labels: list[str]
    trace_ids: list[str]
    instance_index: np.ndarray
    tau: np.ndarray
    n_places: int
    vocabulary: list[str]
    label_alphabet: list[str]
    beta: float | None = None
    alpha: list[float] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(len(self.labels), self.width)
        unknown = set(self.labels) - set(self.label_alphabet)
        if unknown:
            raise ValidationError(f"labels outside the alphabet: {sorted(unknown)}")

    @property
    def width(self) -> int:
        return 3 * self.n_places + len(self.vocabulary)

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[TimedStateSample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> TimedStateSample:
        return TimedStateSample(self.features[i], self.labels[i], self.trace_ids[i],
                                int(self.instance_index[i]), float(self.tau[i]))

    def block(self, name: str) -> slice:
        n = self.n_places
        return {"F": slice(0, n), "C": slice(n, 2 * n), "M": slice(2 * n, 3 * n),
                "R": slice(3 * n, self.width)}[name]

    def block_sizes(self) -> list[int]:
        return [self.n_places] * 3 + [len(self.vocabulary)]

    def y(self) -> np.ndarray:
        index = {a: k for k, a in enumerate(self.label_alphabet)}
        return np.array([index[a] for a in self.labels], dtype=np.int64)

    def with_features(self, features: np.ndarray) -> "SampleSet":
        return SampleSet(features, list(self.labels), list(self.trace_ids), self.instance_index.copy(),
                         self.tau.copy(), self.n_places, list(self.vocabulary),
                         list(self.label_alphabet), self.beta, self.alpha)

    def select(self, rows) -> "SampleSet":
        rows = np.asarray(rows, dtype=np.int64)
        return SampleSet(self.features[rows], [self.labels[i] for i in rows],
                         [self.trace_ids[i] for i in rows], self.instance_index[rows], self.tau[rows],
                         self.n_places, list(self.vocabulary), list(self.label_alphabet),
                         self.beta, self.alpha)


def build_samples(model: DecayModel, log_: EventLog, vocabulary: Sequence[str] = (),
                  label_alphabet: Sequence[str] | None = None, policy: ReplayPolicy | None = None,
                  emit_initial: bool = False) -> SampleSet:
    """Replay every trace and emit one sample per instance that has a successor.

    The sample for instance j reflects the state right after it fired and is
    labelled with the event of instance j+1. ``emit_initial`` adds a sample
    for the reset state, labelled with the first event.
    """
    net = model.net
    vocab_index = {v: k for k, v in enumerate(vocabulary)}
    alphabet = sorted(log_.alphabet) if label_alphabet is None else list(label_alphabet)
    rows, labels, tids, idx, taus = [], [], [], [], []

    for i, trace in enumerate(log_):
        rep = replay_trace(net, trace, policy, i)
        state = DecayState.reset(net, len(vocabulary))
        by_instance: dict[int, list] = {}
        for f in rep.firings:
            if not f.closing:
                by_instance.setdefault(f.instance_index, []).append(f)

        def emit(j_next: int, now: float, j: int):
            feats = np.concatenate([decay_response(model, state, now), state.token_counts,
                                    state.marking, state.attribute_counts]).astype(float)
            rows.append(feats)
            labels.append(trace[j_next].event_name)
            tids.append(trace.case_id)
            idx.append(j)
            taus.append(now)

        if emit_initial:
            emit(0, trace[0].timestamp, -1)
        for j, inst in enumerate(trace):
            for f in by_instance.get(j, ()):
                for p in net.postset(f.transition):
                    state.enter(p, f.time)
            for k, v in inst.attributes.items():
                pos = vocab_index.get(f"{k}={v}")
                if pos is not None:
                    state.attribute_counts[pos] += 1
            state.marking = rep.markings[j]
            if j < len(trace) - 1:
                emit(j + 1, inst.timestamp, j)

    width = 3 * net.n_places + len(vocabulary)
    feats = np.vstack(rows) if rows else np.zeros((0, width))
    return SampleSet(feats, labels, tids, np.array(idx, dtype=np.int64), np.array(taus, dtype=float),
                     net.n_places, list(vocabulary), alphabet, model.beta, [float(a) for a in model.alpha])


# ------------------------------------------------------------ sample files


def _header(n_places: int, vocab_size: int) -> list[str]:
    cols = ["trace_id", "instance_idx", "tau"]
    for b, size in zip(BLOCKS, (n_places, n_places, n_places, vocab_size)):
        cols.extend(f"{b}_{k}" for k in range(size))
    return cols + ["label"]


def serialize_samples(samples: SampleSet) -> tuple[str, dict]:
    """CSV text plus the JSON sidecar (beta, alpha, vocabulary, label alphabet)."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(samples.n_places, len(samples.vocabulary)))
    for i in range(len(samples)):
        w.writerow([samples.trace_ids[i], int(samples.instance_index[i]), repr(float(samples.tau[i])),
                    *(repr(float(x)) for x in samples.features[i]), samples.labels[i]])
    sidecar = {"n_places": samples.n_places, "vocabulary": list(samples.vocabulary),
               "label_alphabet": list(samples.label_alphabet), "beta": samples.beta,
               "alpha": samples.alpha}
    return buf.getvalue(), sidecar


def deserialize_samples(text: str, sidecar: Mapping | None = None) -> SampleSet:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise SampleFormatError("sample file has no header") from None
    counts = {b: sum(1 for c in header if c.startswith(f"{b}_")) for b in BLOCKS}
    if not (counts["F"] == counts["C"] == counts["M"]):
        raise SampleFormatError("F, C and M blocks must have equal width")
    n_places = counts["F"]
    vocab = list(sidecar["vocabulary"]) if sidecar else [f"r{k}" for k in range(counts["R"])]
    if len(vocab) != counts["R"]:
        raise SampleFormatError("sidecar vocabulary does not match the R block width")
    width = 3 * n_places + len(vocab)
    expected = width + 4
    if len(header) != expected:
        raise SampleFormatError(f"header has {len(header)} columns, expected {expected}")
    feats, labels, tids, idx, taus = [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != expected:
            raise SampleFormatError(f"row {lineno}: {len(row)} columns, expected {expected}")
        try:
            tids.append(row[0])
            idx.append(int(row[1]))
            taus.append(float(row[2]))
            feats.append([float(x) for x in row[3:3 + width]])
        except ValueError as exc:
            raise SampleFormatError(f"row {lineno}: {exc}") from None
        labels.append(row[-1])
    alphabet = list(sidecar["label_alphabet"]) if sidecar else sorted(set(labels))
    return SampleSet(np.array(feats, dtype=float).reshape(len(labels), width), labels, tids,
                     np.array(idx, dtype=np.int64), np.array(taus, dtype=float), n_places, vocab,
                     alphabet, sidecar.get("beta") if sidecar else None,
                     sidecar.get("alpha") if sidecar else None)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_samples(samples: SampleSet, path) -> None:
    text, meta = serialize_samples(samples)
    Path(path).write_text(text, encoding="utf-8")
    sidecar_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_samples(path) -> SampleSet:
    meta_path = sidecar_path(path)
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if os.path.exists(meta_path) else None
    return deserialize_samples(Path(path).read_text(encoding="utf-8"), meta)
