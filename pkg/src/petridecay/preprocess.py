"""Attribute discretisation and per-feature z-normalisation of sample matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .decay import SampleSet
from .errors import ValidationError
from .event_log import CATEGORICAL, CONTINUOUS, EventInstance, EventLog, Trace


def _num(x: float) -> str:
    x = round(x, 10)
    return str(int(x)) if float(x).is_integer() else repr(x)


def discretize(values: Sequence, width: float) -> list[str]:
    """Map each value to its left-closed bin ``[k*w,(k+1)*w)``."""
    if not width > 0:
        raise ValidationError(f"bin width must be > 0, got {width}")
    out = []
    for row, v in enumerate(values):
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise ValidationError(f"row {row}: non-numeric value {v!r}") from None
        if not math.isfinite(x):
            raise ValidationError(f"row {row}: non-finite value {v!r}")
        k = math.floor(x / width)
        out.append(f"[{_num(k * width)},{_num((k + 1) * width)})")
    return out


def discretize_log(log: EventLog, widths: Mapping[str, float] | None = None,
                   default_width: float = 20.0) -> EventLog:
    """Replace every continuous attribute by its bin label (schema becomes categorical)."""
    widths = dict(widths or {})
    cont = [a for a, k in log.attribute_schema.items() if k == CONTINUOUS]
    if not cont:
        return log
    traces = []
    for tr in log:
        insts = []
        for e in tr:
            attrs = dict(e.attributes)
            for a in cont:
                if a in attrs:
                    try:
                        attrs[a] = discretize([attrs[a]], widths.get(a, default_width))[0]
                    except ValidationError as exc:
                        raise ValidationError(f"trace {tr.case_id!r}, attribute {a!r}: {exc}") from None
            insts.append(EventInstance(e.event_name, e.timestamp, attrs))
        traces.append(Trace(tr.case_id, tuple(insts)))
    schema = {a: (CATEGORICAL if a in cont else k) for a, k in log.attribute_schema.items()}
    return EventLog(tuple(traces), schema)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    blocks: list[int]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "blocks": list(self.blocks)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float), list(d["blocks"]))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(self.mean):
            raise ValidationError(f"feature width {x.shape[-1]} != normalisation width {len(self.mean)}")
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (x - self.mean) / safe, 0.0)


def fit_norm(x: np.ndarray, blocks: Sequence[int] = ()) -> NormStats:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        raise ValidationError("cannot compute normalisation statistics on zero samples")
    mean, std = x.mean(axis=0), x.std(axis=0)
    # rounding noise on a constant column is not spread
    std[std <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 0.0
    return NormStats(mean, std, list(blocks))


def normalize(samples: SampleSet, stats: NormStats | None = None) -> tuple[SampleSet, NormStats]:
    """z-normalise each feature column; constant columns become 0.

    Without ``stats`` the statistics are computed on ``samples`` (training
    path); with them, they are applied unchanged (test path).
    """
    if stats is None:
        stats = fit_norm(samples.features, samples.block_sizes())
    elif len(stats.mean) != samples.width:
        raise ValidationError(f"sample width {samples.width} != normalisation width {len(stats.mean)}")
    return samples.with_features(stats.apply(samples.features)), stats
