"""Support-weighted multiclass metrics and the sign test.

Every aggregate is ``sum_i n_i * metric_i / |S|`` over one-vs-rest class
problems, where ``n_i`` is the number of samples whose true next event is
class i. Top-1 accuracy coincides with weighted recall; the one-vs-rest
accuracy (which also credits true negatives) is reported separately as
``accuracy_ovr`` and is always >= top-1 accuracy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import comb
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


@dataclass
class ClassStats:
    event: str
    n: int
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f_score: float
    auc: float


@dataclass
class EvalReport:
    accuracy: float
    accuracy_ovr: float
    precision: float
    recall: float
    f_score: float
    auc: float
    n_samples: int
    per_class: list[ClassStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def headline(self) -> dict:
        return {k: getattr(self, k) for k in ("accuracy", "precision", "recall", "f_score", "auc")}


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def roc_auc(scores, positive) -> float:
    """Area under the one-vs-rest ROC curve, thresholds at each distinct score.

    Returns 0.5 when only one of the two classes is present.
    """
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order]
    cut = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tpr = np.r_[0.0, np.cumsum(pos)[cut] / n_pos]
    fpr = np.r_[0.0, np.cumsum(~pos)[cut] / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def evaluate(probs, labels, alphabet: Sequence[str]) -> EvalReport:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValidationError("evaluate needs a non-empty probability matrix")
    if len(labels) != len(probs):
        raise ValidationError("probabilities and labels differ in length")
    k = len(alphabet)
    if probs.shape[1] != k:
        raise ValidationError(f"probability matrix has {probs.shape[1]} columns for {k} classes")
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError("label index outside the alphabet")

    total = len(labels)
    pred = probs.argmax(axis=1)  # first maximum, i.e. lowest index on ties
    per_class = []
    acc_ovr = prec = rec = fsc = auc = 0.0
    for i, name in enumerate(alphabet):
        truth, guess = labels == i, pred == i
        n_i = int(truth.sum())
        tp = int((truth & guess).sum())
        fp = int((~truth & guess).sum())
        fn = int((truth & ~guess).sum())
        tn = total - tp - fp - fn
        p_i, r_i = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        f_i = _ratio(2 * p_i * r_i, p_i + r_i)
        a_i = roc_auc(probs[:, i], truth)
        per_class.append(ClassStats(name, n_i, tp, fp, fn, tn, p_i, r_i, f_i, a_i))
        if n_i:
            acc_ovr += n_i * (tp + tn) / total
            prec += n_i * p_i
            rec += n_i * r_i
            fsc += n_i * f_i
            auc += n_i * a_i
    return EvalReport(
        accuracy=float((pred == labels).mean()),
        accuracy_ovr=acc_ovr / total,
        precision=prec / total,
        recall=rec / total,
        f_score=fsc / total,
        auc=auc / total,
        n_samples=total,
        per_class=per_class,
    )


class SignTestResult(NamedTuple):
    p_value: float
    adjusted_alpha: float
    significant: bool


def dunn_sidak(alpha: float, n_comparisons: int) -> float:
    if n_comparisons < 1:
        raise ValidationError("need at least one comparison")
    return 1.0 - (1.0 - alpha) ** (1.0 / n_comparisons)


def sign_test(wins_a: int, wins_b: int, n_datasets: int, alpha: float = 0.05,
              alternative: str = "greater") -> SignTestResult:
    """Binomial sign test of A against B; ties are simply left out of the counts.

    ``alternative="greater"`` asks whether A wins more often than chance,
    ``"two-sided"`` whether either side does.
    """
    if n_datasets <= 0:
        raise ValidationError("n_datasets must be positive")
    if wins_a < 0 or wins_b < 0 or wins_a + wins_b > n_datasets:
        raise ValidationError("win counts must be non-negative and sum to at most n_datasets")
    n = wins_a + wins_b

    def upper(k):  # P(X >= k), X ~ Bin(n, 1/2)
        return sum(comb(n, j) for j in range(k, n + 1)) / 2 ** n

    if alternative == "greater":
        p = upper(wins_a)
    elif alternative == "two-sided":
        p = min(1.0, 2 * min(upper(wins_a), upper(wins_b)))
    else:
        raise ValidationError(f"unknown alternative {alternative!r}")
    adj = dunn_sidak(alpha, n_datasets)
    return SignTestResult(p, adj, p < adj)


def mean_ranks(scores: Mapping[str, Sequence[float]]) -> dict[str, float]:
    """Mean rank per method across datasets (1 = best, ties averaged)."""
    names = list(scores)
    table = np.array([scores[n] for n in names], dtype=float)
    ranks = np.vstack([rankdata(-table[:, d]) for d in range(table.shape[1])]).T
    return {n: float(ranks[i].mean()) for i, n in enumerate(names)}
