"""End-to-end k-fold protocol: model selection, decay enhancement, training, evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neural
from .decay import SampleSet, build_samples, build_vocabulary, estimate_alphas
from .errors import ConfigError
from .event_log import CsvMapping, EventLog, load_log, split_folds, split_traces
from .metrics import EvalReport, evaluate
from .petri_net import PetriNet, parse_pnml
from .preprocess import discretize_log, fit_norm
from .replay import ReplayPolicy, select_model

log = logging.getLogger(__name__)

WORKERS_ENV = "PETRIDECAY_WORKERS"
METRICS = ("accuracy", "accuracy_ovr", "precision", "recall", "f_score", "auc")
DEFAULT_BATCH = {"nap": 64, "napr": 100}


@dataclass
class RunConfig:
    log_path: str
    model_paths: list[str]
    output_dir: str | None = None
    k_folds: int = 10
    seed: int = 0
    beta: float = 1.0
    architecture: str = "nap"
    activation: str = "relu"
    attributes: list[str] = field(default_factory=list)
    attribute_kinds: dict[str, str] = field(default_factory=dict)
    csv_case: str = "case_id"
    csv_event: str = "event"
    csv_timestamp: str = "timestamp"
    bin_width: float = 20.0
    bin_widths: dict[str, float] = field(default_factory=dict)
    batch_size: int | None = None
    epochs: int = 100
    lr: float = 1e-3
    patience: int | None = None
    val_fraction: float = 0.1
    hidden_depth: int = 10
    unknown_events: str = "skip"
    filter_key: str | None = None
    filter_value: str | None = None
    emit_initial: bool = False
    ablate_decay: bool = False
    dataset: str | None = None

    def __post_init__(self):
        if self.architecture not in ("nap", "napr"):
            raise ConfigError(f"architecture must be nap or napr, not {self.architecture!r}")
        if self.architecture == "napr" and not self.attributes:
            raise ConfigError("the napr architecture needs at least one attribute")
        if self.activation not in ("relu", "sigmoid"):
            raise ConfigError(f"activation must be relu or sigmoid, not {self.activation!r}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if (self.filter_key is None) != (self.filter_value is None):
            raise ConfigError("filter needs both a key and a value")

    @property
    def policy(self) -> ReplayPolicy:
        return ReplayPolicy(self.hidden_depth, self.unknown_events)

    @property
    def train_config(self) -> neural.TrainConfig:
        return neural.TrainConfig(batch_size=self.batch_size or DEFAULT_BATCH[self.architecture],
                                  max_epochs=self.epochs, lr=self.lr, patience=self.patience)

    def fold_seed(self, fold: int) -> int:
        return self.seed * 1009 + fold


def candidate_files(paths: Sequence[str]) -> list[Path]:
    """Expand directories into their ``*.pnml`` files (sorted)."""
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.pnml")))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"model path {p} does not exist")
    if not files:
        raise ConfigError("no PNML candidates found")
    return files


def load_inputs(cfg: RunConfig) -> tuple[EventLog, list[PetriNet], list[str]]:
    if not os.path.exists(cfg.log_path):
        raise ConfigError(f"log {cfg.log_path} does not exist")
    mapping = CsvMapping(cfg.csv_case, cfg.csv_event, cfg.csv_timestamp, dict(cfg.attribute_kinds))
    lg = load_log(cfg.log_path, mapping)
    if cfg.filter_key is not None:
        lg = lg.filter_events(cfg.filter_key, cfg.filter_value)
    if cfg.architecture == "napr":
        lg = discretize_log(lg, cfg.bin_widths, cfg.bin_width)
    files = candidate_files(cfg.model_paths)
    return lg, [parse_pnml(f) for f in files], [str(f) for f in files]


def feature_matrix(samples: SampleSet, architecture: str, ablate_decay: bool = False) -> np.ndarray:
    """Model input: F, C, M for nap; F, C, M, R for napr. Optionally zero F."""
    x = samples.features.copy()
    if ablate_decay:
        x[:, samples.block("F")] = 0.0
    if architecture == "nap":
        x = x[:, : 3 * samples.n_places]
    return x


def build_model(cfg: RunConfig, width: int, n_classes: int, seed: int) -> neural.MlpModel:
    if cfg.architecture == "nap":
        return neural.build_dream_nap(width, n_classes, seed=seed)
    return neural.build_dream_napr(width, n_classes, cfg.activation, seed=seed)


@dataclass
class FoldResult:
    fold: int
    report: EvalReport | None = None
    fitness: list[float] = field(default_factory=list)
    selected: int | None = None
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    n_train: int = 0
    n_val: int = 0
    error: str | None = None


def run_fold(cfg: RunConfig, fold: int, train_log: EventLog, test_log: EventLog,
             candidates: Sequence[PetriNet], alphabet: Sequence[str]) -> FoldResult:
    seed = cfg.fold_seed(fold)
    res = FoldResult(fold)
    net, res.fitness = select_model(candidates, train_log, cfg.policy)
    res.selected = next(i for i, c in enumerate(candidates) if c is net)

    decay = estimate_alphas(net, train_log, cfg.beta, cfg.policy, trained_on={"fold": fold})
    vocab = build_vocabulary(train_log, cfg.attributes) if cfg.architecture == "napr" else []
    fit_log, val_log = split_traces(train_log, cfg.val_fraction, seed)

    def samples(lg):
        return build_samples(decay, lg, vocab, alphabet, cfg.policy, cfg.emit_initial)

    s_fit, s_val, s_test = samples(fit_log), samples(val_log), samples(test_log)
    x_fit = feature_matrix(s_fit, cfg.architecture, cfg.ablate_decay)
    x_val = feature_matrix(s_val, cfg.architecture, cfg.ablate_decay)
    x_test = feature_matrix(s_test, cfg.architecture, cfg.ablate_decay)
    stats = fit_norm(x_fit, s_fit.block_sizes()[: 3 if cfg.architecture == "nap" else 4])
    x_fit, x_val, x_test = stats.apply(x_fit), stats.apply(x_val), stats.apply(x_test)

    model = build_model(cfg, x_fit.shape[1], len(alphabet), seed)
    model, res.history = neural.train(model, x_fit, s_fit.y(), x_val, s_val.y(), cfg.train_config)
    res.best_epoch = neural.best_epoch([h.get("val_loss", h["loss"]) for h in res.history])
    res.report = evaluate(neural.predict_proba(model, x_test), s_test.y(), alphabet)
    res.n_train, res.n_val = len(s_fit), len(s_val)
    return res


def _fold_job(args):
    cfg, fold, train_log, test_log, candidates, alphabet = args
    try:
        return run_fold(cfg, fold, train_log, test_log, candidates, alphabet)
    except Exception as exc:  # a failing fold is recorded, not fatal
        log.exception("fold %d failed", fold)
        return FoldResult(fold, error=f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: RunConfig, workers: int | None = None) -> dict:
    lg, candidates, names = load_inputs(cfg)
    alphabet = sorted(lg.alphabet)
    folds = split_folds(lg, cfg.k_folds, cfg.seed)
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(cfg, i, tr, te, candidates, alphabet) for i, (tr, te) in enumerate(folds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]
    summary = summarize(cfg, results, names, alphabet)
    if cfg.output_dir:
        write_outputs(cfg, summary, results, names)
    return summary


def summarize(cfg: RunConfig, results: Sequence[FoldResult], names: Sequence[str],
              alphabet: Sequence[str]) -> dict:
    done = [r for r in results if r.report is not None]
    agg = {}
    for m in METRICS:
        vals = np.array([getattr(r.report, m) for r in done])
        agg[m] = {"mean": float(vals.mean()) if len(vals) else None,
                  "std": float(vals.std()) if len(vals) else None}
    return {
        "config": asdict(cfg),
        "alphabet": list(alphabet),
        "metrics": agg,
        "folds": [{
            "fold": r.fold,
            "selected_model": names[r.selected] if r.selected is not None else None,
            "fitness": r.fitness,
            "best_epoch": r.best_epoch,
            "n_train_samples": r.n_train,
            "n_val_samples": r.n_val,
            "n_test_samples": r.report.n_samples if r.report else 0,
            "metrics": {m: getattr(r.report, m) for m in METRICS} if r.report else None,
            "error": r.error,
        } for r in results],
        "incomplete_folds": [r.fold for r in results if r.report is None],
    }


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(cfg: RunConfig, summary: dict, results: Sequence[FoldResult], names: Sequence[str]):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    dataset = cfg.dataset or Path(cfg.log_path).stem
    fold_rows = []
    for r in results:
        if r.report is None:
            continue
        fold_rows.append([dataset, r.fold, cfg.architecture,
                          *(repr(getattr(r.report, m)) for m in METRICS), r.report.n_samples,
                          repr(r.fitness[r.selected]), r.best_epoch])
    (out / "folds.csv").write_text(_csv(fold_rows, ["dataset", "fold", "model", *METRICS, "n_samples",
                                                    "fitness", "best_epoch"]))
    fit_rows = [[r.fold, names[i], repr(f), int(i == r.selected)]
                for r in results for i, f in enumerate(r.fitness)]
    (out / "fitness.csv").write_text(_csv(fit_rows, ["fold", "candidate", "fitness", "selected"]))
    for r in results:
        if r.history:
            keys = list(r.history[0])
            (out / f"history_fold{r.fold}.csv").write_text(
                _csv([[h[k] for k in keys] for h in r.history], keys))
