"""Command line entry point: ``petridecay <command> ...``.

Exit status is 0 on success, 2 for invalid input or configuration and 1 for
any other failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import neural
from .decay import DecayModel, build_samples, build_vocabulary, estimate_alphas, load_samples, save_samples
from .errors import ConfigError, ValidationError
from .event_log import CsvMapping, load_log, serialize_csv, serialize_xes
from .metrics import evaluate
from .petri_net import parse_pnml, serialize_pnml
from .pipeline import WORKERS_ENV, RunConfig, candidate_files, feature_matrix, run_experiment
from .preprocess import NormStats, discretize_log, fit_norm
from .replay import ReplayPolicy, aggregate, debug_csv, fitness, replay_log
from .simulate import SimulationConfig, linear_net, simulate_log, timing_loop_net

log = logging.getLogger("petridecay")


def _kv(items, cast=str) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[key] = cast(value)
    return out


def _add_log_args(p):
    p.add_argument("--log", required=True, help="event log (.xes or .csv)")
    p.add_argument("--csv-case", default="case_id")
    p.add_argument("--csv-event", default="event")
    p.add_argument("--csv-timestamp", default="timestamp")
    p.add_argument("--attribute", action="append", default=[], metavar="NAME=KIND",
                   help="CSV attribute column and its kind (categorical|continuous); repeatable")


def _add_policy_args(p):
    p.add_argument("--hidden-depth", type=int, default=10)
    p.add_argument("--unknown-events", choices=("skip", "error"), default="skip")


def _read_log(args):
    kinds = _kv(args.attribute)
    mapping = CsvMapping(args.csv_case, args.csv_event, args.csv_timestamp, kinds)
    return load_log(args.log, mapping)


def _policy(args) -> ReplayPolicy:
    return ReplayPolicy(args.hidden_depth, args.unknown_events)


def _write(path, text: str | bytes):
    if path in (None, "-"):
        sys.stdout.write(text.decode("utf-8") if isinstance(text, bytes) else text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, bytes):
        Path(path).write_bytes(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ----------------------------------------------------------------- commands


def cmd_replay(args) -> int:
    lg = _read_log(args)
    rows = []
    for f in candidate_files(args.model):
        net = parse_pnml(f)
        reps = replay_log(net, lg, _policy(args))
        st = aggregate(reps)
        rows.append({"model": str(f), "fitness": fitness(st), "missing": st.missing,
                     "consumed": st.consumed, "remaining": st.remaining, "produced": st.produced,
                     "skipped_events": st.skipped_events})
        if args.debug_csv:
            out = Path(args.debug_csv)
            if len(args.model) > 1 or Path(args.model[0]).is_dir():
                out = out.with_name(f"{out.stem}_{f.stem}{out.suffix}")
            _write(out, debug_csv(net, lg, reps))
    _write(args.out, json.dumps(rows, indent=2) + "\n")
    return 0


def cmd_enhance(args) -> int:
    lg = _read_log(args)
    net = parse_pnml(args.model)
    model = estimate_alphas(net, lg, args.beta, _policy(args), trained_on={"log": args.log})
    _write(args.out, json.dumps(model.sidecar(), indent=2) + "\n")
    return 0


def cmd_sample(args) -> int:
    lg = _read_log(args)
    if args.discretize:
        lg = discretize_log(lg, _kv(args.bin_width_for, float), args.bin_width)
    net = parse_pnml(args.model)
    if args.decay:
        model = DecayModel.from_sidecar(net, json.loads(Path(args.decay).read_text()))
    else:
        model = estimate_alphas(net, lg, args.beta, _policy(args))
    vocab = build_vocabulary(lg, args.resource) if args.resource else []
    alphabet = args.alphabet.split(",") if args.alphabet else None
    samples = build_samples(model, lg, vocab, alphabet, _policy(args), args.emit_initial)
    save_samples(samples, args.out)
    log.info("wrote %d samples of width %d to %s", len(samples), samples.width, args.out)
    return 0


def _trace_split(samples, fraction: float, seed: int):
    ids = sorted(set(samples.trace_ids))
    if len(ids) < 2:
        raise ValidationError("need at least two traces to hold out a validation set")
    rng = np.random.default_rng(seed)
    n_val = min(len(ids) - 1, max(1, round(fraction * len(ids))))
    val_ids = {ids[i] for i in rng.permutation(len(ids))[:n_val]}
    is_val = np.array([t in val_ids for t in samples.trace_ids])
    return samples.select(np.nonzero(~is_val)[0]), samples.select(np.nonzero(is_val)[0])


def cmd_train(args) -> int:
    samples = load_samples(args.samples)
    fit, val = _trace_split(samples, args.val_fraction, args.seed)
    x_fit = feature_matrix(fit, args.architecture, args.ablate_decay)
    x_val = feature_matrix(val, args.architecture, args.ablate_decay)
    stats = fit_norm(x_fit, fit.block_sizes()[: 3 if args.architecture == "nap" else 4])
    n_classes = len(samples.label_alphabet)
    if args.architecture == "nap":
        model = neural.build_dream_nap(x_fit.shape[1], n_classes, seed=args.seed)
    else:
        model = neural.build_dream_napr(x_fit.shape[1], n_classes, args.activation, seed=args.seed)
    cfg = neural.TrainConfig(batch_size=args.batch_size or (64 if args.architecture == "nap" else 100),
                             max_epochs=args.epochs, lr=args.lr, patience=args.patience)
    model, history = neural.train(model, stats.apply(x_fit), fit.y(), stats.apply(x_val), val.y(), cfg)
    extra = {"architecture": args.architecture, "ablate_decay": args.ablate_decay,
             "norm": stats.to_dict(), "vocabulary": samples.vocabulary, "n_places": samples.n_places,
             "best_epoch": neural.best_epoch([h["val_loss"] for h in history])}
    neural.save_checkpoint(model, args.out, samples.label_alphabet, extra)
    if args.history:
        keys = list(history[0])
        _write(args.history, ",".join(keys) + "\n"
               + "".join(",".join(repr(h[k]) for k in keys) + "\n" for h in history))
    return 0


def cmd_evaluate(args) -> int:
    model, alphabet, extra = neural.load_checkpoint(args.checkpoint)
    samples = load_samples(args.samples)
    if samples.label_alphabet != alphabet:
        raise ValidationError("sample label alphabet differs from the checkpoint's")
    if samples.n_places != extra.get("n_places") or samples.vocabulary != extra.get("vocabulary"):
        raise ValidationError("sample layout (places or vocabulary) differs from the checkpoint's")
    x = feature_matrix(samples, extra["architecture"], extra.get("ablate_decay", False))
    x = NormStats.from_dict(extra["norm"]).apply(x)
    report = evaluate(neural.predict_proba(model, x), samples.y(), alphabet)
    _write(args.out, report.to_json(indent=2) + "\n")
    return 0


def _run_config(args) -> RunConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    flags = {
        "log_path": args.log, "model_paths": args.model, "output_dir": args.out,
        "k_folds": args.folds, "seed": args.seed, "beta": args.beta,
        "architecture": args.architecture, "activation": args.activation,
        "attributes": args.resource or None, "attribute_kinds": _kv(args.attribute) or None,
        "csv_case": args.csv_case, "csv_event": args.csv_event, "csv_timestamp": args.csv_timestamp,
        "bin_width": args.bin_width, "bin_widths": _kv(args.bin_width_for, float) or None,
        "batch_size": args.batch_size, "epochs": args.epochs, "lr": args.lr, "patience": args.patience,
        "val_fraction": args.val_fraction, "hidden_depth": args.hidden_depth,
        "unknown_events": args.unknown_events, "filter_key": args.filter_key,
        "filter_value": args.filter_value, "ablate_decay": args.ablate_decay or None,
        "dataset": args.dataset,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    if "log_path" not in base or "model_paths" not in base:
        raise ConfigError("run needs --log and --model (or a config file providing them)")
    try:
        return RunConfig(**base)
    except TypeError as exc:
        raise ConfigError(f"bad run configuration: {exc}") from None


def cmd_run(args) -> int:
    cfg = _run_config(args)
    summary = run_experiment(cfg, args.workers)
    headline = {m: v["mean"] for m, v in summary["metrics"].items()}
    print(json.dumps({"metrics": headline, "incomplete_folds": summary["incomplete_folds"]}, indent=2))
    return 1 if summary["incomplete_folds"] else 0


def cmd_simulate(args) -> int:
    if args.net:
        net = parse_pnml(args.net)
        cfg = (SimulationConfig.from_dict(json.loads(Path(args.sim_config).read_text()))
               if args.sim_config else SimulationConfig())
    elif args.preset == "timing-loop":
        net, cfg = timing_loop_net(args.rounds, args.holds, args.threshold, args.low, args.high,
                                   args.delay)
    else:
        net, cfg = linear_net(args.labels.split(",")), SimulationConfig()
    lg = simulate_log(net, args.traces, args.seed, cfg)
    data = serialize_csv(lg) if str(args.out).lower().endswith(".csv") else serialize_xes(lg)
    _write(args.out, data)
    if args.net_out:
        _write(args.net_out, serialize_pnml(net))
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="petridecay", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", help="token-based replay fitness of candidate nets")
    _add_log_args(p)
    _add_policy_args(p)
    p.add_argument("--model", nargs="+", required=True, help="PNML files or directories")
    p.add_argument("--debug-csv", help="write per-firing replay trace here")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("enhance", help="estimate per-place decay rates")
    _add_log_args(p)
    _add_policy_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("sample", help="build timed state samples")
    _add_log_args(p)
    _add_policy_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--decay", help="decay sidecar from 'enhance'; estimated on --log if omitted")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--resource", action="append", default=[],
                   help="attribute counted into the R block; repeatable")
    p.add_argument("--discretize", action="store_true", help="bin continuous attributes first")
    p.add_argument("--bin-width", type=float, default=20.0)
    p.add_argument("--bin-width-for", action="append", default=[], metavar="NAME=WIDTH")
    p.add_argument("--alphabet", help="comma-separated label alphabet (default: log events)")
    p.add_argument("--emit-initial", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a classifier on a sample file")
    p.add_argument("--samples", required=True)
    p.add_argument("--architecture", choices=("nap", "napr"), default="nap")
    p.add_argument("--activation", choices=("relu", "sigmoid"), default="relu")
    p.add_argument("--ablate-decay", action="store_true")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="write per-epoch CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a sample file")
    p.add_argument("--samples", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full k-fold protocol")
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--log")
    p.add_argument("--model", nargs="+")
    p.add_argument("--out")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--architecture", choices=("nap", "napr"))
    p.add_argument("--activation", choices=("relu", "sigmoid"))
    p.add_argument("--resource", action="append")
    p.add_argument("--attribute", action="append", metavar="NAME=KIND")
    p.add_argument("--csv-case")
    p.add_argument("--csv-event")
    p.add_argument("--csv-timestamp")
    p.add_argument("--bin-width", type=float)
    p.add_argument("--bin-width-for", action="append", metavar="NAME=WIDTH")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--hidden-depth", type=int)
    p.add_argument("--unknown-events", choices=("skip", "error"))
    p.add_argument("--filter-key")
    p.add_argument("--filter-value")
    p.add_argument("--ablate-decay", action="store_true")
    p.add_argument("--dataset")
    p.add_argument("--workers", type=int, help=f"parallel folds (default: ${WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="generate a synthetic event log")
    p.add_argument("--preset", choices=("timing-loop", "linear"), default="timing-loop")
    p.add_argument("--net", help="PNML net to simulate instead of a preset")
    p.add_argument("--sim-config", help="JSON simulation annotations for --net")
    p.add_argument("--rounds", type=int, default=6)
    p.add_argument("--holds", type=int, default=12)
    p.add_argument("--threshold", type=float, default=60.0)
    p.add_argument("--low", type=float, default=30.0)
    p.add_argument("--high", type=float, default=90.0)
    p.add_argument("--delay", choices=("bimodal", "uniform"), default="bimodal",
                   help="delay distribution of the timing-loop preset")
    p.add_argument("--labels", default="A,B", help="activities of the linear preset")
    p.add_argument("--traces", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".xes or .csv")
    p.add_argument("--net-out", help="also write the generating net as PNML")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, FileNotFoundError) else 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
