#!/usr/bin/env python3
"""Helpdesk reproduction against the published reference values.

Needs the Helpdesk XES log and a directory of candidate PNML models; neither
ships with this package.
"""

import argparse
import json
import sys
from pathlib import Path

from petridecay.event_log import load_log
from petridecay.petri_net import parse_pnml
from petridecay.pipeline import RunConfig, candidate_files, run_experiment
from petridecay.replay import select_model

REFERENCE = {"instances": 13710, "traces": 3804, "events": 9, "fitness": 0.928, "accuracy": 0.829}
TOLERANCE = {"fitness": 0.02, "accuracy": 0.03}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--log", required=True)
    ap.add_argument("--models", required=True, nargs="+")
    ap.add_argument("--architecture", choices=("nap", "napr"), default="nap")
    ap.add_argument("--resource", action="append", default=[], help="attribute for the napr R block")
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="helpdesk_out")
    args = ap.parse_args(argv)

    lg = load_log(args.log)
    counts = {"instances": lg.n_instances, "traces": len(lg), "events": len(lg.alphabet)}
    files = candidate_files(args.models)
    _, scores = select_model([parse_pnml(f) for f in files], lg)
    for f, s in sorted(zip(files, scores), key=lambda x: -x[1]):
        print(f"fitness {s:.4f}  {f}")

    cfg = RunConfig(args.log, list(args.models), output_dir=args.out, k_folds=args.folds,
                    architecture=args.architecture, attributes=args.resource, epochs=args.epochs)
    summary = run_experiment(cfg, workers=args.workers)
    got = dict(counts, fitness=max(scores), accuracy=summary["metrics"]["accuracy"]["mean"])

    ok = True
    for k, ref in REFERENCE.items():
        tol = TOLERANCE.get(k, 0)
        hit = abs(got[k] - ref) <= tol
        ok &= hit
        val = f"{got[k]:.4f}" if isinstance(got[k], float) else str(got[k])
        print(f"{k:9s} {val:>10}  reference {ref} (+/- {tol})  {'ok' if hit else 'MISS'}")
    Path(args.out, "reference_check.json").write_text(json.dumps({"got": got, "reference": REFERENCE}, indent=2))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
