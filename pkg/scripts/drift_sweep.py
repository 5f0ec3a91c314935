#!/usr/bin/env python3
"""Random vs temporal accuracy as day-to-day gait drift grows.

For each drift level, generates a corpus whose walking frequency jitters
uniformly within +/- drift Hz per day, then evaluates both partition
paradigms. The random paradigm mixes seconds from all days into train and
test, so it is insulated from drift; the temporal paradigm trains on the
first day and tests on a later one, so its rank-1 accuracy decays. The gap
between the two columns is the headline effect.

    python3 scripts/drift_sweep.py --n 20 --drifts 0,0.05,0.1,0.2
"""

from __future__ import annotations

import argparse
from pathlib import Path

from gaitprint.config import load_config
from gaitprint.pipeline import run_pipeline
from gaitprint.synthgait import Schedule, write_corpus

PARADIGMS = ("random", "temporal")


def rank1(root: Path, corpus: Path, tag: str, paradigm: str,
          seed: int, workers: int) -> float:
    cfg = load_config(None, {
        "data_dir": str(corpus / "data"),
        "labels": str(corpus / "labels.csv"),
        "out_dir": str(root / tag / f"out-{paradigm}"),
        "cache_dir": str(root / tag / "cache"),  # shared: data stages reused
        "detector": {"kind": "oracle"},
        "paradigm": paradigm,
        "seed": seed,
        "workers": workers,
    })
    report = run_pipeline(cfg)
    (block,) = report["summary"].values()
    return block["rank1"]["median"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="sweeps/drift", help="sweep directory")
    ap.add_argument("--n", type=int, default=20, help="persons per corpus")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--sigma", type=float, default=0.05, help="noise sd, g")
    ap.add_argument("--drifts", default="0,0.05,0.1,0.2",
                    help="comma-separated per-day frequency jitter, Hz")
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    root = Path(args.out)
    drifts = [float(d) for d in args.drifts.split(",")]
    header = f"{'drift':>8}" + "".join(f"{p:>12}" for p in PARADIGMS) + f"{'gap':>8}"
    print(f"{'':>8}{'rank-1 accuracy by paradigm':>24}")
    print(header)
    print("-" * len(header))
    for drift in drifts:
        tag = f"drift{drift:g}"
        corpus = write_corpus(
            root / tag / "corpus", n_persons=args.n, corpus_seed=args.seed,
            schedule=Schedule(days=2), sigma=args.sigma, freq_drift=drift,
        )
        vals = [rank1(root, corpus, tag, p, args.seed, args.workers)
                for p in PARADIGMS]
        print(f"{drift:>8g}" + "".join(f"{v:>12.1f}" for v in vals)
              + f"{vals[0] - vals[1]:>8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
