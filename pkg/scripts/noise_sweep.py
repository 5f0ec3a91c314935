#!/usr/bin/env python3
"""Identification accuracy vs sensor noise.

Generates one synthetic corpus per noise level (same gait signatures, same
walking schedule), runs the random-paradigm pipeline on each, and prints a
rank-metric table. Stage caches live under the sweep directory, so rerunning
with an extra noise level only computes the new corpus.

    python3 scripts/noise_sweep.py --n 20 --sigmas 0.02,0.05,0.1,0.2
"""

from __future__ import annotations

import argparse
from pathlib import Path

from gaitprint.config import load_config
from gaitprint.pipeline import run_pipeline
from gaitprint.synthgait import Schedule, write_corpus

METRICS = ("rank1", "rank5", "rank1pct", "rank5pct")


def run_one(root: Path, n: int, seed: int, sigma: float, workers: int) -> dict:
    tag = f"sigma{sigma:g}"
    corpus = write_corpus(
        root / tag / "corpus", n_persons=n, corpus_seed=seed,
        schedule=Schedule(days=2), sigma=sigma,
    )
    cfg = load_config(None, {
        "data_dir": str(corpus / "data"),
        "labels": str(corpus / "labels.csv"),
        "out_dir": str(root / tag / "out"),
        "cache_dir": str(root / tag / "cache"),
        "detector": {"kind": "oracle"},
        "seed": seed,
        "workers": workers,
    })
    report = run_pipeline(cfg)
    (block,) = report["summary"].values()
    return {m: block[m]["median"] for m in METRICS}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="sweeps/noise", help="sweep directory")
    ap.add_argument("--n", type=int, default=20, help="persons per corpus")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--sigmas", default="0.02,0.05,0.1,0.2",
                    help="comma-separated noise levels, g")
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    root = Path(args.out)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    header = f"{'sigma':>8}" + "".join(f"{m:>10}" for m in METRICS)
    print(header)
    print("-" * len(header))
    for sigma in sigmas:
        row = run_one(root, args.n, args.seed, sigma, args.workers)
        print(f"{sigma:>8g}" + "".join(f"{row[m]:>10.1f}" for m in METRICS))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
