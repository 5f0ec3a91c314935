"""Command line entry points.

Subcommands run the pipeline end to end (`run`), a prefix of it (`ingest`
through `evaluate`), generate synthetic corpora (`simulate`), or emit
presentation artifacts (`plot`). Flags mirror top-level config keys and
override values from the JSON config file; detector and grid sub-settings
beyond the common detector flags live in the file.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, GaitprintError, NumericError, StageError
from .evaluation import write_accuracy_table_csv, write_fingerprint_pgm, write_fingerprint_svg
from .fingerprint import SecondFeature, fingerprint_image, read_features_bin
from .pipeline import STAGE_ORDER, run_pipeline, run_until
from .synthgait import Schedule, write_corpus


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--paradigm", choices=("random", "temporal"))
    p.add_argument("--minutes", type=int, choices=(3, 6))
    p.add_argument("--subgroup-size", dest="subgroup_size", type=int)
    p.add_argument("--model", choices=("logistic", "lasso"))
    p.add_argument("--variant", choices=("none", "oversample", "weighted", "two-stage"))
    p.add_argument("--oversample-p", dest="oversample_p", type=float)
    p.add_argument("--n-folds", dest="n_folds", type=int)
    p.add_argument("--sample-rate", dest="sample_rate", type=int)
    p.add_argument("--mask")
    p.add_argument("--labels")
    p.add_argument("--workers", type=int)
    p.add_argument("--detector-kind", choices=("template", "oracle"))
    p.add_argument("--detector-threshold", type=float)


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        key: getattr(args, key)
        for key in (
            "data_dir", "out_dir", "cache_dir", "seed", "paradigm", "minutes",
            "subgroup_size", "model", "variant", "oversample_p", "n_folds",
            "sample_rate", "mask", "labels", "workers",
        )
        if getattr(args, key, None) is not None
    }
    detector = {
        k: v
        for k, v in (("kind", args.detector_kind), ("threshold", args.detector_threshold))
        if v is not None
    }
    if detector:
        overrides["detector"] = detector
    return load_config(args.config, overrides)


def _cmd_simulate(args: argparse.Namespace) -> int:
    schedule = Schedule(
        days=args.days,
        bouts_per_day=args.bouts_per_day,
        bout_seconds=args.bout_seconds,
    )
    out = write_corpus(
        args.out,
        n_persons=args.n,
        corpus_seed=args.seed,
        schedule=schedule,
        sigma=args.sigma,
        freq_drift=args.freq_drift,
        amp_drift=args.amp_drift,
    )
    template = {
        "data_dir": str(out / "data"),
        "labels": str(out / "labels.csv"),
        "out_dir": str(out / "out"),
        "seed": args.seed,
    }
    (out / "config.json").write_text(json.dumps(template, indent=2, sort_keys=True) + "\n")
    print(f"corpus: {out}")
    print(f"config template: {out / 'config.json'}")
    return 0


def _cmd_stage(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    results = run_until(cfg, args.command)
    for name in STAGE_ORDER:
        if name not in results:
            break
        r = results[name]
        status = "cached" if r.cached else "computed"
        print(f"{name}: {status} {r.path}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    report = run_pipeline(cfg)
    print(f"report: {Path(cfg.out_dir) / 'report.json'}")
    for key in sorted(report["summary"]):
        block = report["summary"][key]
        line = ", ".join(
            f"{metric} {block[metric]['median']:.1f}"
            for metric in ("rank1", "rank5", "rank1pct", "rank5pct")
        )
        print(f"{key}: {line}")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    results = run_until(cfg, "fingerprint")
    spec = cfg.grid.to_spec(cfg.sample_rate)
    X, keys = read_features_bin(results["fingerprint"].path / "features.bin")
    by_pid: dict[str, list[SecondFeature]] = {}
    for (pid, idx), row in zip(keys, X):
        by_pid.setdefault(pid, []).append(SecondFeature(pid, idx, row))
    if args.participants == "all":
        wanted = sorted(by_pid)
    elif args.participants:
        wanted = args.participants.split(",")
        missing = [p for p in wanted if p not in by_pid]
        if missing:
            raise DataError(f"no features for participants: {missing}")
    else:
        wanted = sorted(by_pid)[:4]
    plots = Path(cfg.out_dir) / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for pid in wanted:
        image = fingerprint_image(by_pid[pid], spec)
        for li, lag in enumerate(spec.lags):
            with open(plots / f"{pid}-lag{lag}.pgm", "w") as fh:
                write_fingerprint_pgm(image, fh, li)
        with open(plots / f"{pid}.svg", "w") as fh:
            write_fingerprint_svg(image, fh)
    print(f"fingerprints: {plots} ({len(wanted)} participants)")
    report_path = Path(cfg.out_dir) / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        with open(plots / "accuracy.csv", "w") as fh:
            write_accuracy_table_csv(fh, report["summary"])
        print(f"accuracy table: {plots / 'accuracy.csv'}")
    else:
        print("no report.json yet; run the pipeline to get accuracy tables")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitprint",
        description="Walking-fingerprint identification from wrist accelerometry",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic labeled corpus")
    sim.add_argument("--out", required=True, help="corpus directory")
    sim.add_argument("--n", type=int, required=True, help="number of persons")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--days", type=int, default=3)
    sim.add_argument("--bouts-per-day", dest="bouts_per_day", type=int, default=5)
    sim.add_argument("--bout-seconds", dest="bout_seconds", type=int, default=28)
    sim.add_argument("--sigma", type=float, default=0.05)
    sim.add_argument("--freq-drift", dest="freq_drift", type=float, default=0.0)
    sim.add_argument("--amp-drift", dest="amp_drift", type=float, default=0.0)
    sim.set_defaults(func=_cmd_simulate)

    for name in STAGE_ORDER:
        p = sub.add_parser(name, help=f"run the pipeline through the {name} stage")
        _add_config_flags(p)
        p.set_defaults(func=_cmd_stage)

    runp = sub.add_parser("run", help="run the full pipeline and emit the report")
    _add_config_flags(runp)
    runp.set_defaults(func=_cmd_run)

    plot = sub.add_parser("plot", help="emit fingerprint heatmaps and accuracy tables")
    _add_config_flags(plot)
    plot.add_argument(
        "--participants",
        help="comma-separated ids, or 'all' (default: first 4)",
    )
    plot.set_defaults(func=_cmd_plot)
    return parser


def _exit_code(exc: GaitprintError) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return 1
    if isinstance(cause, NumericError):
        return 3
    return 2


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GaitprintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
