"""Stage orchestration with content-addressed caching.

Each stage writes its artifacts into a cache directory named by a sha256
key over {stage, version, semantic params, parent stage keys, input file
hashes}. A `_complete.json` marker is written last, so interrupted stages
are recomputed and finished ones are reused byte-for-byte. Worker count,
paths, and cache location never enter a key, which is what makes reruns
at different worker counts byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import PipelineConfig
from .errors import ConfigError, DataError, GaitprintError, StageError
from .evaluation import (
    ScoreMatrix,
    metrics_from_rankings,
    rank_metrics,
    subgroup_summary,
    subject_scores,
    write_scores_csv,
)
from .fingerprint import build_feature_matrix, read_features_bin, write_features_bin
from .ingest import VmSecond, apply_mask, mask_flags, parse_recording, read_mask_csv
from .ovr import ModelBank, TrainingSet, ovr_train, read_bank, two_stage_rank, write_bank
from .partition import (
    Partition,
    make_subgroups,
    random_partition,
    read_partition_csv,
    temporal_partition,
    write_partition_csv,
)
from .segmentation import (
    OracleDetector,
    StepSeries,
    TemplateCorrelationDetector,
    assemble_bouts,
    detect_steps,
    eligibility,
    per_date_counts,
    read_step_series_csv,
    valid_seconds,
    write_bouts_csv,
    write_step_series_csv,
)
from .synthgait import read_labels_csv

STAGE_VERSION = {
    "ingest": 1,
    "segment": 1,
    "fingerprint": 1,
    "partition": 1,
    "train": 1,
    "evaluate": 1,
}


@dataclass
class StageResult:
    name: str
    key: str
    path: Path
    cached: bool


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(stage: str, params: dict, parents: Sequence[str],
               inputs: Sequence[tuple[str, str]] = ()) -> str:
    blob = json.dumps(
        {
            "stage": stage,
            "version": STAGE_VERSION[stage],
            "params": params,
            "parents": list(parents),
            "inputs": list(inputs),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; results are identical at any worker count."""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


class StageCache:
    """Directory of completed stage outputs, addressed by content key."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def dir_for(self, stage: str, key: str) -> Path:
        return self.root / f"{stage}-{key[:16]}"

    def lookup(self, stage: str, key: str) -> Path | None:
        d = self.dir_for(stage, key)
        marker = d / "_complete.json"
        if marker.exists():
            try:
                done = json.loads(marker.read_text())
            except json.JSONDecodeError:
                return None
            if done.get("key") == key:
                return d
        return None

    def run(self, stage: str, key: str, build: Callable[[Path], None]) -> StageResult:
        hit = self.lookup(stage, key)
        if hit is not None:
            return StageResult(stage, key, hit, cached=True)
        d = self.dir_for(stage, key)
        if d.exists():
            shutil.rmtree(d)  # stale partial output from an interrupted run
        d.mkdir(parents=True)
        try:
            build(d)
        except StageError:
            raise
        except GaitprintError as exc:
            raise StageError(stage, exc, getattr(exc, "participant_id", None)) from exc
        artifacts = sorted(p.name for p in d.iterdir())
        (d / "_complete.json").write_text(
            json.dumps({"stage": stage, "key": key, "artifacts": artifacts},
                       sort_keys=True, indent=2) + "\n"
        )
        return StageResult(stage, key, d, cached=False)


def _input_hashes(cfg: PipelineConfig) -> list[tuple[str, str]]:
    data_dir = Path(cfg.data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"data directory not found: {data_dir}")
    files = sorted(data_dir.glob("*.csv"))
    if not files:
        raise DataError(f"no input CSVs under {data_dir}")
    hashes = [(f.name, _hash_file(f)) for f in files]
    if cfg.mask:
        hashes.append(("__mask__", _hash_file(Path(cfg.mask))))
    if cfg.labels:
        hashes.append(("__labels__", _hash_file(Path(cfg.labels))))
    return hashes


# ---------------------------------------------------------------- stages

def stage_ingest(cfg: PipelineConfig, cache: StageCache,
                 inputs: list[tuple[str, str]]) -> StageResult:
    key = _stage_key("ingest", {"sample_rate": cfg.sample_rate}, [], inputs)

    def build(out: Path) -> None:
        mask_by_pid: dict[str, dict[int, bool]] = {}
        seconds_rows: list[tuple[str, int, str]] = []
        for f in sorted(Path(cfg.data_dir).glob("*.csv")):
            with open(f) as fh:
                rec = parse_recording(fh, sample_rate=cfg.sample_rate)
            flags = None
            if cfg.mask:
                if rec.participant_id not in mask_by_pid:
                    with open(cfg.mask) as mh:
                        mask_by_pid[rec.participant_id] = read_mask_csv(
                            mh, rec.participant_id
                        )
                flags = mask_flags(rec, mask_by_pid[rec.participant_id])
            usable = apply_mask(rec, flags)
            vm = np.stack([s.values for s in usable]) if usable else np.zeros(
                (0, cfg.sample_rate)
            )
            np.save(out / f"{rec.participant_id}.vm.npy", vm)
            seconds_rows.extend(
                (s.participant_id, s.second_index, s.date.isoformat()) for s in usable
            )
        with open(out / "seconds.csv", "w") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant_id", "second_index", "date"])
            w.writerows(seconds_rows)

    return cache.run("ingest", key, build)


def _load_vm_seconds(ingest_dir: Path) -> dict[str, list[VmSecond]]:
    by_pid: dict[str, list[VmSecond]] = {}
    with open(ingest_dir / "seconds.csv") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows: dict[str, list[tuple[int, str]]] = {}
        for pid, idx, d in reader:
            rows.setdefault(pid, []).append((int(idx), d))
    for pid in sorted(rows):
        vm = np.load(ingest_dir / f"{pid}.vm.npy")
        by_pid[pid] = [
            VmSecond(pid, idx, datetime.strptime(d, "%Y-%m-%d").date(), vm[i])
            for i, (idx, d) in enumerate(rows[pid])
        ]
    return by_pid


def stage_segment(cfg: PipelineConfig, cache: StageCache,
                  ingest: StageResult) -> StageResult:
    params = {"detector": asdict(cfg.detector)}
    key = _stage_key("segment", params, [ingest.key])

    def build(out: Path) -> None:
        by_pid = _load_vm_seconds(ingest.path)
        labels_cache: dict = {}
        if cfg.detector.kind == "oracle":
            with open(cfg.labels) as fh:
                labels_cache = read_labels_csv(fh)

        def segment_one(pid: str) -> StepSeries:
            if cfg.detector.kind == "oracle":
                per_second = labels_cache.get(pid, {})
                det = OracleDetector(
                    {idx: steps for idx, (_, steps) in per_second.items()}
                )
            else:
                det = TemplateCorrelationDetector(
                    threshold=cfg.detector.threshold,
                    n_templates=cfg.detector.n_templates,
                    min_duration=cfg.detector.min_duration,
                    max_duration=cfg.detector.max_duration,
                )
            return detect_steps(by_pid[pid], det)

        pids = sorted(by_pid)
        series = _parallel_map(segment_one, pids, cfg.workers)
        bouts = [b for s in series for b in assemble_bouts(s)]
        with open(out / "steps.csv", "w") as fh:
            write_step_series_csv(fh, series)
        with open(out / "bouts.csv", "w") as fh:
            write_bouts_csv(fh, bouts)

    return cache.run("segment", key, build)


def stage_fingerprint(cfg: PipelineConfig, cache: StageCache,
                      ingest: StageResult, segment: StageResult) -> StageResult:
    grid = asdict(cfg.grid)
    grid["lags"] = list(grid["lags"])
    key = _stage_key("fingerprint", {"grid": grid}, [ingest.key, segment.key])

    def build(out: Path) -> None:
        spec = cfg.grid.to_spec(cfg.sample_rate)
        by_pid = _load_vm_seconds(ingest.path)
        with open(segment.path / "steps.csv") as fh:
            series_list = read_step_series_csv(fh)
        blocks: list[np.ndarray] = []
        keys: list[tuple[str, int]] = []
        for series in series_list:
            valid = set(int(v) for v in valid_seconds(assemble_bouts(series)))
            seconds = [s for s in by_pid[series.participant_id]
                       if s.second_index in valid]
            X, ks = build_feature_matrix(seconds, spec)
            blocks.append(X)
            keys.extend(ks)
        matrix = (
            np.concatenate(blocks, axis=0)
            if blocks
            else np.zeros((0, spec.n_features), dtype=np.int64)
        )
        write_features_bin(out / "features.bin", keys, matrix, spec)

    return cache.run("fingerprint", key, build)


def stage_partition(cfg: PipelineConfig, cache: StageCache,
                    segment: StageResult) -> StageResult:
    params = {"seed": cfg.seed, "paradigm": cfg.paradigm, "minutes": cfg.minutes}
    key = _stage_key("partition", params, [segment.key])

    def build(out: Path) -> None:
        with open(segment.path / "steps.csv") as fh:
            series_list = read_step_series_csv(fh)
        counts = {}
        valid_by_pid = {}
        dates_by_pid: dict[str, dict[int, object]] = {}
        for series in series_list:
            valid = valid_seconds(assemble_bouts(series))
            valid_by_pid[series.participant_id] = valid
            counts[series.participant_id] = per_date_counts(series, valid)
            dates_by_pid[series.participant_id] = {
                int(i): d for i, d in zip(series.second_index, series.dates)
            }
        six = cfg.minutes == 6
        eligible = eligibility(counts, cfg.paradigm, six_minute=six)
        partitions: list[Partition] = []
        for pid in eligible:
            if cfg.paradigm == "random":
                partitions.append(
                    random_partition(pid, valid_by_pid[pid], cfg.seed, cfg.minutes)
                )
            else:
                by_date: dict = {}
                dates = dates_by_pid[pid]
                for v in valid_by_pid[pid]:
                    by_date.setdefault(dates[int(v)], []).append(int(v))
                partitions.append(
                    temporal_partition(pid, by_date, cfg.seed, cfg.minutes)
                )
        with open(out / "partition.csv", "w") as fh:
            write_partition_csv(fh, partitions, dates_by_pid)
        summary = {
            "paradigm": cfg.paradigm,
            "minutes": cfg.minutes,
            "n_participants": len(series_list),
            "n_eligible": len(eligible),
            "eligible": eligible,
        }
        (out / "eligible.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n"
        )

    return cache.run("partition", key, build)


def _load_features(fingerprint: StageResult) -> tuple[np.ndarray, list[tuple[str, int]], dict]:
    X, keys = read_features_bin(fingerprint.path / "features.bin")
    index = {k: i for i, k in enumerate(keys)}
    return X, keys, index


def _training_set(partitions: Sequence[Partition], members: Sequence[str],
                  X: np.ndarray, index: dict) -> TrainingSet:
    members_set = set(members)
    pids, secs, rows = [], [], []
    for p in partitions:
        if p.participant_id not in members_set:
            continue
        for idx in p.train_seconds:
            pids.append(p.participant_id)
            secs.append(int(idx))
            rows.append(index[(p.participant_id, int(idx))])
    return TrainingSet(pids, np.array(secs, dtype=np.int64), X[rows])


def _test_rows(partitions: Sequence[Partition], members: Sequence[str],
               X: np.ndarray, index: dict) -> tuple[list[str], np.ndarray]:
    members_set = set(members)
    pids, rows = [], []
    for p in partitions:
        if p.participant_id not in members_set:
            continue
        for idx in p.test_seconds:
            pids.append(p.participant_id)
            rows.append(index[(p.participant_id, int(idx))])
    return pids, X[rows]


def _subgroups(cfg: PipelineConfig, eligible: list[str]) -> dict[str, list[str]]:
    if cfg.subgroup_size is None:
        return {"g000": sorted(eligible)}
    groups = make_subgroups(eligible, cfg.seed, cfg.subgroup_size)
    if not groups:
        raise DataError(
            f"{len(eligible)} eligible participants cannot fill one subgroup "
            f"of size {cfg.subgroup_size}"
        )
    return {f"g{i:03d}": g for i, g in enumerate(groups)}


def stage_train(cfg: PipelineConfig, cache: StageCache,
                fingerprint: StageResult, partition: StageResult) -> StageResult:
    # The two-stage variant reranks at evaluation time on top of a plain
    # bank, so its banks are keyed (and therefore shared) with variant none.
    bank_variant = "none" if cfg.variant == "two-stage" else cfg.variant
    params = {
        "seed": cfg.seed,
        "model": cfg.model,
        "variant": bank_variant,
        "oversample_p": cfg.oversample_p if bank_variant == "oversample" else None,
        "n_folds": cfg.n_folds,
        "ridge": cfg.ridge,
        "subgroup_size": cfg.subgroup_size,
    }
    key = _stage_key("train", params, [fingerprint.key, partition.key])

    def build(out: Path) -> None:
        X, _, index = _load_features(fingerprint)
        with open(partition.path / "partition.csv") as fh:
            partitions = read_partition_csv(fh)
        eligible = [p.participant_id for p in partitions]
        groups = _subgroups(cfg, eligible)
        (out / "subgroups.json").write_text(
            json.dumps(groups, sort_keys=True, indent=2) + "\n"
        )
        for gid in sorted(groups):
            train = _training_set(partitions, groups[gid], X, index)
            bank = ovr_train(
                train,
                model=cfg.model,
                variant=bank_variant,
                oversample_p=cfg.oversample_p,
                global_seed=cfg.seed,
                n_folds=cfg.n_folds,
                ridge=cfg.ridge,
                workers=cfg.workers,
            )
            if bank.failures:
                first = sorted(bank.failures)[0]
                raise StageError(
                    "train",
                    DataError(f"{len(bank.failures)} target fits failed; "
                              f"first: {bank.failures[first]}"),
                    participant_id=first,
                )
            write_bank(out / f"bank-{gid}.bin", bank)

    return cache.run("train", key, build)


def stage_evaluate(cfg: PipelineConfig, cache: StageCache,
                   fingerprint: StageResult, partition: StageResult,
                   train: StageResult, config_hash: str,
                   input_hashes: list[tuple[str, str]]) -> StageResult:
    params = {
        "seed": cfg.seed,
        "variant": cfg.variant,
        "model": cfg.model,
        "oversample_p": cfg.oversample_p,
        "n_folds": cfg.n_folds,
        "ridge": cfg.ridge,
        "subgroup_size": cfg.subgroup_size,
    }
    key = _stage_key("evaluate", params, [fingerprint.key, partition.key, train.key])

    def build(out: Path) -> None:
        X, _, index = _load_features(fingerprint)
        with open(partition.path / "partition.csv") as fh:
            partitions = read_partition_csv(fh)
        groups = json.loads((train.path / "subgroups.json").read_text())
        reports = []
        subgroup_blocks = {}
        for gid in sorted(groups):
            members = groups[gid]
            bank: ModelBank = read_bank(train.path / f"bank-{gid}.bin")
            test_pids, test_X = _test_rows(partitions, members, X, index)
            probs = bank.predict_proba(test_X)
            sm = subject_scores(test_pids, probs)
            with open(out / f"scores-{gid}.csv", "w") as fh:
                write_scores_csv(fh, sm)
            stage1 = rank_metrics(
                sm, subgroup_id=gid, paradigm=cfg.paradigm, variant=cfg.variant
            )
            block = {
                "members": len(members),
                "stage1": stage1.metrics(),
            }
            if cfg.variant == "two-stage":
                train_set = _training_set(partitions, members, X, index)
                rankings = two_stage_rank(
                    sm,
                    train_set,
                    test_pids,
                    test_X,
                    model=cfg.model,
                    variant="none",
                    global_seed=cfg.seed,
                    n_folds=cfg.n_folds,
                    ridge=cfg.ridge,
                )
                (out / f"rankings-{gid}.json").write_text(
                    json.dumps(rankings, sort_keys=True, indent=2) + "\n"
                )
                final = metrics_from_rankings(
                    rankings, subgroup_id=gid, paradigm=cfg.paradigm,
                    variant=cfg.variant,
                )
                block["final"] = final.metrics()
                reports.append(final)
            else:
                reports.append(stage1)
            subgroup_blocks[gid] = block
        report = {
            "config": cfg.semantic_dict(),
            "config_hash": config_hash,
            "inputs": input_hashes,
            "stage_keys": {
                "fingerprint": fingerprint.key,
                "partition": partition.key,
                "train": train.key,
                "evaluate": key,
            },
            "eligibility": json.loads((partition.path / "eligible.json").read_text()),
            "subgroups": subgroup_blocks,
            "summary": subgroup_summary(reports),
        }
        (out / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n"
        )

    return cache.run("evaluate", key, build)


STAGE_ORDER = ("ingest", "segment", "fingerprint", "partition", "train", "evaluate")


def run_until(cfg: PipelineConfig, last_stage: str) -> dict[str, StageResult]:
    """Execute stages through `last_stage`, reusing caches, and return them."""
    if last_stage not in STAGE_ORDER:
        raise ConfigError(f"unknown stage {last_stage!r}")
    cfg.validate()
    cache = StageCache(cfg.resolved_cache_dir())
    inputs = _input_hashes(cfg)
    results: dict[str, StageResult] = {}
    results["ingest"] = stage_ingest(cfg, cache, inputs)
    if last_stage == "ingest":
        return results
    results["segment"] = stage_segment(cfg, cache, results["ingest"])
    if last_stage == "segment":
        return results
    results["fingerprint"] = stage_fingerprint(
        cfg, cache, results["ingest"], results["segment"]
    )
    if last_stage == "fingerprint":
        return results
    results["partition"] = stage_partition(cfg, cache, results["segment"])
    if last_stage == "partition":
        return results
    results["train"] = stage_train(
        cfg, cache, results["fingerprint"], results["partition"]
    )
    if last_stage == "train":
        return results
    results["evaluate"] = stage_evaluate(
        cfg, cache, results["fingerprint"], results["partition"], results["train"],
        cfg.config_hash(), inputs,
    )
    return results


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute all stages, copy final artifacts to out_dir, return the report."""
    results = run_until(cfg, "evaluate")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluate = results["evaluate"]
    for artifact in sorted(evaluate.path.iterdir()):
        if artifact.name == "_complete.json":
            continue
        shutil.copyfile(artifact, out_dir / artifact.name)
    return json.loads((evaluate.path / "report.json").read_text())
