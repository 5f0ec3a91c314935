"""Pipeline orchestration and CLI tests.

The integration tests share one small synthetic corpus (6 people, 2 days,
oracle step labels) so the full pipeline only runs a handful of times.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from gaitprint.cli import _exit_code, build_parser, main
from gaitprint.config import (
    ENV_CACHE_DIR,
    PipelineConfig,
    config_from_dict,
    load_config,
)
from gaitprint.errors import ConfigError, DataError, NumericError, StageError
from gaitprint.pipeline import STAGE_ORDER, run_pipeline, run_until
from gaitprint.synthgait import Schedule, write_corpus

# ------------------------------------------------------------------ config


def test_config_defaults_validate():
    cfg = PipelineConfig()
    cfg.validate()
    assert cfg.paradigm == "random"
    assert cfg.minutes == 3
    assert cfg.grid.lags == (12, 24, 36)


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"seeed": 3})


def test_unknown_detector_and_grid_keys_rejected():
    with pytest.raises(ConfigError, match="unknown detector keys"):
        config_from_dict({"detector": {"kindd": "oracle"}})
    with pytest.raises(ConfigError, match="unknown grid keys"):
        config_from_dict({"grid": {"low": 0.0}})


def test_detector_must_be_object():
    with pytest.raises(ConfigError, match="detector must be an object"):
        config_from_dict({"detector": "template"})


@pytest.mark.parametrize(
    "raw",
    [
        {"paradigm": "chronological"},
        {"minutes": 4},
        {"model": "svm"},
        {"variant": "two_stage"},
        {"variant": "oversample"},  # missing oversample_p
        {"variant": "oversample", "oversample_p": 1.5},
        {"subgroup_size": 1},
        {"n_folds": 1},
        {"ridge": -1e-9},
        {"sample_rate": 0},
        {"workers": 0},
        {"detector": {"kind": "everything"}},
        {"detector": {"threshold": 1.0}},
        {"detector": {"kind": "oracle"}},  # oracle needs labels
        {"grid": {"width": 0.4}},  # 3.0 / 0.4 is not integral
    ],
)
def test_validate_rejects_bad_values(raw):
    with pytest.raises(ConfigError):
        cfg = config_from_dict(raw)
        cfg.validate()


def test_load_config_reads_file_and_applies_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 1, "minutes": 6, "detector": {"threshold": 0.6}}))
    cfg = load_config(path, {"seed": 2, "detector": {"kind": "oracle"}, "labels": "x.csv"})
    # flags beat the file; untouched file keys survive; detector dicts merge
    assert cfg.seed == 2
    assert cfg.minutes == 6
    assert cfg.detector.kind == "oracle"
    assert cfg.detector.threshold == 0.6


def test_load_config_ignores_none_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 9}))
    cfg = load_config(path, {"seed": None, "out_dir": None})
    assert cfg.seed == 9
    assert cfg.out_dir == "out"


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/cfg.json")


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(path)


def test_load_config_root_must_be_object(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="root must be a JSON object"):
        load_config(path)


def test_config_hash_ignores_execution_keys():
    a = PipelineConfig()
    b = PipelineConfig(data_dir="elsewhere", out_dir="o2", cache_dir="c2",
                       workers=8, mask="m.csv", labels="l.csv")
    assert a.config_hash() == b.config_hash()


@pytest.mark.parametrize(
    "change",
    [
        {"seed": 1},
        {"paradigm": "temporal"},
        {"minutes": 6},
        {"model": "lasso"},
        {"variant": "weighted"},
        {"n_folds": 4},
        {"ridge": 1e-5},
        {"sample_rate": 40},
    ],
)
def test_config_hash_tracks_semantic_keys(change):
    assert PipelineConfig(**change).config_hash() != PipelineConfig().config_hash()


def test_semantic_dict_covers_exactly_the_semantic_keys():
    d = PipelineConfig().semantic_dict()
    assert set(d) == set(PipelineConfig.SEMANTIC)
    assert "out_dir" not in d and "workers" not in d
    # json round-trippable (tuples flattened to lists)
    assert json.loads(json.dumps(d)) == d


def test_resolved_cache_dir_precedence(monkeypatch, tmp_path):
    cfg = PipelineConfig(out_dir=str(tmp_path / "o"), cache_dir=str(tmp_path / "c"))
    monkeypatch.delenv(ENV_CACHE_DIR, raising=False)
    assert cfg.resolved_cache_dir() == tmp_path / "c"
    monkeypatch.setenv(ENV_CACHE_DIR, str(tmp_path / "env"))
    assert cfg.resolved_cache_dir() == tmp_path / "env"
    monkeypatch.delenv(ENV_CACHE_DIR)
    cfg.cache_dir = None
    assert cfg.resolved_cache_dir() == tmp_path / "o" / "cache"


# ------------------------------------------------------------- CLI parsing


def test_parser_covers_all_stage_prefixes():
    parser = build_parser()
    for name in STAGE_ORDER:
        args = parser.parse_args([name, "--seed", "3"])
        assert args.command == name
        assert args.seed == 3


def test_parser_run_flags():
    args = build_parser().parse_args(
        ["run", "--paradigm", "temporal", "--minutes", "6", "--variant",
         "oversample", "--oversample-p", "0.25", "--detector-kind", "oracle",
         "--workers", "4"]
    )
    assert args.paradigm == "temporal"
    assert args.minutes == 6
    assert args.variant == "oversample"
    assert args.oversample_p == 0.25
    assert args.detector_kind == "oracle"
    assert args.workers == 4


def test_parser_rejects_bad_choice():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--paradigm", "sideways"])


def test_exit_code_mapping():
    assert _exit_code(ConfigError("x")) == 1
    assert _exit_code(DataError("x")) == 2
    assert _exit_code(NumericError("x")) == 3
    # StageError defers to its cause
    assert _exit_code(StageError("train", ConfigError("x"))) == 1
    assert _exit_code(StageError("train", NumericError("x"))) == 3
    assert _exit_code(StageError("train", DataError("x"))) == 2


def test_main_missing_config_exits_1(capsys):
    rc = main(["run", "--config", "/nonexistent/cfg.json"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_main_empty_data_dir_exits_2(tmp_path, capsys):
    (tmp_path / "data").mkdir()
    rc = main(["run", "--data-dir", str(tmp_path / "data"),
               "--out-dir", str(tmp_path / "out")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_main_missing_data_dir_exits_1(tmp_path, capsys):
    rc = main(["run", "--data-dir", str(tmp_path / "nope"),
               "--out-dir", str(tmp_path / "out")])
    assert rc == 1
    capsys.readouterr()


# -------------------------------------------------------------- simulate


def test_simulate_writes_corpus_and_config_template(tmp_path, capsys):
    rc = main(["simulate", "--out", str(tmp_path / "c"), "--n", "2",
               "--seed", "5", "--days", "1", "--bouts-per-day", "1",
               "--bout-seconds", "12"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "corpus:" in out and "config template:" in out
    root = tmp_path / "c"
    assert sorted(p.name for p in (root / "data").iterdir()) == ["p0000.csv", "p0001.csv"]
    assert (root / "labels.csv").exists()
    template = json.loads((root / "config.json").read_text())
    assert template["data_dir"] == str(root / "data")
    assert template["labels"] == str(root / "labels.csv")
    assert template["seed"] == 5
    # the template is directly loadable
    cfg = load_config(root / "config.json", {"detector": {"kind": "oracle"}})
    assert cfg.data_dir == str(root / "data")


# ------------------------------------------------------- integration corpus

N_PERSONS = 6
CORPUS_SEED = 7


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """6 people, 2 days x 5 bouts x 28 s: eligible for both paradigms."""
    root = tmp_path_factory.mktemp("corpus")
    return write_corpus(
        root / "c", n_persons=N_PERSONS, corpus_seed=CORPUS_SEED,
        schedule=Schedule(days=2), sigma=0.05,
    )


def base_config(corpus: Path, work: Path, **over) -> PipelineConfig:
    raw = {
        "data_dir": str(corpus / "data"),
        "labels": str(corpus / "labels.csv"),
        "out_dir": str(work / "out"),
        "cache_dir": str(work / "cache"),
        "detector": {"kind": "oracle"},
        "seed": 11,
    }
    raw.update(over)
    return load_config(None, raw)


@pytest.fixture(scope="module")
def first_run(corpus, tmp_path_factory):
    work = tmp_path_factory.mktemp("run")
    cfg = base_config(corpus, work)
    report = run_pipeline(cfg)
    return cfg, work, report


def test_report_structure(first_run):
    cfg, _, report = first_run
    assert set(report) == {
        "config", "config_hash", "inputs", "stage_keys", "eligibility",
        "subgroups", "summary",
    }
    assert report["config_hash"] == cfg.config_hash()
    assert report["config"] == json.loads(json.dumps(cfg.semantic_dict()))
    assert len(report["inputs"]) == N_PERSONS + 1  # data files + labels
    assert set(report["stage_keys"]) == {"fingerprint", "partition", "train", "evaluate"}
    # one subgroup holding everyone
    (gid,) = report["subgroups"]
    assert report["subgroups"][gid]["members"] == N_PERSONS
    key = f"paradigm=random,n={N_PERSONS},variant=none"
    for metric in ("rank1", "rank5", "rank1pct", "rank5pct"):
        block = report["summary"][key][metric]
        assert set(block) == {"median", "min", "max"}
        assert 0.0 <= block["min"] <= block["median"] <= block["max"] <= 100.0


def test_synthetic_people_are_identifiable(first_run):
    # distinct gait signatures should be near-perfectly separable
    _, _, report = first_run
    summary = report["summary"][f"paradigm=random,n={N_PERSONS},variant=none"]
    assert summary["rank1"]["median"] >= 80.0


def test_out_dir_artifacts(first_run):
    cfg, _, _ = first_run
    out = Path(cfg.out_dir)
    names = sorted(p.name for p in out.iterdir())
    assert "report.json" in names
    assert any(n.startswith("scores-") and n.endswith(".csv") for n in names)
    assert "_complete.json" not in names
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["config_hash"] == cfg.config_hash()


def test_rerun_hits_every_stage_cache(first_run):
    cfg, _, _ = first_run
    results = run_until(cfg, "evaluate")
    assert [name for name in STAGE_ORDER] == list(results)
    assert all(results[name].cached for name in STAGE_ORDER)


def test_run_until_stops_at_requested_stage(first_run):
    cfg, _, _ = first_run
    results = run_until(cfg, "segment")
    assert list(results) == ["ingest", "segment"]


def test_run_until_rejects_unknown_stage(first_run):
    cfg, _, _ = first_run
    with pytest.raises(ConfigError, match="unknown stage"):
        run_until(cfg, "rank")


def test_seed_change_reuses_data_stages(corpus, first_run):
    # seed feeds partition/train/evaluate only; upstream stages stay cached
    _, work, _ = first_run
    cfg = base_config(corpus, work, seed=12)
    results = run_until(cfg, "evaluate")
    assert results["ingest"].cached
    assert results["segment"].cached
    assert results["fingerprint"].cached
    assert not results["partition"].cached
    assert not results["train"].cached
    assert not results["evaluate"].cached


def test_two_stage_reuses_plain_bank(corpus, first_run):
    # two-stage reranks on top of a plain bank, so train is shared with
    # variant none while evaluate recomputes
    _, work, _ = first_run
    cfg = base_config(corpus, work, variant="two-stage")
    results = run_until(cfg, "evaluate")
    assert results["train"].cached
    assert not results["evaluate"].cached
    report = json.loads((results["evaluate"].path / "report.json").read_text())
    (gid,) = report["subgroups"]
    block = report["subgroups"][gid]
    assert "final" in block
    assert block["final"]["rank1"] <= block["stage1"]["rank1pct"]
    assert block["final"]["rank5pct"] == block["stage1"]["rank5pct"]
    assert (results["evaluate"].path / f"rankings-{gid}.json").exists()


def test_worker_count_does_not_change_the_report(corpus, first_run, tmp_path):
    cfg1, _, _ = first_run
    cfg8 = base_config(corpus, tmp_path, workers=8)
    run_pipeline(cfg8)
    text1 = (Path(cfg1.out_dir) / "report.json").read_text()
    text8 = (Path(cfg8.out_dir) / "report.json").read_text()
    assert text1 == text8


def test_temporal_partition_records_dates(corpus, tmp_path):
    cfg = base_config(corpus, tmp_path, paradigm="temporal")
    results = run_until(cfg, "partition")
    text = (results["partition"].path / "partition.csv").read_text()
    assert "2024-03-04" in text  # earliest day trains
    assert "2024-03-05" in text  # the later day tests


def test_stage_command_prints_status_lines(corpus, first_run, capsys):
    cfg, work, _ = first_run
    rc = main([
        "fingerprint",
        "--data-dir", cfg.data_dir,
        "--labels", cfg.labels,
        "--out-dir", cfg.out_dir,
        "--cache-dir", cfg.cache_dir,
        "--detector-kind", "oracle",
        "--seed", "11",
    ])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split(":")[0] for ln in lines] == ["ingest", "segment", "fingerprint"]
    assert all("cached" in ln for ln in lines)


def test_run_command_prints_summary(corpus, first_run, capsys):
    cfg, _, _ = first_run
    rc = main([
        "run",
        "--data-dir", cfg.data_dir,
        "--labels", cfg.labels,
        "--out-dir", cfg.out_dir,
        "--cache-dir", cfg.cache_dir,
        "--detector-kind", "oracle",
        "--seed", "11",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "report:" in out
    assert "paradigm=random" in out
    assert "rank1" in out


def test_env_cache_dir_overrides_config(corpus, tmp_path, monkeypatch, capsys):
    env_cache = tmp_path / "envcache"
    monkeypatch.setenv(ENV_CACHE_DIR, str(env_cache))
    rc = main([
        "ingest",
        "--data-dir", str(corpus / "data"),
        "--labels", str(corpus / "labels.csv"),
        "--out-dir", str(tmp_path / "out"),
        "--cache-dir", str(tmp_path / "ignored"),
        "--detector-kind", "oracle",
    ])
    assert rc == 0
    capsys.readouterr()
    assert any(p.name.startswith("ingest-") for p in env_cache.iterdir())
    assert not (tmp_path / "ignored").exists()


def test_config_file_plus_flag_override_flow(corpus, tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "data_dir": str(corpus / "data"),
        "labels": str(corpus / "labels.csv"),
        "out_dir": str(tmp_path / "out"),
        "cache_dir": str(tmp_path / "cache"),
        "detector": {"kind": "oracle"},
        "seed": 11,
        "minutes": 6,
    }))
    # 6-minute eligibility needs 360 walking seconds; this corpus has 280,
    # so nobody qualifies and training fails, while a --minutes 3 override
    # succeeds end to end
    rc = main(["train", "--config", str(path)])
    err = capsys.readouterr().err
    assert rc == 2
    assert "error:" in err
    rc = main(["train", "--config", str(path), "--minutes", "3"])
    assert rc == 0
    capsys.readouterr()


# ------------------------------------------------------------------ plot


def test_plot_emits_heatmaps_and_accuracy_table(corpus, first_run, capsys):
    cfg, work, _ = first_run
    rc = main([
        "plot",
        "--data-dir", cfg.data_dir,
        "--labels", cfg.labels,
        "--out-dir", cfg.out_dir,
        "--cache-dir", cfg.cache_dir,
        "--detector-kind", "oracle",
        "--seed", "11",
        "--participants", "p0000,p0001",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    plots = Path(cfg.out_dir) / "plots"
    for pid in ("p0000", "p0001"):
        for lag in (12, 24, 36):
            assert (plots / f"{pid}-lag{lag}.pgm").exists()
        assert (plots / f"{pid}.svg").exists()
    header = (plots / f"p0000-lag12.pgm").read_text().splitlines()[0]
    assert header == "P2"
    assert "accuracy table:" in out
    table = (plots / "accuracy.csv").read_text().splitlines()
    assert table[0] == "configuration,metric,median,min,max,n_subgroups"
    assert len(table) >= 2


def test_plot_unknown_participant_exits_2(corpus, first_run, capsys):
    cfg, _, _ = first_run
    rc = main([
        "plot",
        "--data-dir", cfg.data_dir,
        "--labels", cfg.labels,
        "--out-dir", cfg.out_dir,
        "--cache-dir", cfg.cache_dir,
        "--detector-kind", "oracle",
        "--seed", "11",
        "--participants", "ghost",
    ])
    assert rc == 2
    assert "ghost" in capsys.readouterr().err
