import numpy as np
import pytest

from gaitprint.classifier import predict_proba
from gaitprint.errors import ConfigError, DataError, ParseError, ShapeError
from gaitprint.evaluation import (
    ScoreMatrix,
    metrics_from_rankings,
    rank_metrics,
    subject_scores,
)
from gaitprint.ovr import (
    ModelBank,
    TrainingSet,
    bank_to_json,
    ovr_train,
    read_bank,
    two_stage_rank,
    write_bank,
)


def cluster_training_set(n_participants=3, rows_per=12, n_features=6, seed=0, spread=0.3):
    """Each participant's rows cluster around their own corner of feature space."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(2, 8, size=(n_participants, n_features))
    pids, X = [], []
    for i in range(n_participants):
        pid = f"p{i:03d}"
        pids += [pid] * rows_per
        X.append(centers[i] + rng.normal(0, spread, size=(rows_per, n_features)))
    return TrainingSet(pids, np.arange(n_participants * rows_per), np.vstack(X)), centers


# ---------------------------------------------------------------- training set

def test_training_set_helpers():
    ts, _ = cluster_training_set(3, rows_per=4)
    assert ts.targets() == ["p000", "p001", "p002"]
    assert ts.rows_per_participant() == 4
    sub = ts.subset(["p000", "p002"])
    assert sub.targets() == ["p000", "p002"]
    assert sub.X.shape == (8, 6)


def test_training_set_unequal_rows_rejected():
    ts = TrainingSet(["a", "a", "b"], np.arange(3), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        ts.rows_per_participant()


def test_training_set_misaligned_rows():
    with pytest.raises(ShapeError):
        TrainingSet(["a", "b"], np.arange(3), np.zeros((3, 2)))


# ---------------------------------------------------------------- ovr_train

def test_bank_has_one_model_per_participant():
    ts, _ = cluster_training_set(4)
    bank = ovr_train(ts, global_seed=1)
    assert sorted(bank.models) == ts.targets()
    assert bank.failures == {}
    assert bank.n_features == 6
    assert bank.metadata["model"] == "logistic"


def test_separable_microcorpus_scores_own_rows_highest():
    ts, centers = cluster_training_set(3, rows_per=12, seed=2)
    bank = ovr_train(ts, global_seed=0)
    rng = np.random.default_rng(99)
    test_rows = []
    row_subjects = []
    for i, pid in enumerate(ts.targets()):
        test_rows.append(centers[i] + rng.normal(0, 0.3, size=(5, 6)))
        row_subjects += [pid] * 5
    test_X = np.vstack(test_rows)
    sm = subject_scores(row_subjects, bank.predict_proba(test_X))
    rep = rank_metrics(sm)
    assert rep.rank1 == 100.0


def test_ovr_parallel_matches_serial():
    ts, _ = cluster_training_set(5, rows_per=10, seed=3)
    serial = ovr_train(ts, global_seed=4, workers=1)
    parallel = ovr_train(ts, global_seed=4, workers=4)
    assert sorted(serial.models) == sorted(parallel.models)
    for pid in serial.models:
        a, b = serial.models[pid], parallel.models[pid]
        assert a.intercept == b.intercept
        assert np.array_equal(a.coef, b.coef)


def test_ovr_variant_none_equals_fixed_point_oversample():
    # p = 1/n_participants makes the resampled target count equal the
    # original, so only the row order differs between the two variants.
    ts, _ = cluster_training_set(4, rows_per=9, seed=5)
    none = ovr_train(ts, variant="none", global_seed=6)
    fixed = ovr_train(ts, variant="oversample", oversample_p=0.25, global_seed=6)
    for pid in none.models:
        assert none.models[pid].intercept == pytest.approx(
            fixed.models[pid].intercept, abs=1e-8
        )
        assert np.max(
            np.abs(none.models[pid].coef - fixed.models[pid].coef)
        ) < 1e-8


def test_ovr_weighted_variant_runs_and_annotates():
    ts, _ = cluster_training_set(3, rows_per=8, seed=7)
    bank = ovr_train(ts, variant="weighted", global_seed=0)
    for m in bank.models.values():
        assert m.metadata["variant"] == "weighted"
        assert m.metadata["weighting"] == "case-control"


def test_ovr_oversample_changes_positive_count():
    ts, _ = cluster_training_set(3, rows_per=10, seed=8)
    bank = ovr_train(ts, variant="oversample", oversample_p=0.5, global_seed=0)
    for m in bank.models.values():
        # n_controls = 20, p = 0.5 -> m = 20 positives
        assert m.metadata["n_positive"] == 20
        assert m.metadata["n_rows"] == 40


def test_ovr_screening_applied_before_fit():
    ts, _ = cluster_training_set(3, rows_per=10, seed=9)
    X = ts.X.copy()
    X[:, 2] = 7.0  # constant column must be screened out
    ts2 = TrainingSet(ts.participant_ids, ts.second_indices, X)
    bank = ovr_train(ts2, global_seed=0)
    assert 2 in bank.screen.dropped
    assert all(len(m.coef) == len(bank.screen.retained) for m in bank.models.values())


def test_ovr_validation_errors():
    ts, _ = cluster_training_set(3)
    with pytest.raises(ConfigError):
        ovr_train(ts, model="forest")
    with pytest.raises(ConfigError):
        ovr_train(ts, variant="undersample")
    with pytest.raises(ConfigError):
        ovr_train(ts, variant="oversample")  # missing p
    solo = TrainingSet(["a"] * 4, np.arange(4), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        ovr_train(solo)


def test_ovr_collects_per_target_failures():
    # Two participants, one with pathological rows: non-finite values are
    # caught at fit time and recorded, not raised.
    X = np.vstack([np.random.default_rng(0).normal(size=(6, 3)),
                   np.random.default_rng(1).normal(size=(6, 3))])
    ts = TrainingSet(["a"] * 6 + ["b"] * 6, np.arange(12), X)
    bank = ovr_train(ts, variant="oversample", oversample_p=1e-9, global_seed=0)
    # Tiny p resamples targets down to zero rows -> single-class labels.
    assert set(bank.failures) == {"a", "b"}
    assert bank.models == {}


def test_bank_predict_proba_uses_retained_columns():
    ts, centers = cluster_training_set(3, rows_per=10, seed=10)
    X = ts.X.copy()
    X[:, 0] = 1.0
    ts2 = TrainingSet(ts.participant_ids, ts.second_indices, X)
    bank = ovr_train(ts2, global_seed=0)
    probs = bank.predict_proba(X[:5])
    assert sorted(probs) == ts.targets()
    for p in probs.values():
        assert p.shape == (5,)
        assert np.all((p >= 0) & (p <= 1))


def test_lasso_bank_smoke():
    ts, _ = cluster_training_set(3, rows_per=15, seed=11, spread=1.0)
    bank = ovr_train(ts, model="lasso", global_seed=12, n_folds=3)
    assert bank.failures == {}
    for m in bank.models.values():
        assert m.metadata["model"] == "lasso"
        assert "lambda_" in m.metadata


# ---------------------------------------------------------------- persistence

def test_bank_round_trip(tmp_path):
    ts, _ = cluster_training_set(4, rows_per=8, seed=13)
    X = ts.X.copy()
    X[:, 1] = 0.0
    bank = ovr_train(TrainingSet(ts.participant_ids, ts.second_indices, X), global_seed=3)
    path = tmp_path / "bank.bin"
    write_bank(path, bank)
    back = read_bank(path)
    assert back.n_features == bank.n_features
    assert np.array_equal(back.screen.retained, bank.screen.retained)
    assert back.screen.dropped == bank.screen.dropped
    assert back.failures == bank.failures
    assert back.metadata == bank.metadata
    assert sorted(back.models) == sorted(bank.models)
    for pid in bank.models:
        a, b = bank.models[pid], back.models[pid]
        assert a.intercept == b.intercept
        assert np.array_equal(a.coef, b.coef)
        assert a.metadata == b.metadata


def test_bank_rewrite_is_byte_identical(tmp_path):
    ts, _ = cluster_training_set(3, rows_per=8, seed=14)
    bank = ovr_train(ts, global_seed=5)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    write_bank(p1, bank)
    write_bank(p2, read_bank(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_bank_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
    with pytest.raises(ParseError):
        read_bank(p)


def test_bank_trailing_bytes(tmp_path):
    ts, _ = cluster_training_set(3, rows_per=8, seed=15)
    bank = ovr_train(ts, global_seed=5)
    p = tmp_path / "x.bin"
    write_bank(p, bank)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ParseError):
        read_bank(p)


def test_bank_to_json_keys_by_original_column():
    ts, _ = cluster_training_set(3, rows_per=8, seed=16)
    X = ts.X.copy()
    X[:, 0] = 4.2  # constant: dropped, so retained columns shift
    bank = ovr_train(TrainingSet(ts.participant_ids, ts.second_indices, X), global_seed=2)
    doc = bank_to_json(bank)
    assert doc["retained"] == [1, 2, 3, 4, 5]
    for entry in doc["models"].values():
        for col in entry["coef"]:
            assert int(col) in doc["retained"]
    # Round-trip the document through the retained mapping: scoring with the
    # JSON coefficients must match the in-memory bank.
    rng = np.random.default_rng(0)
    probe = rng.uniform(2, 8, size=(3, 6))
    probs = bank.predict_proba(probe)
    for pid, entry in doc["models"].items():
        coef = np.zeros(6)
        for col, v in entry["coef"].items():
            coef[int(col)] = v
        manual = predict_proba(entry["intercept"], coef, probe)
        assert np.allclose(manual, probs[pid], atol=1e-12)


# ---------------------------------------------------------------- two stage

def big_two_stage_instance(n=200, rows_per=5, n_features=3, seed=0):
    rng = np.random.default_rng(seed)
    pids = [f"p{i:03d}" for i in range(n)]
    centers = rng.uniform(1, 9, size=(n, n_features))
    train_pids, Xtr = [], []
    for i, pid in enumerate(pids):
        train_pids += [pid] * rows_per
        Xtr.append(centers[i] + rng.normal(0, 0.2, size=(rows_per, n_features)))
    train = TrainingSet(train_pids, np.arange(n * rows_per), np.vstack(Xtr))
    test_rows, row_subjects = [], []
    for i, pid in enumerate(pids):
        test_rows.append(centers[i] + rng.normal(0, 0.2, size=(2, n_features)))
        row_subjects += [pid] * 2
    # Stage-1 scores: noisy similarity, so the truth is usually near the top
    # without being rank 1 every time.
    sims = -np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    noisy = sims + rng.normal(0, 0.4, size=sims.shape)
    m = (noisy - noisy.min()) / (noisy.max() - noisy.min())
    stage1 = ScoreMatrix(pids, pids, m)
    return stage1, train, row_subjects, np.vstack(test_rows)


def test_two_stage_shortlist_two_at_n200():
    stage1, train, row_subjects, test_X = big_two_stage_instance()
    rankings = two_stage_rank(stage1, train, row_subjects, test_X, global_seed=1)
    assert len(rankings) == 200
    cand = np.array(stage1.candidate_ids)
    for i, subject in enumerate(stage1.subject_ids):
        order = np.lexsort((cand, -stage1.matrix[i]))
        stage1_ranking = [str(c) for c in cand[order]]
        final = rankings[subject]
        # Positions past the shortlist are exactly stage-1 order.
        assert final[2:] == stage1_ranking[2:]
        # The top two are a permutation of the stage-1 top two.
        assert set(final[:2]) == set(stage1_ranking[:2])


def test_two_stage_rank_constraints_hold():
    stage1, train, row_subjects, test_X = big_two_stage_instance(seed=4)
    stage1_rep = rank_metrics(stage1)
    rankings = two_stage_rank(stage1, train, row_subjects, test_X, global_seed=2)
    final_rep = metrics_from_rankings(rankings)
    # A candidate outside the stage-1 shortlist can never become rank 1.
    assert final_rep.rank1 <= stage1_rep.rank1pct
    # Membership at or beyond the shortlist boundary is untouched.
    assert final_rep.rank5pct == stage1_rep.rank5pct
    assert final_rep.rank5 == stage1_rep.rank5


def test_two_stage_improves_or_keeps_separable_instance():
    # With nearly noise-free stage-2 features the refit should recover the
    # true identity whenever it made the shortlist.
    stage1, train, row_subjects, test_X = big_two_stage_instance(seed=7)
    rankings = two_stage_rank(stage1, train, row_subjects, test_X, global_seed=3)
    cand = np.array(stage1.candidate_ids)
    recovered = 0
    eligible = 0
    for i, subject in enumerate(stage1.subject_ids):
        order = np.lexsort((cand, -stage1.matrix[i]))
        top2 = [str(c) for c in cand[order][:2]]
        if subject in top2:
            eligible += 1
            if rankings[subject][0] == subject:
                recovered += 1
    assert eligible > 0
    assert recovered / eligible > 0.9


def test_two_stage_shortlist_of_one_keeps_stage1_order():
    rng = np.random.default_rng(5)
    pids = [f"p{i}" for i in range(4)]
    m = rng.random((4, 4))
    stage1 = ScoreMatrix(pids, pids, m)
    train = TrainingSet(
        [p for p in pids for _ in range(3)], np.arange(12), rng.normal(size=(12, 2))
    )
    rankings = two_stage_rank(
        stage1, train, pids, rng.normal(size=(4, 2)), shortlist_frac=0.01
    )  # floor(0.04) -> size 1: stage 2 skipped
    cand = np.array(pids)
    for i, subject in enumerate(pids):
        order = np.lexsort((cand, -m[i]))
        assert rankings[subject] == [str(c) for c in cand[order]]


def test_two_stage_missing_test_rows():
    stage1, train, row_subjects, test_X = big_two_stage_instance(n=4, seed=8)
    with pytest.raises(ShapeError):
        two_stage_rank(
            stage1, train, row_subjects[:2], test_X[:2], shortlist_frac=0.5
        )


def test_two_stage_refit_failure_is_data_error():
    rng = np.random.default_rng(6)
    pids = [f"p{i}" for i in range(4)]
    stage1 = ScoreMatrix(pids, pids, rng.random((4, 4)))
    train = TrainingSet(
        [p for p in pids for _ in range(3)], np.arange(12), rng.normal(size=(12, 2))
    )
    with pytest.raises(DataError):
        two_stage_rank(
            stage1, train, pids, rng.normal(size=(4, 2)),
            variant="oversample", oversample_p=1e-9, shortlist_frac=0.5,
        )
