"""One-vs-rest model banks: training, persistence, and the two-stage variant.

Screening runs once on the shared training matrix; each target participant
then gets an independent fit against everyone else's rows, so targets can
be fitted in any order or in parallel without changing the bank. Per-target
randomness (oversampling draws, CV folds) comes from substreams keyed by
the target id.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import (
    RIDGE_EPS,
    ScreenReport,
    case_control_weights,
    fit_lasso_cv,
    fit_logistic,
    oversample,
    predict_proba,
    screen_predictors,
)
from .errors import ConfigError, DataError, GaitprintError, ParseError, ShapeError
from .evaluation import ScoreMatrix
from .seeding import substream_seed

BANK_MAGIC = b"GPMB"
BANK_VERSION = 1

MODELS = ("logistic", "lasso")
VARIANTS = ("none", "oversample", "weighted")


@dataclass
class TrainingSet:
    """Training rows for the full participant universe."""

    participant_ids: list[str]  # one per row
    second_indices: np.ndarray
    X: np.ndarray  # (n_rows, n_features) grid-cell counts

    def __post_init__(self):
        self.second_indices = np.asarray(self.second_indices, dtype=np.int64)
        self.X = np.asarray(self.X)
        if not (len(self.participant_ids) == len(self.second_indices) == self.X.shape[0]):
            raise ShapeError("training rows must align")

    def targets(self) -> list[str]:
        return sorted(set(self.participant_ids))

    def rows_per_participant(self) -> int:
        """Common per-participant row count; unequal counts are an error."""
        counts = {}
        for pid in self.participant_ids:
            counts[pid] = counts.get(pid, 0) + 1
        distinct = set(counts.values())
        if len(distinct) != 1:
            raise ShapeError(f"unequal per-participant row counts: {sorted(distinct)}")
        return distinct.pop()

    def subset(self, members: Sequence[str]) -> "TrainingSet":
        members = set(members)
        keep = np.array([pid in members for pid in self.participant_ids])
        return TrainingSet(
            [pid for pid, k in zip(self.participant_ids, keep) if k],
            self.second_indices[keep],
            self.X[keep],
        )


@dataclass
class OvrModel:
    """Fitted model for one target; coefficients live on retained columns."""

    target_id: str
    intercept: float
    coef: np.ndarray
    metadata: dict

    def __post_init__(self):
        if not (np.isfinite(self.intercept) and np.isfinite(self.coef).all()):
            raise ShapeError(f"{self.target_id}: non-finite coefficients")


@dataclass
class ModelBank:
    screen: ScreenReport
    models: dict[str, OvrModel]
    failures: dict[str, str]
    n_features: int
    metadata: dict = field(default_factory=dict)

    def predict_proba(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Per-candidate probabilities for raw (unscreened) feature rows."""
        Xs = np.asarray(X, dtype=np.float64)[:, self.screen.retained]
        return {
            pid: predict_proba(m.intercept, m.coef, Xs)
            for pid, m in self.models.items()
        }


def _fit_target(
    target: str,
    pids: np.ndarray,
    Xs: np.ndarray,
    rows_per: int,
    model: str,
    variant: str,
    oversample_p: float | None,
    global_seed: int,
    n_folds: int,
    ridge: float,
) -> OvrModel:
    y = (pids == target).astype(np.float64)
    meta: dict = {"model": model, "variant": variant, "ridge": ridge}
    weights = None
    Xf, yf = Xs, y
    if variant == "oversample":
        seed = substream_seed(global_seed, "oversample", target)
        Xf, yf = oversample(Xs[y == 1], Xs[y == 0], oversample_p, seed)
        meta.update(oversample_p=oversample_p, oversample_seed=seed)
    elif variant == "weighted":
        weights = case_control_weights(y, rows_per)
        meta.update(weighting="case-control")
    if model == "logistic":
        fit = fit_logistic(Xf, yf, weights=weights, ridge=ridge)
        meta.update(
            iterations=fit.iterations,
            converged=fit.converged,
            deviance=fit.deviance,
            score_max_norm=fit.score_max_norm,
        )
    else:
        seed = substream_seed(global_seed, "folds", target)
        fit = fit_lasso_cv(Xf, yf, seed=seed, n_folds=n_folds)
        meta.update(lambda_=fit.lambda_, n_folds=n_folds, fold_seed=seed)
    meta.update(n_rows=len(yf), n_positive=int(yf.sum()))
    return OvrModel(target, fit.intercept, fit.coef, meta)


def ovr_train(
    train: TrainingSet,
    model: str = "logistic",
    variant: str = "none",
    oversample_p: float | None = None,
    global_seed: int = 0,
    n_folds: int = 5,
    ridge: float = RIDGE_EPS,
    workers: int = 1,
) -> ModelBank:
    """Screen once, then fit one model per participant against the rest.

    Per-target errors are collected as failures rather than aborting the
    bank; the caller decides whether partial banks are acceptable.
    """
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if variant == "oversample" and oversample_p is None:
        raise ConfigError("oversample variant needs a fraction p")
    targets = train.targets()
    if len(targets) < 2:
        raise ShapeError("one-vs-rest needs at least 2 participants")
    rows_per = train.rows_per_participant()
    screen = screen_predictors(train.X)
    Xs = np.ascontiguousarray(train.X[:, screen.retained], dtype=np.float64)
    pids = np.array(train.participant_ids)

    def fit_one(target: str) -> tuple[str, OvrModel | None, str | None]:
        try:
            m = _fit_target(
                target, pids, Xs, rows_per, model, variant,
                oversample_p, global_seed, n_folds, ridge,
            )
            return target, m, None
        except GaitprintError as exc:
            return target, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit_one, targets))
    else:
        results = [fit_one(t) for t in targets]

    models = {}
    failures = {}
    for target, fitted, err in results:  # results follow sorted target order
        if fitted is not None:
            models[target] = fitted
        else:
            failures[target] = err
    return ModelBank(
        screen=screen,
        models=models,
        failures=failures,
        n_features=train.X.shape[1],
        metadata={
            "model": model,
            "variant": variant,
            "oversample_p": oversample_p,
            "global_seed": global_seed,
            "n_folds": n_folds if model == "lasso" else None,
            "ridge": ridge,
        },
    )


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_bank(path: str | Path, bank: ModelBank) -> None:
    """Versioned binary layout:

    magic "GPMB", version byte, 3 zero bytes, uint32 n_features, uint32
    n_retained, uint32 n_models, uint32 bank-metadata length; retained
    column indices as int32; bank metadata JSON; then per model (sorted by
    target id): uint16 id length + utf-8 id, float64 intercept, uint32 nnz,
    nnz * (uint32 retained-column position, float64 value), uint32 metadata
    length + metadata JSON. Dropped-column reasons ride in bank metadata.
    """
    meta = dict(bank.metadata)
    meta["dropped"] = {str(k): v for k, v in bank.screen.dropped.items()}
    meta["failures"] = bank.failures
    meta_b = _json_bytes(meta)
    parts = [
        BANK_MAGIC,
        bytes([BANK_VERSION, 0, 0, 0]),
        np.array(
            [bank.n_features, len(bank.screen.retained), len(bank.models), len(meta_b)],
            dtype="<u4",
        ).tobytes(),
        bank.screen.retained.astype("<i4").tobytes(),
        meta_b,
    ]
    for target in sorted(bank.models):
        m = bank.models[target]
        tid = target.encode("utf-8")
        nz = np.flatnonzero(m.coef)
        mm = _json_bytes(m.metadata)
        parts.append(np.array([len(tid)], dtype="<u2").tobytes())
        parts.append(tid)
        parts.append(np.array([m.intercept], dtype="<f8").tobytes())
        parts.append(np.array([len(nz)], dtype="<u4").tobytes())
        parts.append(nz.astype("<u4").tobytes())
        parts.append(m.coef[nz].astype("<f8").tobytes())
        parts.append(np.array([len(mm)], dtype="<u4").tobytes())
        parts.append(mm)
    Path(path).write_bytes(b"".join(parts))


def read_bank(path: str | Path) -> ModelBank:
    buf = Path(path).read_bytes()
    if buf[:4] != BANK_MAGIC:
        raise ParseError(f"not a model bank: {path}")
    if buf[4] != BANK_VERSION:
        raise ParseError(f"unsupported bank version {buf[4]}")
    n_features, n_retained, n_models, meta_len = np.frombuffer(buf[8:24], dtype="<u4")
    pos = 24
    retained = np.frombuffer(buf[pos : pos + 4 * n_retained], dtype="<i4").astype(np.int64)
    pos += 4 * int(n_retained)
    meta = json.loads(buf[pos : pos + int(meta_len)].decode("utf-8"))
    pos += int(meta_len)
    dropped = {int(k): v for k, v in meta.pop("dropped", {}).items()}
    failures = meta.pop("failures", {})
    models = {}
    for _ in range(int(n_models)):
        (tid_len,) = np.frombuffer(buf[pos : pos + 2], dtype="<u2")
        pos += 2
        target = buf[pos : pos + int(tid_len)].decode("utf-8")
        pos += int(tid_len)
        (intercept,) = np.frombuffer(buf[pos : pos + 8], dtype="<f8")
        pos += 8
        (nnz,) = np.frombuffer(buf[pos : pos + 4], dtype="<u4")
        pos += 4
        cols = np.frombuffer(buf[pos : pos + 4 * int(nnz)], dtype="<u4")
        pos += 4 * int(nnz)
        vals = np.frombuffer(buf[pos : pos + 8 * int(nnz)], dtype="<f8")
        pos += 8 * int(nnz)
        (mm_len,) = np.frombuffer(buf[pos : pos + 4], dtype="<u4")
        pos += 4
        mmeta = json.loads(buf[pos : pos + int(mm_len)].decode("utf-8"))
        pos += int(mm_len)
        coef = np.zeros(int(n_retained))
        coef[cols.astype(np.int64)] = vals
        models[target] = OvrModel(target, float(intercept), coef, mmeta)
    if pos != len(buf):
        raise ParseError(f"trailing bytes in model bank: {len(buf) - pos}")
    return ModelBank(
        screen=ScreenReport(retained, dropped),
        models=models,
        failures=failures,
        n_features=int(n_features),
        metadata=meta,
    )


def bank_to_json(bank: ModelBank) -> dict:
    """Inspection-friendly export; coefficients keyed by original column."""
    return {
        "n_features": bank.n_features,
        "retained": [int(c) for c in bank.screen.retained],
        "dropped": {str(k): v for k, v in sorted(bank.screen.dropped.items())},
        "failures": dict(sorted(bank.failures.items())),
        "metadata": bank.metadata,
        "models": {
            target: {
                "intercept": m.intercept,
                "coef": {
                    str(int(bank.screen.retained[j])): float(m.coef[j])
                    for j in np.flatnonzero(m.coef)
                },
                "metadata": m.metadata,
            }
            for target, m in sorted(bank.models.items())
        },
    }


def two_stage_rank(
    stage1: ScoreMatrix,
    train: TrainingSet,
    test_row_subjects: Sequence[str],
    test_X: np.ndarray,
    model: str = "logistic",
    variant: str = "none",
    oversample_p: float | None = None,
    global_seed: int = 0,
    n_folds: int = 5,
    ridge: float = RIDGE_EPS,
    shortlist_frac: float = 0.01,
) -> dict[str, list[str]]:
    """Re-rank each subject's stage-1 shortlist with a refit OvR bank.

    The shortlist is the top max(1, floor(frac*n)) stage-1 candidates; the
    refit uses only shortlist members' training rows. Candidates outside
    the shortlist keep their stage-1 order, so rank metrics at or beyond
    the shortlist size cannot change. A one-candidate shortlist skips the
    refit entirely.
    """
    n = stage1.n
    shortlist_size = max(1, int(np.floor(shortlist_frac * n)))
    cand = np.array(stage1.candidate_ids)
    test_row_subjects = list(test_row_subjects)
    row_idx_by_subject: dict[str, list[int]] = {}
    for i, s in enumerate(test_row_subjects):
        row_idx_by_subject.setdefault(s, []).append(i)

    rankings: dict[str, list[str]] = {}
    for i, subject in enumerate(stage1.subject_ids):
        order = np.lexsort((cand, -stage1.matrix[i]))
        stage1_ranking = [str(c) for c in cand[order]]
        shortlist = stage1_ranking[:shortlist_size]
        rest = stage1_ranking[shortlist_size:]
        if shortlist_size == 1:
            rankings[subject] = stage1_ranking
            continue
        sub_bank = ovr_train(
            train.subset(shortlist),
            model=model,
            variant=variant,
            oversample_p=oversample_p,
            global_seed=substream_seed(global_seed, "stage2", subject),
            n_folds=n_folds,
            ridge=ridge,
        )
        if sub_bank.failures:
            raise DataError(
                f"stage-2 refit failed for subject {subject}: {sub_bank.failures}"
            )
        rows = row_idx_by_subject.get(subject)
        if not rows:
            raise ShapeError(f"subject {subject} has no test rows")
        probs = sub_bank.predict_proba(test_X[rows])
        means = {c: float(np.mean(p)) for c, p in probs.items()}
        stage2_order = sorted(shortlist, key=lambda c: (-means[c], c))
        rankings[subject] = stage2_order + rest
    return rankings
