"""Subject-level score aggregation and rank-based identification metrics.

A subject's score under a candidate model is the arithmetic mean of the
model's per-second probabilities over the subject's test seconds. Rank-k
accuracy is the percent of subjects whose own model lands in the top k by
score; rank-p% uses k = max(1, floor(p*n/100)), which reproduces the
n=100 (rank1% = rank1) and n=500 (rank1% = rank5) equivalences.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .errors import CompletenessError, NumericError, ParseError, ShapeError
from .fingerprint import FingerprintImage

SCORES_HEADER = ["subject_id", "candidate_id", "score"]


@dataclass
class ScoreMatrix:
    """Square matrix of mean probabilities: rows subjects, columns candidates."""

    subject_ids: list[str]
    candidate_ids: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (len(self.subject_ids), len(self.candidate_ids)):
            raise ShapeError("matrix shape must match id lists")
        if set(self.subject_ids) != set(self.candidate_ids):
            raise ShapeError("subjects and candidates must share one universe")
        if self.matrix.size and not np.isfinite(self.matrix).all():
            raise NumericError("scores must be finite")
        if self.matrix.size and (self.matrix.min() < 0 or self.matrix.max() > 1):
            raise ShapeError("scores must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.subject_ids)


@dataclass
class RankReport:
    """Identification accuracies (percent) for one evaluated configuration."""

    n: int
    rank1: float
    rank5: float
    rank1pct: float
    rank5pct: float
    subgroup_id: str = ""
    paradigm: str = ""
    variant: str = ""

    def metrics(self) -> dict[str, float]:
        return {
            "rank1": self.rank1,
            "rank5": self.rank5,
            "rank1pct": self.rank1pct,
            "rank5pct": self.rank5pct,
        }


def subject_scores(
    row_subjects: Sequence[str], probs_by_candidate: dict[str, np.ndarray]
) -> ScoreMatrix:
    """Mean per-second probability for every (subject, candidate) pair.

    `row_subjects` labels each scored test second; each candidate supplies
    one probability per row. Candidates and subjects must cover the same
    participant universe.
    """
    row_subjects = list(row_subjects)
    subjects = sorted(set(row_subjects))
    candidates = sorted(probs_by_candidate)
    if set(subjects) != set(candidates):
        missing = set(subjects) ^ set(candidates)
        raise CompletenessError(f"subject/candidate universes differ on {sorted(missing)[:5]}")
    if not subjects:
        raise CompletenessError("no test seconds supplied")
    idx = {s: i for i, s in enumerate(subjects)}
    rows = np.array([idx[s] for s in row_subjects])
    n = len(subjects)
    counts = np.bincount(rows, minlength=n).astype(np.float64)
    matrix = np.empty((n, n))
    for j, cand in enumerate(candidates):
        p = np.asarray(probs_by_candidate[cand], dtype=np.float64)
        if p.shape != (len(row_subjects),):
            raise ShapeError(f"candidate {cand}: one probability per test second required")
        matrix[:, j] = np.bincount(rows, weights=p, minlength=n) / counts
    return ScoreMatrix(subjects, candidates, matrix)


def true_ranks(sm: ScoreMatrix) -> np.ndarray:
    """1-based rank of each subject's own model, ties broken by candidate id."""
    ranks = np.empty(sm.n, dtype=np.int64)
    cand = np.array(sm.candidate_ids)
    for i, subject in enumerate(sm.subject_ids):
        scores = sm.matrix[i]
        # sort by descending score, then ascending candidate id
        order = np.lexsort((cand, -scores))
        ranks[i] = int(np.flatnonzero(cand[order] == subject)[0]) + 1
    return ranks


def _report_from_ranks(
    ranks: np.ndarray, n: int, subgroup_id: str, paradigm: str, variant: str
) -> RankReport:
    def acc_at(k: int) -> float:
        return float(np.mean(ranks <= k) * 100.0)

    def pct_k(p: float) -> int:
        return max(1, int(np.floor(p * n / 100.0)))

    return RankReport(
        n=n,
        rank1=acc_at(1),
        rank5=acc_at(5),
        rank1pct=acc_at(pct_k(1.0)),
        rank5pct=acc_at(pct_k(5.0)),
        subgroup_id=subgroup_id,
        paradigm=paradigm,
        variant=variant,
    )


def rank_metrics(
    sm: ScoreMatrix,
    subgroup_id: str = "",
    paradigm: str = "",
    variant: str = "",
) -> RankReport:
    if sm.n < 2:
        raise ShapeError("rank metrics need at least 2 subjects")
    if sm.matrix.shape[0] != sm.matrix.shape[1]:
        raise ShapeError("score matrix must be square")
    return _report_from_ranks(true_ranks(sm), sm.n, subgroup_id, paradigm, variant)


def metrics_from_rankings(
    rankings: dict[str, list[str]],
    subgroup_id: str = "",
    paradigm: str = "",
    variant: str = "",
) -> RankReport:
    """Rank metrics from explicit per-subject candidate orderings."""
    n = len(rankings)
    if n < 2:
        raise ShapeError("rank metrics need at least 2 subjects")
    ranks = []
    for subject in sorted(rankings):
        ranked = rankings[subject]
        if len(ranked) != n:
            raise ShapeError(f"{subject}: ranking must list all {n} candidates")
        if subject not in ranked:
            raise CompletenessError(f"{subject} missing from its own ranking")
        ranks.append(ranked.index(subject) + 1)
    return _report_from_ranks(np.array(ranks), n, subgroup_id, paradigm, variant)


def subgroup_summary(reports: Sequence[RankReport]) -> dict:
    """Median/min/max of each metric per (paradigm, n, variant)."""
    grouped: dict[tuple[str, int, str], list[RankReport]] = {}
    for r in reports:
        grouped.setdefault((r.paradigm, r.n, r.variant), []).append(r)
    out = {}
    for (paradigm, n, variant), group in sorted(grouped.items()):
        block = {}
        for metric in ("rank1", "rank5", "rank1pct", "rank5pct"):
            vals = np.array([r.metrics()[metric] for r in group])
            block[metric] = {
                "median": float(np.median(vals)),
                "min": float(vals.min()),
                "max": float(vals.max()),
            }
        block["n_subgroups"] = len(group)
        out[f"paradigm={paradigm},n={n},variant={variant}"] = block
    return out


def write_scores_csv(stream: TextIO, sm: ScoreMatrix) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SCORES_HEADER)
    for i, subject in enumerate(sm.subject_ids):
        for j, cand in enumerate(sm.candidate_ids):
            writer.writerow([subject, cand, repr(float(sm.matrix[i, j]))])


def read_scores_csv(stream: TextIO | str) -> ScoreMatrix:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != SCORES_HEADER:
        raise ParseError("bad scores header", line=1)
    cells: dict[tuple[str, str], float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
        try:
            cells[(row[0], row[1])] = float(row[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    subjects = sorted({k[0] for k in cells})
    candidates = sorted({k[1] for k in cells})
    matrix = np.empty((len(subjects), len(candidates)))
    for i, s in enumerate(subjects):
        for j, c in enumerate(candidates):
            if (s, c) not in cells:
                raise CompletenessError(f"missing score for ({s}, {c})")
            matrix[i, j] = cells[(s, c)]
    return ScoreMatrix(subjects, candidates, matrix)


def write_fingerprint_pgm(image: FingerprintImage, stream: TextIO, lag_index: int) -> None:
    """ASCII PGM heatmap of one lag's matrix, scaled to its own max."""
    m = image.matrices[lag_index]
    peak = m.max() if m.max() > 0 else 1.0
    pixels = np.round(255.0 * m / peak).astype(int)
    stream.write(f"P2\n{m.shape[1]} {m.shape[0]}\n255\n")
    for row in pixels:
        stream.write(" ".join(str(v) for v in row) + "\n")


def write_fingerprint_svg(image: FingerprintImage, stream: TextIO, cell: int = 24) -> None:
    """All lags side by side as grayscale rect grids."""
    n_lags = len(image.matrices)
    rows, cols = image.matrices[0].shape
    gap = cell
    width = n_lags * cols * cell + (n_lags - 1) * gap
    height = rows * cell + 18
    stream.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
    )
    for li, (lag, m) in enumerate(zip(image.lags, image.matrices)):
        x0 = li * (cols * cell + gap)
        peak = m.max() if m.max() > 0 else 1.0
        stream.write(f'<text x="{x0}" y="12" font-size="12">lag {lag}</text>\n')
        for i in range(rows):
            for j in range(cols):
                shade = 255 - int(round(255.0 * m[i, j] / peak))
                stream.write(
                    f'<rect x="{x0 + j * cell}" y="{18 + i * cell}" '
                    f'width="{cell}" height="{cell}" '
                    f'fill="rgb({shade},{shade},{shade})"/>\n'
                )
    stream.write("</svg>\n")


def write_accuracy_table_csv(stream: TextIO, summary: dict) -> None:
    """Flatten a subgroup summary into an accuracy-vs-n table."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["configuration", "metric", "median", "min", "max", "n_subgroups"])
    for key in sorted(summary):
        block = summary[key]
        for metric in ("rank1", "rank5", "rank1pct", "rank5pct"):
            stats = block[metric]
            writer.writerow(
                [key, metric, repr(stats["median"]), repr(stats["min"]),
                 repr(stats["max"]), block["n_subgroups"]]
            )
