"""Step detection, walking-bout assembly, and participant eligibility.

Steps per second come from a pluggable detector. The default slides a bank
of half-sine stride templates across the vm signal and counts normalized
cross-correlation peaks; an oracle detector replays ground-truth labels.
Bouts are maximal runs of nonzero-step seconds where gaps of zero-step (or
missing) seconds are at most one second long, kept only when they contain
at least ten walking seconds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Sequence, TextIO

import numpy as np

from .errors import ConfigError, OrderingError, ParseError, ShapeError
from .ingest import VmSecond

STEP_SERIES_HEADER = ["participant_id", "second_index", "date", "steps"]
BOUT_HEADER = ["participant_id", "start_second", "end_second", "n_walking_seconds"]


@dataclass
class StepSeries:
    """Per-second step counts for one participant's usable seconds."""

    participant_id: str
    second_index: np.ndarray  # int, strictly increasing
    dates: list[date]
    steps: np.ndarray  # int, >= 0

    def __post_init__(self):
        self.second_index = np.asarray(self.second_index, dtype=np.int64)
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if not (len(self.second_index) == len(self.dates) == len(self.steps)):
            raise ShapeError("step series columns must align")
        if len(self.second_index) > 1 and not np.all(np.diff(self.second_index) > 0):
            raise OrderingError("second_index must be strictly increasing")
        if np.any(self.steps < 0):
            raise ShapeError("steps must be non-negative")

    def __len__(self) -> int:
        return len(self.second_index)


@dataclass(frozen=True)
class Bout:
    """One walking bout; indices are inclusive."""

    participant_id: str
    start_second: int
    end_second: int
    walking_seconds: tuple[int, ...]  # sorted, steps > 0

    @property
    def n_walking_seconds(self) -> int:
        return len(self.walking_seconds)

    @property
    def span(self) -> int:
        return self.end_second - self.start_second + 1


@dataclass
class TemplateCorrelationDetector:
    """Half-sine template bank matched by normalized cross-correlation.

    For each stride duration the centered unit-norm template is slid across
    the signal; local NCC maxima above `threshold` survive non-maximum
    suppression over half the stride duration. The duration whose kept peaks
    sum to the highest total correlation wins, and each kept peak adds one
    step to the second containing the template center.
    """

    threshold: float = 0.7
    n_templates: int = 16
    min_duration: float = 0.5  # seconds per stride
    max_duration: float = 2.0
    _bank: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.n_templates < 1:
            raise ConfigError("template set must not be empty")
        if not (0.0 < self.min_duration <= self.max_duration):
            raise ConfigError("need 0 < min_duration <= max_duration")

    def _templates(self, fs: int) -> list[tuple[float, np.ndarray]]:
        if fs not in self._bank:
            if self.n_templates == 1:
                durations = np.array([self.min_duration])
            else:
                durations = np.linspace(self.min_duration, self.max_duration, self.n_templates)
            bank = []
            for d in durations:
                length = max(4, int(round(d * fs)))
                t = np.arange(length) / fs
                w = np.sin(np.pi * t / d)
                w -= w.mean()
                w /= np.linalg.norm(w)
                bank.append((float(d), w))
            self._bank[fs] = bank
        return self._bank[fs]

    def count(self, values: np.ndarray, fs: int, second_indices: Sequence[int]) -> np.ndarray:
        n_seconds = len(second_indices)
        best_score = -np.inf
        best: tuple[np.ndarray, int] | None = None
        for duration, w in self._templates(fs):
            c = _ncc(values, w)
            if len(c) < 3:
                continue
            interior = (c[1:-1] >= c[:-2]) & (c[1:-1] > c[2:]) & (c[1:-1] >= self.threshold)
            idx = np.flatnonzero(interior) + 1
            if len(idx) == 0:
                continue
            win = int(round(duration * fs / 2))
            kept = _nms(c, idx, win)
            score = float(c[kept].sum())
            if score > best_score:
                best_score = score
                best = (kept, len(w))
        counts = np.zeros(n_seconds, dtype=np.int64)
        if best is not None:
            kept, length = best
            centers = kept + length // 2
            np.add.at(counts, np.minimum(centers // fs, n_seconds - 1), 1)
        return counts


def _ncc(signal: np.ndarray, w: np.ndarray) -> np.ndarray:
    """NCC of a centered unit-norm template at every valid offset.

    Zero-variance windows get correlation 0 rather than a division blowup.
    """
    length = len(w)
    if len(signal) < length:
        return np.zeros(0)
    c1 = np.concatenate([[0.0], np.cumsum(signal)])
    c2 = np.concatenate([[0.0], np.cumsum(signal**2)])
    s1 = c1[length:] - c1[:-length]
    s2 = c2[length:] - c2[:-length]
    num = np.correlate(signal, w, mode="valid")
    var = np.maximum(s2 - s1**2 / length, 0.0)
    denom = np.sqrt(var)
    out = np.zeros_like(num)
    ok = denom > 1e-12
    out[ok] = num[ok] / denom[ok]
    return out


def _nms(c: np.ndarray, idx: np.ndarray, win: int) -> np.ndarray:
    """Greedy non-maximum suppression, highest correlation first."""
    order = idx[np.argsort(-c[idx], kind="stable")]
    taken = np.zeros(len(c), dtype=bool)
    kept = []
    for i in order:
        if not taken[max(0, i - win) : i + win + 1].any():
            kept.append(i)
            taken[i] = True
    return np.sort(np.asarray(kept, dtype=np.int64))


@dataclass
class OracleDetector:
    """Replays ground-truth step labels; seconds without a label get 0."""

    labels: dict[int, int]

    def count(self, values: np.ndarray, fs: int, second_indices: Sequence[int]) -> np.ndarray:
        return np.array([self.labels.get(int(s), 0) for s in second_indices], dtype=np.int64)


def detect_steps(seconds: Sequence[VmSecond], detector) -> StepSeries:
    """Run the detector over contiguous runs of usable seconds.

    Templates never straddle a gap in second_index; each run is matched
    independently so masked-out stretches cannot contribute phantom steps.
    """
    if not seconds:
        return StepSeries("", np.zeros(0, np.int64), [], np.zeros(0, np.int64))
    pid = seconds[0].participant_id
    fs = len(seconds[0].values)
    indices = np.array([s.second_index for s in seconds], dtype=np.int64)
    for s in seconds:
        if s.participant_id != pid:
            raise ShapeError("mixed participants in one detection call")
        if len(s.values) != fs:
            raise ShapeError("all seconds must hold the same number of samples")
    if len(indices) > 1 and not np.all(np.diff(indices) > 0):
        raise OrderingError("seconds must be sorted by second_index")

    steps = np.zeros(len(seconds), dtype=np.int64)
    run_start = 0
    for i in range(1, len(seconds) + 1):
        if i == len(seconds) or indices[i] != indices[i - 1] + 1:
            run = slice(run_start, i)
            values = np.concatenate([s.values for s in seconds[run]])
            steps[run] = detector.count(values, fs, indices[run])
            run_start = i
    return StepSeries(pid, indices, [s.date for s in seconds], steps)


def assemble_bouts(series: StepSeries, min_walking_seconds: int = 10) -> list[Bout]:
    """Group walking seconds into bouts.

    Two walking seconds stay in one run when at most one second separates
    them, whether that second had zero steps or was missing entirely. Runs
    shorter than `min_walking_seconds` walking seconds are dropped.
    """
    walk = series.second_index[series.steps > 0]
    if len(walk) == 0:
        return []
    breaks = np.flatnonzero(np.diff(walk) > 2) + 1
    bouts = []
    for group in np.split(walk, breaks):
        if len(group) >= min_walking_seconds:
            bouts.append(
                Bout(
                    participant_id=series.participant_id,
                    start_second=int(group[0]),
                    end_second=int(group[-1]),
                    walking_seconds=tuple(int(g) for g in group),
                )
            )
    return bouts


def valid_seconds(bouts: Sequence[Bout]) -> np.ndarray:
    """Sorted union of walking seconds across bouts."""
    if not bouts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate([np.array(b.walking_seconds, dtype=np.int64) for b in bouts]))


def per_date_counts(series: StepSeries, valid: np.ndarray) -> dict[date, int]:
    """Tally valid seconds per calendar date."""
    valid_set = set(int(v) for v in valid)
    out: dict[date, int] = {}
    for idx, d in zip(series.second_index, series.dates):
        if int(idx) in valid_set:
            out[d] = out.get(d, 0) + 1
    return out


def eligibility(
    counts: dict[str, dict[date, int]],
    paradigm: str,
    six_minute: bool = False,
) -> list[str]:
    """Participants with enough valid walking for the given paradigm.

    random: >= 180 valid seconds in total (360 for the six-minute variant).
    temporal: some day with >= 135 valid seconds and a strictly later day
    with >= 45 (doubled: 270 / 90).
    """
    if paradigm not in ("random", "temporal"):
        raise ConfigError(f"unknown paradigm: {paradigm!r}")
    scale = 2 if six_minute else 1
    eligible = []
    for pid in sorted(counts):
        per_day = counts[pid]
        if paradigm == "random":
            if sum(per_day.values()) >= 180 * scale:
                eligible.append(pid)
        else:
            days = sorted(per_day)
            for i, d in enumerate(days):
                if per_day[d] >= 135 * scale and any(
                    per_day[later] >= 45 * scale for later in days[i + 1 :]
                ):
                    eligible.append(pid)
                    break
    return eligible


def write_step_series_csv(stream: TextIO, series_list: Sequence[StepSeries]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(STEP_SERIES_HEADER)
    for series in series_list:
        for idx, d, st in zip(series.second_index, series.dates, series.steps):
            writer.writerow([series.participant_id, int(idx), d.isoformat(), int(st)])


def read_step_series_csv(stream: TextIO | str) -> list[StepSeries]:
    """Parse a step-series CSV into one StepSeries per participant."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != STEP_SERIES_HEADER:
        raise ParseError("bad step-series header", line=1)
    rows: dict[str, list[tuple[int, date, int]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
        try:
            idx = int(row[1])
            d = datetime.strptime(row[2], "%Y-%m-%d").date()
            st = int(row[3])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        rows.setdefault(row[0], []).append((idx, d, st))
    out = []
    for pid in sorted(rows):
        entries = sorted(rows[pid])
        out.append(
            StepSeries(
                participant_id=pid,
                second_index=np.array([e[0] for e in entries], dtype=np.int64),
                dates=[e[1] for e in entries],
                steps=np.array([e[2] for e in entries], dtype=np.int64),
            )
        )
    return out


def write_bouts_csv(stream: TextIO, bouts: Sequence[Bout]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(BOUT_HEADER)
    for b in bouts:
        writer.writerow([b.participant_id, b.start_second, b.end_second, b.n_walking_seconds])
