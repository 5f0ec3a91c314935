"""Train/test second assignment under the random and temporal paradigms.

Every partition draws from a per-participant substream of the global seed,
so the assignment for one participant never depends on who else is in the
corpus, on iteration order, or on worker count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date, datetime
from typing import Sequence, TextIO

import numpy as np

from .errors import ConfigError, EligibilityError, ParseError
from .seeding import substream_rng, substream_seed

MANIFEST_HEADER = ["participant_id", "paradigm", "role", "second_index", "date", "seed"]

# 75:25 split of 180 sampled seconds (doubled in 6-minute mode)
SPLIT = {3: (135, 45), 6: (270, 90)}


@dataclass
class Partition:
    """One participant's train/test seconds plus full seed provenance."""

    participant_id: str
    paradigm: str
    train_seconds: np.ndarray
    test_seconds: np.ndarray
    seed: int  # effective substream seed used for the draws
    train_date: date | None = None
    test_date: date | None = None

    def __post_init__(self):
        self.train_seconds = np.asarray(self.train_seconds, dtype=np.int64)
        self.test_seconds = np.asarray(self.test_seconds, dtype=np.int64)
        overlap = np.intersect1d(self.train_seconds, self.test_seconds)
        if len(overlap):
            raise ConfigError(f"train/test overlap: {overlap[:5]}")


def _split_sizes(minutes: int) -> tuple[int, int]:
    if minutes not in SPLIT:
        raise ConfigError(f"minutes must be 3 or 6, got {minutes}")
    return SPLIT[minutes]


def random_partition(
    participant_id: str,
    valid: Sequence[int] | np.ndarray,
    global_seed: int,
    minutes: int = 3,
) -> Partition:
    """Sample train+test seconds uniformly from all valid seconds."""
    n_train, n_test = _split_sizes(minutes)
    total = n_train + n_test
    valid = np.sort(np.asarray(valid, dtype=np.int64))
    if len(valid) < total:
        raise EligibilityError(
            f"{participant_id}: {len(valid)} valid seconds < required {total}"
        )
    seed = substream_seed(global_seed, "partition", "random", minutes, participant_id)
    rng = substream_rng(global_seed, "partition", "random", minutes, participant_id)
    sample = rng.choice(valid, size=total, replace=False)
    return Partition(
        participant_id=participant_id,
        paradigm="random",
        train_seconds=np.sort(sample[:n_train]),
        test_seconds=np.sort(sample[n_train:]),
        seed=seed,
    )


def temporal_partition(
    participant_id: str,
    by_date: dict[date, Sequence[int] | np.ndarray],
    global_seed: int,
    minutes: int = 3,
) -> Partition:
    """Train on the earliest qualifying day, test on a random later day.

    Draw order is fixed: test-day choice, then the train-day sample, then
    the test-day sample, all from one substream.
    """
    n_train, n_test = _split_sizes(minutes)
    days = sorted(by_date)
    counts = {d: len(by_date[d]) for d in days}
    train_date = next((d for d in days if counts[d] >= n_train), None)
    if train_date is None:
        raise EligibilityError(f"{participant_id}: no day with >= {n_train} valid seconds")
    later = [d for d in days if d > train_date and counts[d] >= n_test]
    if not later:
        raise EligibilityError(
            f"{participant_id}: no day after {train_date} with >= {n_test} valid seconds"
        )
    seed = substream_seed(global_seed, "partition", "temporal", minutes, participant_id)
    rng = substream_rng(global_seed, "partition", "temporal", minutes, participant_id)
    test_date = later[int(rng.integers(len(later)))]
    train_pool = np.sort(np.asarray(by_date[train_date], dtype=np.int64))
    test_pool = np.sort(np.asarray(by_date[test_date], dtype=np.int64))
    return Partition(
        participant_id=participant_id,
        paradigm="temporal",
        train_seconds=np.sort(rng.choice(train_pool, size=n_train, replace=False)),
        test_seconds=np.sort(rng.choice(test_pool, size=n_test, replace=False)),
        seed=seed,
        train_date=train_date,
        test_date=test_date,
    )


def make_subgroups(
    participant_ids: Sequence[str], global_seed: int, size: int
) -> list[list[str]]:
    """Shuffle once, chunk into mutually exclusive groups, drop leftovers."""
    if size < 1:
        raise ConfigError("subgroup size must be >= 1")
    ids = sorted(participant_ids)
    rng = substream_rng(global_seed, "subgroups")
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    groups = []
    for start in range(0, len(shuffled) - size + 1, size):
        groups.append(sorted(shuffled[start : start + size]))
    return groups


def write_partition_csv(
    stream: TextIO,
    partitions: Sequence[Partition],
    dates: dict[str, dict[int, date]],
) -> None:
    """Manifest: one row per assigned second with its calendar date."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for p in partitions:
        lookup = dates[p.participant_id]
        for role, seconds in (("train", p.train_seconds), ("test", p.test_seconds)):
            for idx in seconds:
                writer.writerow(
                    [p.participant_id, p.paradigm, role, int(idx),
                     lookup[int(idx)].isoformat(), p.seed]
                )


def read_partition_csv(stream: TextIO | str) -> list[Partition]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != MANIFEST_HEADER:
        raise ParseError("bad partition manifest header", line=1)
    acc: dict[tuple[str, str], dict] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 6:
            raise ParseError(f"expected 6 fields, got {len(row)}", line=lineno)
        pid, paradigm, role, idx, d, seed = row
        if role not in ("train", "test"):
            raise ParseError(f"bad role {role!r}", line=lineno)
        try:
            entry = acc.setdefault(
                (pid, paradigm),
                {"seed": int(seed), "train": [], "test": [], "dates": {}},
            )
            entry[role].append(int(idx))
            entry["dates"][role] = datetime.strptime(d, "%Y-%m-%d").date()
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    out = []
    for (pid, paradigm), entry in sorted(acc.items()):
        temporal = paradigm == "temporal"
        out.append(
            Partition(
                participant_id=pid,
                paradigm=paradigm,
                train_seconds=np.sort(np.array(entry["train"], dtype=np.int64)),
                test_seconds=np.sort(np.array(entry["test"], dtype=np.int64)),
                seed=entry["seed"],
                train_date=entry["dates"].get("train") if temporal else None,
                test_date=entry["dates"].get("test") if temporal else None,
            )
        )
    return out
