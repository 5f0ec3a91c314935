"""Grid-cell predictors: per-second joint histograms of lagged vm pairs.

Each usable walking second yields, for lags u in {12, 24, 36} samples, a
12x12 joint histogram of (v(s-u), v(s)) pairs over bins of width 0.25 g
spanning [0, 3] g. Flattened row-major and concatenated by lag this gives
432 integer predictors per second; per-lag counts always sum to 80 - u.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .errors import ConfigError, DuplicateKeyError, EmptyInputError, ParseError, ShapeError
from .ingest import VmSecond

BIN_MAGIC = b"GPFC"
BIN_VERSION = 1
_PID_WIDTH = 32


@dataclass(frozen=True)
class GridSpec:
    """Histogram geometry: bin edges over [lo, hi] and sample lags."""

    lo: float = 0.0
    hi: float = 3.0
    width: float = 0.25
    lags: tuple[int, ...] = (12, 24, 36)
    samples_per_second: int = 80

    def __post_init__(self):
        if not (self.lo < self.hi) or self.width <= 0:
            raise ConfigError("grid needs lo < hi and width > 0")
        n = (self.hi - self.lo) / self.width
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError("grid width must evenly divide the range")
        if not self.lags or any(u < 1 for u in self.lags):
            raise ConfigError("lags must be positive")
        if len(set(self.lags)) != len(self.lags) or list(self.lags) != sorted(self.lags):
            raise ConfigError("lags must be sorted and unique")
        if max(self.lags) >= self.samples_per_second:
            raise ConfigError("lags must be shorter than one second of samples")

    @property
    def n_bins(self) -> int:
        return int(round((self.hi - self.lo) / self.width))

    @property
    def n_cells(self) -> int:
        return self.n_bins * self.n_bins

    @property
    def n_features(self) -> int:
        return len(self.lags) * self.n_cells

    def bin_index(self, values: np.ndarray) -> np.ndarray:
        """Bin per value; the top bin is closed and out-of-range clamps."""
        k = np.floor((np.asarray(values) - self.lo) / self.width).astype(np.int64)
        return np.clip(k, 0, self.n_bins - 1)

    def column_names(self) -> list[str]:
        b = self.n_bins
        return [
            f"lag{u}_r{i}_c{j}"
            for u in self.lags
            for i in range(b)
            for j in range(b)
        ]


@dataclass
class SecondFeature:
    """432 grid-cell counts for one walking second."""

    participant_id: str
    second_index: int
    values: np.ndarray  # int64, length spec.n_features

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 1:
            raise ShapeError("feature values must be a vector")


@dataclass
class FingerprintImage:
    """Per-lag relative-frequency matrices for one participant."""

    participant_id: str
    lags: tuple[int, ...]
    matrices: list[np.ndarray]  # one n_bins x n_bins matrix per lag, each summing to 1


def grid_cells_for_second(second: VmSecond, spec: GridSpec | None = None) -> SecondFeature:
    spec = spec or GridSpec()
    if len(second.values) != spec.samples_per_second:
        raise ShapeError(
            f"expected {spec.samples_per_second} samples, got {len(second.values)}"
        )
    b = spec.bin_index(second.values)
    parts = []
    for u in spec.lags:
        flat = b[:-u] * spec.n_bins + b[u:]
        parts.append(np.bincount(flat, minlength=spec.n_cells))
    return SecondFeature(second.participant_id, second.second_index, np.concatenate(parts))


def build_feature_matrix(
    seconds: Sequence[VmSecond], spec: GridSpec | None = None
) -> tuple[np.ndarray, list[tuple[str, int]]]:
    """Histogram every second at once.

    Returns (n x n_features int64 matrix, row keys). Row order follows the
    input; duplicate (participant, second) keys are rejected.
    """
    spec = spec or GridSpec()
    keys = [(s.participant_id, s.second_index) for s in seconds]
    if len(set(keys)) != len(keys):
        seen = set()
        for k in keys:
            if k in seen:
                raise DuplicateKeyError(f"duplicate (participant, second) key: {k}")
            seen.add(k)
    if not seconds:
        return np.zeros((0, spec.n_features), dtype=np.int64), []
    for s in seconds:
        if len(s.values) != spec.samples_per_second:
            raise ShapeError(
                f"expected {spec.samples_per_second} samples, got {len(s.values)}"
            )
    stacked = np.stack([s.values for s in seconds])
    b = spec.bin_index(stacked)  # (n, samples)
    n = len(seconds)
    offsets = np.arange(n, dtype=np.int64)[:, None] * spec.n_cells
    parts = []
    for u in spec.lags:
        flat = b[:, :-u] * spec.n_bins + b[:, u:] + offsets
        counts = np.bincount(flat.ravel(), minlength=n * spec.n_cells)
        parts.append(counts.reshape(n, spec.n_cells))
    return np.concatenate(parts, axis=1).astype(np.int64), keys


def fingerprint_image(
    features: Sequence[SecondFeature], spec: GridSpec | None = None
) -> FingerprintImage:
    """Aggregate seconds into per-lag relative-frequency matrices."""
    spec = spec or GridSpec()
    if not features:
        raise EmptyInputError("cannot build an image from zero seconds")
    pid = features[0].participant_id
    for f in features:
        if f.participant_id != pid:
            raise ShapeError("image must aggregate a single participant")
        if len(f.values) != spec.n_features:
            raise ShapeError("feature length does not match the grid")
    total = np.sum([f.values for f in features], axis=0).astype(np.float64)
    matrices = []
    for li in range(len(spec.lags)):
        block = total[li * spec.n_cells : (li + 1) * spec.n_cells]
        mass = block.sum()
        matrices.append((block / mass).reshape(spec.n_bins, spec.n_bins))
    return FingerprintImage(pid, spec.lags, matrices)


def write_features_csv(
    stream: TextIO,
    keys: Sequence[tuple[str, int]],
    matrix: np.ndarray,
    spec: GridSpec | None = None,
) -> None:
    spec = spec or GridSpec()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["participant_id", "second_index", *spec.column_names()])
    for (pid, idx), row in zip(keys, matrix):
        writer.writerow([pid, idx, *(int(v) for v in row)])


def read_features_csv(
    stream: TextIO | str, spec: GridSpec | None = None
) -> tuple[np.ndarray, list[tuple[str, int]]]:
    spec = spec or GridSpec()
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != ["participant_id", "second_index", *spec.column_names()]:
        raise ParseError("bad feature header", line=1)
    keys = []
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2 + spec.n_features:
            raise ParseError(f"expected {2 + spec.n_features} fields", line=lineno)
        try:
            keys.append((row[0], int(row[1])))
            rows.append([int(v) for v in row[2:]])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    matrix = (
        np.array(rows, dtype=np.int64)
        if rows
        else np.zeros((0, spec.n_features), dtype=np.int64)
    )
    return matrix, keys


def _record_dtype(n_features: int) -> np.dtype:
    return np.dtype(
        [
            ("pid", f"S{_PID_WIDTH}"),
            ("second_index", "<i8"),
            ("counts", "<u2", (n_features,)),
        ]
    )


def write_features_bin(
    path: str | Path,
    keys: Sequence[tuple[str, int]],
    matrix: np.ndarray,
    spec: GridSpec | None = None,
) -> None:
    """Compact cache: 20-byte header then fixed-width little-endian records.

    Header: magic b"GPFC", version byte, 3 zero bytes, then uint32 n_rows,
    n_features, pid_width. Each record is a NUL-padded pid, an int64 second
    index, and uint16 counts.
    """
    spec = spec or GridSpec()
    if matrix.shape != (len(keys), spec.n_features):
        raise ShapeError("matrix shape does not match keys and grid")
    if matrix.size and (matrix.min() < 0 or matrix.max() > np.iinfo(np.uint16).max):
        raise ShapeError("counts out of uint16 range")
    rec = np.zeros(len(keys), dtype=_record_dtype(spec.n_features))
    for i, (pid, idx) in enumerate(keys):
        raw = pid.encode("utf-8")
        if len(raw) > _PID_WIDTH:
            raise ShapeError(f"participant id longer than {_PID_WIDTH} bytes: {pid!r}")
        rec["pid"][i] = raw
        rec["second_index"][i] = idx
    rec["counts"] = matrix.astype(np.uint16)
    header = (
        BIN_MAGIC
        + bytes([BIN_VERSION, 0, 0, 0])
        + np.array([len(keys), spec.n_features, _PID_WIDTH], dtype="<u4").tobytes()
    )
    with open(path, "wb") as fh:
        fh.write(header)
        rec.tofile(fh)


def read_features_bin(path: str | Path) -> tuple[np.ndarray, list[tuple[str, int]]]:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20 or head[:4] != BIN_MAGIC:
            raise ParseError(f"not a feature cache: {path}")
        if head[4] != BIN_VERSION:
            raise ParseError(f"unsupported cache version {head[4]}")
        n_rows, n_features, pid_width = np.frombuffer(head[8:], dtype="<u4")
        if pid_width != _PID_WIDTH:
            raise ParseError(f"unsupported pid width {pid_width}")
        rec = np.fromfile(fh, dtype=_record_dtype(int(n_features)))
    if len(rec) != n_rows:
        raise ParseError(f"truncated cache: expected {n_rows} rows, got {len(rec)}")
    keys = [
        (rec["pid"][i].decode("utf-8"), int(rec["second_index"][i]))
        for i in range(len(rec))
    ]
    return rec["counts"].astype(np.int64), keys
