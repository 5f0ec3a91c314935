"""Raw accelerometer ingestion: CSV parsing, vector magnitude, wear masking.

Input CSV format: header ``participant_id,timestamp,x,y,z``, one participant
per stream, rows time-ordered, timestamps ISO-8601 with at least millisecond
precision, axis values in decimal g.

Seconds are aligned to the recording's first sample, not wall-clock
boundaries; a second's calendar date is taken from its first sample's
timestamp. Partial seconds at the end of the stream are dropped.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    EmptyInputError,
    NumericError,
    OrderingError,
    ParseError,
    ShapeError,
)

CSV_HEADER = ["participant_id", "timestamp", "x", "y", "z"]
DEFAULT_SAMPLE_RATE = 80


@dataclass
class Recording:
    """One participant's tri-axial samples grouped into whole seconds."""

    participant_id: str
    start_time: datetime
    sample_rate: int
    samples: np.ndarray  # (n_seconds * sample_rate, 3) float64, g units
    mask: np.ndarray  # (n_seconds,) bool, True = usable
    second_starts: list[datetime] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ShapeError(f"samples must be (n, 3), got {self.samples.shape}")
        if self.samples.shape[0] % self.sample_rate != 0:
            raise ShapeError(
                f"sample count {self.samples.shape[0]} is not a multiple of "
                f"sample_rate {self.sample_rate}"
            )
        if not np.isfinite(self.samples).all():
            raise NumericError("recording contains non-finite axis values")
        n_sec = self.samples.shape[0] // self.sample_rate
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (n_sec,):
            raise ShapeError(f"mask length {self.mask.shape} != {n_sec} seconds")
        if not self.second_starts:
            self.second_starts = [
                _add_seconds(self.start_time, i) for i in range(n_sec)
            ]
        elif len(self.second_starts) != n_sec:
            raise ShapeError("second_starts length does not match second count")

    @property
    def n_seconds(self) -> int:
        return self.samples.shape[0] // self.sample_rate

    def second_date(self, index: int) -> date:
        return self.second_starts[index].date()


@dataclass
class VmSecond:
    """Vector-magnitude values for one usable second (exactly sample_rate of them)."""

    participant_id: str
    second_index: int
    date: date
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("VmSecond values must be 1-D")


def _add_seconds(t: datetime, n: int) -> datetime:
    return t + timedelta(seconds=n)


def vector_magnitude(x: float, y: float, z: float) -> float:
    """Euclidean norm of one tri-axial sample, in g."""
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise NumericError(f"non-finite axis values ({x}, {y}, {z})")
    return math.sqrt(x * x + y * y + z * z)


def vm_series(samples: np.ndarray) -> np.ndarray:
    """Vector magnitude of an (n, 3) sample array."""
    samples = np.asarray(samples, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", samples, samples))


def _parse_timestamp(raw: str, line: int) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        t = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"bad timestamp {raw!r}: {exc}", line=line) from None
    if t.tzinfo is not None:
        t = t.astimezone(timezone.utc).replace(tzinfo=None)
    return t


def parse_recording(
    stream: TextIO | Iterable[str] | str,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Recording:
    """Parse one participant's CSV stream into a Recording.

    Trailing samples that do not fill a whole second are dropped. The mask is
    initialized all-usable; combine with a wear mask via `apply_mask`.

    Raises ParseError (with line number) on malformed rows, OrderingError on
    non-increasing timestamps, EmptyInputError on a stream with no data rows.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInputError("empty stream: no header row") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise ParseError(
            f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}",
            line=1,
        )

    pid = None
    times: list[datetime] = []
    xyz: list[tuple[float, float, float]] = []
    prev_t = None
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
        rid, ts, xs, ys, zs = row
        if pid is None:
            pid = rid
        elif rid != pid:
            raise ParseError(
                f"stream mixes participants {pid!r} and {rid!r}", line=lineno
            )
        t = _parse_timestamp(ts, lineno)
        if prev_t is not None and t <= prev_t:
            raise OrderingError(
                f"line {lineno}: timestamp {ts!r} not after previous sample"
            )
        prev_t = t
        try:
            vals = (float(xs), float(ys), float(zs))
        except ValueError as exc:
            raise ParseError(f"bad axis value: {exc}", line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise NumericError(f"line {lineno}: non-finite axis value")
        times.append(t)
        xyz.append(vals)

    if not xyz:
        raise EmptyInputError("stream has a header but no data rows")

    n_whole = len(xyz) // sample_rate
    if n_whole == 0:
        raise EmptyInputError(
            f"only {len(xyz)} samples, fewer than one whole second at {sample_rate} Hz"
        )
    samples = np.array(xyz[: n_whole * sample_rate], dtype=np.float64)
    second_starts = [times[i * sample_rate] for i in range(n_whole)]
    return Recording(
        participant_id=pid,
        start_time=times[0],
        sample_rate=sample_rate,
        samples=samples,
        mask=np.ones(n_whole, dtype=bool),
        second_starts=second_starts,
    )


def serialize_recording(rec: Recording, stream: TextIO, axis_decimals: int = 6) -> None:
    """Write a Recording back to the input CSV format.

    Retained seconds round-trip losslessly at the stated axis precision.
    Sample timestamps between second starts are reconstructed at the nominal
    rate (exact at 80 Hz, where the spacing is 12.5 ms).
    """
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    step_us = round(1e6 / rec.sample_rate)
    for sec in range(rec.n_seconds):
        base = rec.second_starts[sec]
        for k in range(rec.sample_rate):
            t = base + timedelta(microseconds=k * step_us)
            x, y, z = rec.samples[sec * rec.sample_rate + k]
            writer.writerow(
                [
                    rec.participant_id,
                    t.isoformat(timespec="microseconds"),
                    f"{x:.{axis_decimals}f}",
                    f"{y:.{axis_decimals}f}",
                    f"{z:.{axis_decimals}f}",
                ]
            )


def apply_mask(rec: Recording, flags: Sequence[bool] | None = None) -> list[VmSecond]:
    """Reduce a Recording to per-second vector-magnitude values, keeping only
    seconds whose flag is True.

    `flags` must have one entry per whole second (ShapeError otherwise); None
    uses the recording's own mask.
    """
    n_sec = rec.n_seconds
    if flags is None:
        flags = rec.mask
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (n_sec,):
        raise ShapeError(f"got {flags.shape[0] if flags.ndim else 0} flags for {n_sec} seconds")
    vm = vm_series(rec.samples).reshape(n_sec, rec.sample_rate)
    out = []
    for idx in np.flatnonzero(flags):
        out.append(
            VmSecond(
                participant_id=rec.participant_id,
                second_index=int(idx),
                date=rec.second_date(int(idx)),
                values=vm[idx],
            )
        )
    return out


def read_mask_csv(stream: TextIO | str, participant_id: str) -> dict[int, bool]:
    """Read the optional wear-mask CSV (`participant_id,second_index,usable`).

    Returns {second_index: usable} for the given participant; seconds absent
    from the file count as usable.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return {}
    if [h.strip() for h in header] != ["participant_id", "second_index", "usable"]:
        raise ParseError(
            f"expected header 'participant_id,second_index,usable', got {','.join(header)!r}",
            line=1,
        )
    out: dict[int, bool] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
        if row[0] != participant_id:
            continue
        try:
            idx = int(row[1])
            usable = int(row[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if usable not in (0, 1):
            raise ParseError(f"usable must be 0 or 1, got {row[2]}", line=lineno)
        out[idx] = bool(usable)
    return out


def mask_flags(rec: Recording, mask_by_second: dict[int, bool]) -> np.ndarray:
    """Expand a sparse {second_index: usable} map to per-second flags."""
    flags = np.ones(rec.n_seconds, dtype=bool)
    for idx, usable in mask_by_second.items():
        if 0 <= idx < rec.n_seconds:
            flags[idx] = usable
    return flags
