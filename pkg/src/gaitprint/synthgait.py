"""Deterministic synthetic multi-day accelerometry with ground-truth labels.

Each person is a harmonic-sum gait model: during walking seconds the vector
magnitude is ``1 + sum_h a_h * sin(2*pi*h*f_day*t + phi_h) + noise`` with a
per-day frequency/amplitude jitter; idle seconds are ``1 + noise``. The model
is an analytic stand-in with exact step labels, not a physiological claim.

Tri-axial samples are the fixed unit direction (0.6, 0.8, 0) scaled by the
magnitude, so taking the vector magnitude inverts synthesis exactly. All
draws come from named substreams of the corpus seed; output is byte-identical
for identical (corpus seed, person index, schedule).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import ConfigError, ParseError, ShapeError
from .ingest import Recording, serialize_recording
from .seeding import substream_rng, substream_seed

TWO_PI = 2.0 * np.pi

# vm = 1 + sum(a_h) + 4*sigma must stay <= 3 and >= 0 for defaults
DEFAULT_RANGES = {
    "step_freq": (1.6, 2.4),
    "amp1": (0.25, 0.45),
    "amp2": (0.08, 0.20),
    "amp3": (0.03, 0.10),
    "amp4": (0.00, 0.05),
}


@dataclass
class PersonModel:
    """Gait signature parameters for one synthetic person."""

    person_seed: int
    step_freq: float  # steps per second
    amps: tuple[float, float, float, float]  # harmonic amplitudes, g
    phases: tuple[float, float, float, float]  # radians
    sigma: float  # additive noise sd, g
    freq_drift: float  # per-day uniform jitter half-width, Hz
    amp_drift: float  # per-day uniform amplitude factor half-width


@dataclass
class Schedule:
    """Walking layout: each day holds `bouts_per_day` bouts of `bout_seconds`
    walking separated (and led) by idle gaps."""

    days: int = 3
    bouts_per_day: int = 5
    bout_seconds: int = 28
    gap_seconds: int = 3
    lead_seconds: int = 2
    start: datetime = field(default_factory=lambda: datetime(2024, 3, 4, 8, 0, 0))
    sample_rate: int = 80

    def validate(self) -> None:
        if self.days < 1:
            raise ConfigError("schedule needs at least one day")
        if self.bouts_per_day < 1 or self.bout_seconds < 1:
            raise ConfigError("schedule needs at least one bout of at least one second")
        if self.gap_seconds < 2:
            raise ConfigError("gaps must be >= 2 s so bouts cannot merge")
        if self.lead_seconds < 0 or self.sample_rate < 1:
            raise ConfigError("lead_seconds must be >= 0 and sample_rate >= 1")
        try:
            self.start + timedelta(days=self.days)
        except OverflowError:
            raise ConfigError("schedule exceeds representable timestamps") from None

    @property
    def seconds_per_day(self) -> int:
        return self.lead_seconds + self.bouts_per_day * (self.bout_seconds + self.gap_seconds)

    def day_walking_flags(self) -> np.ndarray:
        """Walking flag per second within one day."""
        flags = np.zeros(self.seconds_per_day, dtype=bool)
        pos = self.lead_seconds
        for _ in range(self.bouts_per_day):
            flags[pos : pos + self.bout_seconds] = True
            pos += self.bout_seconds + self.gap_seconds
        return flags


@dataclass
class LabeledRecording:
    """A Recording plus per-second ground truth."""

    recording: Recording
    walking: np.ndarray  # bool per second
    steps: np.ndarray  # int per second

    def __post_init__(self):
        n = self.recording.n_seconds
        if len(self.walking) != n or len(self.steps) != n:
            raise ShapeError("labels must align 1:1 with seconds")


def generate_person(
    corpus_seed: int,
    index: int,
    ranges: dict | None = None,
    sigma: float = 0.05,
    freq_drift: float = 0.0,
    amp_drift: float = 0.0,
) -> PersonModel:
    """Draw one person's gait parameters from the (corpus_seed, index) substream."""
    r = dict(DEFAULT_RANGES)
    if ranges:
        r.update(ranges)
    for name, (lo, hi) in r.items():
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
            raise ConfigError(f"invalid range for {name}: ({lo}, {hi})")
    if sigma < 0 or freq_drift < 0 or amp_drift < 0:
        raise ConfigError("sigma and drift scales must be non-negative")
    rng = substream_rng(corpus_seed, "person", index)
    f = rng.uniform(*r["step_freq"])
    amps = tuple(float(rng.uniform(*r[f"amp{h}"])) for h in range(1, 5))
    phases = tuple(float(rng.uniform(0.0, TWO_PI)) for _ in range(4))
    return PersonModel(
        person_seed=substream_seed(corpus_seed, "person", index),
        step_freq=float(f),
        amps=amps,
        phases=phases,
        sigma=float(sigma),
        freq_drift=float(freq_drift),
        amp_drift=float(amp_drift),
    )


def synthesize_recording(
    person: PersonModel,
    schedule: Schedule,
    participant_id: str,
) -> LabeledRecording:
    """Render one person's schedule into a labeled multi-day recording.

    Noise is truncated at +/- 4 sigma and the magnitude clamped to [0, 3] g.
    True steps per walking second = floor(f_day + 0.5).
    """
    schedule.validate()
    fs = schedule.sample_rate
    spd = schedule.seconds_per_day
    day_flags = schedule.day_walking_flags()
    t_day = np.arange(spd * fs) / fs  # time within day, phase reference

    vm_parts = []
    walking = []
    steps = []
    second_starts = []
    for d in range(schedule.days):
        day_rng = substream_rng(person.person_seed, "day", d)
        f_day = person.step_freq + day_rng.uniform(-person.freq_drift, person.freq_drift)
        amp_factor = 1.0 + day_rng.uniform(-person.amp_drift, person.amp_drift)
        gait = np.zeros_like(t_day)
        for h, (a, ph) in enumerate(zip(person.amps, person.phases), start=1):
            gait += amp_factor * a * np.sin(TWO_PI * h * f_day * t_day + ph)
        mask = np.repeat(day_flags, fs)
        vm = 1.0 + np.where(mask, gait, 0.0)
        if person.sigma > 0:
            noise = day_rng.normal(0.0, person.sigma, size=vm.shape)
            np.clip(noise, -4.0 * person.sigma, 4.0 * person.sigma, out=noise)
            vm += noise
        np.clip(vm, 0.0, 3.0, out=vm)
        vm_parts.append(vm)

        day_steps = int(np.floor(f_day + 0.5))
        walking.append(day_flags)
        steps.append(np.where(day_flags, day_steps, 0))
        day_start = schedule.start + timedelta(days=d)
        second_starts.extend(day_start + timedelta(seconds=int(s)) for s in range(spd))

    vm_all = np.concatenate(vm_parts)
    samples = np.empty((vm_all.size, 3), dtype=np.float64)
    samples[:, 0] = 0.6 * vm_all
    samples[:, 1] = 0.8 * vm_all
    samples[:, 2] = 0.0
    rec = Recording(
        participant_id=participant_id,
        start_time=second_starts[0],
        sample_rate=fs,
        samples=samples,
        mask=np.ones(len(second_starts), dtype=bool),
        second_starts=second_starts,
    )
    return LabeledRecording(
        recording=rec,
        walking=np.concatenate(walking),
        steps=np.concatenate(steps).astype(np.int64),
    )


def person_id(index: int, width: int = 4) -> str:
    return f"p{index:0{width}d}"


def write_labels_csv(stream: TextIO, labeled: list[LabeledRecording]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["participant_id", "second_index", "walking", "steps"])
    for lab in labeled:
        pid = lab.recording.participant_id
        for idx in range(lab.recording.n_seconds):
            writer.writerow([pid, idx, int(lab.walking[idx]), int(lab.steps[idx])])


def read_labels_csv(stream: TextIO | str) -> dict[str, dict[int, tuple[bool, int]]]:
    """Parse a labels CSV into {participant: {second_index: (walking, steps)}}."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != ["participant_id", "second_index", "walking", "steps"]:
        raise ParseError("bad labels header", line=1)
    out: dict[str, dict[int, tuple[bool, int]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
        pid, idx, walking, steps = row
        out.setdefault(pid, {})[int(idx)] = (bool(int(walking)), int(steps))
    return out


def write_corpus(
    out_dir: str | Path,
    n_persons: int,
    corpus_seed: int,
    schedule: Schedule | None = None,
    sigma: float = 0.05,
    freq_drift: float = 0.0,
    amp_drift: float = 0.0,
    ranges: dict | None = None,
) -> Path:
    """Generate a corpus: one data CSV per person under data/, labels.csv,
    and a corpus.json parameter manifest. Returns the corpus directory."""
    if n_persons < 1:
        raise ConfigError("corpus needs at least one person")
    schedule = schedule or Schedule()
    schedule.validate()
    out = Path(out_dir)
    (out / "data").mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(n_persons - 1)))
    labeled_all = []
    for i in range(n_persons):
        person = generate_person(
            corpus_seed, i, ranges=ranges, sigma=sigma,
            freq_drift=freq_drift, amp_drift=amp_drift,
        )
        labeled = synthesize_recording(person, schedule, person_id(i, width))
        with open(out / "data" / f"{labeled.recording.participant_id}.csv", "w") as fh:
            serialize_recording(labeled.recording, fh)
        labeled_all.append(labeled)
    with open(out / "labels.csv", "w") as fh:
        write_labels_csv(fh, labeled_all)
    manifest = {
        "corpus_seed": corpus_seed,
        "n_persons": n_persons,
        "sigma": sigma,
        "freq_drift": freq_drift,
        "amp_drift": amp_drift,
        "schedule": {
            **{k: v for k, v in asdict(schedule).items() if k != "start"},
            "start": schedule.start.isoformat(),
        },
    }
    with open(out / "corpus.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
