"""Pipeline configuration: JSON file + flag overrides, validated up front.

Config keys split into two groups. Semantic keys (seed, paradigm, model,
grid...) determine every computed artifact and are hashed into stage cache
keys and manifests. Execution keys (paths, worker count, cache location)
only say where and how fast to compute, so they are excluded from hashes;
changing them can never change an emitted artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

ENV_CACHE_DIR = "GAITPRINT_CACHE_DIR"

PARADIGMS = ("random", "temporal")
MODELS = ("logistic", "lasso")
VARIANTS = ("none", "oversample", "weighted", "two-stage")
DETECTORS = ("template", "oracle")


@dataclass
class DetectorSettings:
    kind: str = "template"
    threshold: float = 0.7
    n_templates: int = 16
    min_duration: float = 0.5
    max_duration: float = 2.0

    def validate(self) -> None:
        if self.kind not in DETECTORS:
            raise ConfigError(f"detector kind must be one of {DETECTORS}, got {self.kind!r}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"detector threshold must be in (0, 1), got {self.threshold}")
        if self.n_templates < 1:
            raise ConfigError("detector needs at least one template")
        if not (0.0 < self.min_duration <= self.max_duration):
            raise ConfigError("need 0 < min_duration <= max_duration")


@dataclass
class GridSettings:
    lo: float = 0.0
    hi: float = 3.0
    width: float = 0.25
    lags: tuple[int, ...] = (12, 24, 36)

    def validate(self, sample_rate: int) -> None:
        from .fingerprint import GridSpec  # construction runs the checks

        GridSpec(self.lo, self.hi, self.width, tuple(self.lags), sample_rate)

    def to_spec(self, sample_rate: int):
        from .fingerprint import GridSpec

        return GridSpec(self.lo, self.hi, self.width, tuple(self.lags), sample_rate)


@dataclass
class PipelineConfig:
    # semantic
    seed: int = 0
    paradigm: str = "random"
    minutes: int = 3
    subgroup_size: int | None = None
    model: str = "logistic"
    variant: str = "none"
    oversample_p: float | None = None
    n_folds: int = 5
    ridge: float = 1e-6
    sample_rate: int = 80
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    # execution
    data_dir: str = "data"
    out_dir: str = "out"
    cache_dir: str | None = None
    mask: str | None = None
    labels: str | None = None
    workers: int = 1

    SEMANTIC = (
        "seed", "paradigm", "minutes", "subgroup_size", "model", "variant",
        "oversample_p", "n_folds", "ridge", "sample_rate", "detector", "grid",
    )

    def validate(self) -> None:
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"paradigm must be one of {PARADIGMS}, got {self.paradigm!r}")
        if self.minutes not in (3, 6):
            raise ConfigError(f"minutes must be 3 or 6, got {self.minutes}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "oversample":
            if self.oversample_p is None or not (0.0 < self.oversample_p < 1.0):
                raise ConfigError("oversample variant needs oversample_p in (0, 1)")
        if self.subgroup_size is not None and self.subgroup_size < 2:
            raise ConfigError("subgroup_size must be >= 2")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.sample_rate < 1:
            raise ConfigError("sample_rate must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.detector.validate()
        if self.detector.kind == "oracle" and not self.labels:
            raise ConfigError("oracle detector needs a labels file")
        self.grid.validate(self.sample_rate)

    def semantic_dict(self) -> dict:
        """The hash-relevant config subset, with stable key order."""
        out = {}
        for key in self.SEMANTIC:
            val = getattr(self, key)
            if key in ("detector", "grid"):
                val = asdict(val)
                if "lags" in val:
                    val["lags"] = list(val["lags"])
            out[key] = val
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def resolved_cache_dir(self) -> Path:
        env = os.environ.get(ENV_CACHE_DIR)
        if env:
            return Path(env)
        if self.cache_dir:
            return Path(self.cache_dir)
        return Path(self.out_dir) / "cache"


_TOP_KEYS = {f.name for f in fields(PipelineConfig)}
_DETECTOR_KEYS = {f.name for f in fields(DetectorSettings)}
_GRID_KEYS = {f.name for f in fields(GridSettings)}


def config_from_dict(raw: dict) -> PipelineConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "detector" in kwargs:
        d = kwargs["detector"]
        if not isinstance(d, dict):
            raise ConfigError("detector must be an object")
        bad = set(d) - _DETECTOR_KEYS
        if bad:
            raise ConfigError(f"unknown detector keys: {sorted(bad)}")
        kwargs["detector"] = DetectorSettings(**d)
    if "grid" in kwargs:
        g = kwargs["grid"]
        if not isinstance(g, dict):
            raise ConfigError("grid must be an object")
        bad = set(g) - _GRID_KEYS
        if bad:
            raise ConfigError(f"unknown grid keys: {sorted(bad)}")
        g = dict(g)
        if "lags" in g:
            g["lags"] = tuple(int(u) for u in g["lags"])
        kwargs["grid"] = GridSettings(**g)
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Read the JSON config (if any), apply flag overrides, validate."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in ("detector", "grid"):
            raw.setdefault(key, {})
            raw[key].update(val)
        else:
            raw[key] = val
    cfg = config_from_dict(raw)
    cfg.validate()
    return cfg
