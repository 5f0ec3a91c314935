"""Person identification from wrist accelerometry walking fingerprints."""

from .config import DetectorSettings, GridSettings, PipelineConfig, load_config
from .errors import (
    ConfigError,
    DataError,
    GaitprintError,
    NumericError,
    StageError,
)
from .evaluation import RankReport, ScoreMatrix, rank_metrics, subject_scores
from .fingerprint import GridSpec, build_feature_matrix, fingerprint_image, grid_cells_for_second
from .ingest import Recording, VmSecond, parse_recording, vector_magnitude
from .ovr import ModelBank, OvrModel, TrainingSet, ovr_train, two_stage_rank
from .partition import Partition, make_subgroups, random_partition, temporal_partition
from .pipeline import run_pipeline, run_until
from .segmentation import (
    Bout,
    OracleDetector,
    StepSeries,
    TemplateCorrelationDetector,
    assemble_bouts,
    detect_steps,
    eligibility,
    valid_seconds,
)
from .synthgait import PersonModel, Schedule, generate_person, synthesize_recording, write_corpus

__version__ = "0.1.0"

__all__ = [
    "Bout",
    "ConfigError",
    "DataError",
    "DetectorSettings",
    "GaitprintError",
    "GridSettings",
    "GridSpec",
    "ModelBank",
    "NumericError",
    "OracleDetector",
    "OvrModel",
    "Partition",
    "PersonModel",
    "PipelineConfig",
    "RankReport",
    "Recording",
    "Schedule",
    "ScoreMatrix",
    "StageError",
    "StepSeries",
    "TemplateCorrelationDetector",
    "TrainingSet",
    "VmSecond",
    "assemble_bouts",
    "build_feature_matrix",
    "detect_steps",
    "eligibility",
    "fingerprint_image",
    "generate_person",
    "grid_cells_for_second",
    "load_config",
    "make_subgroups",
    "ovr_train",
    "parse_recording",
    "random_partition",
    "rank_metrics",
    "run_pipeline",
    "run_until",
    "subject_scores",
    "synthesize_recording",
    "temporal_partition",
    "two_stage_rank",
    "valid_seconds",
    "vector_magnitude",
    "write_corpus",
]
