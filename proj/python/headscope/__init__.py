"""Python bindings for the headscope data-selection toolkit."""

from ._core import (
    ConsistencyError,
    Corpus,
    Error,
    FormatError,
    InvalidArgument,
    IoError,
    ModelConfig,
    Sample,
    StaleArtifactError,
    Transformer,
    build_undiff_matrix,
    detect_heads,
    encode,
    incoming_attention,
    ingest,
    planted_head_for_seed,
    run_pipeline,
    score_samples,
    soft_sample,
    synthetic_corpus,
    variance_score,
    write_synthetic,
)

__version__ = "0.1.0"

__all__ = [
    "ConsistencyError",
    "Corpus",
    "Error",
    "FormatError",
    "InvalidArgument",
    "IoError",
    "ModelConfig",
    "Sample",
    "StaleArtifactError",
    "Transformer",
    "build_undiff_matrix",
    "detect_heads",
    "encode",
    "incoming_attention",
    "ingest",
    "planted_head_for_seed",
    "run_pipeline",
    "score_samples",
    "soft_sample",
    "synthetic_corpus",
    "variance_score",
    "write_synthetic",
]
