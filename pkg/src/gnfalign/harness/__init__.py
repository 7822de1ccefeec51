"""Data ingestion, metrics, synthetic data, benchmarking and the CLI."""

from .bench import BenchReport, bench, bench_forest, bench_projection
from .io import (
    AnnotatedExample,
    DataFormatError,
    ImageFormatError,
    PtsCountError,
    PtsHeaderError,
    PtsValueError,
    load_gray,
    load_manifest,
    load_pts,
    save_gray,
    save_manifest,
    save_pts,
)
from .metrics import (
    CED_THRESHOLDS,
    EvalReport,
    bbox_size,
    ced_curve,
    evaluate_model,
    interpupil_distance,
    nme,
)
from .synth import SynthConfig, base_face_shape, planted_pdm, synth_examples, synth_generate

__all__ = [
    "AnnotatedExample",
    "BenchReport",
    "CED_THRESHOLDS",
    "DataFormatError",
    "EvalReport",
    "ImageFormatError",
    "PtsCountError",
    "PtsHeaderError",
    "PtsValueError",
    "SynthConfig",
    "base_face_shape",
    "bbox_size",
    "bench",
    "bench_forest",
    "bench_projection",
    "ced_curve",
    "evaluate_model",
    "interpupil_distance",
    "load_gray",
    "load_manifest",
    "load_pts",
    "nme",
    "planted_pdm",
    "save_gray",
    "save_manifest",
    "save_pts",
    "synth_examples",
    "synth_generate",
]
