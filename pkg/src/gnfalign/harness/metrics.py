"""Alignment error metrics and evaluation reports.

Errors are normalized mean point-to-point distances in percent: the mean
Euclidean landmark error divided by a face-scale normalizer, times 100.
Two normalizers are provided: the inter-pupil distance (distance between
the eye-landmark centroids of the 68-point markup) and the bounding-box
size sqrt(w * h).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import cascade

CED_THRESHOLDS = np.round(np.arange(0, 200 + 1) * 0.1, 10)  # 0.0 .. 20.0 step 0.1

# 0-based index ranges of the eye landmarks in the 68-point markup
LEFT_EYE = slice(36, 42)
RIGHT_EYE = slice(42, 48)


def interpupil_distance(shape) -> float:
    """Distance between the mean left-eye and mean right-eye landmark."""
    pts = np.asarray(shape, dtype=np.float64)
    if pts.shape[0] < 48:
        raise ValueError(
            f"inter-pupil normalizer needs the 68-point markup, got {pts.shape[0]} points"
        )
    return float(np.linalg.norm(pts[LEFT_EYE].mean(axis=0) - pts[RIGHT_EYE].mean(axis=0)))


def bbox_size(bbox) -> float:
    """Geometric-mean side length sqrt(w * h) of an (x, y, w, h) bbox."""
    _, _, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox must have positive area, got w={w} h={h}")
    return float(np.sqrt(w * h))


def nme(predicted, truth, normalizer: float) -> float:
    """Mean point-to-point distance over the normalizer, in percent."""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if normalizer <= 0:
        raise ValueError(f"normalizer must be positive, got {normalizer}")
    return float(np.linalg.norm(pred - gt, axis=1).mean() / normalizer * 100.0)


def ced_curve(nmes, thresholds=CED_THRESHOLDS) -> np.ndarray:
    """Fraction of examples with error below each threshold."""
    nmes = np.asarray(nmes, dtype=np.float64)
    if nmes.size == 0:
        raise ValueError("no errors to summarize")
    return (nmes[None, :] <= np.asarray(thresholds)[:, None]).mean(axis=1)


def example_normalizer(example, which: str) -> float:
    if which == "interpupil":
        return interpupil_distance(example.shape)
    if which == "bbox":
        return bbox_size(example.bbox)
    raise ValueError(f"unknown normalizer {which!r} (expected 'interpupil' or 'bbox')")


@dataclass
class EvalReport:
    names: list[str]
    nmes: np.ndarray
    thresholds: np.ndarray
    ced: np.ndarray
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def mean_nme(self) -> float:
        return float(self.nmes.mean())

    def write_csv(self, path) -> None:
        """Tidy three-column CSV: kind,key,value."""
        lines = ["kind,key,value"]
        for name, err in zip(self.names, self.nmes):
            lines.append(f"image,{name},{err:.9f}")
        lines.append(f"summary,mean_nme,{self.mean_nme:.9f}")
        for thr, frac in zip(self.thresholds, self.ced):
            lines.append(f"ced,{thr:.1f},{frac:.9f}")
        for step, seconds in sorted(self.timings.items()):
            lines.append(f"timing,{step},{seconds:.9f}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def evaluate_model(model, examples, images=None, normalizer: str = "bbox") -> EvalReport:
    """Align every example and summarize errors against the ground truth."""
    names = []
    errors = []
    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    for idx, ex in enumerate(examples):
        image = images[idx] if images is not None else ex.load_image()
        predicted, _ = cascade.align(model, image, ex.bbox, timings=timings)
        errors.append(nme(predicted, ex.shape, example_normalizer(ex, normalizer)))
        names.append(str(getattr(ex, "image_path", idx)))
    timings["wall"] = time.perf_counter() - t_start
    errors = np.asarray(errors)
    return EvalReport(names, errors, CED_THRESHOLDS, ced_curve(errors), timings)
