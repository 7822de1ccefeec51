"""Runtime measurement of the alignment pipeline.

Times every pipeline step separately (feature extraction, dense and
sparse projection, soft and greedy forest evaluation, full alignment)
as medians over repetitions, and reports the exact split-evaluation
counts behind the soft/greedy cost gap: 2^D - 1 versus D per tree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import cascade, dimred, features, neural_forest


def median_time(fn, repetitions: int, *args, **kwargs) -> float:
    """Median wall time of fn(*args) over the given repetitions."""
    fn(*args, **kwargs)  # warm caches / JIT before timing
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def bench_forest(forest, z, repetitions: int = 30):
    """(soft_seconds, greedy_seconds) medians for one forest evaluation."""
    soft = median_time(neural_forest.nf_predict, repetitions, forest, z)
    greedy = median_time(neural_forest.gnf_predict, repetitions, forest, z)
    return soft, greedy


def bench_projection(layer, x, repetitions: int = 30):
    """(dense_seconds, sparse_seconds) medians for one projection.

    The sparse path compacts the layer if needed (forced, whatever the
    sparsity, so the two paths are always comparable).
    """
    dense = median_time(dimred.project_dense, repetitions, layer, x)
    if not layer.sparse_ready:
        dimred.compact(layer, force=True)
    sparse = median_time(dimred.project_sparse, repetitions, layer, x)
    return dense, sparse


@dataclass
class BenchReport:
    rows: list[tuple[str, str, float]] = field(default_factory=list)

    def add(self, step: str, metric: str, value: float) -> None:
        self.rows.append((step, metric, float(value)))

    def value(self, step: str, metric: str) -> float:
        for s, m, v in self.rows:
            if s == step and m == metric:
                return v
        raise KeyError(f"no bench row ({step}, {metric})")

    def write_csv(self, path) -> None:
        lines = ["step,metric,value"]
        for step, metric, value in self.rows:
            lines.append(f"{step},{metric},{value:.9g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def bench(model, examples, repetitions: int = 20, images=None) -> BenchReport:
    """Per-step timing of a frozen model on the first example of a dataset.

    Reports medians over `repetitions` plus split-evaluation counts per
    tree and per forest for both routing modes.
    """
    if not model.stages:
        raise ValueError("model has no stages")
    examples = list(examples)
    if not examples:
        raise ValueError("empty dataset")
    ex = examples[0]
    image = images[0] if images is not None else ex.load_image()

    report = BenchReport()
    crop, _ = cascade.crop_and_resize(image, ex.bbox, model.crop.size)

    def extract():
        channels = features.compute_channels(crop)
        shape = cascade.shape_model.synthesize(model.p0, model.pdm)
        features.shape_descriptor(
            channels, shape, window=model.descriptor_window, grid=model.descriptor_grid
        )

    report.add("feature_extraction", "median_s", median_time(extract, repetitions))

    channels = features.compute_channels(crop)
    shape = cascade.shape_model.synthesize(model.p0, model.pdm)
    x = features.shape_descriptor(
        channels, shape, window=model.descriptor_window, grid=model.descriptor_grid
    )

    for idx, stage in enumerate(model.stages):
        name = f"stage{idx}_{stage.kind}"
        dense, sparse = bench_projection(stage.projection, x, repetitions)
        report.add(name, "projection_dense_s", dense)
        report.add(name, "projection_sparse_s", sparse)
        report.add(name, "projection_sparsity", dimred.sparsity(stage.projection))
        z = dimred.project(stage.projection, x)
        soft, greedy = bench_forest(stage.forest, z, repetitions)
        report.add(name, "forest_soft_s", soft)
        report.add(name, "forest_greedy_s", greedy)
        report.add(name, "soft_split_evals_per_tree", stage.forest.n_splits)
        report.add(name, "greedy_split_evals_per_tree", stage.forest.depth)
        report.add(name, "soft_split_evals_total", stage.forest.n_splits * stage.forest.n_trees)
        report.add(name, "greedy_split_evals_total", stage.forest.depth * stage.forest.n_trees)

    def full_align():
        cascade.align(model, image, ex.bbox)

    report.add("align", "median_s", median_time(full_align, repetitions))
    return report
