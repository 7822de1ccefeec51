"""Semi-parametric alignment cascade.

A model is an ordered list of stages, every parametric stage before every
explicit one. Starting from the mean-shape parameters p0 centered in the
face crop, each parametric stage predicts a parameter-space update from
the descriptor at the current synthesized shape; the accumulated
parameters are then rendered to a shape and each explicit stage adds
per-landmark displacements (all x deltas, then all y deltas). Stages are
trained sequentially on the residuals left by their frozen predecessors
and are frozen to greedy evaluation before the next stage sees them.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import dimred, features, neural_forest, shape_model
from .crop import CropConfig, crop_and_resize, initial_params
from .dimred import ProjectionLayer
from .neural_forest import Forest, LeafStats

KIND_PARAMETRIC = "parametric"
KIND_EXPLICIT = "explicit"


@dataclass
class CascadeStage:
    kind: str
    projection: ProjectionLayer
    forest: Forest

    def __post_init__(self):
        if self.kind not in (KIND_PARAMETRIC, KIND_EXPLICIT):
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.projection.output_dim != self.forest.input_dim:
            raise ValueError("projection output does not match forest input")

    @property
    def stats(self) -> LeafStats:
        return self.forest.stats

    @property
    def frozen(self) -> bool:
        return self.forest.mode == neural_forest.MODE_GREEDY


@dataclass
class CascadeModel:
    pdm: shape_model.Pdm
    p0: np.ndarray
    stages: list[CascadeStage]
    crop: CropConfig = field(default_factory=CropConfig)
    descriptor_window: int = features.DESCRIPTOR_WINDOW
    descriptor_grid: int = features.DESCRIPTOR_GRID

    def __post_init__(self):
        seen_explicit = False
        for stage in self.stages:
            if stage.kind == KIND_EXPLICIT:
                seen_explicit = True
            elif seen_explicit:
                raise ValueError("parametric stage after an explicit stage")
            expected = (
                self.pdm.n_params
                if stage.kind == KIND_PARAMETRIC
                else 2 * self.pdm.n_points
            )
            if stage.forest.output_dim != expected:
                raise ValueError(
                    f"{stage.kind} stage output dim {stage.forest.output_dim}, "
                    f"expected {expected}"
                )

    @property
    def n_points(self) -> int:
        return self.pdm.n_points


@dataclass(frozen=True)
class PerturbRanges:
    """Scale/translation perturbation ranges for training-time augmentation.

    Scales perturb multiplicatively, translations additively; each range is
    the observed variation of the fitted parameter about its dataset mean.
    """

    scale_x: tuple[float, float]
    scale_y: tuple[float, float]
    t_x: tuple[float, float]
    t_y: tuple[float, float]

    @classmethod
    def identity(cls) -> "PerturbRanges":
        return cls((1.0, 1.0), (1.0, 1.0), (0.0, 0.0), (0.0, 0.0))

    @classmethod
    def from_fitted_params(cls, fitted: np.ndarray) -> "PerturbRanges":
        """Ranges from the Gauss-Newton parameters of the training set."""
        fitted = np.asarray(fitted, dtype=np.float64)

        def ratio_range(col):
            mean = fitted[:, col].mean()
            return (float(fitted[:, col].min() / mean), float(fitted[:, col].max() / mean))

        def offset_range(col):
            mean = fitted[:, col].mean()
            return (float(fitted[:, col].min() - mean), float(fitted[:, col].max() - mean))

        return cls(
            ratio_range(shape_model.ALPHA_X),
            ratio_range(shape_model.ALPHA_Y),
            offset_range(shape_model.T_X),
            offset_range(shape_model.T_Y),
        )

    def sample(self, rng: np.random.Generator):
        fx = rng.uniform(*self.scale_x)
        fy = rng.uniform(*self.scale_y)
        dx = rng.uniform(*self.t_x)
        dy = rng.uniform(*self.t_y)
        return fx, fy, dx, dy


def perturb_params(p: np.ndarray, fx: float, fy: float, dx: float, dy: float) -> np.ndarray:
    out = p.copy()
    out[shape_model.ALPHA_X] *= fx
    out[shape_model.ALPHA_Y] *= fy
    out[shape_model.T_X] += dx
    out[shape_model.T_Y] += dy
    return out


def perturb_shape(shape: np.ndarray, fx: float, fy: float, dx: float, dy: float) -> np.ndarray:
    center = shape.mean(axis=0)
    out = (shape - center) * np.array([fx, fy]) + center
    out[:, 0] += dx
    out[:, 1] += dy
    return out


@dataclass
class TrainConfig:
    """Cascade hyperparameters; defaults follow the reference protocol."""

    crop_size: int = 200
    shape_fraction: float = 0.7
    n_modes: int = 15
    parametric_stages: int = 3
    explicit_stages: int = 1
    trees_per_parameter: int = 25
    trees_per_coordinate: int = 5
    depth: int = 8
    projection_dim: int = 500
    learning_rate: float = 0.005
    updates_per_stage: int = 200000
    l1_eta: float = 0.01
    truncation: float = 0.05
    init_range: float = 0.01
    fit_iterations: int = 100
    perturb: bool = True
    descriptor_window: int = 40
    descriptor_grid: int = 4
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping) -> "TrainConfig":
        """Build from string key=value pairs, e.g. a parsed config file."""
        kwargs = {}
        by_name = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in mapping.items():
            if key not in by_name:
                raise KeyError(f"unknown config key {key!r}")
            ftype = by_name[key].type
            if ftype == "bool" or ftype is bool:
                if isinstance(value, str):
                    value = value.strip().lower() in ("1", "true", "yes", "on")
            elif ftype == "int" or ftype is int:
                value = int(value)
            elif ftype == "float" or ftype is float:
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# inference


def _stage_input(model: CascadeModel, channels, shape, timings=None):
    t0 = time.perf_counter() if timings is not None else 0.0
    x = features.shape_descriptor(
        channels, shape, window=model.descriptor_window, grid=model.descriptor_grid
    )
    if timings is not None:
        timings["descriptor"] = timings.get("descriptor", 0.0) + time.perf_counter() - t0
    return x


def _stage_predict(stage: CascadeStage, x, timings=None):
    t0 = time.perf_counter() if timings is not None else 0.0
    z = dimred.project(stage.projection, x)
    if timings is not None:
        t1 = time.perf_counter()
        timings["projection"] = timings.get("projection", 0.0) + t1 - t0
    delta = neural_forest.predict(stage.forest, z)
    if timings is not None:
        timings["forest"] = timings.get("forest", 0.0) + time.perf_counter() - t1
    return delta


def run_stages(model: CascadeModel, channels, trace: list | None = None, timings=None):
    """Run the cascade in crop coordinates; returns (shape, p_hat).

    If trace is a list, the shape after the initial placement and after
    every stage is appended to it.
    """
    p = model.p0.copy()
    shape = shape_model.synthesize(p, model.pdm)
    if trace is not None:
        trace.append(shape)
    for stage in model.stages:
        if stage.kind == KIND_PARAMETRIC:
            x = _stage_input(model, channels, shape, timings)
            p = p + _stage_predict(stage, x, timings)
            shape = shape_model.synthesize(p, model.pdm)
        else:
            x = _stage_input(model, channels, shape, timings)
            delta = _stage_predict(stage, x, timings)
            shape = shape + shape_model.vector_to_shape(delta)
        if trace is not None:
            trace.append(shape)
    return shape, p


def align(model: CascadeModel, image, bbox, timings=None):
    """Align the model on one face: crop, run all stages, map back.

    Returns (shape, p_hat): landmark positions in original image
    coordinates and the accumulated parameter vector (crop coordinates).
    """
    if not model.stages:
        raise ValueError("model has no stages")
    t0 = time.perf_counter() if timings is not None else 0.0
    crop, transform = crop_and_resize(image, bbox, model.crop.size)
    if timings is not None:
        t1 = time.perf_counter()
        timings["crop"] = timings.get("crop", 0.0) + t1 - t0
    channels = features.compute_channels(crop)
    if timings is not None:
        t2 = time.perf_counter()
        timings["channels"] = timings.get("channels", 0.0) + t2 - t1
    shape, p = run_stages(model, channels, timings=timings)
    if timings is not None:
        timings["total"] = timings.get("total", 0.0) + time.perf_counter() - t0
    return transform.to_image(shape), p


def align_trace(model: CascadeModel, image, bbox):
    """Per-stage shapes in image coordinates (initial placement first)."""
    if not model.stages:
        raise ValueError("model has no stages")
    crop, transform = crop_and_resize(image, bbox, model.crop.size)
    channels = features.compute_channels(crop)
    trace: list = []
    run_stages(model, channels, trace=trace)
    return [transform.to_image(s) for s in trace]


# ---------------------------------------------------------------------------
# training


class TrainExample(NamedTuple):
    """One training instance: decoded image, ground-truth shape, face bbox."""

    image: np.ndarray
    shape: np.ndarray
    bbox: tuple


@dataclass
class TrainingContext:
    """Per-example state threaded through sequential stage training."""

    pdm: shape_model.Pdm
    p0: np.ndarray
    channels: list
    gt_shapes: list  # crop coordinates
    fitted: np.ndarray  # (n, m+5) Gauss-Newton parameters of the ground truth
    perturb: PerturbRanges
    current_p: np.ndarray  # (n, m+5)
    descriptor_window: int = features.DESCRIPTOR_WINDOW
    descriptor_grid: int = features.DESCRIPTOR_GRID
    current_shapes: list | None = None  # crop coords, set after the parametric phase

    @property
    def n_examples(self) -> int:
        return len(self.channels)

    def descriptor(self, index: int, shape: np.ndarray) -> np.ndarray:
        return features.shape_descriptor(
            self.channels[index], shape, window=self.descriptor_window, grid=self.descriptor_grid
        )


def prepare_training(dataset, config: TrainConfig) -> TrainingContext:
    """Crop every example, build the PDM and fit ground-truth parameters."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    crop_cfg = CropConfig(config.crop_size, config.shape_fraction)
    channels = []
    gt_shapes = []
    for ex in dataset:
        crop, transform = crop_and_resize(ex.image, ex.bbox, crop_cfg.size)
        channels.append(features.compute_channels(crop))
        gt_shapes.append(transform.to_crop(shape_model.as_shape(ex.shape)))

    aligned, _ = shape_model.procrustes_generalized(gt_shapes)
    pdm = shape_model.build_pdm(aligned, config.n_modes)
    p0 = initial_params(pdm, crop_cfg)

    fitted = np.stack(
        [shape_model.fit_parameters(s, pdm, config.fit_iterations)[0] for s in gt_shapes]
    )
    ranges = (
        PerturbRanges.from_fitted_params(fitted) if config.perturb else PerturbRanges.identity()
    )
    current_p = np.tile(p0, (len(dataset), 1))
    return TrainingContext(
        pdm,
        p0,
        channels,
        gt_shapes,
        fitted,
        ranges,
        current_p,
        descriptor_window=config.descriptor_window,
        descriptor_grid=config.descriptor_grid,
    )


def compute_stage_targets(kind: str, ctx: TrainingContext):
    """Residual targets and their statistics for the next stage.

    Parametric: fitted ground-truth parameters minus current parameters.
    Explicit: ground-truth shape vector minus current shape vector, in the
    (x.., y..) layout.
    """
    if ctx.n_examples == 0:
        raise ValueError("empty dataset")
    if kind == KIND_PARAMETRIC:
        targets = ctx.fitted - ctx.current_p
    elif kind == KIND_EXPLICIT:
        if ctx.current_shapes is None:
            raise ValueError("explicit targets need current shapes; run the parametric phase")
        gt = np.stack([shape_model.shape_to_vector(s) for s in ctx.gt_shapes])
        current = np.stack([shape_model.shape_to_vector(s) for s in ctx.current_shapes])
        targets = gt - current
    else:
        raise ValueError(f"unknown stage kind {kind!r}")
    return targets, LeafStats.from_targets(targets)


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def init_stage(kind: str, stats: LeafStats, ctx: TrainingContext, config: TrainConfig, seed) -> CascadeStage:
    """Fresh soft stage: random projection plus Gaussian-leaf forest."""
    proj_seed, forest_seed = _as_seedseq(seed).spawn(2)
    input_len = features.descriptor_length(ctx.pdm.n_points, ctx.descriptor_grid)
    projection = dimred.init_projection(
        config.projection_dim,
        input_len,
        seed=proj_seed,
        init_range=config.init_range,
        eta=config.l1_eta,
        theta_trunc=config.truncation,
    )
    trees = (
        config.trees_per_parameter if kind == KIND_PARAMETRIC else config.trees_per_coordinate
    )
    forest = neural_forest.init_forest(
        stats,
        trees_per_dim=trees,
        depth=config.depth,
        input_dim=config.projection_dim,
        seed=forest_seed,
        init_range=config.init_range,
    )
    return CascadeStage(kind, projection, forest)


def train_stage(
    stage: CascadeStage,
    ctx: TrainingContext,
    updates: int,
    lr_base: float,
    perturb: PerturbRanges | None,
    seed,
) -> CascadeStage:
    """Joint SGD over a stage's projection and forest, then freeze.

    Each update samples an example, perturbs the scale/translation of its
    current estimate, extracts the descriptor there, runs
    projection + soft forest, steps the forest with per-dimension learning
    rates and the projection with the backpropagated truncated-gradient
    update. The returned stage is frozen (greedy routing, compacted
    projection).
    """
    if stage.frozen:
        raise ValueError("stage is already frozen")
    rng = np.random.default_rng(seed)
    perturb = perturb or PerturbRanges.identity()
    for _ in range(updates):
        i = int(rng.integers(ctx.n_examples))
        fx, fy, dx, dy = perturb.sample(rng)
        if stage.kind == KIND_PARAMETRIC:
            p_pert = perturb_params(ctx.current_p[i], fx, fy, dx, dy)
            shape = shape_model.synthesize(p_pert, ctx.pdm)
            target = ctx.fitted[i] - p_pert
        else:
            shape = perturb_shape(ctx.current_shapes[i], fx, fy, dx, dy)
            target = shape_model.shape_to_vector(
                ctx.gt_shapes[i]
            ) - shape_model.shape_to_vector(shape)
        x = ctx.descriptor(i, shape)
        z = dimred.project_dense(stage.projection, x)
        input_grad = neural_forest.forest_sgd_step(stage.forest, z, target, lr_base)
        dimred.update_truncated(stage.projection, x, input_grad, lr_base, z=z)
    neural_forest.freeze(stage.forest)
    dimred.compact(stage.projection)
    return stage


def advance_with_stage(stage: CascadeStage, ctx: TrainingContext) -> None:
    """Apply a frozen stage to every example's unperturbed state."""
    if not stage.frozen:
        raise ValueError("stage must be frozen before advancing the dataset")
    for i in range(ctx.n_examples):
        if stage.kind == KIND_PARAMETRIC:
            shape = shape_model.synthesize(ctx.current_p[i], ctx.pdm)
            x = ctx.descriptor(i, shape)
            z = dimred.project(stage.projection, x)
            ctx.current_p[i] += neural_forest.predict(stage.forest, z)
        else:
            shape = ctx.current_shapes[i]
            x = ctx.descriptor(i, shape)
            z = dimred.project(stage.projection, x)
            delta = neural_forest.predict(stage.forest, z)
            ctx.current_shapes[i] = shape + shape_model.vector_to_shape(delta)


def train_cascade(config: TrainConfig, dataset) -> CascadeModel:
    """Train the full cascade: parametric stages first, then explicit ones.

    Each stage is initialized from the residual statistics left by its
    frozen predecessors, trained with config.updates_per_stage SGD steps
    and frozen before the next stage's targets are computed. Deterministic
    given config.seed.
    """
    if config.parametric_stages < 0 or config.explicit_stages < 0:
        raise ValueError("stage counts must be non-negative")
    if config.parametric_stages + config.explicit_stages == 0:
        raise ValueError("cascade needs at least one stage")

    ctx = prepare_training(dataset, config)
    kinds = [KIND_PARAMETRIC] * config.parametric_stages + [KIND_EXPLICIT] * config.explicit_stages
    stage_seeds = np.random.SeedSequence(config.seed).spawn(len(kinds))

    stages = []
    for kind, seed in zip(kinds, stage_seeds):
        if kind == KIND_EXPLICIT and ctx.current_shapes is None:
            ctx.current_shapes = [
                shape_model.synthesize(p, ctx.pdm) for p in ctx.current_p
            ]
        init_seed, sgd_seed = seed.spawn(2)
        _, stats = compute_stage_targets(kind, ctx)
        stage = init_stage(kind, stats, ctx, config, init_seed)
        train_stage(
            stage,
            ctx,
            updates=config.updates_per_stage,
            lr_base=config.learning_rate,
            perturb=ctx.perturb if config.perturb else None,
            seed=sgd_seed,
        )
        advance_with_stage(stage, ctx)
        stages.append(stage)

    return CascadeModel(
        ctx.pdm,
        ctx.p0,
        stages,
        crop=CropConfig(config.crop_size, config.shape_fraction),
        descriptor_window=config.descriptor_window,
        descriptor_grid=config.descriptor_grid,
    )
