"""Synthetic alignment datasets.

Shapes are drawn from a planted PDM (a stylized 68-point face layout by
default, plus smooth orthonormal deformation modes) under random
similarity transforms, small anisotropy and per-landmark jitter. Each
landmark is rendered as an oriented gradient blob whose direction is
fixed by its index, so shape-indexed descriptors carry both identity and
sub-window position of every landmark. Bounding boxes get independent
random padding per side, emulating detector noise.

Everything is drawn from one seeded generator in a fixed order, so a
(config, seed) pair maps to a byte-identical dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import shape_model
from ..cascade import TrainExample
from .io import AnnotatedExample, save_gray, save_manifest, save_pts

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class SynthConfig:
    count: int = 100
    n_points: int = 68
    image_size: int = 256
    n_modes: int = 4
    mode_sigma: float = 0.12  # std of each deformation coefficient
    rotation_range: float = 0.12  # radians
    extent_range: tuple[float, float] = (0.34, 0.46)  # face size / image size
    anisotropy_range: tuple[float, float] = (0.93, 1.07)
    center_jitter: float = 0.04  # fraction of image size
    landmark_jitter: float = 0.8  # px of non-PDM noise
    blob_radius: int = 7
    blob_contrast: float = 65.0
    pixel_noise: float = 2.0
    bbox_pad_range: tuple[float, float] = (0.08, 0.22)  # per side, of max(w, h)


def base_face_shape(n_points: int = 68) -> np.ndarray:
    """Canonical landmark layout in a unit frame (y grows downward).

    For 68 points this follows the usual markup topology: jaw arc,
    brows, nose, eyes, mouth. Other counts fall back to two concentric
    rings.
    """
    if n_points == 68:
        jaw_u = np.linspace(-1.0, 1.0, 17)
        jaw = np.column_stack(
            [0.45 * np.sin(jaw_u * np.pi / 2), 0.08 + 0.40 * np.cos(jaw_u * np.pi / 2)]
        )

        def brow(side):
            xs = side * np.linspace(0.35, 0.10, 5)
            ys = -0.27 - 0.03 * np.sin(np.linspace(0, np.pi, 5))
            return np.column_stack([xs, ys])

        bridge = np.column_stack([np.zeros(4), np.linspace(-0.18, 0.02, 4)])
        base = np.column_stack(
            [np.linspace(-0.08, 0.08, 5), 0.07 - 0.015 * np.cos(np.linspace(-1, 1, 5))]
        )

        def eye(cx):
            ang = np.linspace(0, 2 * np.pi, 6, endpoint=False)
            return np.column_stack([cx + 0.07 * np.cos(ang), -0.17 + 0.035 * np.sin(ang)])

        def mouth(rx, ry, count):
            ang = np.linspace(0, 2 * np.pi, count, endpoint=False)
            return np.column_stack([rx * np.cos(ang), 0.24 + ry * np.sin(ang)])

        return np.vstack(
            [jaw, brow(-1), brow(+1), bridge, base, eye(-0.22), eye(+0.22),
             mouth(0.14, 0.07, 12), mouth(0.09, 0.03, 8)]
        )

    n_outer = max(3, (2 * n_points) // 3)
    n_inner = n_points - n_outer
    ang_o = np.linspace(0, 2 * np.pi, n_outer, endpoint=False)
    pts = [np.column_stack([0.45 * np.cos(ang_o), 0.40 * np.sin(ang_o)])]
    if n_inner > 0:
        ang_i = np.linspace(0, 2 * np.pi, n_inner, endpoint=False) + 0.3
        pts.append(np.column_stack([0.25 * np.cos(ang_i), 0.18 * np.sin(ang_i)]))
    return np.vstack(pts)


def planted_pdm(n_points: int = 68, n_modes: int = 4) -> shape_model.Pdm:
    """Mean shape plus smooth orthonormal deformation modes.

    Modes are sinusoidal displacement fields in the angular coordinate of
    each landmark about the centroid, orthonormalized with QR; they are
    deterministic functions of the layout.
    """
    mean = base_face_shape(n_points)
    center = mean.mean(axis=0)
    phi = np.arctan2(mean[:, 1] - center[1], mean[:, 0] - center[0])
    cols = []
    for j in range(n_modes):
        dx = np.sin((j + 1) * phi + 0.7 * j)
        dy = np.cos((j + 2) * phi + 0.3 * j)
        cols.append(np.concatenate([dx, dy]))
    raw = np.column_stack(cols)
    q, _ = np.linalg.qr(raw)
    eigenvalues = np.full(n_modes, 1.0)
    return shape_model.Pdm(mean, q, eigenvalues)


def render_scene(shape, image_size: int, config: SynthConfig, rng) -> np.ndarray:
    """Paint oriented gradient blobs at the landmarks onto a flat canvas."""
    canvas = np.full((image_size, image_size), 128.0)
    rad = config.blob_radius
    sigma2 = 2.0 * (rad / 2.0) ** 2
    for i, (lx, ly) in enumerate(shape):
        theta = (i * GOLDEN_ANGLE) % np.pi
        c, s = np.cos(theta), np.sin(theta)
        ix, iy = int(round(lx)), int(round(ly))
        x0, x1 = max(ix - rad, 0), min(ix + rad + 1, image_size)
        y0, y1 = max(iy - rad, 0), min(iy + rad + 1, image_size)
        if x1 <= x0 or y1 <= y0:
            continue
        xs = np.arange(x0, x1) - lx
        ys = np.arange(y0, y1) - ly
        dist2 = ys[:, None] ** 2 + xs[None, :] ** 2
        proj = c * xs[None, :] + s * ys[:, None]
        canvas[y0:y1, x0:x1] += (
            config.blob_contrast * (proj / rad) * np.exp(-dist2 / sigma2)
        )
    if config.pixel_noise > 0:
        canvas += rng.normal(0.0, config.pixel_noise, size=canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def synth_examples(config: SynthConfig, seed) -> list[TrainExample]:
    """Generate the dataset in memory: (image, shape, bbox) per example."""
    rng = np.random.default_rng(seed)
    pdm = planted_pdm(config.n_points, config.n_modes)
    base_extent = (pdm.mean_shape.max(axis=0) - pdm.mean_shape.min(axis=0)).max()
    size = config.image_size
    margin = config.blob_radius + 4.0

    examples = []
    for _ in range(config.count):
        g = rng.normal(0.0, config.mode_sigma, size=config.n_modes)
        gamma = rng.uniform(-config.rotation_range, config.rotation_range)
        extent = rng.uniform(*config.extent_range)
        aniso = rng.uniform(*config.anisotropy_range)
        center_off = rng.uniform(-config.center_jitter, config.center_jitter, size=2) * size

        alpha = extent * size / base_extent
        p = shape_model.identity_params(config.n_modes)
        p[shape_model.ALPHA_X] = alpha * aniso
        p[shape_model.ALPHA_Y] = alpha / aniso
        p[shape_model.GAMMA] = gamma
        p[shape_model.N_RIGID :] = g
        shape = shape_model.synthesize(p, pdm)
        shape = shape + rng.normal(0.0, config.landmark_jitter, size=shape.shape)

        # shift into the frame: aim at the jittered center, clamp to keep
        # every blob inside the image
        target_center = np.array([size / 2.0, size / 2.0]) + center_off
        t = target_center - (shape.max(axis=0) + shape.min(axis=0)) / 2.0
        t_lo = margin - shape.min(axis=0)
        t_hi = (size - 1.0 - margin) - shape.max(axis=0)
        t = np.minimum(np.maximum(t, t_lo), t_hi)
        shape = shape + t

        image = render_scene(shape, size, config, rng)

        lo = shape.min(axis=0)
        hi = shape.max(axis=0)
        scale = float(max(hi[0] - lo[0], hi[1] - lo[1]))
        pads = rng.uniform(*config.bbox_pad_range, size=4) * scale  # l, t, r, b
        bx = max(lo[0] - pads[0], 0.0)
        by = max(lo[1] - pads[1], 0.0)
        bw = min(hi[0] + pads[2], size - 1.0) - bx
        bh = min(hi[1] + pads[3], size - 1.0) - by
        examples.append(TrainExample(image, shape, (bx, by, bw, bh)))
    return examples


def synth_generate(config: SynthConfig, seed, out_dir) -> list[AnnotatedExample]:
    """Generate and write a dataset: P5 images, pts files and manifest.tsv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    examples = synth_examples(config, seed)
    rows = []
    annotated = []
    for i, ex in enumerate(examples):
        img_name = f"img_{i:04d}.pgm"
        pts_name = f"img_{i:04d}.pts"
        save_gray(out / img_name, ex.image)
        save_pts(out / pts_name, ex.shape)
        rows.append((img_name, pts_name, *ex.bbox))
        annotated.append(
            AnnotatedExample(out / img_name, out / pts_name, ex.shape.copy(), ex.bbox)
        )
    save_manifest(out / "manifest.tsv", rows)
    return annotated
