"""Bounding-box cropping and the canonical mean-shape placement.

A crop maps the bbox region of the source image onto a fixed-size square
through an affine point transform (half-pixel-center convention) and
bilinear resampling. The mean shape starts every alignment centered in
that square, scaled to a canonical fraction of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import shape_model
from .features import as_gray_image


@dataclass(frozen=True)
class CropConfig:
    size: int = 200
    shape_fraction: float = 0.7


@dataclass(frozen=True)
class CropTransform:
    """Affine map between source-image and crop coordinates.

    crop = (src - offset + 0.5) * scale - 0.5, per axis; the half-pixel
    terms keep pixel centers aligned under resampling.
    """

    offset_x: float
    offset_y: float
    scale_x: float
    scale_y: float

    def to_crop(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        x = (pts[..., 0] - self.offset_x + 0.5) * self.scale_x - 0.5
        y = (pts[..., 1] - self.offset_y + 0.5) * self.scale_y - 0.5
        return np.stack([x, y], axis=-1)

    def to_image(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        x = (pts[..., 0] + 0.5) / self.scale_x - 0.5 + self.offset_x
        y = (pts[..., 1] + 0.5) / self.scale_y - 0.5 + self.offset_y
        return np.stack([x, y], axis=-1)


def validate_bbox(image: np.ndarray, bbox) -> tuple[float, float, float, float]:
    bx, by, bw, bh = (float(v) for v in bbox)
    if bw <= 0 or bh <= 0:
        raise ValueError(f"bbox must have positive area, got w={bw} h={bh}")
    h, w = image.shape
    if bx + bw <= 0 or by + bh <= 0 or bx >= w or by >= h:
        raise ValueError("bbox lies fully outside the image")
    return bx, by, bw, bh


def crop_and_resize(image, bbox, size: int = 200):
    """Bilinear resize of the bbox region to size x size.

    Sampling is clamped at the image border, so bboxes overlapping the
    border read edge pixels. Returns (crop, CropTransform).
    """
    img = as_gray_image(image)
    bx, by, bw, bh = validate_bbox(img, bbox)
    h, w = img.shape
    sx = size / bw
    sy = size / bh

    # source sample positions of the crop pixel centers
    xs = bx + (np.arange(size) + 0.5) / sx - 0.5
    ys = by + (np.arange(size) + 0.5) / sy - 0.5
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0

    f = img.astype(np.float64)
    top = f[y0[:, None], x0[None, :]] * (1 - fx)[None, :] + f[y0[:, None], x1[None, :]] * fx[None, :]
    bot = f[y1[:, None], x0[None, :]] * (1 - fx)[None, :] + f[y1[:, None], x1[None, :]] * fx[None, :]
    vals = top * (1 - fy)[:, None] + bot * fy[:, None]
    crop = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return crop, CropTransform(bx, by, sx, sy)


def initial_params(pdm: shape_model.Pdm, config: CropConfig) -> np.ndarray:
    """Rigid parameters placing the mean shape centered in the crop.

    The mean shape is scaled so its larger bbox side spans
    shape_fraction * size, with no rotation or deformation.
    """
    mean = pdm.mean_shape
    extent = (mean.max(axis=0) - mean.min(axis=0)).max()
    if extent <= 0:
        raise ValueError("degenerate mean shape")
    alpha = config.shape_fraction * config.size / extent
    center = (mean.max(axis=0) + mean.min(axis=0)) / 2.0
    p0 = shape_model.identity_params(pdm.n_modes)
    p0[shape_model.ALPHA_X] = alpha
    p0[shape_model.ALPHA_Y] = alpha
    crop_center = (config.size - 1) / 2.0
    p0[shape_model.T_X] = crop_center - alpha * center[0]
    p0[shape_model.T_Y] = crop_center - alpha * center[1]
    return p0


def crop_and_init(image, bbox, pdm: shape_model.Pdm, config: CropConfig | None = None):
    """Crop + resize an example and compute the initial shape placement.

    Returns (crop, transform, p0) where synthesize(p0, pdm) is the mean
    shape centered in the crop.
    """
    config = config or CropConfig()
    crop, transform = crop_and_resize(image, bbox, config.size)
    return crop, transform, initial_params(pdm, config)
