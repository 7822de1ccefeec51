"""Shape-indexed descriptors from orientation integral channels.

The face crop is reduced once to ten summed-area tables: gradient
magnitude hard-assigned to nine unsigned orientation bins over [0, pi),
plus the total magnitude. Any axis-aligned rectangle sum then costs four
lookups, so the per-landmark descriptor (a 4x4 grid of 10x10-pixel cells
inside a 40-pixel window, 9 bins per cell, L2-normalized) is independent
of window size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BINS = 9
MAGNITUDE = N_BINS  # channel index of the total-magnitude table
DESCRIPTOR_WINDOW = 40
DESCRIPTOR_GRID = 4


@dataclass(frozen=True)
class IntegralChannels:
    """Summed-area tables, one per channel, each (height+1, width+1)."""

    tables: np.ndarray  # (N_BINS + 1, height + 1, width + 1)

    def __post_init__(self):
        self.tables.setflags(write=False)

    @property
    def height(self) -> int:
        return self.tables.shape[1] - 1

    @property
    def width(self) -> int:
        return self.tables.shape[2] - 1

    def rect_sum(self, channel: int, x0: int, y0: int, x1: int, y1: int) -> float:
        """Channel sum over pixels [x0, x1) x [y0, y1), clamped to the image."""
        t = self.tables[channel]
        x0 = min(max(x0, 0), self.width)
        x1 = min(max(x1, 0), self.width)
        y0 = min(max(y0, 0), self.height)
        y1 = min(max(y1, 0), self.height)
        if x1 <= x0 or y1 <= y0:
            return 0.0
        return float(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])


def as_gray_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 intensities, got {img.dtype}")
    return img


def compute_channels(image) -> IntegralChannels:
    """Build the orientation-bin and magnitude integral channels of an image.

    Gradients are central differences (one-sided at borders); each pixel's
    magnitude goes entirely to the bin containing its unsigned orientation.
    """
    img = as_gray_image(image)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError(f"image too small for gradients: {w}x{h}")

    f = img.astype(np.float64)
    gx = np.empty_like(f)
    gy = np.empty_like(f)
    gx[:, 1:-1] = 0.5 * (f[:, 2:] - f[:, :-2])
    gx[:, 0] = f[:, 1] - f[:, 0]
    gx[:, -1] = f[:, -1] - f[:, -2]
    gy[1:-1, :] = 0.5 * (f[2:, :] - f[:-2, :])
    gy[0, :] = f[1, :] - f[0, :]
    gy[-1, :] = f[-1, :] - f[-2, :]

    mag = np.hypot(gx, gy)
    orient = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.clip((orient * (N_BINS / np.pi)).astype(np.int64), 0, N_BINS - 1)

    flat = bins.ravel() * (h * w) + np.arange(h * w)
    binned = np.bincount(flat, weights=mag.ravel(), minlength=N_BINS * h * w)
    binned = binned.reshape(N_BINS, h, w)

    tables = np.zeros((N_BINS + 1, h + 1, w + 1))
    tables[:N_BINS, 1:, 1:] = binned.cumsum(axis=1).cumsum(axis=2)
    tables[MAGNITUDE, 1:, 1:] = mag.cumsum(axis=0).cumsum(axis=1)
    return IntegralChannels(tables)


def _cell_bounds(points: np.ndarray, channels: IntegralChannels, window: int, grid: int):
    """Clamped cell boundary indices for each point: (n, grid+1) x and y."""
    cell = window // grid
    half = window // 2
    cx = np.rint(points[:, 0]).astype(np.int64)
    cy = np.rint(points[:, 1]).astype(np.int64)
    offsets = np.arange(grid + 1, dtype=np.int64) * cell - half
    bx = np.clip(cx[:, None] + offsets[None, :], 0, channels.width)
    by = np.clip(cy[:, None] + offsets[None, :], 0, channels.height)
    return bx, by


def _cell_histograms(
    channels: IntegralChannels, points: np.ndarray, window: int, grid: int
) -> np.ndarray:
    """(n_points, grid, grid, N_BINS) orientation-bin sums of every cell."""
    bx, by = _cell_bounds(points, channels, window, grid)
    x0 = bx[:, None, :-1]
    x1 = bx[:, None, 1:]
    y0 = by[:, :-1, None]
    y1 = by[:, 1:, None]
    t = channels.tables[:N_BINS]
    sums = t[:, y1, x1] - t[:, y0, x1] - t[:, y1, x0] + t[:, y0, x0]
    return np.moveaxis(sums, 0, -1)


def _normalize_blocks(desc: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(desc, axis=-1, keepdims=True)
    return desc / np.where(norms > 0.0, norms, 1.0)


def extract_point_descriptor(
    channels: IntegralChannels,
    point,
    window: int = DESCRIPTOR_WINDOW,
    grid: int = DESCRIPTOR_GRID,
    normalize: bool = True,
) -> np.ndarray:
    """Orientation histogram descriptor of one window, flattened.

    The window is centered on the (rounded) point; cells outside the image
    contribute zeros. Layout: cell row, cell column, then bin. The
    descriptor is L2-normalized unless it is all-zero (constant region or
    point fully outside the image), which stays zero.
    """
    if window % grid != 0:
        raise ValueError(f"window {window} not divisible into {grid} cells")
    pt = np.asarray(point, dtype=np.float64).reshape(1, 2)
    hist = _cell_histograms(channels, pt, window, grid).reshape(-1)
    if normalize:
        hist = _normalize_blocks(hist[None, :])[0]
    return hist


def shape_descriptor(
    channels: IntegralChannels,
    shape: np.ndarray,
    window: int = DESCRIPTOR_WINDOW,
    grid: int = DESCRIPTOR_GRID,
) -> np.ndarray:
    """Concatenated per-landmark descriptors, in landmark order."""
    if window % grid != 0:
        raise ValueError(f"window {window} not divisible into {grid} cells")
    pts = np.asarray(shape, dtype=np.float64)
    hists = _cell_histograms(channels, pts, window, grid)
    n = pts.shape[0]
    desc = hists.reshape(n, -1)
    return _normalize_blocks(desc).reshape(-1)


def descriptor_length(n_points: int, grid: int = DESCRIPTOR_GRID) -> int:
    return n_points * grid * grid * N_BINS
