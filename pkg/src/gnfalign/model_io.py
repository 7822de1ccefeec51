"""Binary cascade-model container.

Little-endian throughout; all floating-point payloads are 64-bit. Layout:

    magic          8 bytes  b"GNFALIGN"
    version        u32      currently 1
    n_points       u32
    n_modes        u32
    mean shape     2N f64   (x.., y..) vector layout
    basis          2N*m f64 row-major
    eigenvalues    m f64
    crop size      u32
    crop fraction  f64
    window, grid   u32, u32 descriptor geometry
    p0             (m+5) f64
    n_stages       u32
    per stage:
      kind         u8   0 parametric, 1 explicit
      forest: output_dim u32, trees_per_dim u32, depth u32, input_dim u32,
              mode u8 (0 soft, 1 greedy), stats mean G f64, stats sigma G f64,
              beta n_trees*S*k f64, theta n_trees*S f64, leaves n_trees*L f64
      projection: output_dim u32, input_dim u32, eta f64, truncation f64,
              storage u8 (0 dense, 1 sparse rows)
              dense:  out*in f64 row-major
              sparse: per row, count u32 + count u32 indices + count f64 values

The sparse encoding is chosen automatically when more than half the
weights are zero. The loader rejects unknown magic bytes and versions.
"""

from __future__ import annotations

import struct

import numpy as np

from . import dimred
from .cascade import KIND_EXPLICIT, KIND_PARAMETRIC, CascadeModel, CascadeStage
from .crop import CropConfig
from .dimred import ProjectionLayer
from .neural_forest import MODE_GREEDY, MODE_SOFT, Forest, LeafStats
from .shape_model import Pdm, vector_to_shape

MAGIC = b"GNFALIGN"
VERSION = 1

_KIND_CODE = {KIND_PARAMETRIC: 0, KIND_EXPLICIT: 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}
_MODE_CODE = {MODE_SOFT: 0, MODE_GREEDY: 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


class ModelFormatError(ValueError):
    """The file is not a readable cascade-model container."""


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _u8(value: int) -> bytes:
    return struct.pack("<B", value)


def _f64(value: float) -> bytes:
    return struct.pack("<d", value)


def _array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def u32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.int64)


def _write_projection(out: list, layer: ProjectionLayer) -> None:
    out.append(_u32(layer.output_dim))
    out.append(_u32(layer.input_dim))
    out.append(_f64(layer.eta))
    out.append(_f64(layer.theta_trunc))
    if dimred.sparsity(layer) > 0.5:
        out.append(_u8(1))
        for r in range(layer.output_dim):
            cols = np.nonzero(layer.weights[r])[0]
            out.append(_u32(len(cols)))
            out.append(np.ascontiguousarray(cols, dtype="<u4").tobytes())
            out.append(_array(layer.weights[r, cols]))
    else:
        out.append(_u8(0))
        out.append(_array(layer.weights))


def _read_projection(r: _Reader) -> ProjectionLayer:
    output_dim = r.u32()
    input_dim = r.u32()
    eta = r.f64()
    trunc = r.f64()
    storage = r.u8()
    if storage == 0:
        weights = r.array(output_dim * input_dim).reshape(output_dim, input_dim)
    elif storage == 1:
        weights = np.zeros((output_dim, input_dim))
        for row in range(output_dim):
            count = r.u32()
            cols = r.u32_array(count)
            vals = r.array(count)
            weights[row, cols] = vals
    else:
        raise ModelFormatError(f"unknown projection storage code {storage}")
    layer = ProjectionLayer(weights, eta=eta, theta_trunc=trunc)
    dimred.compact(layer)
    return layer


def _write_forest(out: list, forest: Forest) -> None:
    out.append(_u32(forest.output_dim))
    out.append(_u32(forest.trees_per_dim))
    out.append(_u32(forest.depth))
    out.append(_u32(forest.input_dim))
    out.append(_u8(_MODE_CODE[forest.mode]))
    out.append(_array(forest.stats.mean))
    out.append(_array(forest.stats.sigma))
    out.append(_array(forest.beta))
    out.append(_array(forest.theta))
    out.append(_array(forest.leaves))


def _read_forest(r: _Reader) -> Forest:
    output_dim = r.u32()
    trees_per_dim = r.u32()
    depth = r.u32()
    input_dim = r.u32()
    mode_code = r.u8()
    if mode_code not in _MODE_NAME:
        raise ModelFormatError(f"unknown forest mode code {mode_code}")
    stats = LeafStats(r.array(output_dim), r.array(output_dim))
    n_trees = output_dim * trees_per_dim
    n_splits = 2**depth - 1
    n_leaves = 2**depth
    beta = r.array(n_trees * n_splits * input_dim).reshape(n_trees, n_splits, input_dim)
    theta = r.array(n_trees * n_splits).reshape(n_trees, n_splits)
    leaves = r.array(n_trees * n_leaves).reshape(n_trees, n_leaves)
    leaves.setflags(write=False)
    return Forest(
        beta, theta, leaves, output_dim, trees_per_dim, depth, stats, mode=_MODE_NAME[mode_code]
    )


def save_model(model: CascadeModel, path) -> None:
    out: list = [MAGIC, _u32(VERSION)]
    pdm = model.pdm
    out.append(_u32(pdm.n_points))
    out.append(_u32(pdm.n_modes))
    out.append(_array(pdm.mean_vector))
    out.append(_array(pdm.basis))
    out.append(_array(pdm.eigenvalues))
    out.append(_u32(model.crop.size))
    out.append(_f64(model.crop.shape_fraction))
    out.append(_u32(model.descriptor_window))
    out.append(_u32(model.descriptor_grid))
    out.append(_array(model.p0))
    out.append(_u32(len(model.stages)))
    for stage in model.stages:
        out.append(_u8(_KIND_CODE[stage.kind]))
        _write_forest(out, stage.forest)
        _write_projection(out, stage.projection)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_model(path) -> CascadeModel:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError("bad magic bytes: not a cascade model file")
    version = r.u32()
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version} (expected {VERSION})")
    n_points = r.u32()
    n_modes = r.u32()
    mean = vector_to_shape(r.array(2 * n_points))
    basis = r.array(2 * n_points * n_modes).reshape(2 * n_points, n_modes)
    eigenvalues = r.array(n_modes)
    pdm = Pdm(mean, basis, eigenvalues)
    crop = CropConfig(r.u32(), r.f64())
    window = r.u32()
    grid = r.u32()
    p0 = r.array(n_modes + 5)
    n_stages = r.u32()
    stages = []
    for _ in range(n_stages):
        kind_code = r.u8()
        if kind_code not in _KIND_NAME:
            raise ModelFormatError(f"unknown stage kind code {kind_code}")
        forest = _read_forest(r)
        projection = _read_projection(r)
        stages.append(CascadeStage(_KIND_NAME[kind_code], projection, forest))
    if r.pos != len(r.data):
        raise ModelFormatError(f"{len(r.data) - r.pos} trailing bytes after model payload")
    return CascadeModel(
        pdm, p0, stages, crop=crop, descriptor_window=window, descriptor_grid=grid
    )
