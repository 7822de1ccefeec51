"""Single-layer descriptor projection trained jointly with the forests.

Maps the high-dimensional shape descriptor x to z = tanh(W x) (no bias).
Weights learn from the forest's backpropagated input gradient with an
optional L1 term and hard truncation: after each step any weight smaller
in magnitude than the truncation threshold becomes exactly zero, so the
matrix ends up genuinely sparse and can be evaluated through a
compressed row representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import sparse_rows_matvec, truncated_weight_update


@dataclass
class ProjectionLayer:
    """tanh projection with truncated-gradient L1 sparsification."""

    weights: np.ndarray  # (output_dim, input_dim)
    eta: float = 0.0
    theta_trunc: float = 0.0
    _indptr: np.ndarray | None = field(default=None, repr=False)
    _indices: np.ndarray | None = field(default=None, repr=False)
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def sparse_ready(self) -> bool:
        return self._indptr is not None


def init_projection(
    output_dim: int,
    input_dim: int,
    seed,
    init_range: float = 0.01,
    eta: float = 0.0,
    theta_trunc: float = 0.0,
) -> ProjectionLayer:
    """Random layer with weights from U[-init_range, init_range]."""
    if output_dim < 1 or input_dim < 1:
        raise ValueError("output_dim and input_dim must be positive")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-init_range, init_range, size=(output_dim, input_dim))
    return ProjectionLayer(weights, eta=eta, theta_trunc=theta_trunc)


def sparsity(layer: ProjectionLayer) -> float:
    """Fraction of exactly-zero weights."""
    return float(np.count_nonzero(layer.weights == 0.0) / layer.weights.size)


def project_dense(layer: ProjectionLayer, x: np.ndarray) -> np.ndarray:
    """z = tanh(W x) through the dense matrix."""
    x = _check_input(layer, x)
    return np.tanh(layer.weights @ x)


def project_sparse(layer: ProjectionLayer, x: np.ndarray) -> np.ndarray:
    """z = tanh(W x) through the compressed row representation."""
    x = _check_input(layer, x)
    if not layer.sparse_ready:
        compact(layer, force=True)
    out = np.empty(layer.output_dim)
    sparse_rows_matvec(layer._indptr, layer._indices, layer._values, x, out)
    return np.tanh(out)


def project(layer: ProjectionLayer, x: np.ndarray) -> np.ndarray:
    """Forward pass; uses the sparse path when one has been compacted."""
    if layer.sparse_ready:
        return project_sparse(layer, x)
    return project_dense(layer, x)


def compact(layer: ProjectionLayer, force: bool = False) -> bool:
    """Build the compressed row representation when it pays off.

    Engaged when more than half the weights are zero (or force=True).
    Returns whether the sparse path is now active. Training updates drop
    the representation again; call compact() after the layer is frozen.
    """
    if not force and sparsity(layer) <= 0.5:
        _invalidate(layer)
        return False
    rows, cols = np.nonzero(layer.weights)
    layer._values = np.ascontiguousarray(layer.weights[rows, cols])
    layer._indices = np.ascontiguousarray(cols.astype(np.int64))
    indptr = np.zeros(layer.output_dim + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=layer.output_dim), out=indptr[1:])
    layer._indptr = indptr
    return True


def update_truncated(
    layer: ProjectionLayer,
    x: np.ndarray,
    grad_z: np.ndarray,
    lr: float,
    z: np.ndarray | None = None,
) -> ProjectionLayer:
    """One truncated-gradient step: W <- T(W - lr dE/dW - lr eta sgn(W), trunc).

    grad_z is the error gradient at the layer output (the forest's averaged
    input gradient); dz_j/dw_jc = x_c (1 - z_j^2). Pass the forward-pass z
    to avoid recomputing it. Updates weights in place and returns the layer.
    """
    x = _check_input(layer, x)
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != (layer.output_dim,):
        raise ValueError(f"grad_z length {grad_z.shape} != ({layer.output_dim},)")
    if z is None:
        z = project_dense(layer, x)
    grad_pre = grad_z * (1.0 - z**2)
    truncated_weight_update(
        layer.weights, grad_pre, x, float(lr), float(layer.eta), float(layer.theta_trunc)
    )
    _invalidate(layer)
    return layer


def _check_input(layer: ProjectionLayer, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (layer.input_dim,):
        raise ValueError(f"input length {x.shape} != ({layer.input_dim},)")
    return x


def _invalidate(layer: ProjectionLayer) -> None:
    layer._indptr = None
    layer._indices = None
    layer._values = None
