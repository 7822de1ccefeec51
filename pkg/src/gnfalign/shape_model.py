"""Parametric shape model.

A shape is an (N, 2) float array of landmark positions in pixels, with a
fixed point ordering. Its parametric form is

    s(p) = diag(ax, ay) @ R(gamma) @ (s0 + Phi @ g) + t

with p = (ax, ay, gamma, tx, ty, g_1 .. g_m): two per-axis scales, a
rotation angle, a translation and m deformation coefficients in the space
of a PCA basis Phi built from Procrustes-aligned training shapes.

Shape vectors are laid out as (x_1 .. x_N, y_1 .. y_N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Indices of the rigid entries in a parameter vector.
ALPHA_X, ALPHA_Y, GAMMA, T_X, T_Y = range(5)
N_RIGID = 5


def as_shape(points, n_points: int | None = None) -> np.ndarray:
    """Validate and return landmark points as an (N, 2) float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"shape must be (N, 2), got {pts.shape}")
    if pts.shape[0] < 3:
        raise ValueError(f"shape needs at least 3 points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("shape contains non-finite coordinates")
    if n_points is not None and pts.shape[0] != n_points:
        raise ValueError(f"expected {n_points} points, got {pts.shape[0]}")
    return pts


def shape_to_vector(shape: np.ndarray) -> np.ndarray:
    """Flatten an (N, 2) shape into (x_1..x_N, y_1..y_N)."""
    shape = np.asarray(shape, dtype=np.float64)
    return np.concatenate([shape[:, 0], shape[:, 1]])


def vector_to_shape(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`shape_to_vector`."""
    vec = np.asarray(vec, dtype=np.float64)
    n = vec.shape[0] // 2
    return np.column_stack([vec[:n], vec[n:]])


@dataclass(frozen=True)
class RigidTransform:
    """Similarity transform: p' = diag(scale_x, scale_y) @ R(angle) @ p + t."""

    scale_x: float
    scale_y: float
    angle: float
    t_x: float
    t_y: float

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(1.0, 1.0, 0.0, 0.0, 0.0)

    def apply(self, shape: np.ndarray) -> np.ndarray:
        pts = np.asarray(shape, dtype=np.float64)
        c, s = np.cos(self.angle), np.sin(self.angle)
        x = self.scale_x * (c * pts[:, 0] - s * pts[:, 1]) + self.t_x
        y = self.scale_y * (s * pts[:, 0] + c * pts[:, 1]) + self.t_y
        return np.column_stack([x, y])


@dataclass(frozen=True)
class Pdm:
    """Point distribution model: mean shape plus an orthonormal deformation basis.

    basis has shape (2N, m) in the (x.., y..) vector layout; eigenvalues are
    the per-mode variances of the training set, sorted descending.
    """

    mean_shape: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        for arr in (self.mean_shape, self.basis, self.eigenvalues):
            arr.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.mean_shape.shape[0]

    @property
    def n_modes(self) -> int:
        return self.basis.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_modes + N_RIGID

    @property
    def mean_vector(self) -> np.ndarray:
        return shape_to_vector(self.mean_shape)


def identity_params(n_modes: int) -> np.ndarray:
    """Parameter vector mapping the PDM mean shape to itself."""
    p = np.zeros(N_RIGID + n_modes)
    p[ALPHA_X] = 1.0
    p[ALPHA_Y] = 1.0
    return p


def procrustes_align(shape, reference):
    """Optimally align `shape` to `reference` with a uniform-scale similarity.

    Returns (aligned, rigid) where aligned minimizes the summed squared
    distance to the reference over rotation, uniform scale and translation,
    and rigid is the removed transform: rigid.apply(aligned) reproduces the
    input shape.
    """
    src = as_shape(shape)
    ref = as_shape(reference, n_points=src.shape[0])

    mu_src = src.mean(axis=0)
    mu_ref = ref.mean(axis=0)
    xc = src - mu_src
    yc = ref - mu_ref
    norm_src = np.linalg.norm(xc)
    if np.linalg.norm(yc) < 1e-12:
        raise ValueError("degenerate reference: all points coincident")
    if norm_src < 1e-12:
        raise ValueError("degenerate shape: all points coincident")

    # Least-squares rotation via SVD of the 2x2 cross-covariance.
    m = xc.T @ yc
    u, sing, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, d]) @ u.T
    scale = (sing[0] + d * sing[1]) / (norm_src**2)

    aligned = scale * (xc @ r.T) + mu_ref

    gamma = np.arctan2(r[1, 0], r[0, 0])
    inv_scale = 1.0 / scale
    c, s = np.cos(-gamma), np.sin(-gamma)
    # shape = (1/scale) R(-gamma) (aligned - mu_ref) + mu_src
    tx = mu_src[0] - inv_scale * (c * mu_ref[0] - s * mu_ref[1])
    ty = mu_src[1] - inv_scale * (s * mu_ref[0] + c * mu_ref[1])
    rigid = RigidTransform(inv_scale, inv_scale, -gamma, tx, ty)
    return aligned, rigid


def procrustes_generalized(shapes, max_iterations: int = 20, tol: float = 1e-12):
    """Iteratively align a set of shapes to their evolving mean.

    The mean is gauge-fixed to zero centroid and unit Frobenius norm.
    Returns (aligned_shapes, mean_shape).
    """
    shapes = [as_shape(s) for s in shapes]
    if len(set(s.shape[0] for s in shapes)) > 1:
        raise ValueError("all shapes must have the same point count")

    def normalize(s):
        s = s - s.mean(axis=0)
        return s / np.linalg.norm(s)

    mean = normalize(shapes[0])
    aligned = list(shapes)
    for _ in range(max_iterations):
        aligned = [procrustes_align(s, mean)[0] for s in aligned]
        new_mean = normalize(np.mean(aligned, axis=0))
        if np.abs(new_mean - mean).max() < tol:
            mean = new_mean
            break
        mean = new_mean
    return aligned, mean


def build_pdm(shapes, n_modes: int) -> Pdm:
    """PCA over aligned shapes: mean plus the top `n_modes` principal directions.

    Shapes are expected to be Procrustes-aligned already (see
    :func:`procrustes_generalized`).
    """
    shapes = [as_shape(s) for s in shapes]
    n = shapes[0].shape[0]
    for s in shapes:
        if s.shape[0] != n:
            raise ValueError("all shapes must have the same point count")
    if n_modes > 2 * n:
        raise ValueError(f"n_modes={n_modes} exceeds shape dimension {2 * n}")
    if n_modes >= len(shapes):
        raise ValueError(
            f"n_modes={n_modes} requires at least {n_modes + 1} shapes, got {len(shapes)}"
        )

    data = np.stack([shape_to_vector(s) for s in shapes])
    mean_vec = data.mean(axis=0)
    centered = data - mean_vec
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:n_modes].T.copy()
    eigenvalues = (sing[:n_modes] ** 2) / max(len(shapes) - 1, 1)
    return Pdm(vector_to_shape(mean_vec), basis, eigenvalues)


def _deformed_mean(p: np.ndarray, pdm: Pdm) -> tuple[np.ndarray, np.ndarray]:
    g = p[N_RIGID:]
    if g.shape[0] != pdm.n_modes:
        raise ValueError(f"parameter vector has {g.shape[0]} modes, PDM has {pdm.n_modes}")
    q = pdm.mean_vector + pdm.basis @ g
    n = pdm.n_points
    return q[:n], q[n:]


def synthesize(p: np.ndarray, pdm: Pdm) -> np.ndarray:
    """Evaluate the shape model: diag(ax, ay) R(gamma) (s0 + Phi g) + t."""
    p = np.asarray(p, dtype=np.float64)
    qx, qy = _deformed_mean(p, pdm)
    c, s = np.cos(p[GAMMA]), np.sin(p[GAMMA])
    x = p[ALPHA_X] * (c * qx - s * qy) + p[T_X]
    y = p[ALPHA_Y] * (s * qx + c * qy) + p[T_Y]
    return np.column_stack([x, y])


def shape_jacobian(p: np.ndarray, pdm: Pdm) -> np.ndarray:
    """Analytic Jacobian of the synthesized shape vector w.r.t. p.

    Rows follow the (x.., y..) vector layout, columns the parameter order
    (ax, ay, gamma, tx, ty, g_1..g_m); shape (2N, m+5).
    """
    p = np.asarray(p, dtype=np.float64)
    qx, qy = _deformed_mean(p, pdm)
    n = pdm.n_points
    c, s = np.cos(p[GAMMA]), np.sin(p[GAMMA])
    ax, ay = p[ALPHA_X], p[ALPHA_Y]
    phi_x = pdm.basis[:n]
    phi_y = pdm.basis[n:]

    jac = np.zeros((2 * n, pdm.n_params))
    rot_x = c * qx - s * qy
    rot_y = s * qx + c * qy
    jac[:n, ALPHA_X] = rot_x
    jac[n:, ALPHA_Y] = rot_y
    jac[:n, GAMMA] = ax * (-s * qx - c * qy)
    jac[n:, GAMMA] = ay * rot_x
    jac[:n, T_X] = 1.0
    jac[n:, T_Y] = 1.0
    jac[:n, N_RIGID:] = ax * (c * phi_x - s * phi_y)
    jac[n:, N_RIGID:] = ay * (s * phi_x + c * phi_y)
    return jac


def fit_parameters(target, pdm: Pdm, iterations: int = 100):
    """Recover a parameter vector for a target shape by Gauss-Newton descent.

    Initialized from a uniform-scale Procrustes fit of the PDM mean shape,
    then refined with damped Gauss-Newton steps:

        p <- p + (J'J + lam I)^-1 J' (target - s(p))

    lam starts at 1e-8 tr(J'J)/(m+5) and is multiplied by 10 whenever a step
    is non-finite or increases the residual, so a singular J'J degrades to a
    small gradient step instead of failing.

    Returns (p, residual) with residual the final 2-norm of target - s(p).
    """
    tgt = as_shape(target, n_points=pdm.n_points)
    tvec = shape_to_vector(tgt)

    # Aligning the target onto the mean makes the removed transform exactly
    # the similarity that carries the mean shape onto the target.
    _, rigid = procrustes_align(tgt, pdm.mean_shape)
    p = identity_params(pdm.n_modes)
    p[ALPHA_X] = rigid.scale_x
    p[ALPHA_Y] = rigid.scale_y
    p[GAMMA] = rigid.angle
    p[T_X] = rigid.t_x
    p[T_Y] = rigid.t_y

    residual = tvec - shape_to_vector(synthesize(p, pdm))
    obj = float(residual @ residual)
    n_params = pdm.n_params
    for _ in range(max(1, iterations)):
        jac = shape_jacobian(p, pdm)
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        lam = 1e-8 * np.trace(jtj) / n_params
        step_taken = False
        for _ in range(40):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(n_params), jtr)
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-12)
                continue
            candidate = p + delta
            cand_res = tvec - shape_to_vector(synthesize(candidate, pdm))
            cand_obj = float(cand_res @ cand_res)
            if np.isfinite(cand_obj) and cand_obj <= obj:
                p, residual, obj = candidate, cand_res, cand_obj
                step_taken = True
                break
            lam = max(lam * 10.0, 1e-12)
        if not step_taken:
            break
        if np.abs(delta).max() < 1e-13 * max(1.0, np.abs(p).max()):
            break
    return p, float(np.sqrt(obj))
