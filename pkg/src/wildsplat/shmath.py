"""Real spherical-harmonics basis evaluation and SH-to-color recovery.

The basis uses the real SH constants conventional in graphics splatting
code (Condon-Shortley signs baked into the constants). Coefficient layout
is flattened in (l, m) row order: (0,0), (1,-1), (1,0), (1,1), (2,-2), ...
All serialization in this package depends on that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DEGREE = 3

_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SH_DC = _C0


def n_coeffs(degree_max: int) -> int:
    """Number of basis functions for a maximum degree."""
    return (degree_max + 1) ** 2


@dataclass
class Direction:
    """A unit direction vector; the constructor normalizes its input."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = np.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if norm < 1e-12:
            raise ValueError("direction has near-zero norm")
        self.x, self.y, self.z = self.x / norm, self.y / norm, self.z / norm

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass
class ShCoefficients:
    """Per-channel SH coefficients, shape (3, (degree_max+1)^2)."""

    degree_max: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        want = (3, n_coeffs(self.degree_max))
        if self.values.shape != want:
            raise ValueError(
                f"coefficient array has shape {self.values.shape}, expected {want}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("coefficient array contains non-finite values")


def _check_degree(degree_max: int) -> None:
    if not 0 <= degree_max <= MAX_DEGREE:
        raise ValueError(f"degree_max must be in [0, {MAX_DEGREE}], got {degree_max}")


def eval_sh_basis(dirs, degree_max: int) -> np.ndarray:
    """Evaluate the real SH basis Y_l^m at unit directions.

    Args:
        dirs: Direction, or array (..., 3) of unit vectors.
        degree_max: maximum band, 0..3.

    Returns:
        Array (..., (degree_max+1)^2) in (l, m) row order.
    """
    _check_degree(degree_max)
    if isinstance(dirs, Direction):
        dirs = dirs.as_array()
    dirs = np.asarray(dirs)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (n_coeffs(degree_max),), dtype=dirs.dtype)
    out[..., 0] = _C0
    if degree_max >= 1:
        out[..., 1] = -_C1 * y
        out[..., 2] = _C1 * z
        out[..., 3] = -_C1 * x
    if degree_max >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = _C2[0] * x * y
        out[..., 5] = _C2[1] * y * z
        out[..., 6] = _C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = _C2[3] * x * z
        out[..., 8] = _C2[4] * (xx - yy)
    if degree_max >= 3:
        out[..., 9] = _C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = _C3[1] * x * y * z
        out[..., 11] = _C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = _C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = _C3[5] * z * (xx - yy)
        out[..., 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh_basis_grad(dirs, degree_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Basis values plus their Jacobian with respect to the direction.

    The Jacobian differentiates the polynomial forms; callers composing with
    a normalization must chain through its Jacobian themselves.

    Returns:
        (basis (..., n), d_basis (..., n, 3)).
    """
    _check_degree(degree_max)
    if isinstance(dirs, Direction):
        dirs = dirs.as_array()
    dirs = np.asarray(dirs)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    n = n_coeffs(degree_max)
    basis = eval_sh_basis(dirs, degree_max)
    grad = np.zeros(dirs.shape[:-1] + (n, 3), dtype=dirs.dtype)
    if degree_max >= 1:
        grad[..., 1, 1] = -_C1
        grad[..., 2, 2] = _C1
        grad[..., 3, 0] = -_C1
    if degree_max >= 2:
        grad[..., 4, 0] = _C2[0] * y
        grad[..., 4, 1] = _C2[0] * x
        grad[..., 5, 1] = _C2[1] * z
        grad[..., 5, 2] = _C2[1] * y
        grad[..., 6, 0] = _C2[2] * (-2.0 * x)
        grad[..., 6, 1] = _C2[2] * (-2.0 * y)
        grad[..., 6, 2] = _C2[2] * (4.0 * z)
        grad[..., 7, 0] = _C2[3] * z
        grad[..., 7, 2] = _C2[3] * x
        grad[..., 8, 0] = _C2[4] * (2.0 * x)
        grad[..., 8, 1] = _C2[4] * (-2.0 * y)
    if degree_max >= 3:
        xx, yy, zz = x * x, y * y, z * z
        grad[..., 9, 0] = _C3[0] * 6.0 * x * y
        grad[..., 9, 1] = _C3[0] * (3.0 * xx - 3.0 * yy)
        grad[..., 10, 0] = _C3[1] * y * z
        grad[..., 10, 1] = _C3[1] * x * z
        grad[..., 10, 2] = _C3[1] * x * y
        grad[..., 11, 0] = _C3[2] * (-2.0 * x * y)
        grad[..., 11, 1] = _C3[2] * (4.0 * zz - xx - 3.0 * yy)
        grad[..., 11, 2] = _C3[2] * (8.0 * y * z)
        grad[..., 12, 0] = _C3[3] * (-6.0 * x * z)
        grad[..., 12, 1] = _C3[3] * (-6.0 * y * z)
        grad[..., 12, 2] = _C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        grad[..., 13, 0] = _C3[4] * (4.0 * zz - 3.0 * xx - yy)
        grad[..., 13, 1] = _C3[4] * (-2.0 * x * y)
        grad[..., 13, 2] = _C3[4] * (8.0 * x * z)
        grad[..., 14, 0] = _C3[5] * (2.0 * x * z)
        grad[..., 14, 1] = _C3[5] * (-2.0 * y * z)
        grad[..., 14, 2] = _C3[5] * (xx - yy)
        grad[..., 15, 0] = _C3[6] * (3.0 * xx - 3.0 * yy)
        grad[..., 15, 1] = _C3[6] * (-6.0 * x * y)
    return basis, grad


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sh_to_color(coeffs: ShCoefficients, dir: Direction) -> np.ndarray:
    """Recover an rgb color: sigmoid of per-channel coefficient-basis dot."""
    basis = eval_sh_basis(dir, coeffs.degree_max)
    logits = coeffs.values @ basis
    return sigmoid(logits)


def sh_to_color_gradient(
    coeffs: ShCoefficients, dir: Direction, upstream: np.ndarray
) -> np.ndarray:
    """Backward pass of sh_to_color: d(loss)/d(coeffs) from d(loss)/d(color).

    Returns an array shaped like coeffs.values.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    basis = eval_sh_basis(dir, coeffs.degree_max)
    logits = coeffs.values @ basis
    color = sigmoid(logits)
    dlogits = upstream * color * (1.0 - color)
    return np.outer(dlogits, basis)


def colors_from_sh(coeff_values: np.ndarray, dirs: np.ndarray, degree_max: int) -> np.ndarray:
    """Batched sh_to_color over tables: (N, 3, n) coeffs x (N, 3) dirs -> (N, 3)."""
    basis = eval_sh_basis(dirs, degree_max)
    logits = np.einsum("ncK,nK->nc", coeff_values, basis)
    return sigmoid(logits)
