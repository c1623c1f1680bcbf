"""Scalar image grids with reflecting boundaries.

Images are float64 arrays whose last two axes are (row, column) = (y, x);
any leading axes are treated as batch dimensions by every operation here.
Out-of-range samples are obtained by reflection about the grid edge with
the edge sample repeated: index -1 maps to 0, index n maps to n-1
(``i < 0 -> -i-1``, ``i >= n -> 2n-i-1``, applied repeatedly for far
overshoots).  This choice makes constants exactly invariant, keeps the
renormalized Gaussian mean-preserving, and gives difference operators
simple exact adjoints.
"""

import math

import numpy as np
from scipy.ndimage import correlate1d

__all__ = [
    "require_grid",
    "reflect_index",
    "gaussian_kernel1d",
    "gaussian_convolve",
    "central_diff_x",
    "central_diff_y",
    "adjoint_central_diff_x",
    "adjoint_central_diff_y",
    "second_diff_x",
    "second_diff_y",
    "inner_product",
]


def require_grid(u, name="image"):
    """Validate and return a float64 grid (last two axes >= 3, all finite)."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim < 2:
        raise ValueError(f"{name} must have at least 2 axes, got shape {u.shape}")
    if u.shape[-1] < 3 or u.shape[-2] < 3:
        raise ValueError(f"{name} must be at least 3x3, got shape {u.shape}")
    if not np.isfinite(u).all():
        raise ValueError(f"{name} contains non-finite values")
    return u


def reflect_index(i, n):
    """Map an integer sample index onto [0, n) by repeated edge reflection.

    Equivalent to indexing into the symmetric extension
    ``... c b a | a b c ... | c b a ...`` of a length-n signal.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    # The extension is 2n-periodic; fold once, then mirror the upper half.
    i = i % (2 * n)
    if i >= n:
        i = 2 * n - i - 1
    return i


def gaussian_kernel1d(sigma):
    """Sampled Gaussian kernel, truncated at radius ceil(3*sigma), sum = 1."""
    if not math.isfinite(sigma) or sigma < 0:
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    if radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_convolve(u, sigma):
    """Separable Gaussian smoothing with reflecting boundaries.

    ``sigma = 0`` returns an unmodified copy.  The kernel is the sampled,
    renormalized Gaussian from :func:`gaussian_kernel1d`; because it is
    symmetric and the boundary extension is symmetric, the induced linear
    operator is self-adjoint and preserves the image mean.
    """
    if not math.isfinite(sigma) or sigma < 0:
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    u = np.asarray(u, dtype=np.float64)
    if sigma == 0.0:
        return u.copy()
    k = gaussian_kernel1d(sigma)
    if k.size == 1:
        return u.copy()
    out = correlate1d(u, k, axis=-1, mode="reflect")
    return correlate1d(out, k, axis=-2, mode="reflect")


def central_diff_x(u):
    """Central difference along x (last axis), (u[i+1] - u[i-1]) / 2.

    With reflecting boundaries the first and last columns reduce to
    one-sided half differences.
    """
    u = np.asarray(u)
    d = np.empty_like(u, dtype=np.float64)
    d[..., :, 1:-1] = 0.5 * (u[..., :, 2:] - u[..., :, :-2])
    d[..., :, 0] = 0.5 * (u[..., :, 1] - u[..., :, 0])
    d[..., :, -1] = 0.5 * (u[..., :, -1] - u[..., :, -2])
    return d


def central_diff_y(u):
    """Central difference along y (second-to-last axis)."""
    u = np.asarray(u)
    d = np.empty_like(u, dtype=np.float64)
    d[..., 1:-1, :] = 0.5 * (u[..., 2:, :] - u[..., :-2, :])
    d[..., 0, :] = 0.5 * (u[..., 1, :] - u[..., 0, :])
    d[..., -1, :] = 0.5 * (u[..., -1, :] - u[..., -2, :])
    return d


def adjoint_central_diff_x(v):
    """Exact transpose of :func:`central_diff_x` w.r.t. the grid inner product.

    Interior columns equal the negated central difference; only the two
    boundary columns pick up corrections from the reflected samples.
    """
    v = np.asarray(v)
    a = -central_diff_x(v)
    a[..., :, 0] = -0.5 * (v[..., :, 0] + v[..., :, 1])
    a[..., :, -1] = 0.5 * (v[..., :, -2] + v[..., :, -1])
    return a


def adjoint_central_diff_y(v):
    """Exact transpose of :func:`central_diff_y`."""
    v = np.asarray(v)
    a = -central_diff_y(v)
    a[..., 0, :] = -0.5 * (v[..., 0, :] + v[..., 1, :])
    a[..., -1, :] = 0.5 * (v[..., -2, :] + v[..., -1, :])
    return a


def second_diff_x(u):
    """Second difference along x, u[i+1] - 2 u[i] + u[i-1]; self-adjoint."""
    u = np.asarray(u)
    s = np.empty_like(u, dtype=np.float64)
    s[..., :, 1:-1] = u[..., :, 2:] - 2.0 * u[..., :, 1:-1] + u[..., :, :-2]
    s[..., :, 0] = u[..., :, 1] - u[..., :, 0]
    s[..., :, -1] = u[..., :, -2] - u[..., :, -1]
    return s


def second_diff_y(u):
    """Second difference along y; self-adjoint."""
    u = np.asarray(u)
    s = np.empty_like(u, dtype=np.float64)
    s[..., 1:-1, :] = u[..., 2:, :] - 2.0 * u[..., 1:-1, :] + u[..., :-2, :]
    s[..., 0, :] = u[..., 1, :] - u[..., 0, :]
    s[..., -1, :] = u[..., -2, :] - u[..., -1, :]
    return s


def inner_product(a, b):
    """Euclidean inner product sum(a * b) over identically shaped grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))
