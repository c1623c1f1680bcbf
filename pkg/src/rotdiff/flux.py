"""Flux functions coupling operator channels through a shared diffusivity.

The scalar diffusivity is the exponential Perona-Malik function

    g(s2) = exp(-s2 / (2 * contrast**2)),

evaluated on a sum of squared responses.  Three couplings are built from
it:

* ``uncoupled_flux``: g applied to each channel's own square — the
  classical per-channel baseline, which is not rotationally invariant.
* ``coupled_scalar_flux``: one g from the sum over all channels (all
  scales, all image channels the caller stacked in), multiplying every
  channel — rotationally invariant because the argument is the squared
  Euclidean norm of the response.
* ``coupled_tensor_flux``: a matrix diffusivity obtained by applying g to
  both eigenvalues of a structure tensor, multiplying each scale's
  gradient pair — invariant and direction-aware.

Structure tensors are symmetric 2x2 fields stored as 3 components
(xx, xy, yy) on axis -3.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Diffusivity",
    "IndefiniteTensorError",
    "eval_diffusivity",
    "diffusivity_energy",
    "coupled_scalar_flux",
    "uncoupled_flux",
    "accumulate_structure_tensor",
    "matrix_diffusivity",
    "coupled_tensor_flux",
]

# Relative slack accepted before a structure tensor counts as indefinite,
# and the eigenvalue gap under which the eigenbasis is treated as
# arbitrary (isotropic output).
PSD_TOLERANCE = 1e-9
DEGENERATE_TOLERANCE = 1e-12


class IndefiniteTensorError(ValueError):
    """A symmetric 2x2 field is indefinite beyond the PSD tolerance."""


@dataclass(frozen=True)
class Diffusivity:
    """Exponential diffusivity with contrast parameter lambda > 0."""

    contrast: float
    kind: str = "exponential"

    def __post_init__(self):
        if self.kind != "exponential":
            raise ValueError(f"unknown diffusivity kind {self.kind!r}")
        if not np.isfinite(self.contrast) or self.contrast <= 0:
            raise ValueError(f"contrast must be finite and > 0, got {self.contrast}")


def eval_diffusivity(d, s2):
    """g(s2) = exp(-s2 / (2 lambda^2)) for scalar or array s2 >= 0."""
    s2 = np.asarray(s2, dtype=np.float64)
    if np.any(s2 < 0):
        raise ValueError("diffusivity argument must be >= 0")
    out = np.exp(s2 / (-2.0 * d.contrast * d.contrast))
    return float(out) if out.ndim == 0 else out


def diffusivity_energy(d, s2):
    """Penalizer Psi with Psi' = g: 2 lambda^2 (1 - exp(-s2 / 2 lambda^2))."""
    s2 = np.asarray(s2, dtype=np.float64)
    if np.any(s2 < 0):
        raise ValueError("energy argument must be >= 0")
    two_l2 = 2.0 * d.contrast * d.contrast
    out = two_l2 * -np.expm1(s2 / -two_l2)
    return float(out) if out.ndim == 0 else out


def coupled_scalar_flux(d, resp):
    """One shared g from the sum of all squared channels, applied to each.

    ``resp`` holds channels on axis -3; the coupling argument sums over
    that whole axis, so stacking multiple scales or image channels couples
    them all.
    """
    resp = np.asarray(resp, dtype=np.float64)
    s2 = np.einsum("...chw,...chw->...hw", resp, resp)
    g = eval_diffusivity(d, s2)
    return resp * g[..., None, :, :]


def uncoupled_flux(d, resp):
    """g of each channel's own square, per channel (no coupling)."""
    resp = np.asarray(resp, dtype=np.float64)
    return resp * eval_diffusivity(d, resp * resp)


def accumulate_structure_tensor(resp, weights=None):
    """Sum of outer products of gradient pairs, optionally weighted per scale.

    ``resp`` must consist of (x, y) gradient pairs on axis -3 (an even
    channel count); pair ``l`` contributes ``weights[l] * (k k^T)`` where
    ``k`` is its per-pixel gradient.  Returns (xx, xy, yy) components on
    axis -3.  Summing over stacked image channels as well as scales is
    exactly the multi-channel coupling; pass weights tiled accordingly.
    """
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim < 3 or resp.shape[-3] % 2 != 0 or resp.shape[-3] == 0:
        raise ValueError(
            f"response must hold (x, y) gradient pairs on axis -3, got shape {resp.shape}"
        )
    npairs = resp.shape[-3] // 2
    kx = resp[..., 0::2, :, :]
    ky = resp[..., 1::2, :, :]
    if weights is None:
        w = np.ones(npairs)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (npairs,):
            raise ValueError(f"need {npairs} weights, got shape {w.shape}")
    wb = w[:, None, None]
    return np.stack(
        [
            np.einsum("...chw,...chw->...hw", kx * wb, kx),
            np.einsum("...chw,...chw->...hw", kx * wb, ky),
            np.einsum("...chw,...chw->...hw", ky * wb, ky),
        ],
        axis=-3,
    )


def _eigen2(a, b, c):
    """Eigenvalues (nu1 >= nu2) and principal-axis unit vector of [[a,b],[b,c]].

    The principal eigenvector is taken from the larger-magnitude row of
    (M - nu1 I), rotated 90 degrees; rows of that matrix are orthogonal to
    the nu1 eigenspace.  Near-degenerate pixels get an arbitrary axis; the
    caller masks them out.
    """
    half_diff = 0.5 * (a - c)
    disc = np.hypot(half_diff, b)
    mid = 0.5 * (a + c)
    nu1 = mid + disc
    nu2 = mid - disc
    r1x, r1y = a - nu1, b
    r2x, r2y = b, c - nu1
    use_r2 = r2x * r2x + r2y * r2y > r1x * r1x + r1y * r1y
    px = np.where(use_r2, r2x, r1x)
    py = np.where(use_r2, r2y, r1y)
    # Rotate the row by 90 degrees to land in its orthogonal complement.
    vx, vy = -py, px
    norm = np.hypot(vx, vy)
    safe = np.where(norm > 0, norm, 1.0)
    return nu1, nu2, vx / safe, vy / safe


def matrix_diffusivity(d, m):
    """Apply g to both eigenvalues of a symmetric PSD 2x2 field.

    Closed-form eigendecomposition; pixels whose eigenvalue gap is below
    ``DEGENERATE_TOLERANCE * (nu1 + 1)`` are emitted as ``g(nu1) * I``
    (the eigenbasis is arbitrary there).  Fields that are indefinite
    beyond ``PSD_TOLERANCE`` raise :class:`IndefiniteTensorError` naming
    the offending pixel.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 3 or m.shape[-3] != 3:
        raise ValueError(f"expected (xx, xy, yy) components on axis -3, got {m.shape}")
    a = m[..., 0, :, :]
    b = m[..., 1, :, :]
    c = m[..., 2, :, :]
    lin_tol = PSD_TOLERANCE * (np.abs(a) + np.abs(c) + 1.0)
    det_tol = PSD_TOLERANCE * (a + c + 1.0) ** 2
    bad = (a < -lin_tol) | (c < -lin_tol) | (a * c - b * b < -det_tol)
    if np.any(bad):
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        raise IndefiniteTensorError(
            f"indefinite structure tensor at pixel {tuple(int(i) for i in idx[-2:])}: "
            f"a={a[idx]:.6g} b={b[idx]:.6g} c={c[idx]:.6g}"
        )
    nu1, nu2, vx, vy = _eigen2(a, b, c)
    g1 = eval_diffusivity(d, np.maximum(nu1, 0.0))
    g2 = eval_diffusivity(d, np.maximum(nu2, 0.0))
    out_a = g1 * vx * vx + g2 * vy * vy
    out_b = (g1 - g2) * vx * vy
    out_c = g1 * vy * vy + g2 * vx * vx
    degenerate = nu1 - nu2 <= DEGENERATE_TOLERANCE * (nu1 + 1.0)
    out_a = np.where(degenerate, g1, out_a)
    out_b = np.where(degenerate, 0.0, out_b)
    out_c = np.where(degenerate, g1, out_c)
    return np.stack([out_a, out_b, out_c], axis=-3)


def coupled_tensor_flux(d, resp, st):
    """Multiply each gradient pair of ``resp`` by the matrix diffusivity of ``st``.

    The tensor field is shared across all pairs — that is the coupling.
    """
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim < 3 or resp.shape[-3] % 2 != 0 or resp.shape[-3] == 0:
        raise ValueError(
            f"response must hold (x, y) gradient pairs on axis -3, got shape {resp.shape}"
        )
    dd = matrix_diffusivity(d, st)
    da = dd[..., 0:1, :, :]
    db = dd[..., 1:2, :, :]
    dc = dd[..., 2:3, :, :]
    kx = resp[..., 0::2, :, :]
    ky = resp[..., 1::2, :, :]
    out = np.empty_like(resp)
    out[..., 0::2, :, :] = da * kx + db * ky
    out[..., 1::2, :, :] = db * kx + dc * ky
    return out
