"""Linear operator bank mapping images to stacked response channels.

Four operator kinds are supported, each with an exact discrete adjoint
with respect to :func:`rotdiff.grid.inner_product`:

``gradient``
    2 channels (d/dx, d/dy), central differences.
``laplacian``
    1 channel, standard 5-point Laplacian (self-adjoint).
``hessian``
    4 channels (xx, xy, yx, yy).  The two mixed channels are the same
    composed central difference, stored twice so downstream coupling sums
    weight them like the full set of second derivatives.
``multiscale_gradient``
    2 channels per scale: gain * Gaussian-smoothed central gradient,
    one (sigma, gain) pair per scale.  Gains may be negative; they enter
    the operator linearly and therefore squared in any quadratic coupling.

Responses are stacked along axis -3, so an image of shape (..., H, W)
maps to (..., C, H, W).
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    adjoint_central_diff_x,
    adjoint_central_diff_y,
    central_diff_x,
    central_diff_y,
    gaussian_convolve,
    require_grid,
    second_diff_x,
    second_diff_y,
)

try:
    from . import _fast
except ImportError:  # numba not installed; scipy path covers everything
    _fast = None

__all__ = ["OperatorSpec", "apply_operator", "apply_adjoint", "GRADIENT_LIKE_KINDS"]

_KINDS = ("gradient", "laplacian", "hessian", "multiscale_gradient")

# Kinds whose channels come in (x, y) gradient pairs per scale; only these
# can feed structure tensors or per-direction (uncoupled) fluxes.
GRADIENT_LIKE_KINDS = ("gradient", "multiscale_gradient")


@dataclass(frozen=True)
class OperatorSpec:
    """Description of one operator from the bank.

    Arguments
    ---------
    kind : str
        One of ``gradient``, ``laplacian``, ``hessian``,
        ``multiscale_gradient``.
    sigmas : tuple of float
        Smoothing scales, multiscale only.  Nonnegative, nondecreasing.
        (Equal neighboring scales are allowed; they duplicate a channel
        pair, which is occasionally useful for symmetry checks.)
    gains : tuple of float
        Per-scale multipliers, multiscale only; same length as sigmas.
    """

    kind: str
    sigmas: tuple = field(default=())
    gains: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "gains", tuple(float(b) for b in self.gains))
        if self.kind == "multiscale_gradient":
            if len(self.sigmas) < 1:
                raise ValueError("multiscale_gradient needs at least one scale")
            if len(self.sigmas) != len(self.gains):
                raise ValueError(
                    f"sigmas and gains must match: {len(self.sigmas)} vs {len(self.gains)}"
                )
            if any(s < 0 or not np.isfinite(s) for s in self.sigmas):
                raise ValueError(f"sigmas must be finite and >= 0: {self.sigmas}")
            if any(b2 < b1 for b1, b2 in zip(self.sigmas, self.sigmas[1:])):
                raise ValueError(f"sigmas must be nondecreasing: {self.sigmas}")
            if any(not np.isfinite(b) for b in self.gains):
                raise ValueError(f"gains must be finite: {self.gains}")
        elif self.sigmas or self.gains:
            raise ValueError(f"kind {self.kind!r} takes no sigmas/gains")

    @property
    def num_scales(self):
        if self.kind == "multiscale_gradient":
            return len(self.sigmas)
        return 1

    @property
    def num_channels(self):
        return {
            "gradient": 2,
            "laplacian": 1,
            "hessian": 4,
            "multiscale_gradient": 2 * len(self.sigmas),
        }[self.kind]

    @property
    def gradient_like(self):
        return self.kind in GRADIENT_LIKE_KINDS


def apply_operator(spec, u):
    """Apply the operator to an image; returns channels stacked on axis -3."""
    u = require_grid(u)
    if spec.kind == "gradient":
        return np.stack([central_diff_x(u), central_diff_y(u)], axis=-3)
    if spec.kind == "laplacian":
        return np.stack([second_diff_x(u) + second_diff_y(u)], axis=-3)
    if spec.kind == "hessian":
        mixed = central_diff_x(central_diff_y(u))
        return np.stack([second_diff_x(u), mixed, mixed, second_diff_y(u)], axis=-3)
    # multiscale_gradient: smooth both gradient channels per scale in one
    # pass by stacking them, then scale by the gain.
    grad = np.stack([central_diff_x(u), central_diff_y(u)], axis=-3)
    if _fast is not None and _fast.enabled():
        return _fast.smooth_gradient_bank(grad, spec.sigmas, spec.gains)
    parts = []
    for sigma, gain in zip(spec.sigmas, spec.gains):
        parts.append(gain * gaussian_convolve(grad, sigma))
    return np.concatenate(parts, axis=-3)


def apply_adjoint(spec, resp):
    """Apply the exact adjoint to a stacked response; returns an image.

    The Gaussian factor is self-adjoint (symmetric kernel, symmetric
    boundary extension), second differences are self-adjoint, and the
    central-difference adjoints are closed forms, so adjointness holds to
    rounding error by construction.
    """
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim < 3 or resp.shape[-3] != spec.num_channels:
        raise ValueError(
            f"response must have {spec.num_channels} channels on axis -3 "
            f"for kind {spec.kind!r}, got shape {resp.shape}"
        )
    if spec.kind == "gradient":
        return adjoint_central_diff_x(resp[..., 0, :, :]) + adjoint_central_diff_y(
            resp[..., 1, :, :]
        )
    if spec.kind == "laplacian":
        v = resp[..., 0, :, :]
        return second_diff_x(v) + second_diff_y(v)
    if spec.kind == "hessian":
        out = second_diff_x(resp[..., 0, :, :]) + second_diff_y(resp[..., 3, :, :])
        # (Dx Dy)^T = Dy^T Dx^T for both mixed channels.
        out += adjoint_central_diff_y(adjoint_central_diff_x(resp[..., 1, :, :]))
        out += adjoint_central_diff_y(adjoint_central_diff_x(resp[..., 2, :, :]))
        return out
    out = None
    for i, (sigma, gain) in enumerate(zip(spec.sigmas, spec.gains)):
        pair = gaussian_convolve(resp[..., 2 * i : 2 * i + 2, :, :], sigma)
        term = gain * (
            adjoint_central_diff_x(pair[..., 0, :, :])
            + adjoint_central_diff_y(pair[..., 1, :, :])
        )
        out = term if out is None else out + term
    return out
