"""Explicit diffusion steps built from operator bank + coupled fluxes.

One step of the update

    u' = u - tau * sum_l w_l K_l^T Phi(u, K_l u)

where K_l are the operator's per-scale channels, w_l are scale weights
(for a multiscale operator the default is the forward difference of the
sigma ladder, last weight repeated), and Phi is one of the couplings from
:mod:`rotdiff.flux`.  Two interchangeable backends realize the divergence
term:

``adjoint``
    Literal composition: apply the operator, the flux, then the exact
    adjoint.  Works for every operator kind and coupling.
``stencil``
    A 3x3 divergence stencil ``div(D grad u)`` with blending parameters
    alpha (axial vs diagonal mass) and gamma (mixed-term allocation),
    where D is built per scale from the same multiscale coupling
    argument: D_l = gain_l^2 * D_shared.  Gradient-like operators only.
    The scale sum then collapses by positive homogeneity of the stencil
    weights, sum_l w_l gain_l^2 * S(D, u) (see ``_step_stencil``).

All public entry points accept leading batch axes; images evolve
independently element-wise, so a batched call equals per-image calls.
"""

import math
from dataclasses import dataclass

import numpy as np

from .flux import (
    Diffusivity,
    accumulate_structure_tensor,
    coupled_scalar_flux,
    coupled_tensor_flux,
    eval_diffusivity,
    matrix_diffusivity,
    uncoupled_flux,
)
from .grid import central_diff_x, central_diff_y, require_grid
from .operators import OperatorSpec, apply_adjoint, apply_operator

try:
    from . import _fast
except ImportError:  # numba not installed; the numpy path covers everything
    _fast = None

__all__ = [
    "BlockConfig",
    "NumericalBlowupError",
    "default_scale_weights",
    "diffusion_step",
    "multichannel_step",
    "evolve",
    "stencil_divergence",
    "diffusion_step_stencil",
]

COUPLINGS = ("uncoupled", "scalar", "tensor")
BACKENDS = ("adjoint", "stencil")

# A single explicit step that moves any pixel by more than this is treated
# as divergence of the scheme rather than the image.
BLOWUP_LIMIT = 1.0e6


class NumericalBlowupError(ArithmeticError):
    """The explicit scheme produced a non-finite or absurdly large update."""

    def __init__(self, max_update, step=None):
        self.max_update = max_update
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"diffusion step diverged{at}: max |update| = {max_update:.3g}")


def default_scale_weights(sigmas):
    """Forward differences of the scale ladder; the last weight is repeated.

    A single scale gets weight 1.  These act as quadrature steps for the
    scale sum, so they must be positive; pass explicit weights for ladders
    with duplicate sigmas.
    """
    sigmas = tuple(float(s) for s in sigmas)
    if len(sigmas) <= 1:
        return (1.0,)
    diffs = [b - a for a, b in zip(sigmas, sigmas[1:])]
    return tuple(diffs + [diffs[-1]])


@dataclass(frozen=True)
class BlockConfig:
    """Everything one diffusion step depends on.

    ``scale_weights=None`` derives the default ladder weights.  ``alpha``
    in [0, 1/2] and ``gamma`` in [0, 1] only matter for the stencil
    backend.  ``shared_tensor`` selects one structure tensor accumulated
    over all scales (default) versus one per scale.
    """

    operator: OperatorSpec
    diffusivity: Diffusivity
    coupling: str
    tau: float
    scale_weights: tuple = None
    backend: str = "adjoint"
    alpha: float = 0.0
    gamma: float = 0.0
    shared_tensor: bool = True

    def __post_init__(self):
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError(f"tau must be finite and > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 0.5:
            raise ValueError(f"alpha must be in [0, 1/2], got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.coupling in ("uncoupled", "tensor") and not self.operator.gradient_like:
            raise ValueError(
                f"coupling {self.coupling!r} needs (x, y) gradient channels, "
                f"not operator kind {self.operator.kind!r}"
            )
        if self.backend == "stencil" and not self.operator.gradient_like:
            raise ValueError(
                f"stencil backend implements div(D grad u); operator kind "
                f"{self.operator.kind!r} is not gradient-like"
            )
        if self.scale_weights is None:
            if self.operator.kind == "multiscale_gradient":
                w = default_scale_weights(self.operator.sigmas)
            else:
                w = (1.0,)
            object.__setattr__(self, "scale_weights", w)
        else:
            object.__setattr__(
                self, "scale_weights", tuple(float(w) for w in self.scale_weights)
            )
        if len(self.scale_weights) != self.operator.num_scales:
            raise ValueError(
                f"need {self.operator.num_scales} scale weights, "
                f"got {len(self.scale_weights)}"
            )
        if any(w <= 0 or not np.isfinite(w) for w in self.scale_weights):
            raise ValueError(f"scale weights must be finite and > 0: {self.scale_weights}")


def _channel_weights(cfg):
    """Per-channel copy of the scale weights (each scale owns 2 channels)."""
    w = np.asarray(cfg.scale_weights, dtype=np.float64)
    if cfg.operator.kind == "multiscale_gradient":
        return np.repeat(w, 2)
    return np.repeat(w, cfg.operator.num_channels)


def _flux(cfg, resp):
    if cfg.coupling == "scalar":
        return coupled_scalar_flux(cfg.diffusivity, resp)
    if cfg.coupling == "uncoupled":
        return uncoupled_flux(cfg.diffusivity, resp)
    w = np.asarray(cfg.scale_weights, dtype=np.float64)
    if cfg.shared_tensor or cfg.operator.num_scales == 1:
        st = accumulate_structure_tensor(resp, w)
        return coupled_tensor_flux(cfg.diffusivity, resp, st)
    out = np.empty_like(resp)
    for i in range(cfg.operator.num_scales):
        pair = resp[..., 2 * i : 2 * i + 2, :, :]
        st = accumulate_structure_tensor(pair, w[i : i + 1])
        out[..., 2 * i : 2 * i + 2, :, :] = coupled_tensor_flux(
            cfg.diffusivity, pair, st
        )
    return out


def _check_update(u_new, update, step=None):
    max_update = float(np.max(np.abs(update))) if update.size else 0.0
    if not math.isfinite(max_update) or max_update > BLOWUP_LIMIT:
        raise NumericalBlowupError(max_update, step)
    if not np.isfinite(u_new).all():
        raise NumericalBlowupError(float("nan"), step)
    return u_new


def _step_adjoint(cfg, u, step=None):
    resp = apply_operator(cfg.operator, u)
    flux = _flux(cfg, resp)
    flux *= _channel_weights(cfg)[:, None, None]
    update = cfg.tau * apply_adjoint(cfg.operator, flux)
    return _check_update(u - update, update, step)


def _iso_tensor(g):
    zero = np.zeros_like(g)
    return np.stack([g, zero, g], axis=-3)


def _step_stencil(cfg, u, step=None):
    # The scalar and shared-tensor couplings reduce the response stack to
    # one field before anything else sees it, so the fused fast-path
    # reductions can stand in for apply_operator plus einsum.
    fast_stencil = _fast is not None and _fast.enabled()
    fused = (
        fast_stencil
        and cfg.operator.kind == "multiscale_gradient"
        and (cfg.coupling == "scalar" or (cfg.coupling == "tensor" and cfg.shared_tensor))
    )
    if fused:
        grad = np.stack([central_diff_x(u), central_diff_y(u)], axis=-3)
        resp = None
    else:
        resp = apply_operator(cfg.operator, u)
    w = np.asarray(cfg.scale_weights, dtype=np.float64)
    gains = (
        np.asarray(cfg.operator.gains, dtype=np.float64)
        if cfg.operator.kind == "multiscale_gradient"
        else np.ones(1)
    )
    # Each scale's divergence term stands in for K_l^T Phi_l, which carries
    # the gain twice; its D therefore carries gain^2.  Stencil weights are
    # positively homogeneous in D, so shared-D scale sums collapse.
    if cfg.coupling == "scalar":
        if fused:
            s2 = _fast.scalar_squared_sum(grad, cfg.operator.sigmas, gains)
        else:
            s2 = np.einsum("...chw,...chw->...hw", resp, resp)
        g = eval_diffusivity(cfg.diffusivity, s2)
        if fast_stencil:
            div = _fast.stencil_diag(cfg.alpha, g, g, u)
        else:
            div = stencil_divergence(cfg.alpha, cfg.gamma, _iso_tensor(g), u)
        update = (cfg.tau * float(np.sum(w * gains * gains))) * div
    elif cfg.coupling == "tensor" and cfg.shared_tensor:
        if fused:
            st = _fast.structure_tensor_bank(grad, cfg.operator.sigmas, gains, w)
        else:
            st = accumulate_structure_tensor(resp, w)
        dd = matrix_diffusivity(cfg.diffusivity, st)
        if fast_stencil:
            div = _fast.stencil_full(
                cfg.alpha,
                cfg.gamma,
                dd[..., 0, :, :],
                dd[..., 1, :, :],
                dd[..., 2, :, :],
                u,
            )
        else:
            div = stencil_divergence(cfg.alpha, cfg.gamma, dd, u)
        update = (cfg.tau * float(np.sum(w * gains * gains))) * div
    elif cfg.coupling == "tensor":
        update = np.zeros_like(u)
        for i in range(cfg.operator.num_scales):
            st = accumulate_structure_tensor(
                resp[..., 2 * i : 2 * i + 2, :, :], w[i : i + 1]
            )
            dd = matrix_diffusivity(cfg.diffusivity, st)
            update += (cfg.tau * w[i] * gains[i] * gains[i]) * stencil_divergence(
                cfg.alpha, cfg.gamma, dd, u
            )
    else:
        # Uncoupled: per-direction diffusivities form a diagonal tensor
        # per scale, D_l = diag(g(kx_l^2), g(ky_l^2)).  With b = 0 the
        # stencil weights are linear in (a, c), so the weighted scale sum
        # moves inside and one stencil application suffices.
        aa = np.zeros_like(u)
        cc = np.zeros_like(u)
        for i in range(cfg.operator.num_scales):
            kx = resp[..., 2 * i, :, :]
            ky = resp[..., 2 * i + 1, :, :]
            wi = w[i] * gains[i] * gains[i]
            aa += wi * eval_diffusivity(cfg.diffusivity, kx * kx)
            cc += wi * eval_diffusivity(cfg.diffusivity, ky * ky)
        if fast_stencil:
            div = _fast.stencil_diag(cfg.alpha, aa, cc, u)
        else:
            dd = np.stack([aa, np.zeros_like(u), cc], axis=-3)
            div = stencil_divergence(cfg.alpha, cfg.gamma, dd, u)
        update = cfg.tau * div
    return _check_update(u + update, update, step)


def diffusion_step(cfg, u, _step=None):
    """One explicit diffusion step; returns a new image, inputs untouched."""
    u = require_grid(u)
    if cfg.backend == "stencil":
        return _step_stencil(cfg, u, _step)
    return _step_adjoint(cfg, u, _step)


def diffusion_step_stencil(cfg, u, _step=None):
    """One stencil-backend step regardless of ``cfg.backend``."""
    u = require_grid(u)
    return _step_stencil(cfg, u, _step)


def evolve(cfg, u, steps):
    """Iterate :func:`diffusion_step`; blowups report the 0-based step index."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    u = require_grid(u)
    for k in range(steps):
        u = diffusion_step(cfg, u, _step=k)
    return u


def multichannel_step(cfg, channels):
    """One step of jointly diffusing M image channels with a shared coupling.

    For ``scalar`` the diffusivity argument additionally sums the squared
    responses of every image channel; for ``tensor`` the structure tensor
    does.  ``uncoupled`` degenerates to independent per-channel steps.
    Returns a list of new images.
    """
    if cfg.backend == "stencil":
        raise ValueError("multichannel_step supports the adjoint backend only")
    imgs = [require_grid(u, f"channel {i}") for i, u in enumerate(channels)]
    if not imgs:
        raise ValueError("need at least one image channel")
    if any(u.shape != imgs[0].shape for u in imgs):
        raise ValueError("image channels must share one shape")
    resp = np.concatenate([apply_operator(cfg.operator, u) for u in imgs], axis=-3)
    nch = cfg.operator.num_channels
    cw = _channel_weights(cfg)
    if cfg.coupling == "scalar":
        flux = coupled_scalar_flux(cfg.diffusivity, resp)
    elif cfg.coupling == "uncoupled":
        flux = uncoupled_flux(cfg.diffusivity, resp)
    else:
        pair_w = np.tile(np.asarray(cfg.scale_weights, dtype=np.float64), len(imgs))
        st = accumulate_structure_tensor(resp, pair_w)
        flux = coupled_tensor_flux(cfg.diffusivity, resp, st)
    out = []
    for i, u in enumerate(imgs):
        f = flux[..., i * nch : (i + 1) * nch, :, :] * cw[:, None, None]
        update = cfg.tau * apply_adjoint(cfg.operator, f)
        out.append(_check_update(u - update, update))
    return out


def stencil_divergence(alpha, gamma, tensor, u):
    """3x3 discretization of div(D grad u) for a symmetric 2x2 field D.

    Per pixel, the diagonal directions are allocated the mass

        s = alpha * (a + c) + gamma * (1 - 2 alpha) * |b|,

    split as (s +- b)/2 over the two diagonals, leaving a - s and c - s on
    the axes; edge weights average the two endpoint allocations.  Every
    contribution is a weighted difference across an edge with a weight
    symmetric in its endpoints, so row sums vanish identically and the
    induced operator is symmetric.  For constant D the interior stencil
    reproduces a*uxx + 2b*uxy + c*uyy exactly on quadratics, for any
    (alpha, gamma).  gamma blends the mixed-term allocation from a signed
    split (gamma=0) to an absolute-value split (gamma=1) and has no
    effect when b = 0.  At alpha = 1/2 the axial weights vanish wherever
    a = c (in particular for every scalar field D = g I), decoupling the
    grid into its two diagonal sublattices; the gamma term is switched
    off there as well.  Edges crossing the image border are dropped —
    with reflected samples an axial border edge joins a pixel to itself
    anyway, so this is the zero-flux (reflecting) boundary treatment.
    """
    if not 0.0 <= alpha <= 0.5:
        raise ValueError(f"alpha must be in [0, 1/2], got {alpha}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim < 3 or tensor.shape[-3] != 3:
        raise ValueError(f"expected (xx, xy, yy) on axis -3, got {tensor.shape}")
    u = np.asarray(u, dtype=np.float64)
    a = tensor[..., 0, :, :]
    b = tensor[..., 1, :, :]
    c = tensor[..., 2, :, :]
    s = alpha * (a + c) + (gamma * (1.0 - 2.0 * alpha)) * np.abs(b)
    wx = a - s
    wy = c - s
    wp = 0.5 * (s + b)
    wm = 0.5 * (s - b)
    out = np.zeros_like(u)
    # x edges: (y, x) -- (y, x+1)
    e = (0.5 * (wx[..., :, :-1] + wx[..., :, 1:])) * (u[..., :, 1:] - u[..., :, :-1])
    out[..., :, :-1] += e
    out[..., :, 1:] -= e
    # y edges: (y, x) -- (y+1, x)
    e = (0.5 * (wy[..., :-1, :] + wy[..., 1:, :])) * (u[..., 1:, :] - u[..., :-1, :])
    out[..., :-1, :] += e
    out[..., 1:, :] -= e
    # diagonal (y, x) -- (y+1, x+1): direction (1, 1) carries +2 uxy
    e = (0.5 * (wp[..., :-1, :-1] + wp[..., 1:, 1:])) * (
        u[..., 1:, 1:] - u[..., :-1, :-1]
    )
    out[..., :-1, :-1] += e
    out[..., 1:, 1:] -= e
    # diagonal (y, x+1) -- (y+1, x): direction (1, -1) carries -2 uxy
    e = (0.5 * (wm[..., :-1, 1:] + wm[..., 1:, :-1])) * (
        u[..., 1:, :-1] - u[..., :-1, 1:]
    )
    out[..., :-1, 1:] += e
    out[..., 1:, :-1] -= e
    return out
