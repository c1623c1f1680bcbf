"""Optional numba acceleration for the multiscale smoothing bank.

The per-scale Gaussian loop in :func:`rotdiff.operators.apply_operator`
spends nearly all of its time in many small ``correlate1d`` calls.  This
module fuses them into one compiled pass: same spatial separable
correlation, same reflecting boundary, same renormalized taps from
:func:`rotdiff.grid.gaussian_kernel1d`.  Summation order inside a kernel
differs from scipy's (symmetric taps are paired), so results match the
reference to roundoff, not bit for bit.

Importing this module requires numba; callers guard the import and fall
back to the scipy path.  Setting ``ROTDIFF_FAST=0`` disables the fast
path without uninstalling anything.
"""

import os

import numpy as np
from numba import njit

from .grid import gaussian_kernel1d

__all__ = [
    "enabled",
    "smooth_gradient_bank",
    "scalar_squared_sum",
    "structure_tensor_bank",
    "stencil_diag",
    "stencil_full",
]


def enabled():
    return os.environ.get("ROTDIFF_FAST", "1") != "0"


@njit(cache=True, inline="always")
def _reflect(i, n):
    # 2n-periodic fold, then mirror the upper half.
    m = i % (2 * n)
    if m < n:
        return m
    return 2 * n - 1 - m


@njit(cache=True)
def _bank(grad, taps, centers, radii, rmax, gains, out):
    nimg = grad.shape[0]
    nch = grad.shape[1]
    h = grad.shape[2]
    w = grad.shape[3]
    pad = np.empty((h + 2 * rmax, w + 2 * rmax))
    buf = np.empty((h + 2 * rmax, w))
    for img in range(nimg):
        for ch in range(nch):
            _pad_reflect(grad[img, ch], rmax, pad)
            for s in range(radii.shape[0]):
                _conv_scale(
                    pad,
                    buf,
                    taps,
                    centers[s],
                    radii[s],
                    rmax,
                    h,
                    w,
                    gains[s],
                    out[img, 2 * s + ch],
                )


@njit(cache=True)
def _pad_reflect(src, rmax, pad):
    h = src.shape[0]
    w = src.shape[1]
    for y in range(h + 2 * rmax):
        row = src[_reflect(y - rmax, h)]
        prow = pad[y]
        prow[rmax : rmax + w] = row
        for x in range(rmax):
            prow[x] = row[_reflect(x - rmax, w)]
            prow[rmax + w + x] = row[_reflect(w + x, w)]


@njit(cache=True)
def _conv_scale(pad, buf, taps, c, r, rmax, h, w, beta, out):
    """out = beta * (G * pad) on the unpadded grid, x pass then y pass."""
    w0 = taps[c]
    for y in range(rmax - r, h + rmax + r):
        prow = pad[y]
        brow = buf[y]
        for x in range(w):
            brow[x] = w0 * prow[x + rmax]
        for t in range(1, r + 1):
            wt = taps[c + t]
            for x in range(w):
                brow[x] += wt * (prow[x + rmax - t] + prow[x + rmax + t])
    for y in range(h):
        orow = out[y]
        brow = buf[y + rmax]
        for x in range(w):
            orow[x] = w0 * brow[x]
        for t in range(1, r + 1):
            wt = taps[c + t]
            b1 = buf[y + rmax - t]
            b2 = buf[y + rmax + t]
            for x in range(w):
                orow[x] += wt * (b1[x] + b2[x])
        for x in range(w):
            orow[x] *= beta


@njit(cache=True)
def _s2_bank(grad, taps, centers, radii, rmax, gains, s2):
    nimg = grad.shape[0]
    h = grad.shape[2]
    w = grad.shape[3]
    hp = h + 2 * rmax
    padx = np.empty((hp, w + 2 * rmax))
    pady = np.empty((hp, w + 2 * rmax))
    buf = np.empty((hp, w))
    kx = np.empty((h, w))
    ky = np.empty((h, w))
    for img in range(nimg):
        _pad_reflect(grad[img, 0], rmax, padx)
        _pad_reflect(grad[img, 1], rmax, pady)
        acc = s2[img]
        acc[:, :] = 0.0
        for s in range(radii.shape[0]):
            _conv_scale(padx, buf, taps, centers[s], radii[s], rmax, h, w, gains[s], kx)
            _conv_scale(pady, buf, taps, centers[s], radii[s], rmax, h, w, gains[s], ky)
            for y in range(h):
                ax = acc[y]
                kxr = kx[y]
                kyr = ky[y]
                for x in range(w):
                    ax[x] += kxr[x] * kxr[x] + kyr[x] * kyr[x]


@njit(cache=True)
def _st_bank(grad, taps, centers, radii, rmax, gains, weights, st):
    nimg = grad.shape[0]
    h = grad.shape[2]
    w = grad.shape[3]
    hp = h + 2 * rmax
    padx = np.empty((hp, w + 2 * rmax))
    pady = np.empty((hp, w + 2 * rmax))
    buf = np.empty((hp, w))
    kx = np.empty((h, w))
    ky = np.empty((h, w))
    for img in range(nimg):
        _pad_reflect(grad[img, 0], rmax, padx)
        _pad_reflect(grad[img, 1], rmax, pady)
        st[img] = 0.0
        xx = st[img, 0]
        xy = st[img, 1]
        yy = st[img, 2]
        for s in range(radii.shape[0]):
            _conv_scale(padx, buf, taps, centers[s], radii[s], rmax, h, w, gains[s], kx)
            _conv_scale(pady, buf, taps, centers[s], radii[s], rmax, h, w, gains[s], ky)
            ws = weights[s]
            for y in range(h):
                kxr = kx[y]
                kyr = ky[y]
                xxr = xx[y]
                xyr = xy[y]
                yyr = yy[y]
                for x in range(w):
                    wvx = ws * kxr[x]
                    wvy = ws * kyr[x]
                    xxr[x] += wvx * kxr[x]
                    xyr[x] += wvx * kyr[x]
                    yyr[x] += wvy * kyr[x]


@njit(cache=True)
def _stencil_edges(wx, wy, wp, wm, u, out):
    """Edge sweeps of the divergence stencil, one edge family at a time.

    Same edge-family order as the slice-based reference, but within a
    family each edge deposits both of its endpoint contributions at
    once, whereas the reference adds a whole slice before subtracting
    the other; the summation orders differ, so agreement is to roundoff
    rather than bit for bit.
    """
    h = u.shape[0]
    w = u.shape[1]
    out[:, :] = 0.0
    for y in range(h):
        urow = out[y]
        for x in range(w - 1):
            e = (0.5 * (wx[y, x] + wx[y, x + 1])) * (u[y, x + 1] - u[y, x])
            urow[x] += e
            urow[x + 1] -= e
    for y in range(h - 1):
        r0 = out[y]
        r1 = out[y + 1]
        for x in range(w):
            e = (0.5 * (wy[y, x] + wy[y + 1, x])) * (u[y + 1, x] - u[y, x])
            r0[x] += e
            r1[x] -= e
    for y in range(h - 1):
        r0 = out[y]
        r1 = out[y + 1]
        for x in range(w - 1):
            e = (0.5 * (wp[y, x] + wp[y + 1, x + 1])) * (u[y + 1, x + 1] - u[y, x])
            r0[x] += e
            r1[x + 1] -= e
    for y in range(h - 1):
        r0 = out[y]
        r1 = out[y + 1]
        for x in range(w - 1):
            e = (0.5 * (wm[y, x + 1] + wm[y + 1, x])) * (u[y + 1, x] - u[y, x + 1])
            r0[x + 1] += e
            r1[x] -= e


@njit(cache=True)
def _stencil_diag_batch(alpha, a, c, u, out):
    nimg = u.shape[0]
    h = u.shape[1]
    w = u.shape[2]
    wx = np.empty((h, w))
    wy = np.empty((h, w))
    wd = np.empty((h, w))
    for img in range(nimg):
        am = a[img]
        cm = c[img]
        for y in range(h):
            for x in range(w):
                s = alpha * (am[y, x] + cm[y, x])
                wx[y, x] = am[y, x] - s
                wy[y, x] = cm[y, x] - s
                wd[y, x] = 0.5 * s
        _stencil_edges(wx, wy, wd, wd, u[img], out[img])


@njit(cache=True)
def _stencil_full_batch(alpha, gamma, a, b, c, u, out):
    nimg = u.shape[0]
    h = u.shape[1]
    w = u.shape[2]
    wx = np.empty((h, w))
    wy = np.empty((h, w))
    wp = np.empty((h, w))
    wm = np.empty((h, w))
    gfac = gamma * (1.0 - 2.0 * alpha)
    for img in range(nimg):
        am = a[img]
        bm = b[img]
        cm = c[img]
        for y in range(h):
            for x in range(w):
                bv = bm[y, x]
                s = alpha * (am[y, x] + cm[y, x]) + gfac * abs(bv)
                wx[y, x] = am[y, x] - s
                wy[y, x] = cm[y, x] - s
                wp[y, x] = 0.5 * (s + bv)
                wm[y, x] = 0.5 * (s - bv)
        _stencil_edges(wx, wy, wp, wm, u[img], out[img])


def _flat_planes(u, planes):
    h, w = u.shape[-2:]
    out = [np.ascontiguousarray(p.reshape((-1, h, w))) for p in (u,) + planes]
    return out


def stencil_diag(alpha, a, c, u):
    """Divergence stencil for diagonal D = diag(a, c); gamma plays no role."""
    uf, af, cf = _flat_planes(u, (a, c))
    out = np.empty_like(uf)
    _stencil_diag_batch(float(alpha), af, cf, uf, out)
    return out.reshape(u.shape)


def stencil_full(alpha, gamma, a, b, c, u):
    """Divergence stencil for a full symmetric D field."""
    uf, af, bf, cf = _flat_planes(u, (a, b, c))
    out = np.empty_like(uf)
    _stencil_full_batch(float(alpha), float(gamma), af, bf, cf, uf, out)
    return out.reshape(u.shape)


_KERNEL_CACHE = {}


def _tap_table(sigmas):
    table = _KERNEL_CACHE.get(sigmas)
    if table is None:
        kernels = [gaussian_kernel1d(s) if s > 0 else np.ones(1) for s in sigmas]
        radii = np.array([k.size // 2 for k in kernels], dtype=np.int64)
        taps = np.concatenate(kernels)
        centers = np.cumsum(np.concatenate([[0], [k.size for k in kernels[:-1]]]))
        centers = (centers + radii).astype(np.int64)
        table = (taps, centers, radii, int(radii.max()))
        _KERNEL_CACHE[sigmas] = table
    return table


def smooth_gradient_bank(grad, sigmas, gains):
    """Smoothed, gain-scaled copies of a gradient stack, one per sigma.

    ``grad`` holds (x, y) derivative channels on axis -3; the result
    interleaves scales as (kx_0, ky_0, kx_1, ky_1, ...) on that axis,
    matching the reference loop in ``apply_operator``.
    """
    taps, centers, radii, rmax = _tap_table(tuple(float(s) for s in sigmas))
    lead = grad.shape[:-3]
    nch = grad.shape[-3]
    h, w = grad.shape[-2:]
    flat = np.ascontiguousarray(grad.reshape((-1, nch, h, w)))
    out = np.empty((flat.shape[0], 2 * len(sigmas), h, w))
    gains = np.asarray(gains, dtype=np.float64)
    _bank(flat, taps, centers, radii, rmax, gains, out)
    return out.reshape(lead + (2 * len(sigmas), h, w))


def scalar_squared_sum(grad, sigmas, gains):
    """Sum over scales and directions of the squared smoothed responses.

    Equals ``einsum('...chw,...chw->...hw', resp, resp)`` on the full
    response stack without ever materializing it.
    """
    taps, centers, radii, rmax = _tap_table(tuple(float(s) for s in sigmas))
    lead = grad.shape[:-3]
    h, w = grad.shape[-2:]
    flat = np.ascontiguousarray(grad.reshape((-1, 2, h, w)))
    s2 = np.empty((flat.shape[0], h, w))
    gains = np.asarray(gains, dtype=np.float64)
    _s2_bank(flat, taps, centers, radii, rmax, gains, s2)
    return s2.reshape(lead + (h, w))


def structure_tensor_bank(grad, sigmas, gains, weights):
    """Scale-weighted structure tensor of the smoothed responses.

    Returns (xx, xy, yy) on axis -3, matching
    ``accumulate_structure_tensor(resp, weights)`` on the full stack.
    """
    taps, centers, radii, rmax = _tap_table(tuple(float(s) for s in sigmas))
    lead = grad.shape[:-3]
    h, w = grad.shape[-2:]
    flat = np.ascontiguousarray(grad.reshape((-1, 2, h, w)))
    st = np.empty((flat.shape[0], 3, h, w))
    gains = np.asarray(gains, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    _st_bank(flat, taps, centers, radii, rmax, gains, weights, st)
    return st.reshape(lead + (3, h, w))
