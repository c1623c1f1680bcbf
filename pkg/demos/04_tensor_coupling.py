"""Scalar versus tensor coupling on an oriented texture.

Diagonal stripes under heavy noise, smoothed derivative channels at two
scales.  The scalar coupling turns the flux down wherever the joint
gradient is large, which near stripe borders means everywhere, so the
noise sitting on the borders survives.  The tensor coupling
diagonalizes the scale-weighted structure tensor and applies the
diffusivity per eigenvalue: across the stripes the eigenvalue is large
and the flux stops, along them it is small and the noise keeps being
carried away.  Watch the trajectories: both start alike, then the
scalar run stalls while the tensor run keeps climbing.

Run from the repository root:  python3 demos/04_tensor_coupling.py
"""

import numpy as np

from rotdiff.blocks import BlockConfig, evolve
from rotdiff.dataset import psnr
from rotdiff.flux import Diffusivity
from rotdiff.operators import OperatorSpec
from rotdiff.pgm import write_pgm

OUT = "demos/out"


def stripes(n, angle_deg, period):
    th = np.deg2rad(angle_deg)
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    phase = (x * np.cos(th) + y * np.sin(th)) * (2.0 * np.pi / period)
    return np.where(np.sin(phase) >= 0.0, 190.0, 50.0)


def main():
    import os

    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(4)
    clean = stripes(96, 30.0, 24)
    noisy = clean + rng.normal(0.0, 35.0, size=clean.shape)

    op = OperatorSpec("multiscale_gradient", sigmas=(1.0, 2.0), gains=(1.0, 1.0))
    runs = {
        "scalar": BlockConfig(op, Diffusivity(4.0), "scalar", tau=0.1),
        "tensor": BlockConfig(op, Diffusivity(4.0), "tensor", tau=0.1),
    }

    write_pgm(f"{OUT}/stripes_clean.pgm", clean)
    write_pgm(f"{OUT}/stripes_noisy.pgm", noisy)
    print(f"stripes at 30 degrees, noise sigma 35: start {psnr(noisy, clean):.2f} dB")
    print(f"{'steps':>7} " + " ".join(f"{name:>9}" for name in runs))
    state = {name: noisy.copy() for name in runs}
    done = 0
    for mark in (100, 300, 800):
        for name, cfg in runs.items():
            state[name] = evolve(cfg, state[name], mark - done)
        done = mark
        print(f"{mark:>7} " + " ".join(f"{psnr(state[name], clean):>6.2f} dB" for name in runs))
    for name in runs:
        write_pgm(f"{OUT}/stripes_{name}.pgm", state[name])
    print(f"\nimages written to {OUT}/ (look along the stripe borders:")
    print(" the scalar result keeps a rind of noise there, the tensor")
    print(" result has swept it along the stripe direction)")


if __name__ == "__main__":
    main()
