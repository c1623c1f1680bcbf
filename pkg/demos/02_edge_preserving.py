"""Edge-preserving denoising versus plain smoothing.

A noisy step edge is evolved twice with the same block, once with a
small contrast parameter (gradients above lambda block the flux) and
once with a huge one (the diffusivity is then ~1 everywhere, i.e. the
heat equation).  The PSNR trajectories tell the story: linear smoothing
peaks early and then blurs the edge away, the nonlinear block keeps
improving and then holds.

Run from the repository root:  python3 demos/02_edge_preserving.py
"""

import numpy as np

from rotdiff.blocks import BlockConfig, diffusion_step
from rotdiff.dataset import psnr
from rotdiff.flux import Diffusivity
from rotdiff.operators import OperatorSpec


def main():
    rng = np.random.default_rng(2)
    n = 64
    clean = np.where(np.arange(n)[None, :] >= n // 2, 160.0, 60.0) * np.ones((n, 1))
    noisy = clean + rng.normal(0.0, 25.0, size=clean.shape)

    op = OperatorSpec("gradient")
    runs = {
        "edge-aware (lambda 12)": BlockConfig(op, Diffusivity(12.0), "scalar", tau=0.2),
        "near-linear (lambda 1e6)": BlockConfig(op, Diffusivity(1e6), "scalar", tau=0.2),
    }

    print(f"start: PSNR {psnr(noisy, clean):.2f} dB")
    print(f"{'step':>6} " + " ".join(f"{name:>26}" for name in runs))
    state = {name: noisy.copy() for name in runs}
    for step in range(1, 121):
        for name, cfg in runs.items():
            state[name] = diffusion_step(cfg, state[name])
        if step in (5, 15, 30, 60, 120):
            cells = " ".join(f"{psnr(state[name], clean):>23.2f} dB" for name in runs)
            print(f"{step:>6} {cells}")

    # profile across the edge, middle row
    mid = n // 2
    cols = slice(mid - 3, mid + 3)
    print("\nedge profile (row average, 6 pixels around the jump):")
    print(f"  clean      {np.round(clean[mid, cols], 1)}")
    for name in runs:
        print(f"  {name:<24} {np.round(state[name].mean(axis=0)[cols], 1)}")
    print("\nthe near-linear run has smeared the jump over the whole window;")
    print("the edge-aware run still switches within two pixels")


if __name__ == "__main__":
    main()
