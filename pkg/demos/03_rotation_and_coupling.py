"""Why channel coupling buys rotation invariance.

The same denoising block is run in two modes on the same scene rendered
at two orientations.  Uncoupled mode gates each derivative channel by
its own magnitude, so a diagonal edge (where the gradient splits evenly
between x and y) looks only 1/sqrt(2) as steep to each channel as an
axis-aligned edge of the same contrast, and leaks.  Scalar coupling
gates all channels by the joint magnitude and cannot tell the two
orientations apart.

No training here, just fixed parameters.

Run from the repository root:  python3 demos/03_rotation_and_coupling.py
"""

import numpy as np

from rotdiff.blocks import BlockConfig, evolve
from rotdiff.dataset import SceneSpec, add_noise, psnr, render_scene
from rotdiff.flux import Diffusivity
from rotdiff.operators import OperatorSpec


def main():
    scene = SceneSpec(size=96, rect_w=70, rect_h=30, count=3)
    op = OperatorSpec("gradient")
    variants = {
        "uncoupled": BlockConfig(op, Diffusivity(40.0), "uncoupled", tau=0.15),
        "coupled": BlockConfig(op, Diffusivity(40.0), "scalar", tau=0.15),
    }

    print(f"{'angle':>7} {'noisy':>10} {'uncoupled':>11} {'coupled':>9}")
    gaps = {name: [] for name in variants}
    for angle in (5.0, 45.0):
        # same seeds at both angles: the scenes hold the same rectangles
        # at the same centres, only their orientation differs
        scores = {name: [] for name in variants}
        base = []
        for trial in range(4):
            rng = np.random.default_rng((3, trial))
            clean = render_scene(scene, angle, rng)
            noisy = add_noise(clean, 40.0, rng)
            base.append(psnr(noisy, clean))
            for name, cfg in variants.items():
                scores[name].append(psnr(evolve(cfg, noisy, 60), clean))
        row = " ".join(f"{np.mean(scores[name]):>9.2f} dB" for name in variants)
        print(f"{angle:>6.0f}d {np.mean(base):>7.2f} dB {row}")
        for name in variants:
            gaps[name].append(float(np.mean(scores[name])))

    print("\ndrop from 5 to 45 degrees:")
    for name, (near, diag) in gaps.items():
        print(f"  {name:<10} {near - diag:+.2f} dB")
    print("\nthe uncoupled block loses several dB on the diagonal scene,")
    print("the coupled one holds its level")


if __name__ == "__main__":
    main()
