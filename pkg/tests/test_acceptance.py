"""Acceptance checklist for the rotation-invariance study.

Twelve numbered checks, one test each, mirroring the checklist in the
README.  Checks 1-7 and 12 are self-contained and run in seconds.
Checks 8-11 grade the desk-protocol experiment: they read ``report.csv``
from the directory named by ROTDIFF_DESK_DIR (default
``experiments/desk`` under the repository root) and skip when it is
absent.  Produce the report with

    python3 -m rotdiff.experiment --out experiments/desk --workers 4

(under an hour on four cores, a few hours serially), or set
ROTDIFF_RUN_DESK=1 to let the fixture launch that same run from inside
pytest.  Setting
ROTDIFF_FULL_DIR to a finished full-protocol run additionally grades
its variances against the coarser order-of-magnitude targets.

Every test prints its measured numbers next to the threshold they must
clear, so a ``pytest -v`` log of this file doubles as the scorecard.
"""

import math
import os
from itertools import product
from pathlib import Path

import numpy as np
import pytest

from rotdiff.blocks import BlockConfig, diffusion_step, stencil_divergence
from rotdiff.dataset import DatasetSpec, add_noise, build_datasets, desk_scene, psnr, render_scene
from rotdiff.evaluate import evaluate_sweep, parse_report
from rotdiff.flux import Diffusivity, diffusivity_energy, eval_diffusivity, matrix_diffusivity
from rotdiff.grid import inner_product
from rotdiff.operators import OperatorSpec, apply_adjoint, apply_operator

REPO = Path(__file__).resolve().parent.parent

GRAD = OperatorSpec("gradient")
MS3 = OperatorSpec("multiscale_gradient", sigmas=(0.5, 1.2, 2.5), gains=(1.0, -0.6, 0.4))


def _say(capsys, msg):
    # measured values go to the terminal even under capture, so the
    # -v log doubles as the scorecard
    with capsys.disabled():
        print(f"\n    {msg}", end="")


# ------------------------------------------------------------ 1 .. 7


def test_c01_operator_adjointness(capsys):
    kinds = [
        OperatorSpec("gradient"),
        OperatorSpec("laplacian"),
        OperatorSpec("hessian"),
        OperatorSpec("multiscale_gradient", sigmas=(0.6, 1.3, 2.8), gains=(1.0, -0.6, 0.4)),
    ]
    rng = np.random.default_rng(101)
    worst = 0.0
    for spec in kinds:
        for _ in range(50):
            h, w = (int(n) for n in rng.integers(7, 32, size=2))
            u = rng.normal(size=(h, w))
            v = rng.normal(size=(spec.num_channels, h, w))
            lhs = inner_product(apply_operator(spec, u), v)
            rhs = inner_product(u, apply_adjoint(spec, v))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    _say(capsys, f"c01 adjointness, 4 kinds x 50 trials: worst rel {worst:.2e} (limit 1e-10)")
    assert worst <= 1e-10


def test_c02_mean_conservation(capsys):
    rng = np.random.default_rng(102)
    worst = 0.0
    for coupling, backend in product(("uncoupled", "scalar", "tensor"), ("adjoint", "stencil")):
        for t in range(50):
            kw = {}
            if backend == "stencil":
                kw["alpha"] = (0.0, 0.41, 0.5)[t % 3]
                kw["gamma"] = (0.0, 0.7, 1.0)[t % 3]
            cfg = BlockConfig(
                operator=(GRAD, MS3)[t % 2],
                diffusivity=Diffusivity(3.0),
                coupling=coupling,
                tau=0.05,
                backend=backend,
                **kw,
            )
            h, w = (int(n) for n in rng.integers(7, 24, size=2))
            u = rng.normal(size=(h, w)) * 4.0 + rng.uniform(-30.0, 30.0)
            out = diffusion_step(cfg, u)
            worst = max(worst, abs(np.mean(out) - np.mean(u)) / max(abs(np.mean(u)), 1.0))
    _say(capsys, f"c02 mean drift, 6 variants x 50 trials: worst rel {worst:.2e} (limit 1e-10)")
    assert worst <= 1e-10


def _rotate_sym2(a, b, c, th):
    """Components of R(th) [[a,b],[b,c]] R(th)^T."""
    co, si = math.cos(th), math.sin(th)
    return (
        co * co * a - 2.0 * si * co * b + si * si * c,
        si * co * (a - c) + (co * co - si * si) * b,
        si * si * a + 2.0 * si * co * b + co * co * c,
    )


def test_c03_matrix_diffusivity_rotation_covariance(capsys):
    rng = np.random.default_rng(103)
    d = Diffusivity(4.0)
    worst_cov = 0.0
    worst_tr = 0.0
    for k in range(200):
        scale = 10.0 ** rng.uniform(-1.0, 0.9)
        root = rng.normal(size=(2, 2)) * scale
        m = root.T @ root
        a, b, c = m[0, 0], m[0, 1], m[1, 1]
        if k % 10 == 0:
            b, c = 0.0, a  # exercise the degenerate (isotropic) branch
        th = rng.uniform(0.0, 2.0 * math.pi)
        gm = matrix_diffusivity(d, np.array([[[a]], [[b]], [[c]]]))[:, 0, 0]
        ra, rb, rc = _rotate_sym2(a, b, c, th)
        got = matrix_diffusivity(d, np.array([[[ra]], [[rb]], [[rc]]]))[:, 0, 0]
        want = np.array(_rotate_sym2(gm[0], gm[1], gm[2], th))
        worst_cov = max(worst_cov, float(np.max(np.abs(got - want))))
        nu = np.maximum(np.linalg.eigvalsh(np.array([[a, b], [b, c]])), 0.0)
        tr_want = eval_diffusivity(d, nu[0]) + eval_diffusivity(d, nu[1])
        worst_tr = max(worst_tr, abs(float(gm[0] + gm[2]) - tr_want))
    _say(
        capsys,
        f"c03 g(R M R^T) vs R g(M) R^T over 200 pairs: worst {worst_cov:.2e} "
        f"(limit 1e-10), trace error {worst_tr:.2e} (limit 1e-12)",
    )
    assert worst_cov <= 1e-10
    assert worst_tr <= 1e-12


def test_c04_rot90_equivariance_of_coupled_blocks(capsys):
    rng = np.random.default_rng(104)
    worst = 0.0
    for i in range(20):
        shape = ((24, 24), (17, 17), (19, 14))[i % 3]
        u = rng.normal(size=shape) * 3.0
        for coupling in ("scalar", "tensor"):
            for backend, kw in (
                ("adjoint", {}),
                ("stencil", {"alpha": 0.41, "gamma": 0.7 if i % 2 else 0.0}),
            ):
                cfg = BlockConfig(
                    operator=MS3,
                    diffusivity=Diffusivity(4.0),
                    coupling=coupling,
                    tau=0.05,
                    backend=backend,
                    **kw,
                )
                lhs = diffusion_step(cfg, np.rot90(u))
                rhs = np.rot90(diffusion_step(cfg, u))
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    _say(capsys, f"c04 rot90 commutator, 20 images x 4 variants: worst {worst:.2e} (limit 1e-12)")
    assert worst <= 1e-12


def _random_psd_field(rng, shape):
    b = rng.uniform(-0.5, 0.5, size=shape)
    a = rng.uniform(0.2, 2.0, size=shape) + np.abs(b)
    c = rng.uniform(0.2, 2.0, size=shape) + np.abs(b)
    return np.stack([a, b, c])


def test_c05_stencil_contract(capsys):
    rng = np.random.default_rng(105)

    # (a) constants are annihilated exactly, not just to roundoff
    worst_const = 0.0
    for alpha, gamma in ((0.0, 0.0), (0.37, 0.6), (0.5, 1.0)):
        field = _random_psd_field(rng, (9, 8))
        out = stencil_divergence(alpha, gamma, field, np.full((9, 8), 11.25))
        worst_const = max(worst_const, float(np.max(np.abs(out))))

    # (b) the induced operator is symmetric; assemble it column by column
    h, w = 6, 7
    field = _random_psd_field(rng, (h, w))
    worst_sym = 0.0
    for alpha, gamma in ((0.0, 0.0), (0.41, 0.7), (0.5, 0.3)):
        mat = np.empty((h * w, h * w))
        for j in range(h * w):
            e = np.zeros(h * w)
            e[j] = 1.0
            mat[:, j] = stencil_divergence(alpha, gamma, field, e.reshape(h, w)).ravel()
        worst_sym = max(worst_sym, float(np.max(np.abs(mat - mat.T))))

    # (c) D = I, alpha = 0: the Laplacian of x^2 + y^2 on integer
    # coordinates is exactly 4 in the interior (all quantities dyadic)
    n = 12
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    quad = x * x + y * y
    eye = np.stack([np.ones((n, n)), np.zeros((n, n)), np.ones((n, n))])
    lap = stencil_divergence(0.0, 0.0, eye, quad)
    worst_quad = float(np.max(np.abs(lap[1:-1, 1:-1] - 4.0)))

    # (d) alpha = 1/2 with scalar D: axial neighbours get exactly zero
    # weight, an impulse response touches only centre + diagonals
    g = rng.uniform(0.3, 2.0, size=(7, 7))
    scalar = np.stack([g, np.zeros_like(g), g])
    e = np.zeros((7, 7))
    e[3, 3] = 1.0
    resp = stencil_divergence(0.5, 0.0, scalar, e)
    axial = [abs(resp[2, 3]), abs(resp[4, 3]), abs(resp[3, 2]), abs(resp[3, 4])]
    support = int(np.count_nonzero(resp))

    # (e) constant D = [[2, 1], [1, 3]]: div(D grad(x^2 + y^2)) = 10
    const = np.stack([np.full((13, 11), 2.0), np.full((13, 11), 1.0), np.full((13, 11), 3.0)])
    y, x = np.mgrid[0:13, 0:11].astype(np.float64)
    quad = x * x + y * y
    worst_ten = 0.0
    for alpha, gamma in ((0.0, 0.0), (0.41, 0.5), (0.5, 1.0)):
        out = stencil_divergence(alpha, gamma, const, quad)
        worst_ten = max(worst_ten, float(np.max(np.abs(out[1:-1, 1:-1] - 10.0))))

    _say(
        capsys,
        f"c05 stencil: const {worst_const:.1e} (exact 0), asym {worst_sym:.2e} "
        f"(limit 1e-10), laplacian {worst_quad:.1e} (exact 0), impulse support "
        f"{support} pts / axial max {max(axial):.1e} (5 pts, exact 0), "
        f"mixed-tensor value error {worst_ten:.2e} (limit 1e-9)",
    )
    assert worst_const == 0.0
    assert worst_sym <= 1e-10
    assert worst_quad == 0.0
    assert support <= 5 and max(axial) == 0.0
    assert worst_ten <= 1e-9


def test_c06_energy_descent(capsys):
    d = Diffusivity(4.0)
    cfg = BlockConfig(operator=GRAD, diffusivity=d, coupling="scalar", tau=0.1)
    rng = np.random.default_rng(106)

    def energy(u):
        kx, ky = apply_operator(GRAD, u)
        return float(np.sum(diffusivity_energy(d, kx * kx + ky * ky)))

    worst = -np.inf
    for i in range(10):
        if i % 2:
            u = rng.normal(size=(20, 20)) * 4.0
        else:
            u = np.where(np.arange(20)[None, :] >= 10, 8.0, 0.0) + rng.standard_normal((20, 20))
        e = energy(u)
        for _ in range(50):
            u = diffusion_step(cfg, u)
            e_new = energy(u)
            worst = max(worst, e_new - e)
            e = e_new
    _say(capsys, f"c06 energy, 10 starts x 50 steps: worst increase {worst:.2e} (limit 1e-9)")
    assert worst <= 1e-9


def test_c07_step_matches_independent_oracle(capsys):
    # one explicit step on a noisy edge, rebuilt from nothing but the
    # reflecting central-difference definition and per-pixel sums
    n = 32
    rng = np.random.default_rng(107)
    u = np.where(np.arange(n)[None, :] >= n // 2, 10.0, 0.0) + rng.standard_normal((n, n))

    def reflect(i):
        i %= 2 * n
        return i if i < n else 2 * n - 1 - i

    dmat = np.zeros((n, n))
    for i in range(n):
        dmat[i, reflect(i + 1)] += 0.5
        dmat[i, reflect(i - 1)] -= 0.5

    kx = np.empty((n, n))
    ky = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            kx[i, j] = sum(dmat[j, l] * u[i, l] for l in range(n))
            ky[i, j] = sum(dmat[i, l] * u[l, j] for l in range(n))
    g = np.exp(-(kx * kx + ky * ky) / 32.0)
    fx = g * kx
    fy = g * ky
    want = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            div = sum(dmat[l, j] * fx[i, l] for l in range(n))
            div += sum(dmat[l, i] * fy[l, j] for l in range(n))
            want[i, j] = u[i, j] - 0.1 * div

    cfg = BlockConfig(operator=GRAD, diffusivity=Diffusivity(4.0), coupling="scalar", tau=0.1)
    got = diffusion_step(cfg, u)
    worst = float(np.max(np.abs(got - want)))
    _say(capsys, f"c07 one step vs per-pixel oracle: worst {worst:.2e} (limit 1e-12)")
    assert worst <= 1e-12


# ------------------------------------------------- 8 .. 11 (desk run)


def _desk_dir():
    return Path(os.environ.get("ROTDIFF_DESK_DIR", REPO / "experiments" / "desk"))


@pytest.fixture(scope="session")
def desk():
    out = _desk_dir()
    report_path = out / "report.csv"
    if not report_path.exists():
        if os.environ.get("ROTDIFF_RUN_DESK") == "1":
            from rotdiff.experiment import desk_spec, run_experiment

            run_experiment(desk_spec(), out)
        else:
            pytest.skip(
                f"desk report not found at {report_path}; run "
                f"'python3 -m rotdiff.experiment --out {out} --workers 4' "
                "first (under an hour on four cores, a few hours serially), "
                "or set ROTDIFF_RUN_DESK=1"
            )
    return parse_report(report_path), out


def test_c08_desk_variance_ordering(desk, capsys):
    report, _ = desk
    vu = report.variance("uncoupled_a41")
    vi = report.variance("iso_a41")
    va = report.variance("aniso_a41")
    _say(
        capsys,
        f"c08 variances: uncoupled {vu:.4g}, iso {vi:.4g}, aniso {va:.4g} "
        f"(need uncoupled >= 10x iso and iso >= aniso)",
    )
    assert vu >= 10.0 * vi
    assert vi >= va


def test_c09_desk_psnr_gaps_at_45_degrees(desk, capsys):
    report, _ = desk
    pu = report.mean_psnr("uncoupled_a41", 45.0)
    pi = report.mean_psnr("iso_a41", 45.0)
    pa = report.mean_psnr("aniso_a41", 45.0)
    _say(
        capsys,
        f"c09 PSNR at 45 deg: uncoupled {pu:.2f}, iso {pi:.2f}, aniso {pa:.2f} dB "
        f"(need aniso - uncoupled >= 1.0, iso - uncoupled >= 0.5)",
    )
    assert pa - pu >= 1.0
    assert pi - pu >= 0.5


def test_c10_desk_uncoupled_dip_nearest_45(desk, capsys):
    report, _ = desk
    angles = report.angles("uncoupled_a41")
    vals = [report.mean_psnr("uncoupled_a41", a) for a in angles]
    dip = angles[int(np.argmin(vals))]
    nearest = min(angles, key=lambda a: abs(a - 45.0))
    _say(capsys, f"c10 uncoupled PSNR minimum at {dip:g} deg (want {nearest:g})")
    assert dip == nearest


def test_c11_desk_alpha_half_tradeoff(desk, capsys):
    report, _ = desk
    lines = []
    for model in ("iso", "aniso"):
        v41 = report.variance(f"{model}_a41")
        v50 = report.variance(f"{model}_a50")
        angles = report.angles(f"{model}_a41")
        m41 = float(np.mean([report.mean_psnr(f"{model}_a41", a) for a in angles]))
        m50 = float(np.mean([report.mean_psnr(f"{model}_a50", a) for a in angles]))
        lines.append(f"{model}: var {v41:.4g} -> {v50:.4g}, mean PSNR {m41:.2f} -> {m50:.2f}")
        assert v41 >= 2.0 * v50
        assert m50 < m41
    _say(capsys, "c11 alpha 0.5 vs 0.41, " + "; ".join(lines))


def test_c12_noisy_baseline_level(capsys):
    scene = desk_scene()
    vals = []
    for i in range(16):
        rng = np.random.default_rng((112, i))
        clean = render_scene(scene, 25.0 if i % 2 else 65.0, rng)
        noisy = add_noise(clean, 60.0, rng)
        # same quantization the 8-bit files apply
        cq = np.clip(np.rint(clean), 0.0, 255.0)
        nq = np.clip(np.rint(noisy), 0.0, 255.0)
        vals.append(psnr(nq, cq))
    mean = float(np.mean(vals))
    _say(capsys, f"c12 noisy baseline: {mean:.2f} dB (want 15.6 +- 0.3)")
    assert abs(mean - 15.6) <= 0.3


# ----------------------------------------------------- gated extras


def test_desk_mirror_symmetry_within_seed_noise(desk, capsys, tmp_path):
    # the scene ensemble is rotation invariant in distribution and the
    # scheme commutes with the grid symmetries, so PSNR(theta) and
    # PSNR(90 - theta) estimate the same number; their gap is graded
    # against the spread of the 45-degree estimate across dataset seeds
    report, out = desk
    manifests = []
    for seed in (201, 202, 203):
        spec = DatasetSpec(
            scene=desk_scene(),
            train_angle=30.0,
            sigma=60.0,
            seed=seed,
            train_count=0,
            test_count=16,
            test_angles=(45.0,),
        )
        manifests.append(build_datasets(tmp_path / f"seed{seed}", spec))

    lines = []
    for model in ("iso_a41", "aniso_a41", "iso_a50", "aniso_a50"):
        ckpt = out / "models" / f"{model}.ckpt"
        vals = [report.mean_psnr(model, 45.0)]
        vals += [evaluate_sweep(ckpt, m).mean_psnr(model, 45.0) for m in manifests]
        spread = float(np.std(vals, ddof=1))
        gaps = [
            abs(report.mean_psnr(model, a) - report.mean_psnr(model, 90.0 - a))
            for a in (5.0, 15.0, 25.0, 35.0)
        ]
        lines.append(f"{model}: max gap {max(gaps):.3f} dB vs 3 x seed spread {3 * spread:.3f}")
        assert max(gaps) <= 3.0 * spread
    _say(capsys, "mirror symmetry, " + "; ".join(lines))


FULL_VARIANCE_TARGETS = {
    "uncoupled_a41": 1.25,
    "iso_a41": 0.035,
    "aniso_a41": 0.014,
    "iso_a50": 0.013,
    "aniso_a50": 8.7e-4,
}


def test_full_scale_variance_targets(capsys):
    root = os.environ.get("ROTDIFF_FULL_DIR")
    if not root:
        pytest.skip("set ROTDIFF_FULL_DIR to a finished full-protocol run to grade it")
    report = parse_report(Path(root) / "report.csv")
    lines = []
    for model, target in FULL_VARIANCE_TARGETS.items():
        ratio = report.variance(model) / target
        lines.append(f"{model} {ratio:.2f}x")
        assert 1.0 / 3.0 <= ratio <= 3.0
    _say(capsys, "full-scale variance vs target (need within 3x): " + ", ".join(lines))
