"""End-to-end rotation-invariance experiment: data, training, sweep report.

Two protocols share one pipeline.  The desk protocol is the reduced
version used by the acceptance suite: 128x128 scenes, 32 training pairs
at 30 degrees, 16 test pairs at each of 9 angles (5..85 step 10, none
axis-aligned, includes the critical 45), 100 epochs.  The full protocol
matches the reference numbers: 256x256, 100/50 pairs, 17 angles, 250
epochs, minibatches of 10.

Every stage leaves its artifacts on disk and is skipped when they are
already present, so an interrupted run (or a rerun of the acceptance
suite) picks up where it stopped: the dataset directory is reused, each
model resumes from its checkpoint, and the sweep only runs once all
checkpoints are final.

Initialization note: the protocol initializes tau = 0.02 instead of the
block default 0.1.  With the 8-scale ladder the stencil scheme's
effective step is tau * sum(w_l * beta_l^2) ~ 7.9 tau, and 0.1 sits far
outside the stable range (the uncoupled model oscillates to negative
PSNR within 10 steps).  0.02 is stable for all couplings and leaves the
optimizer a usable signal.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import DatasetSpec, SceneSpec, build_datasets, desk_scene
from .evaluate import baseline_sweep, emit_report, evaluate_sweep, merge_reports
from .training import DEFAULT_SIGMAS, TrainConfig, load_checkpoint, train

__all__ = [
    "ModelSpec",
    "ExperimentSpec",
    "DESK_MODELS",
    "desk_spec",
    "full_spec",
    "train_config",
    "run_experiment",
]

# The five models of the rotation study: the uncoupled baseline and both
# coupled variants at the rotation-optimal stencil (alpha = 0.41), plus
# the coupled variants at the fully diagonal extreme (alpha = 0.5).
DESK_MODELS = (
    ("iso_a41", "iso", 0.41),
    ("aniso_a41", "aniso", 0.41),
    ("uncoupled_a41", "uncoupled", 0.41),
    ("iso_a50", "iso", 0.5),
    ("aniso_a50", "aniso", 0.5),
)


@dataclass(frozen=True)
class ModelSpec:
    label: str
    variant: str
    alpha: float
    gamma: float = 0.0
    backend: str = "stencil"


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    scene: SceneSpec
    test_angles: tuple
    train_count: int
    test_count: int
    epochs: int
    batch_size: int  # 0 = full batch
    models: tuple = tuple(ModelSpec(*m) for m in DESK_MODELS)
    train_angle: float = 30.0
    sigma: float = 60.0
    seed: int = 0
    lr: float = 1e-3
    steps: int = 10
    init_tau: float = 0.02
    init_contrast: float = 30.0
    init_gain: float = 1.0


def desk_spec(seed=0):
    # Minibatches of 4 and lr 0.02: 100 epochs give 800 Adam steps,
    # enough for the coupled models to rescale (tau, beta) from the
    # shared initialization.  Full-batch at this scale is only 100
    # steps, which strands the scalar-coupled model near its
    # initialization and far from its achievable quality.
    return ExperimentSpec(
        name="desk",
        scene=desk_scene(),
        test_angles=tuple(float(a) for a in range(5, 90, 10)),
        train_count=32,
        test_count=16,
        epochs=100,
        batch_size=4,
        seed=seed,
        lr=0.02,
    )


def full_spec(seed=0):
    return ExperimentSpec(
        name="full",
        scene=SceneSpec(),
        test_angles=tuple(float(a) for a in range(5, 90, 5)),
        train_count=100,
        test_count=50,
        epochs=250,
        batch_size=10,
        seed=seed,
    )


def train_config(spec, model, workers=1):
    return TrainConfig(
        variant=model.variant,
        backend=model.backend,
        alpha=model.alpha,
        gamma=model.gamma,
        sigmas=DEFAULT_SIGMAS,
        epochs=spec.epochs,
        lr=spec.lr,
        batch_size=spec.batch_size,
        steps=spec.steps,
        seed=spec.seed,
        init_tau=spec.init_tau,
        init_contrast=spec.init_contrast,
        init_gain=spec.init_gain,
        label=model.label,
        workers=workers,
    )


def _dataset_stage(spec, out_dir, log):
    data_dir = Path(out_dir) / "dataset"
    manifest = data_dir / "manifest.txt"
    if manifest.exists():
        log(f"[{spec.name}] dataset present: {manifest}")
        return manifest
    log(f"[{spec.name}] rendering dataset into {data_dir}")
    return build_datasets(
        data_dir,
        DatasetSpec(
            scene=spec.scene,
            train_angle=spec.train_angle,
            sigma=spec.sigma,
            seed=spec.seed,
            train_count=spec.train_count,
            test_count=spec.test_count,
            test_angles=spec.test_angles,
        ),
    )


def _train_stage(spec, model, manifest, out_dir, workers, log):
    ckpt = Path(out_dir) / "models" / f"{model.label}.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    cfg = train_config(spec, model, workers)
    if ckpt.exists():
        done = load_checkpoint(ckpt).epoch
        if done >= spec.epochs:
            log(f"[{spec.name}] {model.label}: trained ({done} epochs), skipping")
            return ckpt
        log(f"[{spec.name}] {model.label}: resuming at epoch {done + 1}/{spec.epochs}")
    else:
        log(f"[{spec.name}] {model.label}: training {spec.epochs} epochs")
    train(
        cfg,
        manifest,
        str(ckpt),
        resume=ckpt.exists(),
        progress=lambda epoch, loss: log(
            f"[{spec.name}] {model.label} epoch {epoch}/{spec.epochs} loss {loss:.4f}"
        ),
    )
    return ckpt


def run_experiment(spec, out_dir, workers=1, log=None):
    """Run (or finish) the experiment; returns the merged SweepReport.

    Artifacts under ``out_dir``: ``dataset/`` with the manifest and PGM
    pairs, ``models/<label>.ckpt`` plus per-model loss CSVs, and
    ``report.csv`` / ``report.dat`` with the merged sweep.
    """
    log = log or (lambda msg: None)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _dataset_stage(spec, out_dir, log)
    ckpts = [_train_stage(spec, model, manifest, out_dir, workers, log) for model in spec.models]
    log(f"[{spec.name}] sweeping {len(ckpts)} models over {len(spec.test_angles)} angles")
    reports = [evaluate_sweep(ckpt, manifest) for ckpt in ckpts]
    reports.append(baseline_sweep(manifest))
    merged = merge_reports(reports)
    report_path = out_dir / "report.csv"
    emit_report(merged, report_path)
    log(f"[{spec.name}] report written: {report_path}")
    return merged


def main(argv=None):
    """Command line runner: ``python -m rotdiff.experiment --out DIR``."""
    import argparse
    import sys
    import time

    parser = argparse.ArgumentParser(
        prog="rotdiff-experiment",
        description="Run the rotation sweep experiment (desk protocol by default).",
    )
    parser.add_argument("--out", default="experiments/desk", help="artifact directory")
    parser.add_argument("--full", action="store_true", help="full protocol (much slower)")
    parser.add_argument("--workers", type=int, default=1, help="gradient probe processes")
    args = parser.parse_args(argv)

    spec = full_spec() if args.full else desk_spec()
    start = time.monotonic()

    def log(msg):
        print(f"[{time.monotonic() - start:7.0f}s] {msg}")
        sys.stdout.flush()

    report = run_experiment(spec, args.out, workers=args.workers, log=log)
    for model in report.models():
        var = report.variance(model)
        print(f"{model}: variance {var:.6g} dB^2")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
