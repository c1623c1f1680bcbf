"""Rotationally invariant diffusion blocks.

Explicit diffusion schemes whose activations couple operator channels,
image channels, and scales, evaluated on a rotation-robustness
benchmark: synthetic oriented-rectangle scenes are denoised by models
trained at a single orientation and tested across the sweep of
orientations.  Subpackage map:

``grid``       image grids, boundaries, separable convolution
``pgm``        8-bit PGM input and output
``operators``  discrete operators K and their exact adjoints
``flux``       scalar diffusivities and matrix-valued diffusion tensors
``blocks``     diffusion steps (adjoint and divergence-stencil backends)
``dataset``    synthetic scenes, noise, PSNR
``training``   finite-difference gradients, Adam, checkpoints
``evaluate``   rotation sweeps, variance metric, reports
``experiment`` the end-to-end reproduction protocols
``cli``        the ``rotdiff`` command
"""

from .blocks import (
    BlockConfig,
    NumericalBlowupError,
    diffusion_step,
    evolve,
    multichannel_step,
    stencil_divergence,
)
from .dataset import (
    DatasetSpec,
    Record,
    SceneSpec,
    add_noise,
    build_datasets,
    desk_scene,
    psnr,
    read_manifest,
    render_scene,
)
from .evaluate import (
    SweepReport,
    baseline_sweep,
    denoise,
    emit_report,
    evaluate_sweep,
    merge_reports,
    parse_report,
)
from .flux import (
    Diffusivity,
    IndefiniteTensorError,
    accumulate_structure_tensor,
    diffusivity_energy,
    eval_diffusivity,
    matrix_diffusivity,
)
from .operators import OperatorSpec, apply_adjoint, apply_operator
from .pgm import read_pgm, write_pgm
from .training import (
    Checkpoint,
    TrainConfig,
    adam_step,
    batch_loss,
    fd_gradient,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

# experiment is imported lazily so 'python3 -m rotdiff.experiment' does
# not trip runpy's already-in-sys.modules warning
_EXPERIMENT_NAMES = ("ExperimentSpec", "ModelSpec", "desk_spec", "full_spec", "run_experiment")


def __getattr__(name):
    if name in _EXPERIMENT_NAMES:
        from . import experiment

        return getattr(experiment, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "BlockConfig",
    "Checkpoint",
    "DatasetSpec",
    "Diffusivity",
    "ExperimentSpec",
    "IndefiniteTensorError",
    "ModelSpec",
    "NumericalBlowupError",
    "OperatorSpec",
    "Record",
    "SceneSpec",
    "SweepReport",
    "TrainConfig",
    "accumulate_structure_tensor",
    "adam_step",
    "add_noise",
    "apply_adjoint",
    "apply_operator",
    "baseline_sweep",
    "batch_loss",
    "build_datasets",
    "denoise",
    "desk_scene",
    "desk_spec",
    "diffusion_step",
    "diffusivity_energy",
    "emit_report",
    "eval_diffusivity",
    "evaluate_sweep",
    "evolve",
    "fd_gradient",
    "full_spec",
    "load_checkpoint",
    "matrix_diffusivity",
    "merge_reports",
    "multichannel_step",
    "parse_report",
    "psnr",
    "read_manifest",
    "read_pgm",
    "render_scene",
    "run_experiment",
    "save_checkpoint",
    "stencil_divergence",
    "train",
    "write_pgm",
]
