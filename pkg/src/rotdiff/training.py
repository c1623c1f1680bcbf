"""Finite-difference training of the 10-parameter multiscale models.

The trainable vector is [tau_raw, lambda_raw, beta_1..beta_S]: tau and
lambda pass through a softplus to stay positive, the scale gains beta
are used as-is (signed weights are meaningful, they enter the operator
linearly and the couplings quadratically).  Gradients are central finite
differences over the raw vector (2 evaluations per parameter); with 10
parameters that is cheaper to build and verify than reverse-mode
differentiation through the eigendecompositions, and a Richardson check
guards the accuracy.  The optimizer is a from-scratch Adam.

Determinism contract: fixed seed + fixed config give a bit-identical
trajectory, and a checkpoint restarts it bit-identically.  Everything
random is re-derived from (seed, epoch), so the checkpoint only needs
the raw parameters, the Adam moments and counters.
"""

import hashlib
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockConfig, NumericalBlowupError, evolve
from .dataset import load_pairs, read_manifest
from .flux import Diffusivity
from .operators import OperatorSpec

__all__ = [
    "DEFAULT_SIGMAS",
    "PENALTY_LOSS",
    "VARIANTS",
    "TrainConfig",
    "Checkpoint",
    "softplus",
    "softplus_inv",
    "decode_params",
    "init_params",
    "block_config",
    "batch_loss",
    "fd_gradient",
    "adam_step",
    "config_hash",
    "save_checkpoint",
    "load_checkpoint",
    "train",
    "train_on_arrays",
]

# Geometric sigma ladder 0.1 .. 5.62 over 8 scales (factor 100^(1/8)).
DEFAULT_SIGMAS = tuple(0.1 * 100.0 ** (i / 8.0) for i in range(8))

# Model variant -> coupling of the diffusion block.
VARIANTS = {"uncoupled": "uncoupled", "iso": "scalar", "aniso": "tensor"}

# Loss reported when the forward pass blows up; finite so FD gradients
# stay finite and point away from the divergent region.
PENALTY_LOSS = 1.0e9

FD_STEP_FLOOR = 1.0e-6

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1.0e-8


def softplus(x):
    """log(1 + e^x), overflow-safe."""
    return float(np.logaddexp(0.0, float(x)))


def softplus_inv(y):
    """Raw value whose softplus is y (y > 0)."""
    y = float(y)
    if not np.isfinite(y) or y <= 0.0:
        raise ValueError(f"softplus_inv needs y > 0, got {y}")
    if y > 700.0:  # expm1 overflows; softplus is the identity to rounding here
        return y
    return float(np.log(np.expm1(y)))


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol and model selection.

    ``batch_size=0`` means full batch.  ``scale_weights=None`` derives
    the sigma-ladder default inside the diffusion block.  ``label`` and
    ``workers`` do not influence the trajectory and are excluded from
    the config hash; everything else is hashed, and a checkpoint refuses
    to resume under a different hash.
    """

    variant: str = "iso"
    backend: str = "stencil"
    alpha: float = 0.41
    gamma: float = 0.0
    sigmas: tuple = DEFAULT_SIGMAS
    scale_weights: tuple = None
    shared_tensor: bool = True
    epochs: int = 250
    lr: float = 1e-3
    batch_size: int = 0
    steps: int = 10
    seed: int = 0
    rel_step: float = 1e-4
    init_tau: float = 0.1
    init_contrast: float = 30.0
    init_gain: float = 1.0
    label: str = ""
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, want one of {sorted(VARIANTS)}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0 or not np.isfinite(self.lr):
            raise ValueError(f"lr must be finite and > 0, got {self.lr}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 0:
            raise ValueError(f"batch_size must be >= 0, got {self.batch_size}")
        if self.rel_step <= 0:
            raise ValueError(f"rel_step must be > 0, got {self.rel_step}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if self.scale_weights is not None:
            object.__setattr__(
                self, "scale_weights", tuple(float(w) for w in self.scale_weights)
            )
        # Fail on inconsistent geometry now, not at the first loss call.
        block_config(self, init_params(self))

    @property
    def coupling(self):
        return VARIANTS[self.variant]

    @property
    def num_params(self):
        return 2 + len(self.sigmas)


def init_params(cfg):
    """Initial raw vector: softplus-inverses for tau/lambda, gains as-is."""
    raw = np.empty(cfg.num_params)
    raw[0] = softplus_inv(cfg.init_tau)
    raw[1] = softplus_inv(cfg.init_contrast)
    raw[2:] = cfg.init_gain
    return raw


def decode_params(raw):
    """(tau, contrast, gains) from the raw vector."""
    raw = np.asarray(raw, dtype=np.float64)
    return softplus(raw[0]), softplus(raw[1]), tuple(float(b) for b in raw[2:])


def block_config(cfg, raw):
    tau, contrast, gains = decode_params(raw)
    op = OperatorSpec("multiscale_gradient", sigmas=cfg.sigmas, gains=gains)
    return BlockConfig(
        operator=op,
        diffusivity=Diffusivity(contrast),
        coupling=cfg.coupling,
        tau=tau,
        scale_weights=cfg.scale_weights,
        backend=cfg.backend,
        alpha=cfg.alpha,
        gamma=cfg.gamma,
        shared_tensor=cfg.shared_tensor,
    )


def batch_loss(cfg, raw, clean, noisy):
    """(loss, penalty_flag): batch-mean per-pixel MSE of the evolved batch.

    tau decoded to exactly zero short-circuits to the identity evolution
    (the limit the scheme takes there) since the block itself demands
    tau > 0.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape or clean.ndim < 2 or clean.shape[-2:] == (0, 0):
        raise ValueError(f"clean/noisy shape mismatch: {clean.shape} vs {noisy.shape}")
    if clean.size == 0:
        raise ValueError("empty batch")
    tau = softplus(np.asarray(raw, dtype=np.float64)[0])
    if tau == 0.0:
        out = noisy
    else:
        try:
            out = evolve(block_config(cfg, raw), noisy, cfg.steps)
        except NumericalBlowupError:
            return PENALTY_LOSS, True
    err = out - clean
    return float(np.mean(np.mean(err * err, axis=(-2, -1)))), False


def fd_gradient(loss_fn, raw, rel_step, map_fn=None):
    """Central finite differences of a (value, penalty_flag) loss.

    Probe i uses step h_i = max(rel_step * |raw_i|, 1e-6).  ``map_fn``,
    when given, evaluates the whole probe list (fixed order) and is the
    hook for the process pool; it must return the same (value, flag)
    pairs the serial path would.  Coordinates whose probes hit the
    penalty on both sides get gradient zero and a warning.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n = raw.size
    steps = np.maximum(rel_step * np.abs(raw), FD_STEP_FLOOR)
    probes = []
    for i in range(n):
        plus = raw.copy()
        plus[i] += steps[i]
        minus = raw.copy()
        minus[i] -= steps[i]
        probes.append(plus)
        probes.append(minus)
    if map_fn is not None:
        results = list(map_fn(probes))
    else:
        results = [loss_fn(p) for p in probes]
    grad = np.empty(n)
    for i in range(n):
        f_plus, flag_plus = results[2 * i]
        f_minus, flag_minus = results[2 * i + 1]
        if flag_plus and flag_minus:
            warnings.warn(
                f"both FD probes of parameter {i} hit the blowup penalty; "
                "zeroing its gradient",
                RuntimeWarning,
                stacklevel=2,
            )
            grad[i] = 0.0
        else:
            grad[i] = (f_plus - f_minus) / (2.0 * steps[i])
    return grad


def adam_step(params, grad, m, v, t, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update; t is the 1-based step index."""
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class Checkpoint:
    """Raw parameters plus optimizer state after ``epoch`` full epochs."""

    cfg: TrainConfig
    params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int
    epoch: int


_HASHED_KEYS = (
    "variant",
    "backend",
    "alpha",
    "gamma",
    "sigmas",
    "scale_weights",
    "shared_tensor",
    "epochs",
    "lr",
    "batch_size",
    "steps",
    "seed",
    "rel_step",
    "init_tau",
    "init_contrast",
    "init_gain",
)


def _format_value(value):
    if value is None:
        return "default"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _config_lines(cfg):
    return [f"{key} {_format_value(getattr(cfg, key))}" for key in _HASHED_KEYS]


def config_hash(cfg):
    text = "\n".join(_config_lines(cfg)) + "\n"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_checkpoint(path, ck):
    lines = ["format rotdiff-checkpoint-v1", f"config_hash {config_hash(ck.cfg)}"]
    if ck.cfg.label:
        lines.append(f"label {ck.cfg.label}")
    lines.extend(_config_lines(ck.cfg))
    lines.append(f"epoch {ck.epoch}")
    lines.append(f"adam_t {ck.adam_t}")
    for key, vec in (("params", ck.params), ("adam_m", ck.adam_m), ("adam_v", ck.adam_v)):
        lines.append(f"{key} {','.join(repr(float(x)) for x in vec)}")
    _write_atomic(path, "\n".join(lines) + "\n")


def _parse_tuple(text):
    if text == "default":
        return None
    return tuple(float(tok) for tok in text.split(","))


def load_checkpoint(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(" ")
            entries[key] = value
    if entries.get("format") != "rotdiff-checkpoint-v1":
        raise ValueError(f"{path}: not a rotdiff checkpoint")
    try:
        cfg = TrainConfig(
            variant=entries["variant"],
            backend=entries["backend"],
            alpha=float(entries["alpha"]),
            gamma=float(entries["gamma"]),
            sigmas=_parse_tuple(entries["sigmas"]),
            scale_weights=_parse_tuple(entries["scale_weights"]),
            shared_tensor=bool(int(entries["shared_tensor"])),
            epochs=int(entries["epochs"]),
            lr=float(entries["lr"]),
            batch_size=int(entries["batch_size"]),
            steps=int(entries["steps"]),
            seed=int(entries["seed"]),
            rel_step=float(entries["rel_step"]),
            init_tau=float(entries["init_tau"]),
            init_contrast=float(entries["init_contrast"]),
            init_gain=float(entries["init_gain"]),
            label=entries.get("label", ""),
        )
        stored_hash = entries["config_hash"]
        params = np.array(_parse_tuple(entries["params"]))
        adam_m = np.array(_parse_tuple(entries["adam_m"]))
        adam_v = np.array(_parse_tuple(entries["adam_v"]))
        epoch = int(entries["epoch"])
        adam_t = int(entries["adam_t"])
    except KeyError as exc:
        raise ValueError(f"{path}: missing checkpoint field {exc}") from exc
    if stored_hash != config_hash(cfg):
        raise ValueError(f"{path}: config hash mismatch, file edited or corrupted")
    if params.shape != (cfg.num_params,):
        raise ValueError(f"{path}: expected {cfg.num_params} parameters, got {params.size}")
    return Checkpoint(cfg, params, adam_m, adam_v, adam_t, epoch)


_POOL_DATA = None


def _pool_init(cfg, clean, noisy):
    global _POOL_DATA
    _POOL_DATA = (cfg, clean, noisy)


def _pool_probe(task):
    raw, idx = task
    cfg, clean, noisy = _POOL_DATA
    if idx is None:
        return batch_loss(cfg, raw, clean, noisy)
    return batch_loss(cfg, raw, clean[idx], noisy[idx])


def _epoch_order(seed, epoch, count):
    rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
    return rng.permutation(count)


def _read_log_rows(path):
    rows = []
    if not os.path.exists(path):
        return rows
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line == "epoch,loss":
                continue
            epoch_text, _, loss_text = line.partition(",")
            rows.append((int(epoch_text), loss_text))
    return rows


def _write_log(path, rows):
    lines = ["epoch,loss"] + [f"{epoch},{loss}" for epoch, loss in rows]
    _write_atomic(path, "\n".join(lines) + "\n")


def train_on_arrays(cfg, clean, noisy, out_path, loss_log_path=None, resume=False, progress=None):
    """Run the training loop on in-memory pairs; returns the final Checkpoint.

    Writes the checkpoint and the ``epoch,loss`` CSV after every epoch
    (atomically, so a killed run resumes from the last finished epoch).
    ``resume=True`` picks up an existing checkpoint with the same config
    hash and continues bit-identically; epochs already done are kept.
    ``progress``, when given, is called as progress(epoch, loss).
    """
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.ndim != 3 or clean.shape != noisy.shape:
        raise ValueError(
            f"expected matching (N, H, W) stacks, got {clean.shape} vs {noisy.shape}"
        )
    count = clean.shape[0]
    if count == 0:
        raise ValueError("no training pairs")
    if loss_log_path is None:
        loss_log_path = f"{out_path}.loss.csv"

    if resume and os.path.exists(out_path):
        ck = load_checkpoint(out_path)
        want, have = config_hash(cfg), config_hash(ck.cfg)
        if want != have:
            raise ValueError(
                f"{out_path}: checkpoint config hash {have[:12]} does not match "
                f"the requested configuration {want[:12]}"
            )
        ck = Checkpoint(cfg, ck.params, ck.adam_m, ck.adam_v, ck.adam_t, ck.epoch)
        log_rows = [r for r in _read_log_rows(loss_log_path) if r[0] <= ck.epoch]
    else:
        params = init_params(cfg)
        ck = Checkpoint(cfg, params, np.zeros_like(params), np.zeros_like(params), 0, 0)
        loss0, _ = batch_loss(cfg, ck.params, clean, noisy)
        log_rows = [(0, repr(loss0))]
        _write_log(loss_log_path, log_rows)
        save_checkpoint(out_path, ck)
        if progress is not None:
            progress(0, loss0)

    batch = cfg.batch_size if 0 < cfg.batch_size < count else count
    pool = None
    try:
        if cfg.workers > 1:
            import multiprocessing as mp

            pool = mp.get_context("fork").Pool(
                cfg.workers, initializer=_pool_init, initargs=(cfg, clean, noisy)
            )
        for epoch in range(ck.epoch + 1, cfg.epochs + 1):
            if batch < count:
                order = _epoch_order(cfg.seed, epoch, count)
            else:
                order = np.arange(count)
            for lo in range(0, count, batch):
                idx = order[lo : lo + batch]
                if batch == count:
                    chunk_idx = None
                    chunk = (clean, noisy)
                else:
                    chunk_idx = idx
                    chunk = (clean[idx], noisy[idx])
                loss_fn = lambda raw: batch_loss(cfg, raw, chunk[0], chunk[1])
                map_fn = None
                if pool is not None:
                    tasks_idx = chunk_idx
                    map_fn = lambda probes: pool.map(
                        _pool_probe, [(p, tasks_idx) for p in probes]
                    )
                grad = fd_gradient(loss_fn, ck.params, cfg.rel_step, map_fn)
                ck.adam_t += 1
                ck.params, ck.adam_m, ck.adam_v = adam_step(
                    ck.params, grad, ck.adam_m, ck.adam_v, ck.adam_t, cfg.lr
                )
            ck.epoch = epoch
            loss, _ = batch_loss(cfg, ck.params, clean, noisy)
            log_rows.append((epoch, repr(loss)))
            _write_log(loss_log_path, log_rows)
            save_checkpoint(out_path, ck)
            if progress is not None:
                progress(epoch, loss)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return ck


def train(cfg, manifest_path, out_path, loss_log_path=None, resume=False, progress=None):
    """Train on the manifest's training records; see :func:`train_on_arrays`."""
    records = [r for r in read_manifest(manifest_path) if r.role == "train"]
    if not records:
        raise ValueError(f"{manifest_path}: no training records")
    clean, noisy = load_pairs(records)
    return train_on_arrays(cfg, clean, noisy, out_path, loss_log_path, resume, progress)
