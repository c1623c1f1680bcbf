"""Loss, finite-difference gradients, Adam, checkpoints, and the train loop."""

import dataclasses
import math

import numpy as np
import pytest

from rotdiff.dataset import SceneSpec, add_noise, render_scene
from rotdiff.training import (
    PENALTY_LOSS,
    Checkpoint,
    TrainConfig,
    adam_step,
    batch_loss,
    block_config,
    config_hash,
    decode_params,
    fd_gradient,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softplus,
    softplus_inv,
    train,
    train_on_arrays,
)

SMALL = dict(sigmas=(0.5, 1.2, 2.5), steps=3, init_tau=0.02)


def _tiny_cfg(**kw):
    merged = {**SMALL, **kw}
    return TrainConfig(**merged)


def _pairs(count=3, size=32, sigma=40.0, seed=0):
    scene = SceneSpec(size=size, rect_w=0.55 * size, rect_h=0.27 * size, count=3)
    clean = np.stack(
        [render_scene(scene, 30.0, np.random.default_rng((seed, i))) for i in range(count)]
    )
    noisy = np.stack(
        [add_noise(c, sigma, np.random.default_rng((seed, 1000 + i))) for i, c in enumerate(clean)]
    )
    return clean, noisy


# ------------------------------------------------------------- transforms


def test_softplus_round_trip_and_limits():
    assert softplus(0.0) == pytest.approx(math.log(2.0))
    for y in (1e-6, 0.5, 3.0, 100.0, 1e4):
        assert softplus(softplus_inv(y)) == pytest.approx(y, rel=1e-12)
    assert softplus_inv(800.0) == 800.0  # linear regime passthrough
    assert softplus(-800.0) == 0.0  # underflows to exactly zero
    with pytest.raises(ValueError):
        softplus_inv(0.0)
    with pytest.raises(ValueError):
        softplus_inv(-1.0)


def test_config_validation_and_params():
    with pytest.raises(ValueError):
        _tiny_cfg(variant="diagonal")
    with pytest.raises(ValueError):
        _tiny_cfg(backend="fft")
    with pytest.raises(ValueError):
        _tiny_cfg(epochs=0)
    with pytest.raises(ValueError):
        _tiny_cfg(lr=0.0)
    with pytest.raises(ValueError):
        _tiny_cfg(sigmas=(2.0, 1.0))
    with pytest.raises(ValueError):
        _tiny_cfg(alpha=0.7)
    cfg = _tiny_cfg()
    assert cfg.num_params == 5  # tau, lambda, one beta per scale
    assert TrainConfig().num_params == 10
    assert cfg.coupling == "scalar"
    assert _tiny_cfg(variant="aniso").coupling == "tensor"


def test_init_and_decode_params():
    cfg = _tiny_cfg(init_tau=0.05, init_contrast=25.0, init_gain=0.9)
    raw = init_params(cfg)
    tau, contrast, betas = decode_params(raw)
    assert tau == pytest.approx(0.05, rel=1e-12)
    assert contrast == pytest.approx(25.0, rel=1e-12)
    assert betas == (0.9, 0.9, 0.9)  # gains stay raw and may go negative
    bc = block_config(cfg, raw)
    assert bc.operator.sigmas == cfg.sigmas
    assert bc.coupling == "scalar"
    assert bc.tau == pytest.approx(0.05, rel=1e-12)


# ------------------------------------------------------------------- loss


def test_loss_identity_when_tau_decodes_to_zero():
    clean, noisy = _pairs(2)
    cfg = _tiny_cfg()
    raw = init_params(cfg)
    raw[0] = -800.0  # softplus underflows to exactly 0
    loss, flag = batch_loss(cfg, raw, clean, noisy)
    want = float(np.mean(np.mean((noisy - clean) ** 2, axis=(-2, -1))))
    assert not flag
    assert loss == pytest.approx(want, rel=1e-15)
    same, _ = batch_loss(cfg, raw, clean, clean)
    assert same == 0.0


def test_loss_constant_offset_is_exact():
    clean = np.zeros((1, 8, 8))
    noisy = np.full((1, 8, 8), 10.0)
    cfg = _tiny_cfg()
    raw = init_params(cfg)
    raw[0] = -800.0
    loss, _ = batch_loss(cfg, raw, clean, noisy)
    assert loss == 100.0


def test_loss_is_batch_mean_of_per_image_means():
    cfg = _tiny_cfg()
    raw = init_params(cfg)
    raw[0] = -800.0
    clean = np.zeros((2, 4, 4))
    noisy = np.stack([np.full((4, 4), 2.0), np.full((4, 4), 4.0)])
    loss, _ = batch_loss(cfg, raw, clean, noisy)
    assert loss == pytest.approx((4.0 + 16.0) / 2.0, rel=1e-15)


def test_loss_penalty_on_blowup():
    clean, noisy = _pairs(1)
    cfg = _tiny_cfg()
    raw = init_params(cfg)
    raw[0] = 1e8  # decoded tau ~ 1e8, far beyond any stability bound
    loss, flag = batch_loss(cfg, raw, clean, noisy)
    assert flag and loss == PENALTY_LOSS


def test_loss_validates_shapes():
    cfg = _tiny_cfg()
    raw = init_params(cfg)
    with pytest.raises(ValueError):
        batch_loss(cfg, raw, np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))


def test_loss_gradient_wrt_tau_is_negative_near_zero():
    # A small diffusion step always helps on noisy data, so the descent
    # direction at tau -> 0+ increases tau.
    clean, noisy = _pairs(2, sigma=60.0)
    cfg = _tiny_cfg(init_contrast=30.0)
    raw = init_params(cfg)
    raw[0] = -9.0  # tau ~ 1.2e-4
    grad = fd_gradient(lambda p: batch_loss(cfg, p, clean, noisy), raw, 1e-4)
    assert grad[0] < 0.0


# --------------------------------------------------------------- gradient


def test_fd_gradient_on_quadratic_surrogate():
    raw = np.array([0.3, -1.2, 2.0, 0.0, 5.0])
    grad = fd_gradient(lambda p: (float(np.sum(p * p)), False), raw, 1e-4)
    np.testing.assert_allclose(grad, 2.0 * raw, rtol=0, atol=1e-6)


def test_fd_gradient_probe_order_and_step_floor():
    seen = []

    def map_fn(probes):
        seen.extend(np.asarray(p).copy() for p in probes)
        return [(float(np.sum(p * p)), False) for p in probes]

    raw = np.array([2.0, 0.0])
    grad = fd_gradient(lambda p: (0.0, False), raw, 1e-4, map_fn=map_fn)
    assert len(seen) == 4  # [+0, -0, +1, -1]
    assert seen[0][0] == pytest.approx(2.0 + 2e-4)
    assert seen[1][0] == pytest.approx(2.0 - 2e-4)
    # |raw[1]| = 0, so the absolute floor takes over.
    assert seen[2][1] == pytest.approx(1e-6)
    assert seen[3][1] == pytest.approx(-1e-6)
    np.testing.assert_allclose(grad, 2.0 * raw, rtol=0, atol=1e-6)


def test_fd_gradient_zeroes_double_penalty_coordinates():
    def loss_fn(p):
        # Any probe that perturbs coordinate 0 blows up; probes of other
        # coordinates leave it at its base value and evaluate normally.
        return (PENALTY_LOSS, True) if p[0] != 2.0 else (float(p[1]), False)

    raw = np.array([2.0, 3.0])
    with pytest.warns(RuntimeWarning, match="parameter 0"):
        grad = fd_gradient(loss_fn, raw, 1e-4)
    assert grad[0] == 0.0
    assert grad[1] == pytest.approx(1.0, rel=1e-6)


def test_fd_gradient_beta_symmetry_for_duplicate_scales():
    # Two identical sigma entries make the forward map symmetric under
    # swapping their gains, so the two beta gradients must agree.
    clean, noisy = _pairs(2)
    cfg = TrainConfig(
        sigmas=(0.8, 0.8, 2.0),
        scale_weights=(1.0, 1.0, 1.0),
        steps=3,
        init_tau=0.02,
    )
    raw = init_params(cfg)
    grad = fd_gradient(lambda p: batch_loss(cfg, p, clean, noisy), raw, 1e-4)
    assert abs(grad[2] - grad[3]) <= 1e-8 * max(abs(grad[2]), 1.0)


@pytest.mark.parametrize("variant", ["uncoupled", "iso", "aniso"])
def test_fd_gradient_richardson_consistency_at_init(variant):
    clean, noisy = _pairs(3, size=64, sigma=60.0)
    cfg = TrainConfig(variant=variant, steps=5, init_tau=0.02)
    raw = init_params(cfg)
    fn = lambda p: batch_loss(cfg, p, clean, noisy)
    g1 = fd_gradient(fn, raw, 1e-4)
    g2 = fd_gradient(fn, raw, 5e-5)
    rel = np.abs(g1 - g2) / np.maximum(np.abs(g2), 1e-12)
    assert np.max(rel) <= 1e-3


# ------------------------------------------------------------------- adam


def test_adam_first_step_moves_by_lr_against_gradient():
    params = np.array([1.0, -2.0, 0.5])
    grad = np.array([3.0, -0.2, 1e-4])
    new, m, v = adam_step(params, grad, np.zeros(3), np.zeros(3), t=1, lr=0.01)
    np.testing.assert_allclose(new, params - 0.01 * np.sign(grad), rtol=1e-4)


def test_adam_zero_gradient_is_a_fixed_point():
    params = np.array([1.0, 2.0])
    new, m, v = adam_step(params, np.zeros(2), np.zeros(2), np.zeros(2), t=1, lr=0.5)
    np.testing.assert_array_equal(new, params)
    with pytest.raises(ValueError):
        adam_step(params, np.zeros(2), np.zeros(2), np.zeros(2), t=0, lr=0.5)


def test_adam_converges_on_scalar_quadratic():
    p = np.array([0.0])
    m = v = np.zeros(1)
    for t in range(1, 101):
        grad = fd_gradient(lambda q: (float((q[0] - 3.0) ** 2), False), p, 1e-4)
        p, m, v = adam_step(p, grad, m, v, t, lr=0.1)
    assert abs(p[0] - 3.0) < 0.1


# ------------------------------------------------------------ checkpoints


def test_config_hash_ignores_label_and_workers():
    a = _tiny_cfg(label="run-a", workers=1)
    b = _tiny_cfg(label="run-b", workers=4)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(_tiny_cfg(seed=1))
    assert config_hash(a) != config_hash(_tiny_cfg(lr=0.002))


def test_checkpoint_round_trip(tmp_path):
    cfg = _tiny_cfg(label="rt")
    raw = init_params(cfg)
    ck = Checkpoint(cfg, raw, 0.1 * raw, 0.01 * raw + 1.0, adam_t=7, epoch=3)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.cfg == cfg
    assert back.adam_t == 7 and back.epoch == 3
    np.testing.assert_array_equal(back.params, ck.params)
    np.testing.assert_array_equal(back.adam_m, ck.adam_m)
    np.testing.assert_array_equal(back.adam_v, ck.adam_v)


def test_checkpoint_rejects_tampering(tmp_path):
    cfg = _tiny_cfg()
    ck = Checkpoint(cfg, init_params(cfg), np.zeros(5), np.zeros(5), 0, 0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, ck)
    text = path.read_text()
    path.write_text(text.replace("lr 0.001", "lr 0.002"))
    with pytest.raises(ValueError, match="hash"):
        load_checkpoint(path)
    path.write_text(text.splitlines()[0] + "\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)


# ------------------------------------------------------------- train loop


def test_train_smoke_loss_decreases(tmp_path):
    clean, noisy = _pairs(4, sigma=40.0)
    cfg = _tiny_cfg(variant="uncoupled", epochs=3, lr=0.05, init_contrast=30.0)
    losses = []
    ck = train_on_arrays(
        cfg, clean, noisy, tmp_path / "u.ckpt", progress=lambda e, l: losses.append((e, l))
    )
    assert ck.epoch == 3 and ck.adam_t == 3
    assert [e for e, _ in losses] == [0, 1, 2, 3]
    assert losses[-1][1] < losses[0][1]
    tau, contrast, _ = decode_params(ck.params)
    assert tau > 0 and contrast > 0
    log = (tmp_path / "u.ckpt.loss.csv").read_text().splitlines()
    assert log[0] == "epoch,loss"
    assert len(log) == 5


def test_first_adam_steps_reduce_loss_with_default_config():
    # Full protocol shape (8 scales, 10 inner steps, lr 1e-3), 10 single
    # full-batch epochs on 5 images: the running best loss must improve.
    clean, noisy = _pairs(5, size=64, sigma=60.0)
    cfg = TrainConfig(epochs=10)
    losses = []
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        train_on_arrays(cfg, clean, noisy, f"{d}/m.ckpt",
                        progress=lambda e, l: losses.append(l))
    assert losses[-1] < losses[0]
    assert min(losses[6:]) < min(losses[:4])


def test_training_is_deterministic(tmp_path):
    clean, noisy = _pairs(3)
    cfg = _tiny_cfg(epochs=2, batch_size=2, lr=0.02)
    train_on_arrays(cfg, clean, noisy, tmp_path / "a.ckpt")
    train_on_arrays(cfg, clean, noisy, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_resume_is_bit_identical(tmp_path):
    clean, noisy = _pairs(3)
    kw = dict(batch_size=2, lr=0.02, seed=4)
    full = train_on_arrays(
        _tiny_cfg(epochs=3, **kw), clean, noisy, tmp_path / "full.ckpt"
    )
    # Stop after 2 epochs, then restamp the checkpoint as "2 of 3 done":
    # the shuffle stream depends only on (seed, epoch), so continuing must
    # land exactly where the uninterrupted run did.
    train_on_arrays(_tiny_cfg(epochs=2, **kw), clean, noisy, tmp_path / "part.ckpt")
    ck = load_checkpoint(tmp_path / "part.ckpt")
    ck.cfg = dataclasses.replace(ck.cfg, epochs=3)
    save_checkpoint(tmp_path / "part.ckpt", ck)
    resumed = train_on_arrays(
        _tiny_cfg(epochs=3, **kw), clean, noisy, tmp_path / "part.ckpt", resume=True
    )
    np.testing.assert_array_equal(resumed.params, full.params)
    np.testing.assert_array_equal(resumed.adam_m, full.adam_m)
    np.testing.assert_array_equal(resumed.adam_v, full.adam_v)
    assert resumed.adam_t == full.adam_t


def test_resume_refuses_other_config(tmp_path):
    clean, noisy = _pairs(2)
    train_on_arrays(_tiny_cfg(epochs=1), clean, noisy, tmp_path / "m.ckpt")
    with pytest.raises(ValueError, match="hash"):
        train_on_arrays(
            _tiny_cfg(epochs=1, lr=0.37), clean, noisy, tmp_path / "m.ckpt", resume=True
        )


def test_resume_of_finished_run_is_a_no_op(tmp_path):
    clean, noisy = _pairs(2)
    cfg = _tiny_cfg(epochs=2)
    done = train_on_arrays(cfg, clean, noisy, tmp_path / "m.ckpt")
    again = train_on_arrays(cfg, clean, noisy, tmp_path / "m.ckpt", resume=True)
    np.testing.assert_array_equal(again.params, done.params)
    assert again.epoch == 2


def test_worker_pool_matches_serial(tmp_path):
    clean, noisy = _pairs(3)
    serial = train_on_arrays(
        _tiny_cfg(epochs=2, batch_size=2, lr=0.02), clean, noisy, tmp_path / "s.ckpt"
    )
    pooled = train_on_arrays(
        _tiny_cfg(epochs=2, batch_size=2, lr=0.02, workers=2),
        clean, noisy, tmp_path / "p.ckpt",
    )
    np.testing.assert_array_equal(pooled.params, serial.params)
    np.testing.assert_array_equal(pooled.adam_m, serial.adam_m)


def test_variants_train_to_different_contrast(tmp_path):
    clean, noisy = _pairs(3, sigma=60.0)
    out = {}
    for variant in ("uncoupled", "iso"):
        ck = train_on_arrays(
            _tiny_cfg(variant=variant, epochs=2, lr=0.05),
            clean, noisy, tmp_path / f"{variant}.ckpt",
        )
        out[variant] = decode_params(ck.params)[1]
    assert out["uncoupled"] != out["iso"]


def test_train_reads_manifest_training_records_only(tmp_path):
    from rotdiff.dataset import DatasetSpec, build_datasets

    spec = DatasetSpec(
        scene=SceneSpec(size=24, rect_w=14, rect_h=6, count=2),
        train_count=2,
        test_count=1,
        test_angles=(45.0,),
        sigma=40.0,
        seed=1,
    )
    manifest = build_datasets(tmp_path / "data", spec)
    cfg = _tiny_cfg(epochs=1)
    ck = train(cfg, manifest, tmp_path / "m.ckpt")
    assert ck.epoch == 1
    with pytest.raises(ValueError, match="no training records"):
        empty = DatasetSpec(
            scene=SceneSpec(size=24, rect_w=14, rect_h=6, count=2),
            train_count=0,
            test_count=1,
            test_angles=(45.0,),
            seed=1,
        )
        train(cfg, build_datasets(tmp_path / "data2", empty), tmp_path / "m2.ckpt")
