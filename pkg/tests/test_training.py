import dataclasses

import numpy as np
import pytest
import torch

from sumd import checkpoint as ckpt_io
from sumd._validation import ConfigurationError, InputError, NonFiniteError
from sumd.data import NoiseCase
from sumd.multistage import SUMD
from sumd.tensor_ops import finite_diff_gradcheck
from sumd.training import (
    TrainConfig, Trainer, charbonnier_loss, evaluate, lr_schedule, make_validation_set,
    multi_output_loss, sample_batch,
)

CASE = NoiseCase("awgn", 25.0)


def small_train(**kw):
    base = dict(iters=20, batch=2, patch=16, log_every=0, val_every=0)
    base.update(kw)
    return TrainConfig(**base)


class TestCharbonnier:
    def test_zero_residual_gives_eps(self):
        x = torch.rand(2, 3, 4, 4)
        assert charbonnier_loss(x, x, 1e-3).item() == pytest.approx(1e-3, rel=1e-6)
        assert multi_output_loss(x, [x], x, 1e-3).item() == pytest.approx(2e-3, rel=1e-6)

    def test_lower_bound_and_asymptote(self):
        x, y = torch.zeros(100), torch.full((100,), 3.0)
        loss = charbonnier_loss(x, y, 1e-3).item()
        assert loss >= 1e-3
        assert loss / torch.linalg.norm(x - y).item() == pytest.approx(1.0, abs=1e-9)

    def test_gradient_finite_at_zero_residual(self):
        t = torch.rand(6, dtype=torch.float64)
        err = finite_diff_gradcheck(lambda p: charbonnier_loss(p, t, 1e-3), t.clone())
        assert err < 1e-6

    def test_per_pixel_form(self):
        x, y = torch.zeros(4), torch.tensor([0.0, 1.0, 2.0, 3.0])
        expected = np.mean(np.sqrt(np.array([0, 1, 4, 9]) + 1e-6))
        assert charbonnier_loss(x, y, 1e-3, "per-pixel").item() == pytest.approx(expected)

    def test_errors(self):
        with pytest.raises(InputError):
            charbonnier_loss(torch.zeros(3), torch.zeros(4))
        with pytest.raises(ConfigurationError):
            charbonnier_loss(torch.zeros(3), torch.zeros(3), form="l1")


def test_lr_schedule_endpoints_and_monotonicity():
    cfg = TrainConfig(iters=101)
    lrs = [lr_schedule(t, cfg) for t in range(101)]
    assert lrs[0] == pytest.approx(2e-4) and lrs[-1] == pytest.approx(1e-6)
    assert lrs[50] == pytest.approx((2e-4 + 1e-6) / 2)
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(iters=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_init=1e-6, lr_final=1e-4)
    with pytest.raises(ConfigurationError):
        TrainConfig(loss_form="mse")


def test_batches_are_a_function_of_seed_and_iteration(textured_images):
    cfg = small_train()
    a = sample_batch(textured_images, 3, cfg, CASE)
    b = sample_batch(textured_images, 3, cfg, CASE)
    c = sample_batch(textured_images, 4, cfg, CASE)
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert not torch.equal(a[1], c[1])
    assert a[0].shape == (2, 3, 16, 16)


def test_smoke_training_stays_finite(tiny_config, textured_images, tmp_path):
    torch.manual_seed(0)
    val = make_validation_set(textured_images[:2], CASE, 1, tiny_config.multiple)
    trainer = Trainer(SUMD(tiny_config), small_train(log_every=5, val_every=10), textured_images,
                      CASE, val, metrics_path=tmp_path / "m.jsonl")
    history = trainer.run()
    assert trainer.iteration == 20
    assert all(np.isfinite(r.loss) for r in history)
    assert [r.iter for r in history if r.psnr_val is not None] == [10, 20]
    assert len((tmp_path / "m.jsonl").read_text().splitlines()) == len(history)


def test_non_finite_loss_aborts_with_diagnostics(tiny_config, textured_images):
    model = SUMD(tiny_config)
    with torch.no_grad():
        model.tail.bias.fill_(float("nan"))
    trainer = Trainer(model, small_train(), textured_images, CASE)
    with pytest.raises(NonFiniteError, match=r"iteration 0 .*lr=.*grad-norm"):
        trainer.step()


def _run(cfg, images, train_cfg, until=None, resume_from=None):
    torch.manual_seed(0)
    trainer = Trainer(SUMD(cfg), train_cfg, images, CASE, model_config={})
    if resume_from is not None:
        trainer.load_state(ckpt_io.load(resume_from))
    trainer.run(until)
    return trainer


def test_resume_is_bitwise_identical(tiny_config, textured_images, tmp_path):
    cfg = small_train()
    straight = _run(tiny_config, textured_images, cfg)
    half = _run(tiny_config, textured_images, cfg, until=10)
    half.save(tmp_path / "ck")
    resumed = _run(tiny_config, textured_images, cfg, resume_from=tmp_path / "ck")
    assert resumed.iteration == 20
    for (n, a), b in zip(straight.model.state_dict().items(), resumed.model.state_dict().values()):
        assert torch.equal(a, b), n


def test_checkpoint_round_trip_forward(tiny_config, textured_images, tmp_path):
    trainer = _run(tiny_config, textured_images, small_train(iters=3))
    trainer.save(tmp_path / "ck")
    ck = ckpt_io.load(tmp_path / "ck")
    assert ck.iteration == 3
    assert not any(k.endswith((".D", ".C")) for k in ck.tensors)
    clone = SUMD(tiny_config)
    clone.load_state_dict(ck.model_state())
    for m in (trainer.model, clone):
        m.set_factor_seed(5)
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(trainer.model.eval()(x)[0], clone.eval()(x)[0])


def test_corrupt_checkpoint_detected(tiny_config, tmp_path):
    trainer = Trainer(SUMD(tiny_config), small_train(), [np.zeros((16, 16, 3), np.float32)], CASE)
    trainer.save(tmp_path / "ck")
    payload = tmp_path / "ck" / ckpt_io.PAYLOAD
    payload.write_bytes(payload.read_bytes()[:-4])
    with pytest.raises(ckpt_io.CheckpointError, match="manifest mismatch"):
        ckpt_io.load(tmp_path / "ck")
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.load(tmp_path / "missing")


def test_evaluate_reports_noisy_baseline(tiny_config, textured_images):
    model = SUMD(tiny_config)
    pairs = make_validation_set(textured_images[:2], CASE, 0, tiny_config.multiple)
    res = evaluate(model, pairs, 0)
    # a zero-initialized head returns its input
    assert res["psnr"] == pytest.approx(res["psnr_noisy"])
    assert set(res) == {"psnr", "psnr_noisy", "ssim"}


def test_validation_set_cropped_to_multiple(textured_images):
    img = textured_images[0][:30, :27]
    (pair,) = make_validation_set([img], CASE, 0, 8)
    assert pair.clean.shape == (1, 3, 24, 24)


def test_paired_training_uses_given_noisy_images(tiny_config, textured_images):
    noisy = [np.clip(t + 0.1, 0, 1) for t in textured_images]
    trainer = Trainer(SUMD(tiny_config), small_train(), textured_images, CASE, noisy_images=noisy)
    clean, noisy_b = sample_batch(trainer.images, 0, trainer.cfg, CASE, trainer.noisy_images)
    assert (noisy_b - clean).abs().max() <= 0.1 + 1e-6
    with pytest.raises(InputError):
        Trainer(SUMD(tiny_config), small_train(), textured_images, CASE, noisy_images=noisy[:2])
