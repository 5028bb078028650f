"""Charbonnier training with AdamW and cosine annealing; evaluation helpers."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
import torch

from . import checkpoint as ckpt_io
from ._validation import ConfigurationError, InputError, NonFiniteError
from .data import CleanNoisyPair, augment, crop_patches, gen_masks, gen_awgn, gen_noniid, to_tensor
from .metrics import psnr_per_image, ssim

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-8
    iters: int = 2000
    batch: int = 4
    patch: int = 64
    charbonnier_eps: float = 1e-3
    seed: int = 0
    loss_form: str = "global"
    log_every: int = 50
    val_every: int = 500
    save_every: int = 0

    def __post_init__(self):
        if self.iters < 1:
            raise ConfigurationError(f"iters must be >= 1, got {self.iters}")
        if not self.lr_final < self.lr_init:
            raise ConfigurationError("lr_final must be smaller than lr_init")
        if self.loss_form not in ("global", "per-pixel"):
            raise ConfigurationError(f"loss_form must be 'global' or 'per-pixel', got {self.loss_form!r}")
        if self.batch < 1 or self.patch < 1:
            raise ConfigurationError("batch and patch must be >= 1")


@dataclass
class MetricsRecord:
    iter: int
    loss: float
    lr: float
    wallclock: float
    psnr_val: float = None
    ssim_val: float = None


def charbonnier_loss(pred, target, eps=1e-3, form="global"):
    """``sqrt(||pred - target||^2 + eps^2)`` or its per-pixel mean variant."""
    if pred.shape != target.shape:
        raise InputError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if not eps > 0:
        raise ConfigurationError("Charbonnier eps must be > 0")
    diff = pred - target
    if form == "global":
        return torch.sqrt(torch.sum(diff * diff) + eps**2)
    if form == "per-pixel":
        return torch.mean(torch.sqrt(diff * diff + eps**2))
    raise ConfigurationError(f"unknown Charbonnier form {form!r}")


def multi_output_loss(denoised, restored, target, eps=1e-3, form="global"):
    """Equal-weight sum over the final output and every intermediate restoration."""
    loss = charbonnier_loss(denoised, target, eps, form)
    for r in restored:
        loss = loss + charbonnier_loss(r, target, eps, form)
    return loss


def lr_schedule(it, cfg):
    if cfg.iters == 1:
        return cfg.lr_init
    t = min(max(it, 0), cfg.iters - 1)
    cos = math.cos(math.pi * t / (cfg.iters - 1))
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1 + cos)


@lru_cache(maxsize=16)
def _masks(h, w):
    return gen_masks(h, w)


def noisy_pair(clean, case, seed):
    """Synthesize the noisy counterpart of ``clean`` for a :class:`NoiseCase`."""
    g = torch.Generator().manual_seed(int(seed))
    if case.kind == "awgn":
        pair = gen_awgn(clean, case.sigma, g)
    else:
        pair = gen_noniid(clean, _masks(*clean.shape[-2:])[case.mask_id], g)
    pair.case = case
    return pair


def _as_tensor(img):
    return img if isinstance(img, torch.Tensor) else to_tensor(img)


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def sample_batch(images, it, cfg, case, noisy_images=None):
    """Training batch for iteration ``it``; a pure function of (seed, it).

    With ``noisy_images`` the pairs are taken as given (real-noise data)
    instead of synthesizing noise from ``case``.
    """
    rng = np.random.default_rng(_seed(cfg.seed, it, 1))
    clean, noisy = [], []
    for idx in rng.integers(0, len(images), cfg.batch):
        clean_img = _as_tensor(images[idx])
        if noisy_images is None:
            pair = noisy_pair(clean_img, case, rng.integers(2**62))
        else:
            pair = CleanNoisyPair(clean_img, _as_tensor(noisy_images[idx]), case)
        pair = augment(crop_patches(pair, cfg.patch, rng), rng)
        clean.append(pair.clean)
        noisy.append(pair.noisy)
    return torch.cat(clean), torch.cat(noisy)


def make_validation_set(images, case, seed, multiple=1):
    """Fixed noisy/clean pairs, each cropped to a multiple of ``multiple``."""
    pairs = []
    for i, img in enumerate(images):
        t = _as_tensor(img)
        h = t.shape[-2] - t.shape[-2] % multiple
        w = t.shape[-1] - t.shape[-1] % multiple
        pairs.append(noisy_pair(t[..., :h, :w].contiguous(), case, _seed(seed, i)))
    return pairs


@torch.no_grad()
def evaluate(model, pairs, eval_seed=None):
    """Mean PSNR/SSIM of the model output and of the noisy input."""
    was_training = model.training
    model.eval()
    if eval_seed is not None:
        model.set_factor_seed(eval_seed)
    out_psnr, in_psnr, out_ssim = [], [], []
    for p in pairs:
        denoised, _ = model(p.noisy)
        out_psnr += psnr_per_image(denoised, p.clean)
        in_psnr += psnr_per_image(p.noisy, p.clean)
        out_ssim.append(ssim(denoised, p.clean))
    model.train(was_training)
    return {
        "psnr": float(np.mean(out_psnr)),
        "psnr_noisy": float(np.mean(in_psnr)),
        "ssim": float(np.mean(out_ssim)),
    }


class Trainer:
    """Owns the model parameters and optimizer for one training run.

    Every random draw at iteration ``t`` (batch indices, noise, crops, flips,
    NMF initialization) is derived from ``(cfg.seed, t)``, so a run resumed
    from a checkpoint continues exactly like an uninterrupted one.
    """

    def __init__(self, model, cfg, images, case, val_pairs=None, model_config=None,
                 metrics_path=None, checkpoint_dir=None, noisy_images=None):
        if not len(images):
            raise InputError("training needs at least one image")
        self.model = model
        self.cfg = cfg
        self.images = [_as_tensor(im) for im in images]
        self.noisy_images = None
        if noisy_images is not None:
            if len(noisy_images) != len(images):
                raise InputError("clean and noisy image lists differ in length")
            self.noisy_images = [_as_tensor(im) for im in noisy_images]
        self.case = case
        self.val_pairs = val_pairs
        self.model_config = model_config
        self.metrics_path = metrics_path
        self.checkpoint_dir = checkpoint_dir
        self.iteration = 0
        self.history = []
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr_init, betas=tuple(cfg.betas),
            weight_decay=cfg.weight_decay, eps=1e-8,
        )

    def _param_names(self):
        return [n for n, _ in self.model.named_parameters()]

    def step(self):
        it, cfg, model = self.iteration, self.cfg, self.model
        lr = lr_schedule(it, cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        clean, noisy = sample_batch(self.images, it, cfg, self.case, self.noisy_images)
        model.train()
        model.set_factor_seed(_seed(cfg.seed, it, 2))
        denoised, restored = model(noisy)
        loss = multi_output_loss(denoised, restored, clean, cfg.charbonnier_eps, cfg.loss_form)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if not torch.isfinite(loss):
            grads = [p.grad.norm() for p in model.parameters() if p.grad is not None]
            gnorm = torch.linalg.norm(torch.stack(grads)).item() if grads else float("nan")
            raise NonFiniteError(
                f"non-finite loss {loss.item()} at iteration {it} (lr={lr:.3g}, grad-norm={gnorm:.3g})"
            )
        self.optimizer.step()
        self.iteration += 1
        return loss.item(), lr

    def run(self, until=None, log=None):
        until = self.cfg.iters if until is None else min(until, self.cfg.iters)
        t0 = time.perf_counter()
        while self.iteration < until:
            loss, lr = self.step()
            it = self.iteration
            rec = None
            if self.cfg.log_every and it % self.cfg.log_every == 0:
                rec = MetricsRecord(it, loss, lr, time.perf_counter() - t0)
            if self.val_pairs and self.cfg.val_every and (it % self.cfg.val_every == 0 or it == self.cfg.iters):
                m = evaluate(self.model, self.val_pairs, self._eval_seed())
                rec = rec or MetricsRecord(it, loss, lr, time.perf_counter() - t0)
                rec.psnr_val, rec.ssim_val = m["psnr"], m["ssim"]
            if rec is not None:
                self._emit(rec, log)
            if self.checkpoint_dir and self.cfg.save_every and it % self.cfg.save_every == 0:
                self.save(self.checkpoint_dir)
        return self.history

    def _eval_seed(self):
        return getattr(self.model.config, "seed", 0)

    def _emit(self, rec, log):
        self.history.append(rec)
        line = json.dumps(asdict(rec))
        logger.info(line)
        if self.metrics_path:
            with open(self.metrics_path, "a") as fh:
                fh.write(line + "\n")
        if log is not None:
            log(rec)

    # -- checkpointing ---------------------------------------------------

    def to_checkpoint(self):
        tensors = {f"model/{k}": v for k, v in self.model.state_dict().items()}
        state = self.optimizer.state_dict()
        names = self._param_names()
        for idx, st in state["state"].items():
            for key, value in st.items():
                value = value if isinstance(value, torch.Tensor) else torch.tensor(value)
                tensors[f"optim/{names[idx]}/{key}"] = value
        return ckpt_io.Checkpoint(
            tensors, self.model_config, asdict(self.cfg), self.iteration,
        )

    def save(self, path):
        return ckpt_io.save(path, self.to_checkpoint())

    def load_state(self, ck):
        self.model.load_state_dict(ck.model_state())
        names = self._param_names()
        flat = ck.optimizer_state()
        state = {}
        for i, name in enumerate(names):
            entry = {k.split("/")[-1]: v for k, v in flat.items() if k.rsplit("/", 1)[0] == name}
            if entry:
                state[i] = entry
        sd = self.optimizer.state_dict()
        sd["state"] = state
        self.optimizer.load_state_dict(sd)
        self.iteration = ck.iteration
