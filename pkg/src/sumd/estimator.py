"""scikit-learn style front end for the SUMD denoiser."""

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import checkpoint as ckpt_io
from ._validation import InputError, check_images, to_nchw, to_nhwc
from .config import to_dict
from .data import NoiseCase
from .metrics import psnr
from .multistage import SUMD, SUMDConfig
from .network import StageConfig
from .training import TrainConfig, Trainer


def pad_to_multiple(x, multiple):
    """Reflect-pad (N, C, H, W) so H and W are multiples; returns (padded, (H, W))."""
    h, w = x.shape[-2:]
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


@torch.no_grad()
def denoise_tensor(model, noisy, seed=None, batch_size=8):
    model.eval()
    model.set_factor_seed(model.config.seed if seed is None else seed)
    out = []
    for chunk in torch.split(noisy, batch_size):
        padded, (h, w) = pad_to_multiple(chunk, model.config.multiple)
        out.append(model(padded)[0][..., :h, :w])
    return torch.cat(out)


class SUMDDenoiser(BaseEstimator):
    """Multi-stage U-shaped denoiser with NMF global-context blocks.

    ``fit(X)`` trains on clean images ``X`` (n, H, W, 3) in [0, 1] with
    synthetic noise; ``fit(X, y)`` trains on noisy ``X`` against clean ``y``.
    ``predict`` maps noisy images to denoised ones, and ``score`` is the
    mean PSNR in dB.
    """

    def __init__(self, stages=2, c_base=16, c_up=8, mid_ratio=0.75, n_subspaces=2,
                 mu_iters=4, body="md", bst_per_skip=2, noise="awgn", sigma=25.0,
                 mask_id="train", max_iter=2000, batch_size=4, patch_size=64,
                 lr_init=2e-4, lr_final=1e-6, weight_decay=1e-8, loss_form="global",
                 random_state=0, verbose=False):
        self.stages = stages
        self.c_base = c_base
        self.c_up = c_up
        self.mid_ratio = mid_ratio
        self.n_subspaces = n_subspaces
        self.mu_iters = mu_iters
        self.body = body
        self.bst_per_skip = bst_per_skip
        self.noise = noise
        self.sigma = sigma
        self.mask_id = mask_id
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.lr_init = lr_init
        self.lr_final = lr_final
        self.weight_decay = weight_decay
        self.loss_form = loss_form
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self):
        stage = StageConfig(
            c_base=self.c_base, c_up=self.c_up, bst_per_skip=self.bst_per_skip,
            mid_ratio=self.mid_ratio, K=self.n_subspaces, mu_iters=self.mu_iters, body=self.body,
        )
        return SUMDConfig(stages=self.stages, stage=stage, seed=self.random_state)

    def _train_config(self):
        return TrainConfig(
            lr_init=self.lr_init, lr_final=self.lr_final, weight_decay=self.weight_decay,
            iters=self.max_iter, batch=self.batch_size, patch=self.patch_size,
            seed=self.random_state, loss_form=self.loss_form, val_every=0,
            log_every=100 if self.verbose else 0,
        )

    def fit(self, X, y=None):
        X = check_images(X)
        noisy = None
        if y is not None:
            noisy, X = X, check_images(y)
            if noisy.shape != X.shape:
                raise InputError(f"X {noisy.shape} and y {X.shape} differ in shape")
        mcfg = self._model_config()
        torch.manual_seed(self.random_state)
        self.model_ = SUMD(mcfg)
        self.config_ = mcfg
        case = NoiseCase(self.noise, self.sigma, self.mask_id, self.random_state)
        trainer = Trainer(
            self.model_, self._train_config(), list(to_nchw(X).split(1)), case,
            noisy_images=None if noisy is None else list(to_nchw(noisy).split(1)),
        )
        self.history_ = trainer.run(log=print if self.verbose else None)
        self.n_iter_ = trainer.iteration
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X)
        return to_nhwc(denoise_tensor(self.model_, to_nchw(X)))

    def score(self, X, y):
        """Mean PSNR (dB) of ``predict(X)`` against clean ``y``."""
        y = check_images(y)
        pred = self.predict(X)
        return float(np.mean([psnr(p, t) for p, t in zip(pred, y)]))

    def save(self, path):
        check_is_fitted(self, "model_")
        tensors = {f"model/{k}": v for k, v in self.model_.state_dict().items()}
        ckpt_io.save(path, ckpt_io.Checkpoint(
            tensors, to_dict(self.config_), to_dict(self._train_config()), self.n_iter_,
            extra={"estimator_params": self.get_params()},
        ))

    @classmethod
    def load(cls, path):
        ck = ckpt_io.load(path)
        if "estimator_params" not in ck.extra:
            raise ckpt_io.CheckpointError(f"{path} was not written by {cls.__name__}.save")
        est = cls(**ck.extra["estimator_params"])
        est.config_ = est._model_config()
        est.model_ = SUMD(est.config_)
        est.model_.load_state_dict(ck.model_state())
        est.n_iter_ = ck.iteration
        return est
