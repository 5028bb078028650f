"""PSNR and SSIM for (N, C, H, W) or (H, W, C) images in [0, 1]."""

import math

import numpy as np
import torch
import torch.nn.functional as F

from ._validation import InputError

IDENTICAL_PSNR = math.inf


def _as_nchw(x):
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.asarray(x, dtype=np.float64))
        if x.dim() == 3:
            x = x.permute(2, 0, 1)[None]
        elif x.dim() == 2:
            x = x[None, None]
    x = x.detach().to(torch.float64)
    if x.dim() == 3:
        x = x[None]
    return x


def _prepare(a, b):
    a, b = _as_nchw(a), _as_nchw(b)
    if a.shape != b.shape:
        raise InputError(f"images differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a.clamp(0, 1), b.clamp(0, 1)


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _prepare(a, b)
    mse = torch.mean((a - b) ** 2).item()
    if mse == 0:
        return IDENTICAL_PSNR
    return 10.0 * math.log10(peak**2 / mse)


def psnr_per_image(a, b, peak=1.0):
    a, b = _prepare(a, b)
    return [psnr(x, y, peak) for x, y in zip(a, b)]


def _gaussian_window(size=11, sigma=1.5):
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, data_range=1.0, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM with a Gaussian window, per channel, averaged.

    Local statistics are taken over windows that lie fully inside the image.
    """
    a, b = _prepare(a, b)
    n, c, h, w = a.shape
    if h < win_size or w < win_size:
        raise InputError(f"images must be at least {win_size}x{win_size} for SSIM")
    win = _gaussian_window(win_size, sigma).expand(c, 1, win_size, win_size)

    def filt(x):
        return F.conv2d(x, win, groups=c)

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return s.mean().item()
