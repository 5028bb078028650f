"""Exceptions and input validation helpers shared across the package."""

import numbers

import numpy as np
import torch


class ConfigurationError(ValueError):
    """Raised when shapes or hyper-parameters are inconsistent."""


class InputError(ValueError):
    """Raised when user supplied data violates a precondition."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation produces NaN or infinite values."""


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nchw(x, name="input"):
    if not isinstance(x, torch.Tensor):
        raise InputError(f"{name} must be a torch.Tensor, got {type(x).__name__}")
    if x.dim() != 4:
        raise ConfigurationError(f"{name} must be 4-D (N, C, H, W), got shape {tuple(x.shape)}")
    if min(x.shape) < 1:
        raise ConfigurationError(f"{name} has an empty dimension: {tuple(x.shape)}")
    return x


def check_spatial_divisible(x, factor, name="image"):
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise InputError(
            f"{name} spatial size {h}x{w} must be divisible by {factor}; "
            "pad the input (e.g. reflect-pad) to a multiple of this size"
        )


def check_images(X, *, channels=3, allow_list=True):
    """Validate a batch of images given as (n, H, W, C) floats in [0, 1].

    Returns a float32 ndarray. A single (H, W, C) image is promoted to a
    batch of one. A list of equally sized images is stacked.
    """
    if allow_list and isinstance(X, (list, tuple)):
        shapes = {np.shape(x) for x in X}
        if len(shapes) != 1:
            raise InputError(f"all images must share one shape, got {sorted(shapes)}")
        X = np.stack([np.asarray(x) for x in X])
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != channels:
        raise InputError(f"expected images shaped (n, H, W, {channels}), got {X.shape}")
    if X.shape[0] == 0:
        raise InputError("need at least one image")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float32) / 255.0
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise InputError("images contain NaN or infinite values")
    return X


def to_nchw(X):
    """(n, H, W, C) ndarray -> (n, C, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.transpose(X, (0, 3, 1, 2))))


def to_nhwc(t):
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)
