"""Differentiable primitives used by the network, backed by PyTorch.

The functions here are thin, shape-checked wrappers around ``torch`` so that
misconfigured layers fail with a message naming both shapes instead of an
opaque backend error. :func:`finite_diff_gradcheck` is the independent check
that the analytic gradients of composite modules are wired correctly.
"""

import torch
import torch.nn.functional as F

from ._validation import ConfigurationError, NonFiniteError, check_nchw


def conv2d(x, weight, bias=None, stride=1, padding=0):
    check_nchw(x)
    if weight.dim() != 4:
        raise ConfigurationError(f"conv weight must be 4-D, got {tuple(weight.shape)}")
    if stride not in (1, 2):
        raise ConfigurationError(f"stride must be 1 or 2, got {stride}")
    if x.shape[1] != weight.shape[1]:
        raise ConfigurationError(
            f"input {tuple(x.shape)} has {x.shape[1]} channels but weight "
            f"{tuple(weight.shape)} expects {weight.shape[1]}"
        )
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def transposed_conv2d(x, weight, bias=None, stride=2):
    """Stride-2 transposed convolution; weight is (C_in, C_out, 2, 2)."""
    check_nchw(x)
    if stride != 2 or tuple(weight.shape[2:]) != (2, 2):
        raise ConfigurationError(
            f"only 2x2 kernels with stride 2 are supported, got kernel "
            f"{tuple(weight.shape[2:])} stride {stride}"
        )
    if x.shape[1] != weight.shape[0]:
        raise ConfigurationError(
            f"input {tuple(x.shape)} does not match transposed weight {tuple(weight.shape)}"
        )
    return F.conv_transpose2d(x, weight, bias, stride=stride)


def activation(x, kind, slope=None):
    if kind == "relu":
        return F.relu(x)
    if kind == "sigmoid":
        return torch.sigmoid(x)
    if kind == "prelu":
        if slope is None:
            raise ConfigurationError("prelu needs a learned slope parameter")
        return F.prelu(x, slope)
    raise ConfigurationError(f"unknown activation {kind!r}")


def global_avg_pool(x):
    check_nchw(x)
    return x.mean(dim=(2, 3), keepdim=True)


def matmul(a, b):
    if a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(
            f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}: inner dimensions differ"
        )
    return a @ b


def finite_diff_gradcheck(fn, x, h=1e-6):
    """Compare autograd against central differences for a scalar ``fn``.

    Returns the maximum over coordinates of
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.
    Run with float64 inputs; ``fn`` must not depend on hidden random state
    between calls.
    """
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    if out.numel() != 1:
        raise ConfigurationError(f"fn must return a scalar, got shape {tuple(out.shape)}")
    if not torch.isfinite(out):
        raise NonFiniteError(f"fn returned a non-finite value {out.item()}")
    (analytic,) = torch.autograd.grad(out, x)

    numeric = torch.empty_like(x)
    flat = x.detach().clone()
    view = flat.view(-1)
    with torch.no_grad():
        for i in range(view.numel()):
            orig = view[i].item()
            view[i] = orig + h
            f_plus = fn(flat).item()
            view[i] = orig - h
            f_minus = fn(flat).item()
            view[i] = orig
            numeric.view(-1)[i] = (f_plus - f_minus) / (2 * h)
    if not (torch.isfinite(analytic).all() and torch.isfinite(numeric).all()):
        raise NonFiniteError("gradient contains non-finite entries")
    denom = torch.clamp(analytic.abs() + numeric.abs(), min=1e-12)
    return ((analytic - numeric).abs() / denom).max().item()
