"""One horizontal U-shaped stage (HUS): a three-scale encoder/decoder.

Scale ``k`` carries ``c_base + k * c_up`` channels at ``1 / 2**k`` resolution.
Encoder blocks apply channel attention before the MD block, decoder blocks
after it. Skip connections are refined by stacked BST blocks and added to
the upsampled decoder feature.
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from ._validation import ConfigurationError
from .blocks import BST, ChannelAttention, PlainUnetBlock
from .md import MDConfig, MDModule
from .nmf import NMFConfig

BODIES = ("md", "bst", "plain")


@dataclass(frozen=True)
class StageConfig:
    """Hyper-parameters of one stage.

    ``body`` selects what sits inside encoder/decoder blocks: ``"md"`` (full
    model), ``"bst"`` (MD replaced by a BST block) or ``"plain"`` (two conv
    layers without channel attention or skip refinement, i.e. a plain U-Net).
    """

    c_base: int = 128
    c_up: int = 48
    scales: int = 3
    bst_per_skip: int = 2
    mid_ratio: float = 0.75
    K: int = 2
    mu_iters: int = 6
    eps: float = 1e-6
    body: str = "md"
    md_residual: bool = True

    def __post_init__(self):
        if self.c_base < 1 or self.c_up < 1:
            raise ConfigurationError("c_base and c_up must be >= 1")
        if not 1 <= self.scales <= 3:
            raise ConfigurationError(f"scales must be 1, 2 or 3, got {self.scales}")
        if self.bst_per_skip < 0:
            raise ConfigurationError("bst_per_skip must be >= 0")
        if self.body not in BODIES:
            raise ConfigurationError(f"body must be one of {BODIES}, got {self.body!r}")
        if self.body == "md":
            for k in range(self.scales):
                self.md_config(k)

    def channels(self, k):
        return self.c_base + k * self.c_up

    def md_config(self, k):
        return MDConfig(
            c_in=self.channels(k),
            mid_ratio=self.mid_ratio,
            K=self.K,
            level=k + 1,
            nmf=NMFConfig(iters=self.mu_iters, eps=self.eps),
            residual=self.md_residual,
        )


@dataclass
class StageFeatures:
    enc: list
    dec: list
    out: torch.Tensor = field(repr=False)


def _body(cfg, k):
    if cfg.body == "md":
        return MDModule(cfg.md_config(k))
    if cfg.body == "bst":
        return BST(cfg.channels(k))
    return PlainUnetBlock(cfg.channels(k))


class EncoderBlock(nn.Module):
    def __init__(self, cfg, k):
        super().__init__()
        self.attn = ChannelAttention(cfg.channels(k)) if cfg.body != "plain" else nn.Identity()
        self.body = _body(cfg, k)

    def forward(self, x):
        return self.body(self.attn(x))


class DecoderBlock(EncoderBlock):
    def forward(self, x):
        return self.attn(self.body(x))


class Downsample(nn.Module):
    def __init__(self, channels, c_up):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels + c_up, 4, stride=2, padding=1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ConfigurationError(f"cannot halve odd spatial size {h}x{w}")
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels, c_up):
        super().__init__()
        if channels <= c_up:
            raise ConfigurationError(f"upsampling needs channels > c_up, got {channels} <= {c_up}")
        self.conv = nn.ConvTranspose2d(channels, channels - c_up, 2, stride=2)

    def forward(self, x):
        return self.conv(x)


class SkipConnection(nn.Sequential):
    def __init__(self, channels, n_bst):
        super().__init__(*(BST(channels) for _ in range(n_bst)))


class HUS(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        n = cfg.scales
        n_bst = cfg.bst_per_skip if cfg.body != "plain" else 0
        self.encoders = nn.ModuleList(EncoderBlock(cfg, k) for k in range(n))
        self.downs = nn.ModuleList(Downsample(cfg.channels(k), cfg.c_up) for k in range(n - 1))
        self.ups = nn.ModuleList(Upsample(cfg.channels(k + 1), cfg.c_up) for k in range(n - 1))
        self.skips = nn.ModuleList(SkipConnection(cfg.channels(k), n_bst) for k in range(n - 1))
        self.decoders = nn.ModuleList(DecoderBlock(cfg, k) for k in range(n - 1))

    def forward(self, x, fusion=None):
        """``fusion[k]`` (if given) is added to the encoder input at scale ``k``."""
        n = self.cfg.scales
        if x.shape[1] != self.cfg.c_base:
            raise ConfigurationError(
                f"stage expects {self.cfg.c_base} channels, got input {tuple(x.shape)}"
            )
        enc = []
        h = x
        for k in range(n):
            if k:
                h = self.downs[k - 1](enc[-1])
            if fusion is not None:
                h = h + fusion[k]
            enc.append(self.encoders[k](h))
        dec = [None] * n
        dec[-1] = enc[-1]
        for k in reversed(range(n - 1)):
            dec[k] = self.decoders[k](self.ups[k](dec[k + 1]) + self.skips[k](enc[k]))
        return StageFeatures(enc, dec, dec[0])


def md_modules(model):
    return [m for m in model.modules() if isinstance(m, MDModule)]
