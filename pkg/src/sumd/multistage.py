"""Multi-stage assembly: patch schedule, SAM, CSFF and the residual head."""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ._validation import ConfigurationError, InputError, check_nchw, check_spatial_divisible
from .blocks import InitialBlock, conv3x3
from .network import HUS, StageConfig, StageFeatures, md_modules


def default_grids(stages):
    # Stage i sees a 2**(stages-1-i) square grid; the last stage sees the whole image.
    return tuple((2 ** (stages - 1 - i),) * 2 for i in range(stages))


@dataclass(frozen=True)
class SUMDConfig:
    stages: int = 2
    stage: StageConfig = field(default_factory=StageConfig)
    patch_grid: tuple = None
    csff: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigurationError(f"stages must be >= 1, got {self.stages}")
        grid = self.patch_grid
        if grid is None:
            grid = default_grids(self.stages)
        grid = tuple(tuple(int(v) for v in g) for g in grid)
        if len(grid) != self.stages:
            raise ConfigurationError(f"patch_grid has {len(grid)} entries for {self.stages} stages")
        if grid[-1] != (1, 1):
            raise ConfigurationError(f"the final stage must see the whole image, got grid {grid[-1]}")
        if any(g < 1 for pair in grid for g in pair):
            raise ConfigurationError(f"grid factors must be >= 1, got {grid}")
        object.__setattr__(self, "patch_grid", grid)

    @property
    def multiple(self):
        """Image sides must be divisible by this number."""
        factor = max(max(g) for g in self.patch_grid)
        return factor * 2 ** (self.stage.scales - 1)


@dataclass
class StageIO:
    features: StageFeatures
    restored: torch.Tensor = None
    sam_out: torch.Tensor = None


def patch_split(x, grid):
    gy, gx = grid
    n, c, h, w = x.shape
    if h % gy or w % gx:
        raise InputError(f"cannot split {h}x{w} into a {gy}x{gx} grid")
    if (gy, gx) == (1, 1):
        return x
    ph, pw = h // gy, w // gx
    x = x.reshape(n, c, gy, ph, gx, pw).permute(0, 2, 4, 1, 3, 5)
    return x.reshape(n * gy * gx, c, ph, pw)


def patch_merge(x, grid):
    gy, gx = grid
    if (gy, gx) == (1, 1):
        return x
    m, c, ph, pw = x.shape
    if m % (gy * gx):
        raise InputError(f"batch of {m} patches is not a multiple of grid {gy}x{gx}")
    x = x.reshape(m // (gy * gx), gy, gx, c, ph, pw).permute(0, 3, 1, 4, 2, 5)
    return x.reshape(m // (gy * gx), c, gy * ph, gx * pw)


class SAM(nn.Module):
    """Supervised attention between stages.

    ``restored = conv(F) + image``; ``attended = F + conv(F) * sigmoid(conv(restored))``.
    """

    def __init__(self, channels, c_img=3):
        super().__init__()
        self.conv_feat = conv3x3(channels, channels)
        self.conv_img = conv3x3(channels, c_img)
        self.conv_mask = conv3x3(c_img, channels)

    def mask(self, restored):
        return torch.sigmoid(self.conv_mask(restored))

    def forward(self, features, image):
        if features.shape[-2:] != image.shape[-2:] or features.shape[0] != image.shape[0]:
            raise ConfigurationError(
                f"SAM features {tuple(features.shape)} do not match image {tuple(image.shape)}"
            )
        restored = self.conv_img(features) + image
        attended = features + self.conv_feat(features) * self.mask(restored)
        return attended, restored


class CSFF(nn.Module):
    """Per-scale bias-free 1x1 fusion of a previous stage's encoder/decoder features."""

    def __init__(self, cfg):
        super().__init__()
        widths = [cfg.channels(k) for k in range(cfg.scales)]
        self.enc = nn.ModuleList(nn.Conv2d(c, c, 1, bias=False) for c in widths)
        self.dec = nn.ModuleList(nn.Conv2d(c, c, 1, bias=False) for c in widths)

    def forward(self, prev):
        if len(prev.enc) != len(self.enc):
            raise ConfigurationError(
                f"CSFF built for {len(self.enc)} scales got {len(prev.enc)}"
            )
        return [fe(e) + fd(d) for fe, fd, e, d in zip(self.enc, self.dec, prev.enc, prev.dec)]


class SUMD(nn.Module):
    """Multi-stage denoiser producing ``image + residual``."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        sc, n = config.stage, config.stages
        self.initial = nn.ModuleList(InitialBlock(sc.c_base) for _ in range(n))
        self.stages = nn.ModuleList(HUS(sc) for _ in range(n))
        self.sams = nn.ModuleList(SAM(sc.c_base) for _ in range(n - 1))
        self.csffs = nn.ModuleList(CSFF(sc) for _ in range(n - 1)) if config.csff else None
        self.tail = conv3x3(sc.c_base, 3)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)
        self.set_factor_seed(config.seed)

    def set_factor_seed(self, seed):
        """Re-seed the NMF initialization of every MD block."""
        for i, m in enumerate(md_modules(self)):
            m.factor_seed = int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0])

    def forward_stages(self, image):
        check_nchw(image, "image")
        if image.shape[1] != 3:
            raise InputError(f"expected 3-channel images, got {tuple(image.shape)}")
        check_spatial_divisible(image, self.config.multiple)
        grids = self.config.patch_grid
        ios = []
        carry = prev = None
        for s, grid in enumerate(grids):
            patches = patch_split(image, grid)
            f = self.initial[s](patches)
            if carry is not None:
                f = f + patch_split(carry, grid)
            fusion = None
            if prev is not None and self.csffs is not None:
                fusion = [patch_split(t, grid) for t in self.csffs[s - 1](prev)]
            feats = self.stages[s](f, fusion)
            io = StageIO(feats)
            if s < len(grids) - 1:
                attended, restored = self.sams[s](feats.out, patches)
                carry = patch_merge(attended, grid)
                io.sam_out = carry
                io.restored = patch_merge(restored, grid)
                prev = StageFeatures(
                    [patch_merge(t, grid) for t in feats.enc],
                    [patch_merge(t, grid) for t in feats.dec],
                    carry,
                )
            ios.append(io)
        return ios

    def forward(self, image):
        """Returns ``(denoised, [restored image of every non-final stage])``."""
        ios = self.forward_stages(image)
        denoised = image + self.tail(ios[-1].features.out)
        return denoised, [io.restored for io in ios[:-1]]
