"""Synthetic noise, image I/O, cropping and augmentation.

Images are float tensors (N, 3, H, W) in [0, 1]. Noise levels are quoted on
the 0-255 scale. Noisy images are never clipped here; clipping only happens
in :func:`save_image`.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ._validation import InputError

logger = logging.getLogger(__name__)

MASK_IDS = ("train", "case1", "case2", "case3")
MASK_SEEDS = {"train": 1701, "case1": 2718, "case2": 3141, "case3": 4669}
SIGMA_RANGE = (5.0 / 255, 50.0 / 255)
IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class NoiseCase:
    kind: str = "awgn"
    sigma: float = 25.0
    mask_id: str = "train"
    seed: int = 0

    def __post_init__(self):
        if self.kind == "awgn":
            if not self.sigma > 0:
                raise InputError(f"AWGN sigma must be > 0, got {self.sigma}")
        elif self.kind == "noniid":
            if self.mask_id not in MASK_IDS:
                raise InputError(f"mask_id must be one of {MASK_IDS}, got {self.mask_id!r}")
        else:
            raise InputError(f"noise kind must be 'awgn' or 'noniid', got {self.kind!r}")

    @property
    def label(self):
        return f"awgn{self.sigma:g}" if self.kind == "awgn" else self.mask_id


@dataclass
class CleanNoisyPair:
    clean: torch.Tensor
    noisy: torch.Tensor
    case: NoiseCase = None


@dataclass
class MaskSpec:
    field: torch.Tensor  # (1, 1, H, W) per-pixel noise std
    id: str
    seed: int

    def checksum(self):
        return hashlib.sha256(self.field.numpy().astype("<f4").tobytes()).hexdigest()[:16]


def _torch_gen(rng):
    if isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


def _np_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _check_clean(clean):
    if clean.dim() != 4:
        raise InputError(f"clean images must be (N, C, H, W), got {tuple(clean.shape)}")
    if clean.min() < 0 or clean.max() > 1:
        raise InputError("clean images must lie in [0, 1]")


def gen_awgn(clean, sigma, rng=0):
    _check_clean(clean)
    case = NoiseCase("awgn", float(sigma), seed=rng if isinstance(rng, int) else 0)
    g = torch.randn(clean.shape, generator=_torch_gen(rng), dtype=clean.dtype)
    return CleanNoisyPair(clean, clean + (sigma / 255.0) * g, case)


def _bump_field(h, w, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    scale = max(h, w)
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        width = rng.uniform(0.1, 0.4) * scale
        amp = rng.uniform(0.3, 1.0)
        field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        # degenerate single-pixel image: fall back to the midpoint level
        field = np.full_like(field, 0.5)
    else:
        field = (field - lo) / (hi - lo)
    s_min, s_max = SIGMA_RANGE
    return s_min + (s_max - s_min) * field


def gen_masks(h, w, seeds=None):
    """Four spatially variant std maps keyed by ``MASK_IDS``.

    Each is a sum of randomly placed Gaussian bumps rescaled to span
    5/255 .. 50/255.
    """
    seeds = dict(MASK_SEEDS if seeds is None else seeds)
    masks = {}
    for mid in MASK_IDS:
        field = torch.from_numpy(_bump_field(h, w, seeds[mid]).astype(np.float32))
        masks[mid] = MaskSpec(field[None, None], mid, seeds[mid])
    return masks


def gen_noniid(clean, mask, rng=0):
    _check_clean(clean)
    if tuple(mask.field.shape[-2:]) != tuple(clean.shape[-2:]):
        raise InputError(
            f"mask {tuple(mask.field.shape[-2:])} does not match image {tuple(clean.shape[-2:])}"
        )
    g = torch.randn(clean.shape, generator=_torch_gen(rng), dtype=clean.dtype)
    case = NoiseCase("noniid", mask_id=mask.id, seed=rng if isinstance(rng, int) else 0)
    return CleanNoisyPair(clean, clean + g * mask.field.to(clean.dtype), case)


def make_pair(clean, case, rng=None):
    rng = case.seed if rng is None else rng
    if case.kind == "awgn":
        pair = gen_awgn(clean, case.sigma, rng)
    else:
        mask = gen_masks(*clean.shape[-2:])[case.mask_id]
        pair = gen_noniid(clean, mask, rng)
    pair.case = case
    return pair


def crop_patches(pair, size, rng=0):
    h, w = pair.clean.shape[-2:]
    if h < size or w < size:
        raise InputError(f"image {h}x{w} is smaller than the crop size {size}")
    rng = _np_rng(rng)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    sl = (..., slice(top, top + size), slice(left, left + size))
    return CleanNoisyPair(pair.clean[sl], pair.noisy[sl], pair.case)


def apply_transform(x, flip, rot):
    if flip:
        x = torch.flip(x, dims=(-1,))
    return torch.rot90(x, rot, dims=(-2, -1)) if rot else x


def augment(pair, rng=0):
    """Same random flip/90-degree rotation on both members of the pair."""
    rng = _np_rng(rng)
    flip = bool(rng.integers(0, 2))
    rot = int(rng.integers(0, 4))
    if rot % 2 and pair.clean.shape[-1] != pair.clean.shape[-2]:
        raise InputError("rotation by 90 degrees requires square patches")
    return CleanNoisyPair(
        apply_transform(pair.clean, flip, rot), apply_transform(pair.noisy, flip, rot), pair.case
    )


# -- image files ---------------------------------------------------------


def load_image(path):
    """8-bit image file -> (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(path, img):
    """(H, W, 3) float image -> 8-bit PNG, clipping to [0, 1]."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"image directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_folder(directory):
    """Load every readable image in a directory; returns (names, images)."""
    names, images = [], []
    for p in list_images(directory):
        try:
            images.append(load_image(p))
        except OSError as exc:
            logger.warning("skipping unreadable image %s: %s", p, exc)
            continue
        names.append(p.name)
    return names, images


def load_paired_folder(root):
    """``root/clean`` and ``root/noisy`` with matching file names."""
    root = Path(root)
    names, clean = load_folder(root / "clean")
    noisy = []
    for name in names:
        path = root / "noisy" / name
        if not path.exists():
            raise InputError(f"missing noisy counterpart {path}")
        noisy.append(load_image(path))
    return names, clean, noisy


def to_tensor(img):
    return torch.from_numpy(np.ascontiguousarray(np.asarray(img, np.float32).transpose(2, 0, 1)))[None]


# -- bundled sample images -------------------------------------------------

_TRAIN_SOURCES = (
    "astronaut", "coffee", "hubble_deep_field", "immunohistochemistry", "retina",
    "camera", "brick", "grass", "gravel", "moon", "text",
)
_VAL_SOURCES = ("chelsea", "rocket", "coins", "page")


def _bundled(name):
    import skimage.data

    img = getattr(skimage.data, name)()
    img = np.asarray(img, dtype=np.float32)
    if img.max() > 1.0:
        img = img / 255.0
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img[..., :3]


def _tiles(img, size, limit):
    h, w = img.shape[:2]
    out = []
    for top in range(0, h - size + 1, size):
        for left in range(0, w - size + 1, size):
            tile = img[top:top + size, left:left + size]
            if tile.std() >= 0.02:  # skip featureless tiles (black borders)
                out.append(tile)
    step = max(1, len(out) // limit)
    return out[::step][:limit]


def _round_robin(sources, size, n):
    pools = [_tiles(_bundled(name), size, n) for name in sources]
    out = []
    for i in range(max(len(p) for p in pools)):
        out.extend(p[i] for p in pools if i < len(p))
    if len(out) < n:
        raise InputError(f"bundled images yield only {len(out)} tiles of size {size}, need {n}")
    return out[:n]


def builtin_image_set(n_train=64, n_val=8, size=128):
    """Deterministic tiles cut from the images that ship with scikit-image.

    Training and validation tiles come from disjoint source images.
    """
    return _round_robin(_TRAIN_SOURCES, size, n_train), _round_robin(_VAL_SOURCES, size, n_val)
