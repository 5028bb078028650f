"""Property suites behind ``sumd check``; each returns a JSON-able report.

Every report carries ``ok`` (bool) plus the numbers it was judged on.
"""

import math
import time

import numpy as np
import torch

from .md import MDConfig, MDModule
from .metrics import psnr, ssim
from .multistage import SUMD, SUMDConfig, patch_merge, patch_split
from .network import StageConfig
from .nmf import NMFConfig, error_trajectory
from .tensor_ops import finite_diff_gradcheck
from ._validation import ConfigurationError


def nmf_monotonicity(instances=100, iters=50, slack=1e-8, seed=0):
    """Random ``d, hw <= 32``, ``r <= 8`` problems; errors must never rise."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    failures, worst = [], -math.inf
    for i in range(instances):
        d, hw = (int(v) for v in rng.integers(1, 33, 2))
        r = int(rng.integers(1, min(8, d, hw) + 1))
        V = torch.from_numpy(rng.random((d, hw)))
        errors, state = error_trajectory(V, NMFConfig(r, iters, 1e-6, i))
        rise = max(b - a for a, b in zip(errors, errors[1:]))
        worst = max(worst, rise)
        if rise > slack or state.D.min() < 0 or state.C.min() < 0:
            failures.append({"instance": i, "d": d, "hw": hw, "rank": r, "max_rise": rise})
    return {
        "suite": "nmf", "instances": instances, "passed": instances - len(failures),
        "max_rise": worst, "failures": failures, "seconds": time.perf_counter() - t0,
        "ok": not failures,
    }


def md_gradcheck(c_in=4, size=8, K=2, iters=4, mid_ratio=1.0, h=1e-6, seed=0):
    """Finite differences vs autograd through an MD block with frozen solver prefix."""
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    md = MDModule(MDConfig(c_in, mid_ratio, K, 1, NMFConfig(iters=iters))).double()
    x = torch.randn(1, c_in, size, size, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))
    with md.frozen_factors():
        err = finite_diff_gradcheck(lambda t: md(t).sum(), x, h)
    return {"suite": "grad", "max_rel_err": err, "tolerance": 1e-3,
            "seconds": time.perf_counter() - t0, "ok": err < 1e-3}


def random_config(rng):
    """A random valid desk-sized :class:`SUMDConfig` and a compatible image size."""
    while True:
        try:
            stage = StageConfig(
                c_base=int(rng.choice([8, 16, 24])), c_up=int(rng.choice([4, 8, 16])),
                bst_per_skip=int(rng.integers(0, 3)), mid_ratio=float(rng.choice([0.5, 0.75, 1.0])),
                K=int(rng.choice([1, 2])), mu_iters=int(rng.integers(1, 5)),
                body=str(rng.choice(["md", "md", "bst", "plain"])),
            )
            cfg = SUMDConfig(stages=int(rng.integers(1, 3)), stage=stage, csff=bool(rng.integers(0, 2)),
                             seed=int(rng.integers(0, 1000)))
        except ConfigurationError:
            continue
        m = cfg.multiple
        return cfg, (m * int(rng.integers(1, 4)), m * int(rng.integers(1, 4)))


def shape_audit(configs=50, seed=0):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    failures = []
    for i in range(configs):
        cfg, (h, w) = random_config(rng)
        torch.manual_seed(i)
        model = SUMD(cfg)
        x = torch.rand(int(rng.integers(1, 3)), 3, h, w)
        problems = []
        with torch.no_grad():
            ios = model.forward_stages(x)
            out, restored = model(x)
        if out.shape != x.shape:
            problems.append(f"output {tuple(out.shape)} != input {tuple(x.shape)}")
        for r in restored:
            if r.shape != x.shape:
                problems.append(f"restored {tuple(r.shape)} != input {tuple(x.shape)}")
        for io in ios:
            for k, t in enumerate(io.features.enc):
                if t.shape[1] != cfg.stage.c_base + k * cfg.stage.c_up:
                    problems.append(f"scale {k} has {t.shape[1]} channels")
        for grid in cfg.patch_grid:
            if not torch.equal(patch_merge(patch_split(x, grid), grid), x):
                problems.append(f"patch round trip failed for grid {grid}")
        if problems:
            failures.append({"config": i, "problems": problems})
    return {"suite": "shapes", "configs": configs, "passed": configs - len(failures),
            "failures": failures, "seconds": time.perf_counter() - t0, "ok": not failures}


def metric_oracles(pairs=20, seed=0):
    """Compare against scikit-image and the closed-form constant-offset PSNR."""
    from skimage.metrics import peak_signal_noise_ratio, structural_similarity

    rng = np.random.default_rng(seed)
    psnr_err = ssim_err = 0.0
    for _ in range(pairs):
        h, w = (int(v) for v in rng.integers(16, 49, 2))
        a = rng.random((h, w, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
        psnr_err = max(psnr_err, abs(psnr(a, b) - peak_signal_noise_ratio(a, b, data_range=1.0)))
        ref = structural_similarity(a, b, data_range=1.0, channel_axis=2, gaussian_weights=True,
                                    sigma=1.5, use_sample_covariance=False)
        ssim_err = max(ssim_err, abs(ssim(a, b) - ref))
    base = np.full((32, 32, 3), 0.5)
    offset = psnr(base, base + 10 / 255) - 20 * math.log10(255 / 10)
    return {
        "suite": "metrics", "pairs": pairs, "max_psnr_err_db": psnr_err, "max_ssim_err": ssim_err,
        "constant_offset_err_db": abs(offset),
        "ok": psnr_err < 1e-6 and ssim_err < 1e-4 and abs(offset) < 1e-6,
    }


SUITES = {
    "nmf": nmf_monotonicity,
    "grad": md_gradcheck,
    "shapes": shape_audit,
    "metrics": metric_oracles,
}
