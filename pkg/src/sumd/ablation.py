"""Train model variants under one budget and tabulate held-out PSNR.

Results of single runs can be cached on disk, keyed by a hash of the full
run description and of the package sources, so an interrupted sweep can be
resumed without retraining finished variants.
"""

import csv
import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from .multistage import SUMD, SUMDConfig
from .training import Trainer, evaluate, make_validation_set

logger = logging.getLogger(__name__)

MID_RATIOS = (None, 0.25, 0.5, 0.75, 1.0)


def _with_stage(cfg, **changes):
    return dataclasses.replace(cfg, stage=dataclasses.replace(cfg.stage, **changes))


def combination_variants(base, stages=(2, 1)):
    """U-Net / U-Net+HUS / U-Net+HUS+MD at ``stages[0]``, full model at the others."""
    first, *rest = stages
    two = dataclasses.replace(base, stages=first, patch_grid=None)
    out = {
        f"{first}-stage unet": _with_stage(two, body="plain"),
        f"{first}-stage unet+hus": _with_stage(two, body="bst"),
        f"{first}-stage unet+hus+md": _with_stage(two, body="md"),
    }
    for s in rest:
        out[f"{s}-stage unet+hus+md"] = _with_stage(
            dataclasses.replace(base, stages=s, patch_grid=None), body="md"
        )
    return out


def mid_ratio_variants(base, ratios=MID_RATIOS, stages=1):
    """Single-stage U-Net+HUS with the MD middle dimension swept; ``None`` removes MD."""
    one = dataclasses.replace(base, stages=stages, patch_grid=None)
    out = {}
    for r in ratios:
        label = "w/o" if r is None else f"{round(r * 4)}:4"
        out[f"ratio {label}"] = _with_stage(one, body="bst") if r is None else _with_stage(
            one, body="md", mid_ratio=r
        )
    return out


_TRAINING_SOURCES = (
    "blocks.py", "data.py", "md.py", "metrics.py", "multistage.py", "network.py",
    "nmf.py", "training.py",
)


def _source_digest():
    h = hashlib.sha256()
    for name in _TRAINING_SOURCES:
        h.update((Path(__file__).parent / name).read_bytes())
    return h.hexdigest()


def _key(model_cfg, train_cfg, case, train_images, val_pairs):
    h = hashlib.sha256()
    desc = {
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
        "case": dataclasses.asdict(case),
    }
    h.update(json.dumps(desc, sort_keys=True, default=str).encode())
    for t in train_images:
        h.update(np.asarray(t, dtype=np.float32).tobytes())
    for p in val_pairs:
        h.update(p.noisy.numpy().tobytes())
    h.update(_source_digest().encode())
    return h.hexdigest()[:24]


def train_and_score(model_cfg, train_cfg, case, train_images, val_pairs, cache_dir=None, log=None):
    """Train one variant from scratch and return held-out metrics."""
    key = None
    if cache_dir is not None:
        key = _key(model_cfg, train_cfg, case, train_images, val_pairs)
        path = Path(cache_dir) / f"{key}.json"
        if path.exists():
            return json.loads(path.read_text())
    t0 = time.perf_counter()
    torch.manual_seed(train_cfg.seed)
    model = SUMD(dataclasses.replace(model_cfg, seed=train_cfg.seed))
    trainer = Trainer(model, train_cfg, train_images, case)
    trainer.run(log=log)
    result = evaluate(model, val_pairs, model.config.seed)
    result["iters"] = trainer.iteration
    result["train_images"] = len(train_images)
    result["seconds"] = time.perf_counter() - t0
    if key is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        (Path(cache_dir) / f"{key}.json").write_text(json.dumps(result))
    return result


def run_ablation(variants, train_cfg, case, train_images, val_images, seeds=(0, 1, 2),
                 val_seed=12345, cache_dir=None, log=None):
    """Train every variant once per seed; returns a list of row dicts.

    All variants share the training images, the budget in ``train_cfg`` and
    the noisy validation set, and differ only in architecture and seed.
    """
    rows = []
    multiple = max(cfg.multiple for cfg in variants.values())
    val_pairs = make_validation_set(val_images, case, val_seed, multiple)
    for name, model_cfg in variants.items():
        for seed in seeds:
            tc = dataclasses.replace(train_cfg, seed=seed)
            res = train_and_score(model_cfg, tc, case, train_images, val_pairs, cache_dir, log)
            logger.info("%s seed=%d psnr=%.3f", name, seed, res["psnr"])
            rows.append({"variant": name, "seed": seed, **res})
    return rows


def summarize(rows):
    """Seed-averaged PSNR/SSIM per variant, in first-seen order."""
    out = {}
    for r in rows:
        out.setdefault(r["variant"], []).append(r)
    return {
        name: {
            "psnr": float(np.mean([r["psnr"] for r in rs])),
            "ssim": float(np.mean([r["ssim"] for r in rs])),
            "psnr_noisy": float(np.mean([r["psnr_noisy"] for r in rs])),
            "n": len(rs),
        }
        for name, rs in out.items()
    }


def write_csv(path, rows):
    summary = summarize(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "psnr", "ssim", "psnr_noisy"])
        for r in rows:
            w.writerow([r["variant"], r["seed"], f"{r['psnr']:.4f}", f"{r['ssim']:.4f}",
                        f"{r['psnr_noisy']:.4f}"])
        for name, s in summary.items():
            w.writerow([name, "mean", f"{s['psnr']:.4f}", f"{s['ssim']:.4f}", f"{s['psnr_noisy']:.4f}"])
