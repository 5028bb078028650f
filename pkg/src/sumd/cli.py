"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 configuration/validation failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from . import ablation as abl
from ._validation import ConfigurationError
from .checks import SUITES, md_gradcheck
from .config import dump_run_config, from_dict, load_run_config, to_dict
from .data import (
    MASK_IDS, NoiseCase, builtin_image_set, load_folder, load_image, load_paired_folder,
    save_image, to_tensor,
)
from .estimator import denoise_tensor
from .metrics import psnr, ssim
from .multistage import SUMD, SUMDConfig
from .nmf import NMFConfig, error_trajectory
from .training import Trainer, _masks, _seed, evaluate, make_validation_set, noisy_pair

logger = logging.getLogger("sumd")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _emit(obj):
    print(json.dumps(obj, indent=1, default=float))


def _load_train_data(data):
    if data.train_dir is None:
        raise ConfigurationError("data.train_dir: missing dataset path (a folder of clean images or 'builtin')")
    if data.train_dir == "builtin":
        train, val = builtin_image_set()
    else:
        if not Path(data.train_dir).is_dir():
            raise ConfigurationError(f"data.train_dir: {data.train_dir} is not a directory")
        _, train = load_folder(data.train_dir)
        val = []
    if data.val_dir is not None:
        if not Path(data.val_dir).is_dir():
            raise ConfigurationError(f"data.val_dir: {data.val_dir} is not a directory")
        val = None
    return train, val


def _validation_pairs(cfg, builtin_val):
    data = cfg.data
    multiple = cfg.model.multiple
    if data.val_dir is None:
        return make_validation_set(builtin_val, data.noise, data.val_seed, multiple) if builtin_val else None
    if data.paired:
        from .data import CleanNoisyPair

        _, clean, noisy = load_paired_folder(data.val_dir)
        pairs = []
        for c, n in zip(clean, noisy):
            h, w = (s - s % multiple for s in c.shape[:2])
            pairs.append(CleanNoisyPair(to_tensor(c[:h, :w]), to_tensor(n[:h, :w]), data.noise))
        return pairs
    _, clean = load_folder(data.val_dir)
    return make_validation_set(clean, data.noise, data.val_seed, multiple)


def _model_from_checkpoint(path):
    ck = ckpt_io.load(path)
    cfg = from_dict(ck.model_config, SUMDConfig)
    model = SUMD(cfg)
    try:
        model.load_state_dict(ck.model_state())
    except RuntimeError as exc:
        raise ckpt_io.CheckpointError(f"manifest mismatch: {exc}") from exc
    return model, ck


def cmd_train(args):
    overrides = list(args.set or [])
    if args.iters is not None:
        overrides.append(f"train.iters={args.iters}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={json.dumps(args.output_dir)}")
    cfg = load_run_config(args.config, args.preset, overrides)
    train_images, builtin_val = _load_train_data(cfg.data)
    if not train_images:
        raise ConfigurationError(f"data.train_dir: no readable images in {cfg.data.train_dir}")
    val_pairs = _validation_pairs(cfg, builtin_val)

    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.json")
    torch.manual_seed(cfg.train.seed)
    model = SUMD(cfg.model)
    trainer = Trainer(
        model, cfg.train, train_images, cfg.data.noise, val_pairs,
        model_config=to_dict(cfg.model), metrics_path=out / "metrics.jsonl",
        checkpoint_dir=out / "checkpoint",
    )
    if args.resume:
        trainer.load_state(ckpt_io.load(args.resume))
    trainer.run()
    trainer.save(out / "checkpoint")
    summary = {"output_dir": str(out), "iterations": trainer.iteration}
    if val_pairs:
        summary.update(evaluate(model, val_pairs, cfg.model.seed))
    _emit(summary)
    return EXIT_OK


def _case_from_args(args):
    if args.case in (None, "awgn"):
        return NoiseCase("awgn", args.sigma, seed=args.seed)
    return NoiseCase("noniid", mask_id=args.case, seed=args.seed)


def cmd_eval(args):
    model, _ = _model_from_checkpoint(args.checkpoint)
    data = Path(args.data)
    provenance = None
    if (data / "clean").is_dir() and (data / "noisy").is_dir():
        if (data / "provenance.json").exists():
            provenance = json.loads((data / "provenance.json").read_text())
        names, clean, noisy = load_paired_folder(data)
        from .data import CleanNoisyPair

        m = model.config.multiple
        pairs = []
        for c, n in zip(clean, noisy):
            h, w = (s - s % m for s in c.shape[:2])
            pairs.append(CleanNoisyPair(to_tensor(c[:h, :w]), to_tensor(n[:h, :w])))
    else:
        names, clean = load_folder(data)
        pairs = make_validation_set(clean, _case_from_args(args), args.seed, model.config.multiple)
    result = evaluate(model, pairs, args.eval_seed)
    result["images"] = len(names)
    if provenance is not None:
        result["provenance"] = provenance
    _emit(result)
    return EXIT_OK


def cmd_denoise(args):
    model, _ = _model_from_checkpoint(args.checkpoint)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref_dir = Path(args.reference) if args.reference else None
    report = []
    for path in map(Path, args.inputs):
        noisy = to_tensor(load_image(path))
        den = denoise_tensor(model, noisy, args.seed)
        img = den[0].permute(1, 2, 0).numpy()
        save_image(out / (path.stem + ".png"), img)
        entry = {"input": str(path), "output": str(out / (path.stem + ".png"))}
        if ref_dir is not None:
            ref = load_image(ref_dir / path.name)
            entry["psnr_noisy"] = psnr(noisy, to_tensor(ref))
            entry["psnr"] = psnr(den, to_tensor(ref))
            entry["ssim"] = ssim(den, to_tensor(ref))
        report.append(entry)
    _emit(report)
    return EXIT_OK


def cmd_noisegen(args):
    case = _case_from_args(args)
    names, images = load_folder(args.clean_dir)
    out = Path(args.out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    checksums = {}
    for i, (name, img) in enumerate(zip(names, images)):
        clean = to_tensor(img)
        pair = noisy_pair(clean, case, _seed(args.seed, i))
        stem = Path(name).stem + ".png"
        save_image(out / "clean" / stem, img)
        save_image(out / "noisy" / stem, pair.noisy[0].permute(1, 2, 0).numpy())
        if case.kind == "noniid":
            checksums[stem] = _masks(*clean.shape[-2:])[case.mask_id].checksum()
    skipped = len([p for p in Path(args.clean_dir).iterdir() if p.is_file()]) - len(names)
    provenance = {
        "case": to_dict(case), "seed": args.seed, "files": len(names),
        "mask_checksums": checksums or None, "skipped": skipped,
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=1))
    _emit(provenance)
    return EXIT_OK


def cmd_ablate(args):
    overrides = list(args.set or [])
    if args.iters is not None:
        overrides.append(f"train.iters={args.iters}")
    cfg = load_run_config(args.config, args.preset, overrides)
    train_images, val_images = _load_train_data(cfg.data)
    if cfg.data.val_dir is not None:
        _, val_images = load_folder(cfg.data.val_dir)
    variants = {}
    if args.which in ("combination", "all"):
        variants.update(abl.combination_variants(cfg.model))
    if args.which in ("ratio", "all"):
        variants.update(abl.mid_ratio_variants(cfg.model))
    rows = abl.run_ablation(
        variants, cfg.train, cfg.data.noise, train_images, val_images, tuple(args.seeds),
        cfg.data.val_seed, args.cache_dir,
    )
    abl.write_csv(args.out, rows)
    _emit(abl.summarize(rows))
    return EXIT_OK


def cmd_check(args):
    report = SUITES[args.suite]()
    _emit(report)
    return EXIT_OK if report["ok"] else EXIT_RUNTIME


def _read_matrix(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)


def cmd_nmf(args):
    try:
        V = np.asarray(_read_matrix(args.matrix), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"matrix: cannot read {args.matrix}: {exc}") from exc
    errors, state = error_trajectory(torch.from_numpy(V), NMFConfig(args.rank, args.iters, args.eps, args.seed))
    lines = ["iteration,error"] + [f"{t},{e:.17g}" for t, e in enumerate(errors)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args):
    report = md_gradcheck(args.c_in, args.size, args.K, args.iters, args.mid_ratio, seed=args.seed)
    _emit(report)
    return EXIT_OK if report["ok"] else EXIT_RUNTIME


def _add_run_config(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", choices=["desk", "paper"])
    p.add_argument("--iters", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted override, e.g. model.stage.c_base=32 (repeatable)")


def _add_noise(p):
    p.add_argument("--case", choices=["awgn", *MASK_IDS], default="awgn")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="sumd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_run_config(p)
    p.add_argument("--output-dir")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a folder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="clean folder, or noisegen output (clean/ + noisy/)")
    p.add_argument("--eval-seed", type=int, default=None)
    _add_noise(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("denoise", help="denoise image files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--reference", help="folder of clean images with matching names")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("noisegen", help="write a synthetic clean/noisy benchmark")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--out-dir", required=True)
    _add_noise(p)
    p.set_defaults(func=cmd_noisegen)

    p = sub.add_parser("ablate", help="train variants and tabulate PSNR")
    _add_run_config(p)
    p.add_argument("--which", choices=["combination", "ratio", "all"], default="all")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="ablation.csv")
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("check", help="run a property suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("nmf", help="factorize a matrix and print the error trajectory")
    p.add_argument("--matrix", required=True, help=".npy, .csv or whitespace separated text")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_nmf)

    p = sub.add_parser("gradcheck", help="finite-difference check of an MD block")
    p.add_argument("--c-in", type=int, default=4)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--iters", type=int, default=4)
    p.add_argument("--mid-ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
