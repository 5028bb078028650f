"""Run configuration: nested dataclasses <-> JSON, presets and dotted overrides.

A config file is JSON with the sections ``model``, ``train``, ``data`` and
``output_dir``. Command-line overrides use flat dotted keys, e.g.
``train.iters=500`` or ``model.stage.c_base=32``; values are parsed as JSON
when possible and kept as strings otherwise.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ._validation import ConfigurationError
from .data import NoiseCase
from .multistage import SUMDConfig, default_grids
from .network import StageConfig
from .training import TrainConfig

OUTPUT_ENV = "SUMD_OUTPUT_DIR"


@dataclass(frozen=True)
class DataConfig:
    """``train_dir`` holds clean images; ``"builtin"`` selects the bundled sample set.

    ``paired`` switches ``val_dir`` to a ``clean/`` + ``noisy/`` layout.
    """

    train_dir: str = None
    val_dir: str = None
    paired: bool = False
    noise: NoiseCase = field(default_factory=NoiseCase)
    val_seed: int = 12345


@dataclass(frozen=True)
class RunConfig:
    model: SUMDConfig = field(default_factory=SUMDConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = None

    def resolved_output_dir(self):
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV, "runs"))


def _desk():
    return {
        "model": {"stages": 2, "stage": {"c_base": 16, "c_up": 8, "mu_iters": 4}},
        "train": {"iters": 2000, "batch": 4, "patch": 64},
        "data": {"train_dir": "builtin", "noise": {"kind": "awgn", "sigma": 25.0}},
    }


def _paper():
    return {
        "model": {"stages": 2, "stage": {"c_base": 128, "c_up": 48, "mu_iters": 6}},
        "train": {"iters": 300_000, "batch": 32, "patch": 128},
    }


PRESETS = {"desk": _desk, "paper": _paper}


def to_dict(obj):
    return json.loads(json.dumps(dataclasses.asdict(obj)))


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping, got {data!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigurationError(f"{path or 'config'}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        where = f"{path}.{name}" if path else name
        if sub is not None:
            value = _build(sub, value, where)
        elif name in ("betas", "patch_grid") and value is not None:
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path or 'config'}: {exc}") from exc


_NESTED = {
    (RunConfig, "model"): SUMDConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): DataConfig,
    (SUMDConfig, "stage"): StageConfig,
    (DataConfig, "noise"): NoiseCase,
}


def from_dict(data, cls=RunConfig):
    return _build(cls, data, "")


def _merge(base, update):
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(item):
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested = value
    for part in reversed(key.strip().split(".")):
        nested = {part: nested}
    return nested


def load_run_config(path=None, preset=None, overrides=()):
    data = to_dict(RunConfig())
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        data = _merge(data, PRESETS[preset]())
    if path is not None:
        try:
            data = _merge(data, json.loads(Path(path).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"config: cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config: {path} is not valid JSON: {exc}") from exc
    for item in overrides:
        data = _merge(data, parse_override(item))
    grid = data["model"].get("patch_grid")
    if grid is not None and [list(g) for g in default_grids(len(grid))] == [list(g) for g in grid]:
        # a default schedule follows the stage count instead of pinning it
        data["model"]["patch_grid"] = None
    return from_dict(data)


def dump_run_config(cfg, path):
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True))
