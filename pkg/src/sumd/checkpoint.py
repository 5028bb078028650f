"""Checkpoint container: ``manifest.json`` plus one raw little-endian payload.

The manifest lists every tensor with its name, shape, dtype, byte order,
offset and length inside ``tensors.bin``. NMF factor matrices are never
stored; they are re-sampled on every forward pass.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT = "sumd-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "tensors.bin"

_DTYPES = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "int64": (torch.int64, "<i8"),
}


class CheckpointError(RuntimeError):
    """Manifest and payload disagree, or the files are missing/corrupt."""


@dataclass
class Checkpoint:
    tensors: dict
    model_config: dict
    train_config: dict = None
    iteration: int = 0
    extra: dict = field(default_factory=dict)

    def model_state(self):
        return {k[len("model/"):]: v for k, v in self.tensors.items() if k.startswith("model/")}

    def optimizer_state(self):
        return {k[len("optim/"):]: v for k, v in self.tensors.items() if k.startswith("optim/")}


def _dtype_name(t):
    for name, (dt, _) in _DTYPES.items():
        if t.dtype == dt:
            return name
    raise CheckpointError(f"unsupported tensor dtype {t.dtype}")


def save(path, ckpt):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / PAYLOAD, "wb") as fh:
        for name, t in ckpt.tensors.items():
            dname = _dtype_name(t)
            raw = t.detach().cpu().contiguous().numpy().astype(_DTYPES[dname][1], copy=False).tobytes()
            fh.write(raw)
            entries.append({
                "name": name, "shape": list(t.shape), "dtype": dname,
                "byteorder": "little", "offset": offset, "nbytes": len(raw),
            })
            offset += len(raw)
    manifest = {
        "format": FORMAT, "version": VERSION,
        "model_config": ckpt.model_config, "train_config": ckpt.train_config,
        "iteration": ckpt.iteration, "extra": ckpt.extra,
        "payload_bytes": offset, "tensors": entries,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return path


def load(path):
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        payload = (path / PAYLOAD).read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint at {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} (format={manifest.get('format')!r})")
    if manifest.get("payload_bytes") != len(payload):
        raise CheckpointError(
            f"manifest mismatch: expected {manifest.get('payload_bytes')} payload bytes, "
            f"found {len(payload)}"
        )
    tensors = {}
    for e in manifest["tensors"]:
        if e["dtype"] not in _DTYPES or e.get("byteorder") != "little":
            raise CheckpointError(f"manifest mismatch: bad dtype/byteorder for {e['name']}")
        torch_dt, np_dt = _DTYPES[e["dtype"]]
        count = int(np.prod(e["shape"], dtype=np.int64))
        if count * np.dtype(np_dt).itemsize != e["nbytes"] or e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"manifest mismatch for tensor {e['name']}")
        arr = np.frombuffer(payload, dtype=np_dt, count=count, offset=e["offset"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np_dt[1:], copy=True)).reshape(e["shape"])
    return Checkpoint(
        tensors, manifest["model_config"], manifest.get("train_config"),
        manifest.get("iteration", 0), manifest.get("extra", {}),
    )
