"""Checkpoint format: a manifest plus one raw float32 file per tensor.

Layout:

    <dir>/manifest.json      format version, model config, step, seeds,
                             tensor name -> {shape, file}
    <dir>/tensors/<name>.f32 little-endian float32, C-order

Tensor names are the state-dict keys of the saved modules, which are
stable strings. Round-trips are bitwise for float32 parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    out_dir: str | Path,
    tensors: dict[str, torch.Tensor],
    config: dict,
    step: int,
    seeds: dict[str, int],
) -> None:
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        if t.dtype != torch.float32:
            raise CheckpointError(f"tensor {name} is {t.dtype}, checkpoints are float32")
        arr = t.numpy().astype("<f4", copy=False)
        rel = f"tensors/{name}.f32"
        arr.tofile(out / rel)
        index[name] = {"shape": list(t.shape), "file": rel}
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "traceform-checkpoint",
        "config": config,
        "step": step,
        "seeds": seeds,
        "tensors": index,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )


def load_checkpoint(ckpt_dir: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    root = Path(ckpt_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "traceform-checkpoint":
        raise CheckpointError(f"{root} is not a checkpoint directory")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} unsupported"
        )
    tensors = {}
    for name, meta in manifest["tensors"].items():
        shape = tuple(meta["shape"])
        arr = np.fromfile(root / meta["file"], dtype="<f4")
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise CheckpointError(
                f"tensor {name}: file holds {arr.size} values, shape {shape} needs {expected}"
            )
        tensors[name] = torch.from_numpy(arr.reshape(shape).copy())
    return manifest, tensors
