"""Binary shard files for pair samples, and the dataset directory layout.

Shards: a 16-byte header (magic, u32 version, u64 record count, all
little-endian) followed by length-prefixed JSON records. Readers reject
version mismatches and report the record index of any truncation.

A dataset directory holds one shard per split plus a manifest carrying the
seeds, split membership, per-shard checksums, and sampling composition.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

from .dataset import PairSample, Split, composition_counts

MAGIC = b"TFSH"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_LEN = struct.Struct("<I")


class ShardError(ValueError):
    pass


def _sample_to_obj(s: PairSample) -> dict:
    return {
        "a": s.ui_a,
        "b": s.ui_b,
        "y": int(s.label_consecutive),
        "link": s.link_component,
        "kind": s.negative_kind,
        "ma": [int(v) for v in s.mask_a],
        "mb": [int(v) for v in s.mask_b],
    }


def _sample_from_obj(obj: dict) -> PairSample:
    return PairSample(
        ui_a=obj["a"],
        ui_b=obj["b"],
        label_consecutive=bool(obj["y"]),
        link_component=obj["link"],
        negative_kind=obj["kind"],
        mask_a=tuple(bool(v) for v in obj["ma"]),
        mask_b=tuple(bool(v) for v in obj["mb"]),
    )


def write_shard(samples: Sequence[PairSample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(samples)))
        for s in samples:
            payload = json.dumps(_sample_to_obj(s), sort_keys=True).encode("utf-8")
            f.write(_LEN.pack(len(payload)))
            f.write(payload)


def read_shard(path: str | Path) -> list[PairSample]:
    path = Path(path)
    with path.open("rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ShardError(f"{path}: file too short for header")
        magic, version, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ShardError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ShardError(f"{path}: shard version {version}, expected {VERSION}")
        samples: list[PairSample] = []
        for i in range(count):
            raw_len = f.read(_LEN.size)
            if len(raw_len) < _LEN.size:
                raise ShardError(f"{path}: truncated at record {i}")
            (length,) = _LEN.unpack(raw_len)
            payload = f.read(length)
            if len(payload) < length:
                raise ShardError(f"{path}: truncated at record {i}")
            samples.append(_sample_from_obj(json.loads(payload)))
        return samples


def write_dataset_dir(
    out_dir: str | Path,
    per_split: dict[str, list[PairSample]],
    split: Split,
    corpus_path: str,
    corpus_checksum: str,
    seeds: dict[str, int],
    mask_rate: float,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shard_index = {}
    composition = {}
    for name, samples in per_split.items():
        rel = f"{name}.shard"
        write_shard(samples, out / rel)
        digest = hashlib.sha256((out / rel).read_bytes()).hexdigest()
        shard_index[name] = [{"file": rel, "sha256": digest, "count": len(samples)}]
        composition[name] = composition_counts(samples)
    manifest = {
        "format_version": VERSION,
        "kind": "traceform-dataset",
        "corpus": corpus_path,
        "corpus_checksum": corpus_checksum,
        "seeds": seeds,
        "mask_rate": mask_rate,
        "splits": {"train": split.train, "dev": split.dev, "test": split.test},
        "shards": shard_index,
        "composition": composition,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_dataset_dir(dataset_dir: str | Path) -> tuple[dict, dict[str, list[PairSample]]]:
    root = Path(dataset_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ShardError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "traceform-dataset":
        raise ShardError(f"{root} is not a dataset directory")
    if manifest.get("format_version") != VERSION:
        raise ShardError(f"dataset format version {manifest.get('format_version')} unsupported")
    per_split = {}
    for name, shards in manifest["shards"].items():
        samples: list[PairSample] = []
        for entry in shards:
            path = root / entry["file"]
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != entry["sha256"]:
                raise ShardError(f"{path}: checksum mismatch")
            samples.extend(read_shard(path))
        per_split[name] = samples
    return manifest, per_split
