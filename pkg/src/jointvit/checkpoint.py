"""Checkpoint directories: ``manifest.json`` plus a raw ``weights.bin`` blob.

The blob is the concatenation of every tensor as little-endian float64 in
manifest order. The manifest records, per tensor, its shape and the byte
offset and length of its extent in the blob, along with the model config,
a hash of that config, the training step and the trainer's RNG state.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError
from .model import ViTConfig, ViTParams, param_shapes

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "weights.bin"
OPT_PREFIX = "optimizer."


def config_hash(config: ViTConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    config: ViTConfig
    params: ViTParams
    step: int = 0
    epoch: int = 0
    rng_state: Optional[dict] = None
    optimizer_t: int = 0
    optimizer_m: dict = field(default_factory=dict)
    optimizer_v: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(params: ViTParams, meta: Optional[dict], path, *, step: int = 0, epoch: int = 0,
                    rng_state: Optional[dict] = None, optimizer=None) -> Path:
    """Write ``path/manifest.json`` and ``path/weights.bin``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = OrderedDict((n, t.data) for n, t in params.items())
    opt_t = 0
    if optimizer is not None:
        opt_t = optimizer.t
        for n in params.names():
            arrays[f"{OPT_PREFIX}m.{n}"] = optimizer.m[n]
            arrays[f"{OPT_PREFIX}v.{n}"] = optimizer.v[n]
    index = OrderedDict()
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index[name] = {"shape": list(arr.shape), "offset": offset, "length": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "vit_config": params.config.to_dict(),
        "config_hash": config_hash(params.config),
        "step": int(step),
        "epoch": int(epoch),
        "rng_state": rng_state,
        "optimizer_t": int(opt_t),
        "meta": meta or {},
        "tensors": index,
    }
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path, expected_config: Optional[ViTConfig] = None) -> Checkpoint:
    """Read a checkpoint directory, validating version, extents and config hash."""
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as e:
        raise FormatError(f"checkpoint file missing: {e.filename}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path / MANIFEST}: invalid JSON ({e})") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        config = ViTConfig.from_dict(manifest["vit_config"])
        index = manifest["tensors"]
        stored_hash = manifest["config_hash"]
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path / MANIFEST}: missing field {e}") from e
    if stored_hash != config_hash(config):
        raise FormatError(f"manifest config hash {stored_hash} does not match its own config {config_hash(config)}")
    if expected_config is not None and config_hash(expected_config) != stored_hash:
        raise FormatError(
            f"checkpoint config hash {stored_hash} != requested config hash {config_hash(expected_config)}"
        )
    arrays = {}
    for name, entry in index.items():
        shape = tuple(int(s) for s in entry["shape"])
        off, length = int(entry["offset"]), int(entry["length"])
        if length != 8 * int(np.prod(shape, dtype=np.int64)) or off < 0 or off + length > len(blob):
            raise FormatError(f"tensor {name}: extent [{off}, {off + length}) invalid for blob of {len(blob)} bytes")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=length // 8, offset=off).reshape(shape).astype(np.float64)
    for name, shape in param_shapes(config).items():
        if name not in arrays:
            raise FormatError(f"checkpoint lacks tensor {name}")
        if arrays[name].shape != shape:
            raise FormatError(f"tensor {name}: shape {arrays[name].shape} != expected {shape}")
    params = ViTParams.from_arrays(config, arrays)
    m = {n[len(OPT_PREFIX) + 2:]: a for n, a in arrays.items() if n.startswith(OPT_PREFIX + "m.")}
    v = {n[len(OPT_PREFIX) + 2:]: a for n, a in arrays.items() if n.startswith(OPT_PREFIX + "v.")}
    return Checkpoint(config, params, int(manifest.get("step", 0)), int(manifest.get("epoch", 0)),
                      manifest.get("rng_state"), int(manifest.get("optimizer_t", 0)), m, v,
                      manifest.get("meta", {}))
