"""Run configuration: one JSON document, overridable from the command line.

Schema (every key optional; defaults shown by ``RunConfig().to_dict()``)::

    {
      "model":     {ViTConfig fields},
      "loss":      {"lam": 0.99, "variant": "bce" | "bal_bce", "class_counts": null},
      "optimizer": {"lr": 3e-4, "betas": [0.9, 0.999], "eps": 1e-8,
                    "weight_decay": 0.01, "clip_norm": 1.0},
      "data":      {"source": "synthetic" | "folder" | "volumes",
                    "synthetic": {"counts": [9, 30, 18], "image_size": 64, "seed": 0,
                                  "slices_per_instance": 1, "marker": false},
                    "path": null, "manifest": null, "slice_stride": 1,
                    "balance": true, "augment": {AugmentPolicy fields}},
      "protocol":  {"k": 3, "seed": 0, "epochs": 10, "batch_size": 16,
                    "max_steps": null, "fold": null},
      "output":    "runs/default"
    }
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import AugmentPolicy, Dataset, SynthSpec, load_image_folder, load_volume_folder, synth_longtail
from .errors import ConfigError
from .losses import JointLossConfig
from .model import ViTConfig
from .training import OptimizerConfig, TrainConfig

SOURCES = ("synthetic", "folder", "volumes")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: SynthSpec = field(default_factory=SynthSpec)
    path: Optional[str] = None
    manifest: Optional[str] = None
    slice_stride: int = 1
    balance: bool = True
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)

    def to_dict(self) -> dict:
        return {"source": self.source, "synthetic": self.synthetic.to_dict(), "path": self.path,
                "manifest": self.manifest, "slice_stride": self.slice_stride, "balance": self.balance,
                "augment": self.augment.to_dict()}


@dataclass
class ProtocolConfig:
    k: int = 3
    seed: int = 0
    epochs: int = 10
    batch_size: int = 16
    max_steps: Optional[int] = None
    fold: Optional[int] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunConfig:
    model: ViTConfig = field(default_factory=ViTConfig)
    loss: JointLossConfig = field(default_factory=JointLossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    output: str = "runs/default"

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "loss": self.loss.to_dict(),
                "optimizer": self.optimizer.to_dict(), "data": self.data.to_dict(),
                "protocol": self.protocol.to_dict(), "output": self.output}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = _merge(RunConfig().to_dict(), d or {})
        unknown = set(d) - {"model", "loss", "optimizer", "data", "protocol", "output"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            data = dict(d["data"])
            run = cls(
                model=ViTConfig.from_dict(d["model"]),
                loss=JointLossConfig(**d["loss"]),
                optimizer=OptimizerConfig(**{**d["optimizer"], "betas": tuple(d["optimizer"]["betas"])}).validate(),
                data=DataConfig(
                    source=data["source"], synthetic=SynthSpec.from_dict(data["synthetic"]),
                    path=data["path"], manifest=data["manifest"], slice_stride=int(data["slice_stride"]),
                    balance=bool(data["balance"]), augment=AugmentPolicy.from_dict(data["augment"]),
                ),
                protocol=ProtocolConfig(**d["protocol"]),
                output=str(d["output"]),
            )
        except (TypeError, KeyError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad config: {e}") from e
        return run.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e

    def validate(self) -> "RunConfig":
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.data.source!r}")
        if self.data.source != "synthetic" and not self.data.path:
            raise ConfigError(f"data.source {self.data.source!r} needs data.path")
        if self.data.slice_stride < 1:
            raise ConfigError("data.slice_stride must be >= 1")
        p = self.protocol
        if p.k < 2 or p.batch_size < 1 or p.epochs < 0:
            raise ConfigError(f"invalid protocol settings: {p}")
        if p.fold is not None and not 0 <= p.fold < p.k:
            raise ConfigError(f"protocol.fold must be in [0, {p.k}), got {p.fold}")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(model=self.model, loss=self.loss, optimizer=self.optimizer,
                           epochs=self.protocol.epochs, batch_size=self.protocol.batch_size,
                           max_steps=self.protocol.max_steps, balance=self.data.balance,
                           policy=self.data.augment)

    def load_dataset(self) -> Dataset:
        """Materialise the configured data source at the model resolution."""
        d = self.data
        size = self.model.image_size
        if d.source == "synthetic":
            spec = d.synthetic
            if spec.image_size != size:
                raise ConfigError(f"synthetic image_size {spec.image_size} != model image_size {size}")
            ds = synth_longtail(spec)
        elif d.source == "folder":
            ds = load_image_folder(d.path, d.manifest, image_size=size)
        else:
            ds = load_volume_folder(d.path, d.manifest, stride=d.slice_stride, image_size=size)
            return ds
        if d.slice_stride > 1:
            for inst in ds.instances:
                inst.slices = inst.slices[:: d.slice_stride]
        return ds
