"""Dual-head Vision Transformer.

Images are cut into non-overlapping square patches, linearly embedded, a
class token is prepended, learned position embeddings are added, and the
sequence runs through pre-norm encoder blocks (multi-head self-attention then
a GELU MLP, each with a residual connection). The final-normed class token
feeds two linear heads: ``num_classes`` logits and one scalar value.

Parameter names follow a fixed scheme used by checkpoints::

    patch_embed.weight, patch_embed.bias, cls_token, pos_embed,
    block.{i}.norm1.{weight,bias}, block.{i}.attn.{q,k,v,out}.{weight,bias},
    block.{i}.norm2.{weight,bias}, block.{i}.mlp.{fc1,fc2}.{weight,bias},
    norm.{weight,bias}, head_class.{weight,bias}, head_value.{weight,bias}

With ``d = embed_dim``, ``p = patch_size``, ``c = channels``,
``k = (image_size / p)^2``, ``h = mlp_ratio * d``, ``C = num_classes`` and
``L = depth`` the parameter count is::

    (p^2 c d + d) + d + (k + 1) d
      + L (4 d + 4 (d^2 + d) + 2 d h + h + d)
      + 2 d + (d C + C) + (d + 1)
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError

LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 64
    patch_size: int = 16
    channels: int = 1
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 3
    dropout: float = 0.0

    def violations(self) -> list:
        out = []
        for name in ("image_size", "patch_size", "channels", "embed_dim", "depth", "heads", "mlp_ratio"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name} must be >= 1")
        if self.patch_size >= 1 and self.image_size % self.patch_size:
            out.append(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.heads >= 1 and self.embed_dim % self.heads:
            out.append(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.num_classes < 2:
            out.append("num_classes must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            out.append("dropout must be in [0, 1)")
        return out

    def validate(self) -> "ViTConfig":
        bad = self.violations()
        if bad:
            raise ConfigError("invalid ViTConfig: " + "; ".join(bad))
        return self

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown ViTConfig fields: {sorted(extra)}")
        return cls(**d).validate()


def param_shapes(config: ViTConfig) -> "OrderedDict[str, tuple]":
    """Canonical name -> shape table, in checkpoint order."""
    d, C = config.embed_dim, config.num_classes
    h = config.mlp_ratio * d
    shapes = OrderedDict()
    shapes["patch_embed.weight"] = (config.patch_dim, d)
    shapes["patch_embed.bias"] = (d,)
    shapes["cls_token"] = (d,)
    shapes["pos_embed"] = (config.num_patches + 1, d)
    for i in range(config.depth):
        b = f"block.{i}"
        shapes[f"{b}.norm1.weight"] = (d,)
        shapes[f"{b}.norm1.bias"] = (d,)
        for proj in ("q", "k", "v", "out"):
            shapes[f"{b}.attn.{proj}.weight"] = (d, d)
            shapes[f"{b}.attn.{proj}.bias"] = (d,)
        shapes[f"{b}.norm2.weight"] = (d,)
        shapes[f"{b}.norm2.bias"] = (d,)
        shapes[f"{b}.mlp.fc1.weight"] = (d, h)
        shapes[f"{b}.mlp.fc1.bias"] = (h,)
        shapes[f"{b}.mlp.fc2.weight"] = (h, d)
        shapes[f"{b}.mlp.fc2.bias"] = (d,)
    shapes["norm.weight"] = (d,)
    shapes["norm.bias"] = (d,)
    shapes["head_class.weight"] = (d, C)
    shapes["head_class.bias"] = (C,)
    shapes["head_value.weight"] = (d, 1)
    shapes["head_value.bias"] = (1,)
    return shapes


def param_count(config: ViTConfig) -> int:
    """Closed-form parameter count (see module docstring)."""
    p, c, d, C, L = config.patch_size, config.channels, config.embed_dim, config.num_classes, config.depth
    k = config.num_patches
    h = config.mlp_ratio * d
    return (
        (p * p * c * d + d) + d + (k + 1) * d
        + L * (4 * d + 4 * (d * d + d) + 2 * d * h + h + d)
        + 2 * d + (d * C + C) + (d + 1)
    )


class ViTParams:
    """Named, ordered collection of trainable tensors for one ViTConfig."""

    def __init__(self, config: ViTConfig, tensors: "OrderedDict[str, Tensor]"):
        expected = param_shapes(config)
        if list(tensors) != list(expected):
            raise ContractError("parameter names do not match the config's naming scheme")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list:
        return list(self.tensors)

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())

    def copy(self) -> "ViTParams":
        return ViTParams(
            self.config,
            OrderedDict((n, Tensor(t.data, requires_grad=True, name=n)) for n, t in self.tensors.items()),
        )

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self.tensors.items())

    @classmethod
    def from_arrays(cls, config: ViTConfig, arrays: dict) -> "ViTParams":
        tensors = OrderedDict()
        for name in param_shapes(config):
            if name not in arrays:
                raise ContractError(f"missing parameter {name}")
            tensors[name] = Tensor(arrays[name], requires_grad=True, name=name)
        return cls(config, tensors)


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    # resample anything beyond two standard deviations
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config: ViTConfig, seed: int) -> ViTParams:
    """Deterministic initialisation.

    Weight matrices, ``cls_token`` and ``pos_embed`` are truncated normal
    (std 0.02, cut at 2 std); biases are zero; layer-norm gains are one.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        elif name.startswith("norm") or ".norm" in name:
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = _trunc_normal(rng, shape, INIT_STD)
    return ViTParams.from_arrays(config, arrays)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def patchify(image, patch_size: int) -> np.ndarray:
    """Split ``H x W x C`` (or a ``B x H x W x C`` batch) into flat patches.

    Patches are ordered row-major over the patch grid; each patch vector is
    flattened in (row, column, channel) order. Returns ``k x p*p*C`` (or
    ``B x k x p*p*C``).
    """
    img = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    single = img.ndim == 3
    if single:
        img = img[None]
    if img.ndim != 4:
        raise DimensionError(f"patchify: expected H x W x C image, got shape {img.shape}")
    B, H, W, C = img.shape
    p = patch_size
    if p < 1 or H % p or W % p:
        raise DimensionError(f"patchify: image {H}x{W} not divisible by patch size {p}")
    out = (
        img.reshape(B, H // p, p, W // p, p, C)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(B, (H // p) * (W // p), p * p * C)
    )
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def unpatchify(patches, patch_size: int, height: int, width: int, channels: int) -> np.ndarray:
    """Inverse of :func:`patchify` for a single image."""
    x = np.asarray(patches.data if isinstance(patches, Tensor) else patches, dtype=np.float64)
    p = patch_size
    gh, gw = height // p, width // p
    if x.shape != (gh * gw, p * p * channels):
        raise DimensionError(f"unpatchify: shape {x.shape} does not fit {height}x{width}x{channels}")
    return np.ascontiguousarray(
        x.reshape(gh, gw, p, p, channels).transpose(0, 2, 1, 3, 4).reshape(height, width, channels)
    )


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Apply ``x @ w + b`` over the last axis of a tensor of any rank."""
    lead = x.shape[:-1]
    y = ad.matmul(ad.reshape(x, (int(np.prod(lead)), x.shape[-1])), w)
    y = ad.add_bias(y, b)
    return ad.reshape(y, lead + (w.shape[1],))


def _attention(x: Tensor, P: ViTParams, prefix: str, heads: int) -> Tensor:
    B, T, d = x.shape
    dh = d // heads

    def split(name):
        t = _linear(x, P[f"{prefix}.{name}.weight"], P[f"{prefix}.{name}.bias"])
        return ad.transpose(ad.reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (B, T, d))
    return _linear(ctx, P[f"{prefix}.out.weight"], P[f"{prefix}.out.bias"])


def forward(params: ViTParams, batch, train_mode: bool = False,
            rng: Optional[np.random.Generator] = None):
    """Run the network on a ``B x H x W x C`` batch.

    Returns ``(class_logits, value_pred)`` with shapes ``B x C`` and ``B``.
    Dropout is applied only when ``train_mode`` is set and the config's
    dropout probability is positive (``rng`` is then required).
    """
    cfg = params.config
    data = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=np.float64)
    want = (cfg.image_size, cfg.image_size, cfg.channels)
    if data.ndim != 4 or data.shape[1:] != want:
        raise DimensionError(f"forward: batch shape {data.shape} does not match B x {want}")
    drop = cfg.dropout if train_mode else 0.0
    if drop > 0 and rng is None:
        raise ContractError("forward: dropout in train mode needs an rng")
    B = data.shape[0]
    P = params

    tokens = _linear(Tensor(patchify(data, cfg.patch_size)), P["patch_embed.weight"], P["patch_embed.bias"])
    cls = ad.reshape(ad.repeat_leading(P["cls_token"], B), (B, 1, cfg.embed_dim))
    x = ad.add_bias(ad.concat([cls, tokens], axis=1), P["pos_embed"])
    x = ad.dropout(x, drop, rng)

    for i in range(cfg.depth):
        b = f"block.{i}"
        h = ad.layer_norm(x, P[f"{b}.norm1.weight"], P[f"{b}.norm1.bias"], LN_EPS)
        x = ad.add(x, ad.dropout(_attention(h, P, f"{b}.attn", cfg.heads), drop, rng))
        h = ad.layer_norm(x, P[f"{b}.norm2.weight"], P[f"{b}.norm2.bias"], LN_EPS)
        h = ad.gelu(_linear(h, P[f"{b}.mlp.fc1.weight"], P[f"{b}.mlp.fc1.bias"]))
        h = _linear(ad.dropout(h, drop, rng), P[f"{b}.mlp.fc2.weight"], P[f"{b}.mlp.fc2.bias"])
        x = ad.add(x, ad.dropout(h, drop, rng))

    x = ad.layer_norm(x, P["norm.weight"], P["norm.bias"], LN_EPS)
    rep = x[:, 0, :]
    logits = ad.add_bias(ad.matmul(rep, P["head_class.weight"]), P["head_class.bias"])
    value = ad.add_bias(ad.matmul(rep, P["head_value.weight"]), P["head_value.bias"])
    return logits, ad.reshape(value, (B,))


def predict_class(class_logits) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    z = np.asarray(class_logits.data if isinstance(class_logits, Tensor) else class_logits)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"predict_class: expected B x C logits with C >= 2, got {z.shape}")
    return np.argmax(z, axis=1)


def instance_outputs(params: ViTParams, slices: Sequence) -> tuple:
    """Mean class logits and mean value over an instance's slices."""
    if len(slices) == 0:
        raise ContractError("instance has no slices")
    stack = np.stack([np.asarray(s.data if isinstance(s, Tensor) else s) for s in slices])
    logits, values = forward(params, stack)
    return logits.data.mean(axis=0), float(values.data.mean())


def predict_instance(params: ViTParams, instance) -> tuple:
    """Class index and value for a multi-slice instance.

    Per-slice logits and values are averaged; the class is the argmax of the
    mean logits (lowest index on ties).
    """
    mean_logits, value = instance_outputs(params, instance.slices)
    return int(predict_class(mean_logits[None])[0]), value
