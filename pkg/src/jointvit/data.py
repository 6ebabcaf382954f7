"""Datasets of SaO2-labelled image stacks, augmentation and balancing.

Class indices are fixed: ``Low = 0``, ``BorderlineLow = 1``, ``Normal = 2``.
Continuous SaO2 percentages are binned at the midpoints between the integer
reference ranges (89-92 Low, 93-95 Borderline Low, 96-100 Normal), so the
cut points are 92.5 and 95.5 and anything under 89 is Low.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from .errors import BalanceError, ContractError, DimensionError, DomainError, IngestError, PolicyError


class SaO2Class(enum.IntEnum):
    Low = 0
    BorderlineLow = 1
    Normal = 2


NUM_CLASSES = len(SaO2Class)
LOW_UPPER = 92.5
BORDERLINE_UPPER = 95.5

# reference integer ranges, used for sampling synthetic labels
CLASS_RANGES = {
    SaO2Class.Low: (89.0, 92.0),
    SaO2Class.BorderlineLow: (93.0, 95.0),
    SaO2Class.Normal: (96.0, 100.0),
}

# stand-in percentages for corpora that only carry class names
CLASS_REPRESENTATIVE = {
    SaO2Class.Low: 90.5,
    SaO2Class.BorderlineLow: 94.0,
    SaO2Class.Normal: 98.0,
}


def sao2_to_class(sao2_percent: float) -> SaO2Class:
    v = float(sao2_percent)
    if not (0.0 < v <= 100.0) or math.isnan(v):
        raise DomainError(f"SaO2 percent must be in (0, 100], got {sao2_percent}")
    if v < LOW_UPPER:
        return SaO2Class.Low
    if v < BORDERLINE_UPPER:
        return SaO2Class.BorderlineLow
    return SaO2Class.Normal


def parse_class(name: str) -> SaO2Class:
    key = name.strip().replace(" ", "").replace("_", "").lower()
    for c in SaO2Class:
        if c.name.lower() == key:
            return c
    raise DomainError(f"unknown SaO2 class {name!r}")


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class LabeledInstance:
    instance_id: str
    slices: List[np.ndarray]
    sao2_percent: float
    sao2_class: Optional[SaO2Class] = None
    is_augmented: bool = False
    source_id: Optional[str] = None

    def __post_init__(self):
        self.slices = [np.asarray(s, dtype=np.float64) for s in self.slices]
        if not self.slices:
            raise ContractError(f"instance {self.instance_id!r} has no slices")
        shape = self.slices[0].shape
        if len(shape) != 3:
            raise DimensionError(f"instance {self.instance_id!r}: slices must be H x W x C, got {shape}")
        if any(s.shape != shape for s in self.slices):
            raise DimensionError(f"instance {self.instance_id!r}: slices differ in shape")
        derived = sao2_to_class(self.sao2_percent)
        if self.sao2_class is None:
            self.sao2_class = derived
        elif SaO2Class(self.sao2_class) != derived:
            raise ContractError(
                f"instance {self.instance_id!r}: class {SaO2Class(self.sao2_class).name} "
                f"inconsistent with SaO2 {self.sao2_percent}"
            )
        self.sao2_class = SaO2Class(self.sao2_class)
        if self.source_id is None:
            if self.is_augmented:
                raise ContractError(f"augmented instance {self.instance_id!r} needs a source_id")
            self.source_id = self.instance_id

    @property
    def label(self) -> int:
        return int(self.sao2_class)

    @property
    def value_target(self) -> float:
        return self.sao2_percent / 100.0

    @property
    def image_shape(self) -> tuple:
        return self.slices[0].shape


@dataclass
class Dataset:
    instances: List[LabeledInstance] = field(default_factory=list)
    provenance: str = "synthetic"
    class_counts: Optional[List[int]] = None

    def __post_init__(self):
        ids = [i.instance_id for i in self.instances]
        if len(set(ids)) != len(ids):
            dup = sorted({x for x in ids if ids.count(x) > 1})
            raise ContractError(f"duplicate instance ids: {dup[:5]}")
        counts = self.count_classes()
        if self.class_counts is not None and list(self.class_counts) != counts:
            raise ContractError(f"stored class counts {self.class_counts} != recomputed {counts}")
        self.class_counts = counts

    def count_classes(self) -> List[int]:
        counts = [0] * NUM_CLASSES
        for inst in self.instances:
            counts[int(inst.sao2_class)] += 1
        return counts

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def ids(self) -> List[str]:
        return [i.instance_id for i in self.instances]

    @property
    def labels(self) -> np.ndarray:
        return np.array([i.label for i in self.instances], dtype=int)

    def by_id(self) -> dict:
        return {i.instance_id: i for i in self.instances}

    def subset(self, ids: Iterable[str], provenance: Optional[str] = None) -> "Dataset":
        lookup = self.by_id()
        return Dataset([lookup[i] for i in ids], provenance or self.provenance)

    def image_shape(self) -> Optional[tuple]:
        return self.instances[0].image_shape if self.instances else None


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    crop_scale_range: tuple = (0.875, 1.0)
    hflip_prob: float = 0.5
    rotation_range: tuple = (0.0, 360.0)
    fill: float = 0.0

    def validate(self) -> "AugmentPolicy":
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise PolicyError(f"crop_scale_range must lie in (0, 1], got {self.crop_scale_range}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise PolicyError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise PolicyError(f"rotation_range is reversed: {self.rotation_range}")
        return self

    def to_dict(self) -> dict:
        return {"crop_scale_range": list(self.crop_scale_range), "hflip_prob": self.hflip_prob,
                "rotation_range": list(self.rotation_range), "fill": self.fill}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        d = dict(d)
        for k in ("crop_scale_range", "rotation_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d).validate()


NULL_POLICY = AugmentPolicy(crop_scale_range=(1.0, 1.0), hflip_prob=0.0, rotation_range=(0.0, 0.0))


@dataclass(frozen=True)
class AugmentParams:
    top: int
    left: int
    crop_h: int
    crop_w: int
    flip: bool
    angle: float


def sample_augment_params(shape: tuple, policy: AugmentPolicy, rng: np.random.Generator) -> AugmentParams:
    """Draw crop window, flip and rotation angle, always in that order."""
    policy.validate()
    H, W = shape[:2]
    if H < 8 or W < 8:
        raise DimensionError(f"augmentation needs images of at least 8x8, got {H}x{W}")
    lo, hi = policy.crop_scale_range
    s = rng.uniform(lo, hi) if hi > lo else lo
    ch, cw = int(round(s * H)), int(round(s * W))
    if ch < 1 or cw < 1:
        raise PolicyError(f"crop window {ch}x{cw} is degenerate")
    ch, cw = min(ch, H), min(cw, W)
    top = int(rng.integers(0, H - ch + 1))
    left = int(rng.integers(0, W - cw + 1))
    flip = bool(rng.random() < policy.hflip_prob)
    a0, a1 = policy.rotation_range
    angle = float(rng.uniform(a0, a1)) if a1 > a0 else float(a0)
    return AugmentParams(top, left, ch, cw, flip, angle)


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < 1e-9, r, v)


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Sample ``H x W x C`` at fractional (row, col) positions.

    Neighbours outside the image contribute ``fill``.
    """
    H, W = img.shape[:2]
    ys, xs = _snap(ys), _snap(xs)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]

    def at(yy, xx):
        ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        v = img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
        return np.where(ok[..., None], v, fill)

    top = at(y0, x0) * (1 - wx) + at(y0, x0 + 1) * wx
    bot = at(y0 + 1, x0) * (1 - wx) + at(y0 + 1, x0 + 1) * wx
    return top * (1 - wy) + bot * wy


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    if (H, W) == (height, width):
        return img.copy()
    ys = np.clip((np.arange(height) + 0.5) * H / height - 0.5, 0, H - 1)
    xs = np.clip((np.arange(width) + 0.5) * W / width - 0.5, 0, W - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, yy, xx)


def rotate(img: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate counter-clockwise about the image centre, bilinear, ``fill`` outside."""
    if angle_deg % 360.0 == 0.0:
        return img.copy()
    H, W = img.shape[:2]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64) - cy, np.arange(W, dtype=np.float64) - cx, indexing="ij")
    # inverse map: output pixel -> source location
    src_y = c * yy - s * xx + cy
    src_x = s * yy + c * xx + cx
    return bilinear_sample(img, src_y, src_x, fill)


def apply_augment(image: np.ndarray, params: AugmentParams, fill: float = 0.0) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    H, W = img.shape[:2]
    out = img
    if (params.crop_h, params.crop_w) != (H, W):
        window = img[params.top:params.top + params.crop_h, params.left:params.left + params.crop_w]
        out = resize_bilinear(window, H, W)
    if params.flip:
        out = out[:, ::-1]
    out = rotate(out, params.angle, fill)
    return np.ascontiguousarray(out)


def augment_once(image, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Random crop (resized back), horizontal flip, then rotation about the centre."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"augment_once: expected H x W x C, got {img.shape}")
    return apply_augment(img, sample_augment_params(img.shape, policy, rng), policy.fill)


def derived_rng(seed: int, instance_id: str, copy_index: int) -> np.random.Generator:
    """Independent stream keyed on (seed, instance id, copy index)."""
    digest = hashlib.sha256(instance_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words, int(copy_index)]))


def augment_instance(inst: LabeledInstance, policy: AugmentPolicy, seed: int, copy_index: int) -> LabeledInstance:
    """Augmented copy of ``inst``; one transform shared by all its slices."""
    rng = derived_rng(seed, inst.instance_id, copy_index)
    params = sample_augment_params(inst.image_shape, policy, rng)
    return LabeledInstance(
        instance_id=f"{inst.instance_id}#aug{copy_index}",
        slices=[apply_augment(s, params, policy.fill) for s in inst.slices],
        sao2_percent=inst.sao2_percent,
        sao2_class=inst.sao2_class,
        is_augmented=True,
        source_id=inst.source_id,
    )


def balance_augment(dataset: Dataset, policy: AugmentPolicy = AugmentPolicy(), seed: int = 0) -> Dataset:
    """Top up every minority class with augmented copies to the majority count.

    Originals are kept as-is. Sources within a class are cycled round-robin in
    dataset order, so each original is used once before any is reused.
    """
    policy.validate()
    counts = dataset.count_classes()
    for c in SaO2Class:
        if counts[c] == 0:
            raise BalanceError(f"class {c.name} has no instances to augment from")
    target = max(counts)
    if all(n == target for n in counts):
        return dataset
    added = []
    for c in SaO2Class:
        sources = [i for i in dataset.instances if i.sao2_class == c and not i.is_augmented]
        if not sources:
            raise BalanceError(f"class {c.name} has no original instances to augment from")
        for j in range(target - counts[c]):
            added.append(augment_instance(sources[j % len(sources)], policy, seed, j // len(sources)))
    return Dataset(list(dataset.instances) + added, provenance="augmented")


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------

def slice_volume(volume, stride: int = 1) -> List[np.ndarray]:
    """Axial slices ``volume[0], volume[stride], ...`` as ``H x W x 1`` images."""
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise DimensionError(f"slice_volume: expected D x H x W, got {vol.shape}")
    if vol.shape[0] < 1:
        raise ContractError("slice_volume: empty volume")
    if stride < 1:
        raise ContractError(f"slice_volume: stride must be >= 1, got {stride}")
    return [vol[i][..., None].copy() for i in range(0, vol.shape[0], stride)]


def write_volume(path, volume) -> Path:
    """Write ``path`` (raw little-endian float32) plus ``path.json`` descriptor."""
    path = Path(path)
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise DimensionError(f"write_volume: expected D x H x W, got {vol.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(vol.astype("<f4").tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"dims": list(vol.shape)}))
    return path


def read_volume(path) -> np.ndarray:
    path = Path(path)
    meta_path = Path(str(path) + ".json")
    try:
        dims = json.loads(meta_path.read_text())["dims"]
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise IngestError(f"missing volume file: {e.filename}") from e
    except (KeyError, json.JSONDecodeError) as e:
        raise IngestError(f"bad volume descriptor: {meta_path}") from e
    if len(dims) != 3 or len(raw) != 4 * int(np.prod(dims)):
        raise IngestError(f"volume {path}: {len(raw)} bytes do not match dims {dims}")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)


def instance_from_volume(instance_id: str, volume, sao2_percent: float, stride: int = 1) -> LabeledInstance:
    return LabeledInstance(instance_id, slice_volume(volume, stride), sao2_percent)


# ---------------------------------------------------------------------------
# synthetic long-tailed data
# ---------------------------------------------------------------------------

# stripe frequency in cycles per image width, one per class
STRIPE_CYCLES = {SaO2Class.Low: 2.0, SaO2Class.BorderlineLow: 5.0, SaO2Class.Normal: 10.0}
NOISE_STD = 0.1
MARKER_LEVEL = {SaO2Class.Low: 0.0, SaO2Class.BorderlineLow: 0.5, SaO2Class.Normal: 1.0}


@dataclass(frozen=True)
class SynthSpec:
    counts: tuple = (9, 30, 18)
    image_size: int = 64
    seed: int = 0
    slices_per_instance: int = 1
    marker: bool = False

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "image_size": self.image_size, "seed": self.seed,
                "slices_per_instance": self.slices_per_instance, "marker": self.marker}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "counts" in d:
            d["counts"] = tuple(d["counts"])
        return cls(**d)


def stripe_image(size: int, cycles: float, angle: float, phase: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    proj = (xx * math.cos(angle) + yy * math.sin(angle)) / size
    return 0.5 + 0.35 * np.sin(2 * math.pi * cycles * proj + phase)


def _stamp_marker(img: np.ndarray, cls: SaO2Class) -> None:
    # flat centred block, half the side, at a class-specific level; centred so
    # that flips and rotations about the centre leave it in place
    H, W = img.shape[:2]
    img[H // 4:H - H // 4, W // 4:W - W // 4] = MARKER_LEVEL[cls]


def synth_longtail(spec: SynthSpec = SynthSpec()) -> Dataset:
    """Class-conditional stripe textures with long-tailed class counts.

    Each class has its own stripe frequency (``STRIPE_CYCLES``); orientation
    and phase are random per slice and Gaussian noise (std ``NOISE_STD``) is
    added before clipping to [0, 1]. SaO2 values are uniform within the
    class's reference range. With ``marker=True`` a flat centre block whose
    level depends on the class is stamped on every slice as an easy planted cue.
    """
    if len(spec.counts) != NUM_CLASSES or any(int(n) < 1 for n in spec.counts):
        raise ContractError(f"synthetic counts must be {NUM_CLASSES} positive integers, got {spec.counts}")
    if spec.image_size < 8 or spec.slices_per_instance < 1:
        raise ContractError("synthetic images need size >= 8 and at least one slice")
    instances = []
    k = 0
    for cls in SaO2Class:
        lo, hi = CLASS_RANGES[cls]
        for _ in range(int(spec.counts[cls])):
            rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), k]))
            sao2 = float(rng.uniform(lo, hi))
            slices = []
            for _ in range(spec.slices_per_instance):
                img = stripe_image(spec.image_size, STRIPE_CYCLES[cls],
                                   rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
                img = np.clip(img + rng.normal(0.0, NOISE_STD, img.shape), 0.0, 1.0)
                if spec.marker:
                    _stamp_marker(img, cls)
                slices.append(img[..., None])
            instances.append(LabeledInstance(f"syn-{k:04d}", slices, sao2))
            k += 1
    return Dataset(instances, provenance="synthetic")


def stripe_frequency(image) -> float:
    """Radial frequency (cycles per image) of the strongest non-DC component."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    power = np.abs(np.fft.fft2(img - img.mean())) ** 2
    fy = np.fft.fftfreq(img.shape[0]) * img.shape[0]
    fx = np.fft.fftfreq(img.shape[1]) * img.shape[1]
    radius = np.hypot(*np.meshgrid(fy, fx, indexing="ij"))
    power[0, 0] = 0.0
    return float(radius.flat[int(np.argmax(power))])


# ---------------------------------------------------------------------------
# image folders
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.csv"


def _to_png_bytes(img: np.ndarray) -> bytes:
    from PIL import Image

    arr = np.asarray(img)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise DimensionError("PNG export supports single-channel images only")
        arr = arr[..., 0]
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_image_folder(dataset: Dataset, root) -> Path:
    """Export as ``<id>/slice_NNN.png`` files plus ``manifest.csv``.

    The manifest has the header ``file,sao2_percent``; slices of one instance
    share a directory, which is how :func:`load_image_folder` regroups them.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for inst in dataset.instances:
        d = root / inst.instance_id
        d.mkdir(exist_ok=True)
        for s, img in enumerate(inst.slices):
            rel = f"{inst.instance_id}/slice_{s:03d}.png"
            (root / rel).write_bytes(_to_png_bytes(img))
            rows.append((rel, repr(float(inst.sao2_percent))))
    with open(root / MANIFEST_NAME, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "sao2_percent"])
        w.writerows(rows)
    return root


def _decode_gray(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    if not path.is_file():
        raise IngestError(f"missing image file: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise IngestError(f"cannot decode image: {path}") from e
    return arr[..., None]


def _manifest_path(root: Path, manifest: Optional[str]) -> Path:
    # relative manifest paths are tried against the data root first
    if not manifest:
        return root / MANIFEST_NAME
    m = Path(manifest)
    if not m.is_absolute() and (root / m).is_file():
        return root / m
    return m


def load_image_folder(root, manifest: Optional[str] = None, image_size: Optional[int] = None) -> Dataset:
    """Read a manifest of images into a :class:`Dataset`.

    The manifest (default ``<root>/manifest.csv``) has header
    ``file,sao2_percent`` or ``file,class`` with paths relative to ``root``.
    Files in the same directory form one multi-slice instance named after
    the directory; top-level files are single-slice instances named by stem.
    Pixels become grayscale floats in [0, 1], resized to ``image_size``.
    """
    root = Path(root)
    mpath = _manifest_path(root, manifest)
    if not mpath.is_file():
        raise IngestError(f"missing manifest: {mpath}")
    with open(mpath, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [r for r in reader if r]
    if header is None:
        return Dataset([], provenance="folder")
    header = [h.strip() for h in header]
    if header not in (["file", "sao2_percent"], ["file", "class"]):
        raise IngestError(f"{mpath}: header must be file,sao2_percent or file,class, got {','.join(header)}")
    by_class = header[1] == "class"

    groups: dict = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise IngestError(f"{mpath}:{lineno}: expected 2 columns")
        rel, label = row[0].strip(), row[1].strip()
        try:
            percent = CLASS_REPRESENTATIVE[parse_class(label)] if by_class else float(label)
            sao2_to_class(percent)
        except (ValueError, DomainError) as e:
            raise IngestError(f"{mpath}:{lineno}: bad label {label!r} for {root / rel}") from e
        parent = Path(rel).parent
        key = parent.as_posix() if str(parent) not in ("", ".") else Path(rel).stem
        groups.setdefault(key, []).append((rel, percent))

    instances = []
    for key, files in groups.items():
        percents = {p for _, p in files}
        if len(percents) != 1:
            raise IngestError(f"{mpath}: slices of {root / key} carry conflicting labels {sorted(percents)}")
        slices = []
        for rel, _ in files:
            img = _decode_gray(root / rel)
            if image_size is not None:
                img = resize_bilinear(img, image_size, image_size)
            slices.append(img)
        if any(s.shape != slices[0].shape for s in slices):
            raise IngestError(f"{root / key}: slices have different sizes; pass image_size to resize")
        instances.append(LabeledInstance(key, slices, percents.pop()))
    return Dataset(instances, provenance="folder")


def load_volume_folder(root, manifest: Optional[str] = None, stride: int = 1,
                       image_size: Optional[int] = None) -> Dataset:
    """One instance per raw float32 volume listed in a ``file,sao2_percent`` manifest.

    Each volume is cut into axial slices every ``stride`` planes.
    """
    root = Path(root)
    mpath = _manifest_path(root, manifest)
    if not mpath.is_file():
        raise IngestError(f"missing manifest: {mpath}")
    with open(mpath, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return Dataset([], provenance="folder")
    if [h.strip() for h in rows[0]] != ["file", "sao2_percent"]:
        raise IngestError(f"{mpath}: volume manifests need the header file,sao2_percent")
    instances = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        rel, label = row[0].strip(), row[1].strip()
        try:
            percent = float(label)
            sao2_to_class(percent)
        except (ValueError, DomainError) as e:
            raise IngestError(f"{mpath}:{lineno}: bad label {label!r} for {root / rel}") from e
        slices = slice_volume(read_volume(root / rel), stride)
        if image_size is not None:
            slices = [resize_bilinear(s, image_size, image_size) for s in slices]
        instances.append(LabeledInstance(Path(rel).with_suffix("").as_posix(), slices, percent))
    return Dataset(instances, provenance="folder")
